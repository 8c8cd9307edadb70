import dataclasses

import pytest
from hypothesis import given, settings, strategies as st

from m3net.config import TrainConfig, load_config, parse_config, save_config, serialize_config
from m3net.errors import ConfigError


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.t, cfg.n) == (8, 4)
    assert cfg.learning_rate == 1e-4 and cfg.decay_factor == 0.5 and cfg.decay_every == 2000
    assert cfg.key_dim == cfg.d and cfg.mlp_dim == 2 * cfg.d
    assert cfg.episode_size == cfg.n_way * cfg.k_shot + 1


def test_61_12_26_split_accepted():
    cfg = parse_config("train_classes = 61\nval_classes = 12\ntest_classes = 26\n")
    assert cfg.split_sizes == (61, 12, 26)


def test_comments_and_blank_lines():
    cfg = parse_config("# run\n\nd = 16  # width\nuse_iece = false\n")
    assert cfg.d == 16 and cfg.use_iece is False


@pytest.mark.parametrize("text", ["bogus = 1", "d = 1.5", "use_iece = yes", "no equals sign",
                                  "decay_factor = 0", "decay_factor = 1.5", "learning_rate = -1",
                                  "temperature = 0", "n = 9", "n_way = 1", "seed = -1"])
def test_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_file_round_trip(tmp_path):
    cfg = TrainConfig(d=16, learning_rate=3e-3, temperature=0.1, use_ivce=False, source="data/x")
    save_config(cfg, tmp_path / "c.txt")
    assert load_config(tmp_path / "c.txt") == cfg


def test_file_over_base():
    base = TrainConfig(d=16, seed=5)
    cfg = parse_config("seed = 7", base)
    assert cfg.d == 16 and cfg.seed == 7


configs = st.builds(
    TrainConfig,
    n_way=st.integers(2, 10), k_shot=st.integers(1, 5), d=st.integers(2, 64),
    learning_rate=st.floats(1e-8, 1.0), temperature=st.floats(1e-3, 10.0),
    decay_factor=st.floats(1e-3, 1.0), seed=st.integers(0, 2 ** 64 - 1),
    use_ifce=st.booleans(), loss_task=st.booleans(),
    noise_sigma=st.floats(0, 5), warp_strength=st.floats(0, 1),
    out_dir=st.text(st.characters(min_codepoint=48, max_codepoint=122, blacklist_characters="#="),
                    min_size=1, max_size=12),
)


@settings(max_examples=200, deadline=None)
@given(configs)
def test_serialize_parse_idempotent(cfg):
    text = serialize_config(cfg)
    again = parse_config(text)
    assert again == cfg
    assert serialize_config(again) == text


def test_every_field_is_serialized():
    text = serialize_config(TrainConfig())
    assert [line.split(" = ")[0] for line in text.splitlines()] == \
        [f.name for f in dataclasses.fields(TrainConfig)]
