"""Run configuration and its flat ``key = value`` text file format.

Lines are ``key = value``; ``#`` starts a comment; unknown keys are errors.
Booleans are ``true``/``false``.  Serialising then parsing gives back an
equal config.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .encoding import EncoderSwitches
from .episode import EpisodeSpec
from .errors import ConfigError


@dataclass(frozen=True)
class TrainConfig:
    # episode
    n_way: int = 5
    k_shot: int = 1
    n_query: int = 1
    # model dims
    d: int = 32
    d_k: int = 0  # 0 means d
    d_mlp: int = 0  # 0 means 2 * d
    n: int = 4
    t: int = 8
    h: int = 8
    w: int = 8
    c: int = 16
    # ablation switches
    use_ifce: bool = True
    use_ivce: bool = True
    use_iece: bool = True
    loss_instance: bool = True
    loss_category: bool = True
    loss_task: bool = True
    train_stem: bool = True
    # optimisation
    learning_rate: float = 1e-4
    decay_factor: float = 0.5
    decay_every: int = 2000
    total_episodes: int = 5000
    temperature: float = 1.0
    seed: int = 0
    checkpoint_every: int = 1000
    val_episodes: int = 100
    eval_episodes: int = 1000
    # data
    source: str = "synthetic"
    train_classes: int = 12
    val_classes: int = 3
    test_classes: int = 5
    n_subactions: int = 4
    m: int = 3
    noise_sigma: float = 0.1
    warp_strength: float = 0.3
    clips_per_class: int = 20
    out_dir: str = "runs/default"

    def __post_init__(self):
        positive = ["n_way", "k_shot", "n_query", "d", "n", "t", "h", "w", "c",
                    "decay_every", "checkpoint_every", "val_episodes", "eval_episodes",
                    "clips_per_class", "n_subactions", "m"]
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_way < 2:
            raise ConfigError("n_way must be >= 2")
        if self.d_k < 0 or self.d_mlp < 0:
            raise ConfigError("d_k and d_mlp must be >= 0 (0 selects the default width)")
        if self.d < 2:
            raise ConfigError("d must be >= 2")
        if self.n > min(self.h, self.w):
            raise ConfigError(f"n={self.n} exceeds min(h, w)={min(self.h, self.w)}")
        if not self.learning_rate > 0 or not self.temperature > 0:
            raise ConfigError("learning_rate and temperature must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError("decay_factor must lie in (0, 1]")
        if self.total_episodes < 0:
            raise ConfigError("total_episodes must be >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.noise_sigma < 0 or not 0 <= self.warp_strength <= 1:
            raise ConfigError("noise_sigma must be >= 0 and warp_strength in [0, 1]")
        if min(self.train_classes, self.val_classes, self.test_classes) < 0:
            raise ConfigError("class counts must be >= 0")

    @property
    def key_dim(self) -> int:
        return self.d_k or self.d

    @property
    def mlp_dim(self) -> int:
        return self.d_mlp or 2 * self.d

    @property
    def episode_spec(self) -> EpisodeSpec:
        return EpisodeSpec(self.n_way, self.k_shot, self.n_query, self.seed)

    @property
    def episode_size(self) -> int:
        """Clips seen by the intra-episode encoder: every support plus one query."""
        return self.n_way * self.k_shot + 1

    @property
    def switches(self) -> EncoderSwitches:
        return EncoderSwitches(self.use_ifce, self.use_ivce, self.use_iece)

    @property
    def branches(self) -> tuple:
        return (self.loss_instance, self.loss_category, self.loss_task)

    @property
    def split_sizes(self) -> tuple:
        return (self.train_classes, self.val_classes, self.test_classes)

    def with_overrides(self, **values) -> "TrainConfig":
        return replace(self, **values)


_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _parse_value(key: str, text: str):
    kind = _TYPES[key]
    try:
        if kind == "bool":
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError(text)
            return low == "true"
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind}") from None


def parse_assignments(pairs) -> dict:
    """Parse ``key=value`` strings (config lines or command-line overrides)."""
    out = {}
    for raw in pairs:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _parse_value(key, value)
    return out


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    values = parse_assignments(text.splitlines())
    return replace(base or TrainConfig(), **values)


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    return parse_config(Path(path).read_text(), base)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def serialize_config(config: TrainConfig) -> str:
    return "".join(f"{k} = {_format(v)}\n" for k, v in asdict(config).items())


def save_config(config: TrainConfig, path) -> None:
    Path(path).write_text(serialize_config(config))
