import numpy as np
import pytest

from m3net.config import TrainConfig
from m3net.episode import Episode, VideoClip
from m3net.model import ModelParams

TINY = TrainConfig(d=8, d_k=4, t=3, n=2, n_way=2, k_shot=1, n_query=1, h=4, w=4, c=3, m=2)


def random_episode(config, rng, scale=1.0):
    shape = (config.t, config.h, config.w, config.c)
    support, query = [], []
    for cls in range(config.n_way):
        for _ in range(config.k_shot):
            support.append(VideoClip(scale * rng.standard_normal(shape), cls, len(support)))
        for _ in range(config.n_query):
            query.append(VideoClip(scale * rng.standard_normal(shape), cls, 100 + len(query)))
    labels = np.repeat(np.arange(config.n_way), config.n_query)
    return Episode(support, query, list(range(config.n_way)), labels, config.k_shot)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return TINY


@pytest.fixture
def tiny_params(rng):
    return ModelParams.init(TINY, rng, dtype=np.float64)


@pytest.fixture
def tiny_episode(rng):
    return random_episode(TINY, rng)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
