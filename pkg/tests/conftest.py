import numpy as np
import pytest

from edgeworth.config import parse_config
from edgeworth.ensemble import Ensemble
from edgeworth.trade import NoiseKind, NoiseSpec, TradeParams, UtilityParams


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def calm_trade():
    """lambda 0.5, alpha = beta = 0.5, no noise: A = B = 0.25."""
    return TradeParams(0.5, UtilityParams(0.5))


@pytest.fixture
def noisy_trade():
    return TradeParams(0.5, UtilityParams(0.5), NoiseSpec(NoiseKind.UNIFORM, 0.1))


@pytest.fixture
def small_ensemble(rng):
    x = rng.exponential(1.0, 200)
    y = rng.exponential(2.0, 200)
    return Ensemble.from_arrays(x, y, conserving=True)


@pytest.fixture
def make_config(tmp_path):
    """parse_config on a TOML snippet, writing into a fresh directory under tmp_path."""
    counter = iter(range(1000))

    def build(text: str = "", **overrides):
        out = tmp_path / f"run{next(counter)}"
        cfg = parse_config(text, base_dir=tmp_path)
        return cfg.with_overrides(output_dir=out, **overrides)

    return build
