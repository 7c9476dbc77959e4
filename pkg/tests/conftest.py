import numpy as np
import pytest

from devicetts.config import DfsmnConfig, tiny_config
from devicetts.model import DeviceTTS


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny():
    return tiny_config()


@pytest.fixture
def tiny_model(tiny):
    return DeviceTTS(tiny, seed=7)


def small_config(dim=16, **kw):
    """Toy-training sized model: dims 16, short filters, r=2."""
    return tiny_config(
        vocab_size=10,
        embed_dim=dim,
        encoder=DfsmnConfig(2, dim, dim, 2, 2),
        duration=DfsmnConfig(1, dim, dim, 2, 2),
        duration_blstm_hidden=dim // 2,
        prenet_widths=(dim, dim),
        lstm_hidden=dim,
        refine=DfsmnConfig(2, dim, dim, 2, 2),
        **kw,
    )


def central_diff(f, x: np.ndarray, v: np.ndarray, h: float = 1e-5) -> float:
    """Directional derivative of scalar ``f`` at ``x`` along ``v``."""
    return (f(x + h * v) - f(x - h * v)) / (2 * h)
