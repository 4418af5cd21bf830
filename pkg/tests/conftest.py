import functools
import logging
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sdnverify import data, sdn  # noqa: E402
from sdnverify.linrules import Box  # noqa: E402

logging.getLogger("sdnverify").setLevel(logging.ERROR)

# the toy ReLU network used throughout: hidden y'0 = x1, y'1 = x0, identity output
EXAMPLE1_PARAMS = [
    (np.array([[0.0, 1.0], [1.0, 0.0]]), np.zeros(2)),
    (np.eye(2), np.zeros(2)),
]


@functools.lru_cache(maxsize=None)
def synth_dataset(seed: int = 0) -> data.Dataset:
    return data.gen_synth2d(data.Synth2DConfig(seed=seed))


@functools.lru_cache(maxsize=None)
def synth_net(seed: int = 0, arch: str = "6x2,6x2", epochs: int = 150,
              lr: float = 3e-3) -> sdn.SDNetwork:
    """A small SDN trained on the planted-noise 2D data (cached per session)."""
    ds = synth_dataset()
    counts, sizes = sdn.parse_arch(arch)
    cfg = sdn.TrainConfig(epochs=epochs, batch_size=64, learning_rate=lr, seed=seed)
    net, _ = sdn.train(cfg, ds.inputs, ds.labels, counts, sizes,
                       input_bounds=ds.input_bounds)
    return net


def example1_sdn() -> sdn.SDNetwork:
    """Example-1 weights in an SDN with one-neuron groups on [-1, 1]^2."""
    return sdn.SDNetwork.from_params(EXAMPLE1_PARAMS, [1], [2], 2.0, Box.cube(2, -1.0, 1.0))


def half_space_net(threshold: float = 0.5) -> sdn.SDNetwork:
    """Two-region net: class 0 where x0 > threshold, class 1 elsewhere.

    Its only group holds two neurons of opposite sign, so no door ever
    forms and the pattern is the same everywhere.
    """
    w1 = np.array([[1.0, -1.0], [0.0, 0.0]])
    b1 = np.array([-threshold, threshold])
    w2 = np.array([[1.0, -1.0], [-1.0, 1.0]])
    return sdn.SDNetwork.from_params([(w1, b1), (w2, np.zeros(2))], [2], [1], 2.0,
                                     Box.cube(2, 0.0, 1.0))


def constant_net(dim: int = 2, classes: int = 3) -> sdn.SDNetwork:
    """Zero weights everywhere, bias favouring class 0: one region."""
    w1 = np.zeros((dim, 4))
    b1 = np.array([1.0, 1.0, -1.0, -1.0])
    w2 = np.zeros((4, classes))
    b2 = np.zeros(classes)
    b2[0] = 1.0
    return sdn.SDNetwork.from_params([(w1, b1), (w2, b2)], [2], [2], 2.0,
                                     Box.cube(dim, 0.0, 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
