import numpy as np
import pytest

from evsched.chains import BatchLaw, ChainSet, MarkovChainSpec
from evsched.mdp import ModelParams


@pytest.fixture(scope="session")
def tiny_chains() -> ChainSet:
    """Desk-scale instance with genuine two-state chains; matches tiny.cfg."""
    return ChainSet(
        arrival=MarkovChainSpec(values=(0, 2), transition=[[0.6, 0.4], [0.4, 0.6]]),
        renewable=MarkovChainSpec(values=(0, 1), transition=[[0.5, 0.5], [0.3, 0.7]]),
        price=MarkovChainSpec(values=(9, 10), transition=[[0.5, 0.5], [0.5, 0.5]]),
    )


@pytest.fixture(scope="session")
def tiny_params() -> ModelParams:
    return ModelParams(
        n_charge_points=2,
        energy_block=1,
        period=1.0,
        battery_cap=2,
        queue_cap=4,
        beta=1.0,
        alpha=0.9,
    )


@pytest.fixture(scope="session")
def batch1() -> BatchLaw:
    return BatchLaw(1)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240810)
