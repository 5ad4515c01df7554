import numpy as np
import pytest
import torch

from changedet.train import deterministic_mode

deterministic_mode()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)
    yield
