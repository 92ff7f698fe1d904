import numpy as np
import pytest
import torch

from latentdeid import (
    EditWindow,
    NoiseSchedule,
    ToyDenoiser,
    ddim_invert,
    toy_providers,
)


@pytest.fixture(scope="session")
def schedule():
    return NoiseSchedule.linear()


@pytest.fixture(scope="session")
def window8():
    """Small reverse ladder used by the fast pipeline tests."""
    return EditWindow(t0=600, t_edit=400, t_boost=200, n_denoise=8)


@pytest.fixture(scope="session")
def window16():
    return EditWindow()


@pytest.fixture(scope="session")
def image32():
    g = torch.Generator().manual_seed(3)
    return torch.rand((32, 32, 3), generator=g, dtype=torch.float64) * 1.6 - 0.8


@pytest.fixture(scope="session")
def backend():
    return ToyDenoiser(image_size=(32, 32))


@pytest.fixture(scope="session")
def providers():
    return toy_providers()


@pytest.fixture(scope="session")
def state8(image32, schedule, window8, backend):
    return ddim_invert(image32, schedule, window8, backend, seed=1006)


@pytest.fixture()
def rng():
    return np.random.default_rng(20260814)
