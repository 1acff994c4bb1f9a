import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ris_see.channel import EveErrorModel, noise_normalized, sample_channels
from ris_see.scenario import ScenarioConfig

settings.register_profile("ris", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ris")


@pytest.fixture(scope="session")
def cfg():
    return ScenarioConfig()


@pytest.fixture(scope="session")
def small_cfg():
    """One BS, one RIS, one user, one Eve: quick to solve."""
    return ScenarioConfig(num_bs=1, num_ris=1, num_users=1, num_eves=1, num_elements=4)


@pytest.fixture(scope="session")
def chn(cfg):
    return noise_normalized(sample_channels(cfg, 0), cfg)


@pytest.fixture(scope="session")
def err(chn, cfg):
    return EveErrorModel.from_sigma_bar(chn, cfg.sigma_bar)


def crand(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def rand_herm(rng, n, psd=False):
    A = crand(rng, n, n)
    return A @ A.conj().T if psd else (A + A.conj().T) / 2
