import numpy as np
import pytest
import torch

from luxhar.datasets import SynthConfig, generate_recording
from luxhar.models import default_model_spec, new_model
from luxhar.windowing import WindowSet

# every test runs single threaded so timings and results are stable
torch.set_num_threads(1)

TINY_ARCH = dict(conv_channels=8, lstm_hidden=8, embed_dim=16,
                 classifier_hidden=8)


@pytest.fixture(scope="session")
def tiny_specs():
    """Small versions of all four variants, cheap enough for unit tests."""
    return {v: default_model_spec(v, **TINY_ARCH)
            for v in ("light", "inertial", "multilight", "contralight")}


@pytest.fixture(scope="session")
def tiny_models(tiny_specs):
    return {v: new_model(s, seed=7) for v, s in tiny_specs.items()}


@pytest.fixture(scope="session")
def short_config():
    """Generator config for a 40 s session; enough for a handful of windows."""
    return SynthConfig(seed=5, session_seconds=40.0)


@pytest.fixture(scope="session")
def short_recording(short_config):
    return generate_recording(short_config, subject_id=1, scenario=1)


def random_window_set(rng, n, size=60, with_als=True, with_imu=True,
                      subject=1, scenario=1):
    """A WindowSet of random data, both modalities present by default."""
    als = rng.normal(size=(n, size, 1)) if with_als else np.zeros((n, size, 1))
    imu = rng.normal(size=(n, size, 3)) if with_imu else np.zeros((n, size, 3))
    return WindowSet(
        als=als, imu=imu,
        labels=rng.integers(0, 10, size=n),
        als_present=np.full(n, with_als),
        imu_present=np.full(n, with_imu),
        subject_ids=np.full(n, subject),
        scenarios=np.full(n, scenario),
        window_index=np.arange(n),
    )
