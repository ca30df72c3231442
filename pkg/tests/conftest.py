import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conceptbank.backend.mock import MockModel
from conceptbank.driftsim import DriftSpec, make_world, sample_from_spec, SUPPORT_STREAM, TEST_STREAM


@pytest.fixture
def quiet_world():
    """Small undrifted noise-free world: 2 classes, one variant each."""
    spec = DriftSpec(dim=16, class_count=2, seed=11, variant_cosines=[0.8])
    return make_world(spec)


@pytest.fixture
def quiet_model(quiet_world):
    return MockModel(quiet_world)


def drift_setup(seed, **kw):
    """World + splits for the standard drift scenario used across tests."""
    defaults = dict(
        dim=32,
        class_count=3,
        rho=0.6,
        outlier_rate=0.3,
        noise_sigma=0.05,
        variant_cosines=[0.95, 0.7, 0.4],
        crop_jitter=0.4363,
        crop_jitter_min=0.1745,
        supports_per_class=20,
        tests_per_class=8,
    )
    defaults.update(kw)
    spec = DriftSpec(seed=seed, **defaults)
    world = make_world(spec)
    model = MockModel(world)
    supports = sample_from_spec(spec, world, SUPPORT_STREAM)
    tests = sample_from_spec(spec, world, TEST_STREAM)
    return spec, world, model, supports, tests
