import numpy as np
import pytest
import torch

from landmark_forge.config import settings
from landmark_forge.schemas.dataset import AugmentationConfig
from landmark_forge.schemas.encoder import BackboneConfig
from landmark_forge.services.synthetic_service import generate_synthetic_dataset


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="run seeded desk-scale trend tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture
def tiny_backbone():
    return BackboneConfig(stage_channels=[4, 8, 8, 16], stem_channels=4, input_size=32, embedding_dim=8, hidden_multiplier=2)


@pytest.fixture
def tiny_aug():
    return AugmentationConfig(crop_size=32, resize_size=48)


@pytest.fixture
def tiny_identity_aug():
    return AugmentationConfig.identity(crop_size=32, resize_size=32)


@pytest.fixture(scope="session")
def small_faces():
    """12 renders of 3 identities on a 48 px canvas."""
    return generate_synthetic_dataset(12, 3, canvas=48, seed=0)


@pytest.fixture
def run_root(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "run_root", str(tmp_path / "runs"))
    return tmp_path / "runs"
