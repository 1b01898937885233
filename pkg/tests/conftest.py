import pytest
import torch

from ldseg.data import generate_dataset
from ldseg.diffusion import build_linear_schedule
from ldseg.models import ArchConfig


@pytest.fixture(scope="session")
def sched1000():
    return build_linear_schedule(1000, 1e-4, 0.02)


@pytest.fixture(scope="session")
def mini_arch():
    """Smallest config that exercises every mechanism (2 pyramid levels,
    4-channel 2x2 latent, 2 classes)."""
    return ArchConfig(
        in_channels=2,
        image_size=8,
        num_classes=2,
        enc_channels=(6, 6),
        latent_channels=4,
        unet_channels=(8, 12),
        time_dim=8,
    )


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """A small instance of the procedural benchmark shared across tests."""
    root = tmp_path_factory.mktemp("toyds")
    generate_dataset(root, n_train=48, n_val=24, seed=7)
    return root


@pytest.fixture(autouse=True)
def _fixed_global_seed():
    torch.manual_seed(0)
