import numpy as np
import pytest

from tangentdepth.geometry import PatchLayout, TangentPose, build_patch_layout
from tangentdepth.model import ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def default_layout():
    return build_patch_layout()


@pytest.fixture(scope="session")
def desk_layout():
    return build_patch_layout(patch_res=64)


@pytest.fixture(scope="session")
def tiny_layout():
    poses = (TangentPose.from_degrees(0.0, 0.0), TangentPose.from_degrees(60.0, 10.0))
    return PatchLayout(poses, fov=80.0, patch_res=16)


@pytest.fixture(scope="session")
def tiny_cfg():
    return ModelConfig(
        n_patches=2,
        patch_res=16,
        enc_channels=(4, 8, 8),
        dec_channels=(8, 4, 4),
        embed_hidden=8,
        reduce_channels=2,
        depth=2,
        heads=2,
        dtype="float64",
    )


@pytest.fixture(scope="session")
def small_cfg():
    """18 patches at 16x16: fast, but exercises the default layout."""
    return ModelConfig(
        n_patches=18,
        patch_res=16,
        enc_channels=(4, 8, 8),
        dec_channels=(8, 4, 4),
        embed_hidden=8,
        reduce_channels=2,
        depth=2,
        heads=2,
    )
