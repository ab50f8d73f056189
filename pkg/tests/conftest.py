import numpy as np
import pytest

from mrisynth.volume import VoxelGrid


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_grid(data, spacing=(1.0, 1.0, 1.0), affine=None) -> VoxelGrid:
    return VoxelGrid.from_array(np.asarray(data, dtype=np.float32),
                                spacing=spacing, affine=affine)


def random_grid(rng, dims=(6, 5, 4), spacing=(1.0, 1.0, 1.0)) -> VoxelGrid:
    return make_grid(rng.normal(size=dims).astype(np.float32), spacing=spacing)
