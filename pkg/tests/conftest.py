import numpy as np
import pytest
import torch

from farm.core import NormRange, VoxelGridSpec, patch_plan
from farm.dataset import DatasetConfig, FarmDataset, build_dataset
from farm.synth import generate_scene, render_arm


@pytest.fixture(scope="session")
def small_spec():
    return VoxelGridSpec(L=16, W=16, H=4, delta=2.0)


@pytest.fixture(scope="session")
def small_plan(small_spec):
    return patch_plan(small_spec, (8, 8, 2))


@pytest.fixture(scope="session")
def desk_spec():
    return VoxelGridSpec(L=64, W=64, H=8, delta=4.0)


@pytest.fixture(scope="session")
def desk_plan(desk_spec):
    return patch_plan(desk_spec, (32, 32, 2))


@pytest.fixture(scope="session")
def desk_scene(desk_spec):
    building, bs = generate_scene(11, desk_spec, 8)
    return building, bs


@pytest.fixture(scope="session")
def desk_volume(desk_scene):
    building, bs = desk_scene
    vol = render_arm(building, bs)
    norm = NormRange(min_dbm=float(vol.values.min()), max_dbm=float(vol.values.max()))
    return vol.with_norm(norm)


@pytest.fixture(scope="session")
def built_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("dataset")
    config = DatasetConfig(name="test", n_scenes=2, n_buildings=6, tx_per_scene=1,
                           frequencies_ghz=[2.1, 3.3], antenna_types=["iso"], seed=9)
    build_dataset(config, root)
    return FarmDataset(root)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
    np.random.seed(0)
