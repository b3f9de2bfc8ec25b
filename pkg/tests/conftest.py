import numpy as np
import pytest

from eitlab.geometry import build_disk_mesh, build_pixel_partition, make_electrodes
from eitlab.continuum import NtDModel, trig_basis
from eitlab.cem import CEMModel


@pytest.fixture(scope="session")
def coarse_mesh():
    return build_disk_mesh(1.0, 0.1, boundary_multiple=32)


@pytest.fixture(scope="session")
def mesh():
    return build_disk_mesh(1.0, 0.05, boundary_multiple=128)


@pytest.fixture(scope="session")
def coarse_partition(coarse_mesh):
    return build_pixel_partition(coarse_mesh, (2, 2), 0.2)


@pytest.fixture(scope="session")
def partition(mesh):
    return build_pixel_partition(mesh, (2, 2), 0.2)


@pytest.fixture(scope="session")
def coarse_ntd(coarse_mesh, coarse_partition):
    return NtDModel(coarse_mesh, coarse_partition, trig_basis(coarse_mesh, 8))


@pytest.fixture(scope="session")
def coarse_cem(coarse_mesh, coarse_partition):
    return CEMModel(coarse_mesh, coarse_partition, make_electrodes(coarse_mesh, 8, 0.5, 0.1))


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(12345))
