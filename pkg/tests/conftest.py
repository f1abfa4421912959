import numpy as np
import pytest

from mcstokes.condensation import condense_sigma_omega, double_schur
from mcstokes.dofmap import FeSystem
from mcstokes.mesh import build_structured, classify_boundary

NU = 1e-3


def dirichlet_neumann_regions(mesh, dirichlet_value=None):
    """Left/top/bottom Dirichlet, right natural outflow."""
    x1 = mesh.vertices[:, 0].max()
    eps = 1e-12
    return classify_boundary(
        mesh,
        dirichlet=lambda x: x[0] < x1 - eps,
        neumann=lambda x: x[0] >= x1 - eps,
        dirichlet_value=dirichlet_value)


def all_dirichlet_regions(mesh, dirichlet_value=None):
    return classify_boundary(mesh, dirichlet=lambda x: True,
                             dirichlet_value=dirichlet_value,
                             mean_zero_pressure=True)


def all_natural_regions(mesh):
    return classify_boundary(mesh, neumann=lambda x: True,
                             allow_no_dirichlet=True)


def random_free_vv(fes, rng):
    x = np.zeros(fes.n_vv)
    x[fes.vv_free] = rng.standard_normal(int(fes.vv_free.sum()))
    return x


@pytest.fixture(scope="session")
def mesh8():
    return build_structured(2, 2)


@pytest.fixture(scope="session")
def mesh2():
    return build_structured(1, 1)


@pytest.fixture(scope="session")
def fes8_k2(mesh8):
    return FeSystem(mesh8, all_dirichlet_regions(mesh8), 2)


@pytest.fixture(scope="session")
def fes8_k3(mesh8):
    return FeSystem(mesh8, all_dirichlet_regions(mesh8), 3)


@pytest.fixture(scope="session")
def fes2_k2(mesh2):
    return FeSystem(mesh2, dirichlet_neumann_regions(mesh2), 2)


@pytest.fixture(scope="session")
def sys8_k2(fes8_k2):
    return double_schur(condense_sigma_omega(fes8_k2, NU))


@pytest.fixture(scope="session")
def sys2_k2(fes2_k2):
    return double_schur(condense_sigma_omega(fes2_k2, NU))


@pytest.fixture(scope="session")
def fes8_free(mesh8):
    return FeSystem(mesh8, all_natural_regions(mesh8), 2)
