"""Shared fixtures: small cached meshes/spaces and the bundled crescent mesh."""

from importlib.resources import files

import pytest

from penflow.assembly import assemble_static
from penflow.fem import build_space
from penflow.mesh import generate_unit_square, load_gmsh


@pytest.fixture(scope="session")
def square4():
    return build_space(generate_unit_square(4))


@pytest.fixture(scope="session")
def square8():
    return build_space(generate_unit_square(8))


@pytest.fixture(scope="session")
def square16():
    return build_space(generate_unit_square(16))


@pytest.fixture(scope="session")
def ops4(square4):
    return assemble_static(square4)


@pytest.fixture(scope="session")
def ops8(square8):
    return assemble_static(square8)


@pytest.fixture(scope="session")
def cylinder_mesh_path():
    return files("penflow") / "data" / "offset_cylinder_lc0.1.msh"


@pytest.fixture(scope="session")
def cylinder_space(cylinder_mesh_path):
    return build_space(load_gmsh(str(cylinder_mesh_path), h_char=0.1))
