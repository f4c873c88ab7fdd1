import numpy as np
import pytest

from pipeflow.materials import material_from_table
from pipeflow.mesh import channel_spec, generate_pipe, unit_square_mesh


@pytest.fixture(scope="session")
def piecewise_law():
    """rho = 2 below 0, linear 2 -> 1 on [0, 10], 1 above."""
    return material_from_table([(0.0, 2.0), (10.0, 1.0)])


@pytest.fixture(scope="session")
def unit_law():
    return material_from_table([(0.0, 1.0)])


@pytest.fixture(scope="session")
def channel_coarse():
    return generate_pipe(channel_spec(length=4.0, half_width=1.0, h=0.5))


@pytest.fixture(scope="session")
def channel_medium():
    return generate_pipe(channel_spec(length=4.0, half_width=1.0, h=0.25))


@pytest.fixture(scope="session")
def square4():
    return unit_square_mesh(4)


def poiseuille(x, t=0.0):
    return np.stack([1.0 - x[..., 1] ** 2, np.zeros(x.shape[:-1])], axis=-1)


def cube_mesh(n: int = 2):
    """Kuhn triangulation of the unit cube; cuts x=0 (1) and x=1 (2), walls elsewhere."""
    from itertools import permutations

    from pipeflow.mesh import WALL, PipeMesh

    g = np.linspace(0.0, 1.0, n + 1)
    X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
    idx = lambda i, j, k: (i * (n + 1) + j) * (n + 1) + k  # noqa: E731
    cells = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for perm in permutations(range(3)):
                    c = [i, j, k]
                    tet = [idx(*c)]
                    for ax in perm:
                        c[ax] += 1
                        tet.append(idx(*c))
                    cells.append(tet)
    cells = np.array(cells)
    faces = {}
    for c in cells:
        for skip in range(4):
            f = tuple(sorted(int(v) for m, v in enumerate(c) if m != skip))
            faces[f] = faces.get(f, 0) + 1
    bnd = {}
    for f, cnt in faces.items():
        if cnt != 1:
            continue
        ctr = pts[list(f)].mean(axis=0)
        bnd[f] = 1 if ctr[0] < 1e-12 else 2 if ctr[0] > 1 - 1e-12 else WALL
    return PipeMesh(pts, cells, bnd, name=f"cube-{n}")


def single_triangle():
    from pipeflow.mesh import WALL, PipeMesh

    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return PipeMesh(pts, np.array([[0, 1, 2]]), {(0, 1): WALL, (0, 2): WALL, (1, 2): 1}, name="tri")


def single_tet():
    from pipeflow.mesh import WALL, PipeMesh

    pts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    bnd = {(0, 1, 2): WALL, (0, 1, 3): WALL, (0, 2, 3): WALL, (1, 2, 3): 1}
    return PipeMesh(pts, np.array([[0, 1, 2, 3]]), bnd, name="tet")
