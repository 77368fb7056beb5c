import numpy as np
import pytest

from meshannot.fixtures import FixtureSpec, build_fixture
from meshannot.mesh_core import build_mesh


def _grid_quad(builder_verts, builder_faces, origin, du, dv, nu, nv):
    origin = np.asarray(origin, dtype=float)
    du = np.asarray(du, dtype=float)
    dv = np.asarray(dv, dtype=float)

    def vid(p):
        key = tuple(np.round(p, 9))
        if key not in builder_verts:
            builder_verts[key] = len(builder_verts)
        return builder_verts[key]

    for i in range(nu):
        for j in range(nv):
            p00 = origin + i * du + j * dv
            p10 = p00 + du
            p11 = p00 + du + dv
            p01 = p00 + dv
            builder_faces.append([vid(p00), vid(p10), vid(p11)])
            builder_faces.append([vid(p00), vid(p11), vid(p01)])


def floating_cube_on_ground(with_ground=True):
    """Closed subdivided unit cube (optionally over a separate ground grid).

    The cube shares no vertices with the ground, so the two are distinct
    connected components: 6 cube segments (+1 ground).
    """
    verts: dict = {}
    faces: list = []
    s = 0.5
    # Six cube sides, each a 2x2 grid.
    _grid_quad(verts, faces, (1.5, 1.5, 0.0), (s, 0, 0), (0, 0, s), 2, 2)    # -y
    _grid_quad(verts, faces, (2.5, 2.5, 0.0), (-s, 0, 0), (0, 0, s), 2, 2)   # +y
    _grid_quad(verts, faces, (1.5, 2.5, 0.0), (0, -s, 0), (0, 0, s), 2, 2)   # -x
    _grid_quad(verts, faces, (2.5, 1.5, 0.0), (0, s, 0), (0, 0, s), 2, 2)    # +x
    _grid_quad(verts, faces, (1.5, 1.5, 1.0), (s, 0, 0), (0, s, 0), 2, 2)    # top
    _grid_quad(verts, faces, (1.5, 2.5, 0.0), (s, 0, 0), (0, -s, 0), 2, 2)   # bottom
    if with_ground:
        _grid_quad(verts, faces, (0.0, 0.0, 0.0), (1.0, 0, 0), (0, 1.0, 0), 4, 4)
    coords = np.zeros((len(verts), 3))
    for key, idx in verts.items():
        coords[idx] = key
    return build_mesh(coords, np.array(faces))


@pytest.fixture(scope="session")
def box_fixture():
    """One unit box conformingly seated on an 8 m ground grid."""
    return build_fixture(FixtureSpec(seed=1))


@pytest.fixture(scope="session")
def five_box_fixture():
    """Five identical boxes plus three larger distractors (~4x volume)."""
    return build_fixture(FixtureSpec(
        seed=3,
        ground_extent=14.0,
        ground_cell=0.2,
        box_edges=(1.0, 1.0, 1.0, 1.0, 1.0, 1.6, 1.6, 1.6),
        windows_per_box=0,
        marking_cells=0,
        texels_per_meter=8,
    ))
