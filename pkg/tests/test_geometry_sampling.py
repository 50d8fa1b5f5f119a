import numpy as np
import pytest

from graspsynth.errors import InvalidInputError
from graspsynth.geometry import TriMesh, sample_surface

from conftest import make_unit_cube


def test_counts_proportional_to_area():
    # unit cube: 6 equal faces, each pair of triangles should get ~1000 of 6000
    cube = make_unit_cube()
    samples = sample_surface(cube, n=6000, seed=3)
    normals = cube.face_normals()
    per_side = []
    for axis in range(3):
        for sign in (-1, 1):
            mask = normals[samples.face_ids][:, axis] * sign > 0.5
            per_side.append(int(mask.sum()))
    assert sum(per_side) == 6000
    for count in per_side:
        assert abs(count - 1000) < 0.05 * 1000


def test_area_weighting_statistics():
    # two triangles with 1:4 area ratio; binomial 3-sigma band
    verts = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 2], [2, 0, 2], [0, 2, 2]]
    faces = [[0, 1, 2], [3, 4, 5]]
    mesh = TriMesh(verts, faces)
    n = 5000
    samples = sample_surface(mesh, n=n, seed=11)
    p = 0.2
    k = int(np.sum(samples.face_ids == 0))
    sigma = np.sqrt(n * p * (1 - p))
    assert abs(k - n * p) < 3 * sigma


def test_single_triangle_points_in_plane():
    mesh = TriMesh([[0, 0, 1], [1, 0, 1], [0, 1, 1]], [[0, 1, 2]])
    samples = sample_surface(mesh, n=3, seed=0)
    assert np.allclose(samples.points[:, 2], 1.0, atol=1e-12)
    assert np.all(samples.face_ids == 0)


def test_points_lie_on_source_faces():
    cube = make_unit_cube()
    samples = sample_surface(cube, n=500, seed=5)
    tri = cube.triangles[samples.face_ids]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    off_plane = np.abs(np.einsum("ij,ij->i", samples.points - tri[:, 0], n))
    assert off_plane.max() < 1e-6


def test_determinism():
    cube = make_unit_cube()
    a = sample_surface(cube, n=100, seed=42)
    b = sample_surface(cube, n=100, seed=42)
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.face_ids, b.face_ids)
    c = sample_surface(cube, n=100, seed=43)
    assert not np.array_equal(a.points, c.points)


def test_normals_unit_length():
    cube = make_unit_cube()
    samples = sample_surface(cube, n=200, seed=1)
    assert np.allclose(np.linalg.norm(samples.normals, axis=1), 1.0, atol=1e-6)


def test_invalid_count():
    with pytest.raises(InvalidInputError):
        sample_surface(make_unit_cube(), n=0)
