import numpy as np
import pytest

from graspsynth.errors import InvalidInputError
from graspsynth.geometry import (TriMesh, bbox_diagonal, load_mesh,
                                 load_point_cloud, save_obj, save_ply)

from conftest import make_unit_cube
from oracles import rot_about


def test_face_index_out_of_range():
    with pytest.raises(InvalidInputError):
        TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 3]])


def test_degenerate_faces_dropped():
    verts = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]]
    faces = [[0, 1, 2], [0, 1, 3]]  # second is collinear
    with pytest.warns(UserWarning):
        mesh = TriMesh(verts, faces)
    assert mesh.dropped_faces == 1
    assert len(mesh.faces) == 1


def test_nonfinite_vertices_rejected():
    with pytest.raises(InvalidInputError):
        TriMesh([[0, 0, 0], [1, 0, 0], [0, np.nan, 0]], [[0, 1, 2]])


def test_bbox_diagonal_unit_cube():
    assert bbox_diagonal(make_unit_cube()) == pytest.approx(np.sqrt(3), abs=1e-12)


def test_bbox_diagonal_scales_linearly():
    cube = make_unit_cube()
    assert bbox_diagonal(cube.scaled(2.0)) == pytest.approx(2 * np.sqrt(3), abs=1e-12)


def test_bbox_diagonal_rotated_cube_matches_vertex_extrema():
    cube = make_unit_cube()
    R = rot_about([0.3, 1.0, -0.2], 0.7)
    rotated = cube.transformed(R, np.array([1.0, -2.0, 0.5]))
    v = rotated.vertices
    expected = np.linalg.norm(v.max(axis=0) - v.min(axis=0))
    assert bbox_diagonal(rotated) == pytest.approx(expected, abs=1e-12)


def test_watertight_detection(unit_cube):
    assert unit_cube.is_watertight()
    open_mesh = TriMesh(unit_cube.vertices, unit_cube.faces[:-1])
    assert not open_mesh.is_watertight()


def test_obj_roundtrip(tmp_path, unit_cube):
    path = tmp_path / "cube.obj"
    save_obj(path, unit_cube)
    back = load_mesh(path)
    assert np.allclose(back.vertices, unit_cube.vertices)
    assert np.array_equal(back.faces, unit_cube.faces)


def test_ply_ascii_roundtrip(tmp_path, unit_cube):
    path = tmp_path / "cube.ply"
    save_ply(path, unit_cube.vertices, unit_cube.faces)
    back = load_mesh(path)
    assert np.allclose(back.vertices, unit_cube.vertices, atol=1e-6)
    assert np.array_equal(back.faces, unit_cube.faces)


def test_ply_point_cloud_with_normals(tmp_path):
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(50, 3))
    nrm = rng.normal(size=(50, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    path = tmp_path / "cloud.ply"
    save_ply(path, pts, normals=nrm)
    back_pts, back_nrm = load_point_cloud(path)
    assert np.allclose(back_pts, pts, atol=1e-6)
    assert np.allclose(back_nrm, nrm, atol=1e-6)


def test_ply_binary_little_endian(tmp_path):
    # hand-rolled binary PLY: 3 vertices, 1 face
    import struct
    path = tmp_path / "tri.ply"
    header = (b"ply\nformat binary_little_endian 1.0\n"
              b"element vertex 3\n"
              b"property float x\nproperty float y\nproperty float z\n"
              b"element face 1\n"
              b"property list uchar int vertex_indices\n"
              b"end_header\n")
    with open(path, "wb") as fh:
        fh.write(header)
        for p in [(0, 0, 0), (1, 0, 0), (0, 1, 0)]:
            fh.write(struct.pack("<fff", *p))
        fh.write(struct.pack("<Biii", 3, 0, 1, 2))
    mesh = load_mesh(path)
    assert len(mesh.vertices) == 3
    assert np.array_equal(mesh.faces, [[0, 1, 2]])
