"""Analytic solid primitives: spheres, capsules, boxes.

Primitives stand in for per-link meshes so the optimizer gets exact
signed distances and gradients. Each primitive carries a rigid pose in
its owning frame; capsules run along their local +z axis.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError
from .mesh import TriMesh

KINDS = ("sphere", "capsule", "box")


@dataclass(frozen=True)
class Primitive:
    """kind: sphere {radius}; capsule {radius, half_length}; box {half extents}."""

    kind: str
    params: tuple
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown primitive kind {self.kind!r}")
        expected = {"sphere": 1, "capsule": 2, "box": 3}[self.kind]
        if len(self.params) != expected:
            raise InvalidInputError(f"{self.kind} expects {expected} parameters")
        if any(p <= 0 for p in self.params):
            raise InvalidInputError("primitive size parameters must be > 0")
        R = np.asarray(self.rotation, dtype=float)
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-8:
            raise InvalidInputError("primitive rotation must be orthonormal")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=float))


def primitive_sdf(prim, points, with_gradient=True):
    """Exact SDF of one primitive; gradient is unit-length off the surface.

    ``points`` are in the primitive's owning frame; the local pose is
    applied internally.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    local = (points - prim.translation) @ prim.rotation  # R^T (p - t)
    if prim.kind == "sphere":
        d, g = _sphere_sdf(local, prim.params[0])
    elif prim.kind == "capsule":
        d, g = _capsule_sdf(local, prim.params[0], prim.params[1])
    else:
        d, g = _box_sdf(local, np.asarray(prim.params, dtype=float))
    if not with_gradient:
        return d
    return d, g @ prim.rotation.T


def _sphere_sdf(p, r):
    n = np.linalg.norm(p, axis=1)
    d = n - r
    with np.errstate(invalid="ignore", divide="ignore"):
        g = p / n[:, None]
    g[n < 1e-12] = np.array([0.0, 0.0, 1.0])  # center: any direction works
    return d, g


def _capsule_sdf(p, r, h):
    q = p.copy()
    q[:, 2] -= np.clip(p[:, 2], -h, h)
    n = np.linalg.norm(q, axis=1)
    d = n - r
    with np.errstate(invalid="ignore", divide="ignore"):
        g = q / n[:, None]
    on_axis = n < 1e-12
    g[on_axis] = 0.0
    g[on_axis, 0] = 1.0  # radial tie: push out along +x
    return d, g


def _box_sdf(p, he):
    q = np.abs(p) - he
    outside = np.maximum(q, 0.0)
    out_norm = np.linalg.norm(outside, axis=1)
    inner = np.minimum(q.max(axis=1), 0.0)
    d = out_norm + inner
    g = np.zeros_like(p)
    out_mask = out_norm > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        g[out_mask] = (outside[out_mask] / out_norm[out_mask, None]) * np.sign(p[out_mask])
    in_mask = ~out_mask
    if np.any(in_mask):
        rows = np.nonzero(in_mask)[0]
        axis = q[rows].argmax(axis=1)
        s = np.sign(p[rows, axis])
        s[s == 0] = 1.0
        g[rows, axis] = s
    return d, g


def union_sdf(prims, points, with_gradient=True):
    """SDF of a union of primitives: min over members, gradient from argmin."""
    points = np.atleast_2d(points)
    best = np.full(len(points), np.inf)
    grad = np.zeros((len(points), 3))
    for prim in prims:
        d, g = primitive_sdf(prim, points)
        better = d < best
        best[better] = d[better]
        grad[better] = g[better]
    if not with_gradient:
        return best
    return best, grad


# ---------------------------------------------------------------------------
# tessellation (for export, demonstrations, and per-link surface sampling)


def tessellate(prim, subdivisions=2, segments=24):
    """Closed triangle mesh approximating the primitive, in owning-frame cm."""
    if prim.kind == "sphere":
        mesh = _icosphere(prim.params[0], subdivisions)
    elif prim.kind == "capsule":
        mesh = _capsule_mesh(prim.params[0], prim.params[1], segments)
    else:
        mesh = _box_mesh(np.asarray(prim.params, dtype=float))
    return mesh.transformed(prim.rotation, prim.translation)


def _icosphere(radius, subdivisions):
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=float)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ])
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    for _ in range(subdivisions):
        edge_mid = {}
        new_faces = []
        verts_list = verts.tolist()

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in edge_mid:
                m = np.asarray(verts_list[i]) + np.asarray(verts_list[j])
                m /= np.linalg.norm(m)
                edge_mid[key] = len(verts_list)
                verts_list.append(m.tolist())
            return edge_mid[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.array(verts_list)
        faces = np.array(new_faces)
    return TriMesh(verts * radius, faces)


def _capsule_mesh(radius, half_length, segments, rings=6):
    """UV capsule along +z: two hemispheres joined by a cylinder."""
    verts = [[0.0, 0.0, half_length + radius]]
    # top hemisphere rings (from pole down to equator), then bottom mirrored
    lat_top = np.linspace(np.pi / 2, 0, rings + 1)[1:]
    lat_bot = np.linspace(0, -np.pi / 2, rings + 1)[:-1]
    ang = np.linspace(0, 2 * np.pi, segments, endpoint=False)
    rows = []
    for lat, zc in [(lat_top, half_length), (lat_bot, -half_length)]:
        for phi in lat:
            r = radius * np.cos(phi)
            z = zc + radius * np.sin(phi)
            row = []
            for a in ang:
                row.append(len(verts))
                verts.append([r * np.cos(a), r * np.sin(a), z])
            rows.append(row)
    south = len(verts)
    verts.append([0.0, 0.0, -half_length - radius])

    faces = []
    first = rows[0]
    for k in range(segments):
        faces.append([0, first[k], first[(k + 1) % segments]])
    for r0, r1 in zip(rows[:-1], rows[1:]):
        for k in range(segments):
            k1 = (k + 1) % segments
            faces.append([r0[k], r1[k], r1[k1]])
            faces.append([r0[k], r1[k1], r0[k1]])
    last = rows[-1]
    for k in range(segments):
        faces.append([last[k], south, last[(k + 1) % segments]])
    return TriMesh(np.array(verts), np.array(faces))


def _box_mesh(he):
    x, y, z = he
    verts = np.array([
        [-x, -y, -z], [x, -y, -z], [x, y, -z], [-x, y, -z],
        [-x, -y, z], [x, -y, z], [x, y, z], [-x, y, z],
    ])
    faces = np.array([
        [0, 2, 1], [0, 3, 2],  # bottom (-z)
        [4, 5, 6], [4, 6, 7],  # top (+z)
        [0, 1, 5], [0, 5, 4],  # -y
        [2, 3, 7], [2, 7, 6],  # +y
        [1, 2, 6], [1, 6, 5],  # +x
        [3, 0, 4], [3, 4, 7],  # -x
    ])
    return TriMesh(verts, faces)
