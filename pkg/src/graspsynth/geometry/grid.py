"""Occupancy grids and dense SDF grids.

Voxelization marks a cell occupied iff its center lies strictly inside
the mesh. Inside tests rasterize z-axis columns against the triangles
and take crossing parity; columns that graze a shared edge fall back to
winding numbers.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import InvalidInputError
from .sdf import TriangleBVH, winding_numbers

DEFAULT_SPACING = 0.25  # cm
PAD_CELLS = 2


@dataclass(frozen=True)
class OccupancyGrid:
    """Boolean voxel grid. origin is the corner of cell (0,0,0); centers
    sit at origin + (i + 0.5) * spacing."""

    origin: np.ndarray
    spacing: float
    dims: tuple
    occupancy: np.ndarray

    def __post_init__(self):
        if any(d < 1 for d in self.dims):
            raise InvalidInputError("grid dims must be >= 1")
        self.occupancy.setflags(write=False)

    def cell_centers(self):
        ii, jj, kk = np.meshgrid(*[np.arange(d) for d in self.dims], indexing="ij")
        idx = np.stack([ii, jj, kk], axis=-1).reshape(-1, 3)
        return self.origin + (idx + 0.5) * self.spacing

    @property
    def cell_volume(self):
        return self.spacing ** 3

    def occupied_volume(self):
        return float(self.occupancy.sum()) * self.cell_volume

    def count(self):
        return int(self.occupancy.sum())


def _grid_layout(lo, hi, spacing, pad_cells=PAD_CELLS):
    origin = lo - pad_cells * spacing
    extent = (hi - lo) + 2 * pad_cells * spacing
    dims = tuple(int(np.ceil(e / spacing - 1e-9)) for e in extent)
    dims = tuple(max(d, 1) for d in dims)
    return origin, dims


def _column_crossings(mesh, xs, ys):
    """Z values where each (x, y) column crosses the surface.

    Returns (crossings, ambiguous): a list-of-lists over the flattened
    column grid and a boolean mask of columns whose parity is unreliable.
    """
    nx, ny = len(xs), len(ys)
    crossings = [[] for _ in range(nx * ny)]
    ambiguous = np.zeros(nx * ny, dtype=bool)
    tri = mesh.triangles
    x0 = xs[0]
    y0 = ys[0]
    dx = xs[1] - xs[0] if nx > 1 else 1.0
    dy = ys[1] - ys[0] if ny > 1 else 1.0

    for t in range(len(tri)):
        a, b, c = tri[t]
        n = np.cross(b - a, c - a)
        if abs(n[2]) < 1e-14:  # column-parallel face: no z crossing
            continue
        txmin, txmax = min(a[0], b[0], c[0]), max(a[0], b[0], c[0])
        tymin, tymax = min(a[1], b[1], c[1]), max(a[1], b[1], c[1])
        i0 = max(int(np.ceil((txmin - x0) / dx - 1e-12)), 0)
        i1 = min(int(np.floor((txmax - x0) / dx + 1e-12)), nx - 1)
        j0 = max(int(np.ceil((tymin - y0) / dy - 1e-12)), 0)
        j1 = min(int(np.floor((tymax - y0) / dy + 1e-12)), ny - 1)
        if i0 > i1 or j0 > j1:
            continue
        gx, gy = np.meshgrid(xs[i0:i1 + 1], ys[j0:j1 + 1], indexing="ij")
        px = gx.ravel() - a[0]
        py = gy.ravel() - a[1]
        # 2-D barycentric in the xy projection
        ux, uy = b[0] - a[0], b[1] - a[1]
        vx, vy = c[0] - a[0], c[1] - a[1]
        det = ux * vy - uy * vx
        s = (px * vy - py * vx) / det
        r = (ux * py - uy * px) / det
        inside = (s >= 0) & (r >= 0) & (s + r <= 1)
        border = ((np.abs(s) < 1e-12) | (np.abs(r) < 1e-12)
                  | (np.abs(1 - s - r) < 1e-12))
        if not np.any(inside):
            continue
        z = a[2] + s * (b[2] - a[2]) + r * (c[2] - a[2])
        flat_i = (np.arange(i0, i1 + 1)[:, None] * ny
                  + np.arange(j0, j1 + 1)[None, :]).ravel()
        for f, ins, brd, zc in zip(flat_i, inside, border, z):
            if ins:
                crossings[f].append(zc)
                if brd:
                    ambiguous[f] = True
    return crossings, ambiguous


def voxelize(mesh, spacing=DEFAULT_SPACING):
    """Occupancy grid of the mesh at the given spacing (cm)."""
    if not mesh.is_watertight():
        raise InvalidInputError("voxelize requires a watertight mesh")
    lo, hi = mesh.bounds()
    origin, dims = _grid_layout(lo, hi, spacing)
    occ = occupancy_from_mesh(mesh, origin, spacing, dims)
    return OccupancyGrid(np.asarray(origin, dtype=float), float(spacing), dims, occ)


def occupancy_from_mesh(mesh, origin, spacing, dims):
    """Inside test of all cell centers via column parity."""
    nx, ny, nz = dims
    xs = origin[0] + (np.arange(nx) + 0.5) * spacing
    ys = origin[1] + (np.arange(ny) + 0.5) * spacing
    zs = origin[2] + (np.arange(nz) + 0.5) * spacing
    crossings, ambiguous = _column_crossings(mesh, xs, ys)
    occ = np.zeros((nx, ny, nz), dtype=bool)
    ztol = 1e-9 * (np.abs(mesh.vertices).max() + 1.0)
    for i in range(nx):
        for j in range(ny):
            f = i * ny + j
            cz = crossings[f]
            if not cz:
                continue
            cz = np.sort(np.asarray(cz))
            below = np.searchsorted(cz, zs, side="left")
            occ[i, j] = below % 2 == 1
            if not ambiguous[f] and np.any(np.abs(zs[:, None] - cz[None, :]) < ztol):
                ambiguous[f] = True
    amb_cols = np.nonzero(ambiguous)[0]
    if len(amb_cols):
        ii, jj = amb_cols // ny, amb_cols % ny
        centers = np.column_stack([np.repeat(xs[ii], nz),
                                   np.repeat(ys[jj], nz),
                                   np.tile(zs, len(amb_cols))])
        wn = winding_numbers(centers, mesh) > 0.5
        occ[np.repeat(ii, nz), np.repeat(jj, nz),
            np.tile(np.arange(nz), len(amb_cols))] = wn
    return occ


def occupancy_from_sdf(sdf_fn, origin, spacing, dims, chunk=65536):
    """Occupancy grid from any callable SDF (cell center strictly inside)."""
    nx, ny, nz = dims
    ii, jj, kk = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                             indexing="ij")
    centers = origin + (np.stack([ii, jj, kk], axis=-1).reshape(-1, 3) + 0.5) * spacing
    occ = np.empty(len(centers), dtype=bool)
    for s in range(0, len(centers), chunk):
        occ[s:s + chunk] = sdf_fn(centers[s:s + chunk]) < 0
    return occ.reshape(dims)


def iou(a, b):
    """Intersection over union of two occupancy grids.

    Grids must share layout; ``b`` is resampled onto ``a``'s layout by
    nearest cell when they differ. Two empty grids give 1.0.
    """
    if (a.dims != b.dims or a.spacing != b.spacing
            or not np.allclose(a.origin, b.origin)):
        b = _resample(b, a)
    inter = int(np.count_nonzero(a.occupancy & b.occupancy))
    union = int(np.count_nonzero(a.occupancy | b.occupancy))
    if union == 0:
        return 1.0
    return inter / union


def _resample(b, ref):
    centers = ref.cell_centers()
    idx = np.floor((centers - b.origin) / b.spacing).astype(int)
    ok = np.all((idx >= 0) & (idx < np.array(b.dims)), axis=1)
    occ = np.zeros(len(centers), dtype=bool)
    occ[ok] = b.occupancy[idx[ok, 0], idx[ok, 1], idx[ok, 2]]
    return OccupancyGrid(ref.origin.copy(), ref.spacing, ref.dims,
                         occ.reshape(ref.dims))


# ---------------------------------------------------------------------------
# dense signed-distance grids


@dataclass
class SdfGrid:
    """Trilinear-interpolated signed distance field on a regular grid.

    ``values[i, j, k]`` is the signed distance at node
    origin + (i, j, k) * spacing. Queries outside the grid are clamped to
    the boundary and padded with the Euclidean distance to the box, which
    keeps far-field gradients pointing back toward the grid.
    """

    origin: np.ndarray
    spacing: float
    values: np.ndarray

    @property
    def dims(self):
        return self.values.shape

    def _locate(self, points):
        rel = (np.atleast_2d(points) - self.origin) / self.spacing
        hi = np.array(self.values.shape) - 1
        clamped = np.clip(rel, 0.0, hi - 1e-9)
        overshoot = (rel - np.clip(rel, 0.0, hi)) * self.spacing
        outside = np.linalg.norm(overshoot, axis=1)
        return rel, clamped, outside, overshoot

    def query(self, points):
        _, clamped, outside, _ = self._locate(points)
        i0 = np.floor(clamped).astype(int)
        f = clamped - i0
        vals = np.zeros(len(clamped))
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    w = (np.where(dx, f[:, 0], 1 - f[:, 0])
                         * np.where(dy, f[:, 1], 1 - f[:, 1])
                         * np.where(dz, f[:, 2], 1 - f[:, 2]))
                    vals += w * self.values[i0[:, 0] + dx, i0[:, 1] + dy,
                                            i0[:, 2] + dz]
        return vals + outside

    def gradient(self, points):
        """Analytic gradient of the trilinear interpolant (plus box term)."""
        _, clamped, outside, overshoot = self._locate(points)
        i0 = np.floor(clamped).astype(int)
        f = clamped - i0
        grad = np.zeros((len(clamped), 3))
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    v = self.values[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
                    wx = np.where(dx, f[:, 0], 1 - f[:, 0])
                    wy = np.where(dy, f[:, 1], 1 - f[:, 1])
                    wz = np.where(dz, f[:, 2], 1 - f[:, 2])
                    sx = 1.0 if dx else -1.0
                    sy = 1.0 if dy else -1.0
                    sz = 1.0 if dz else -1.0
                    grad[:, 0] += sx * wy * wz * v
                    grad[:, 1] += wx * sy * wz * v
                    grad[:, 2] += wx * wy * sz * v
        grad /= self.spacing
        out_mask = outside > 0
        if np.any(out_mask):
            grad[out_mask] += overshoot[out_mask] / outside[out_mask, None]
        return grad


def sdf_grid_from_mesh(mesh, spacing, pad_cells=3, band_cells=3):
    """Dense SDF grid: exact distances in a narrow band, propagated beyond.

    The narrow band around the surface gets exact point-triangle
    distances; farther nodes take the distance to the nearest band node
    plus that node's exact value (error O(spacing), fine in the far field).
    """
    if not mesh.is_watertight():
        raise InvalidInputError("sdf grid requires a watertight mesh")
    lo, hi = mesh.bounds()
    origin = lo - pad_cells * spacing
    dims = tuple(int(np.ceil((h - l + 2 * pad_cells * spacing) / spacing)) + 1
                 for l, h in zip(lo, hi))
    nx, ny, nz = dims
    # node positions coincide with centers of a half-shifted cell grid
    node_origin = origin - 0.5 * spacing
    inside = occupancy_from_mesh(mesh, node_origin, spacing, dims)

    boundary = np.zeros(dims, dtype=bool)
    for axis in range(3):
        sl_a = [slice(None)] * 3
        sl_b = [slice(None)] * 3
        sl_a[axis] = slice(0, -1)
        sl_b[axis] = slice(1, None)
        diff = inside[tuple(sl_a)] != inside[tuple(sl_b)]
        boundary[tuple(sl_a)] |= diff
        boundary[tuple(sl_b)] |= diff
    band = ndimage.binary_dilation(boundary, iterations=band_cells)

    ii, jj, kk = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                             indexing="ij")
    nodes = origin + np.stack([ii, jj, kk], axis=-1) * spacing
    values = np.full(dims, np.nan)

    band_idx = np.nonzero(band)
    band_pts = nodes[band_idx]
    bvh = TriangleBVH(mesh)
    d = np.empty(len(band_pts))
    for s in range(0, len(band_pts), 8192):
        d[s:s + 8192], _ = bvh.min_distance(band_pts[s:s + 8192])
    values[band_idx] = d

    far = ~band
    if np.any(far):
        edt, indices = ndimage.distance_transform_edt(
            far, sampling=spacing, return_indices=True)
        src = (indices[0][far], indices[1][far], indices[2][far])
        values[far] = edt[far] + values[src]
    values[inside] *= -1.0
    return SdfGrid(np.asarray(origin, dtype=float), float(spacing), values)
