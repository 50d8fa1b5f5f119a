"""Symmetric chamfer distance between point sets."""

import numpy as np
from scipy.spatial import cKDTree

from ..errors import InvalidInputError


def chamfer(p, q):
    """Two-term chamfer distance in cm^2.

    Mean squared nearest-neighbor distance from p to q plus the mean from
    q to p. Zero iff the sets coincide.
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if len(p) == 0 or len(q) == 0:
        raise InvalidInputError("chamfer requires non-empty point sets")
    d_pq, _ = cKDTree(q).query(p)
    d_qp, _ = cKDTree(p).query(q)
    return float(np.mean(d_pq ** 2) + np.mean(d_qp ** 2))
