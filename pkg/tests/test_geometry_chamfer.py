import numpy as np
import pytest

from graspsynth.errors import InvalidInputError
from graspsynth.geometry import chamfer

from oracles import chamfer_bruteforce


def test_identical_sets():
    rng = np.random.default_rng(0)
    p = rng.normal(size=(64, 3))
    assert chamfer(p, p) == 0.0


def test_single_pair():
    assert chamfer([[0, 0, 0]], [[1, 0, 0]]) == pytest.approx(2.0, abs=1e-12)


def test_matches_bruteforce_exactly():
    rng = np.random.default_rng(3)
    for _ in range(5):
        p = rng.normal(size=(rng.integers(5, 80), 3))
        q = rng.normal(size=(rng.integers(5, 80), 3))
        assert chamfer(p, q) == pytest.approx(chamfer_bruteforce(p, q), rel=1e-12)


def test_symmetry_and_nonnegativity():
    rng = np.random.default_rng(9)
    for _ in range(10):
        p = rng.normal(size=(30, 3))
        q = rng.normal(size=(45, 3))
        c = chamfer(p, q)
        assert c == pytest.approx(chamfer(q, p), rel=1e-12)
        assert c >= 0


def test_empty_set_rejected():
    with pytest.raises(InvalidInputError):
        chamfer(np.zeros((0, 3)), [[0, 0, 0]])
