import numpy as np
import pytest

from conftest import ORACLE_F, ORACLE_G
from oracles import W1_ORACLE_PAIR
from ctlab.grid import Grid
from ctlab.measures import make_pair
from ctlab.w1 import DiscreteMeasurePair, coarsen, discretize_pair, w1_cdf_1d, w1_grid, w1_lp


def test_cdf_equal_pair_is_zero():
    assert w1_cdf_1d(make_pair(Grid(1, 64), ORACLE_F, ORACLE_F)) == 0.0


def test_cdf_oracle_pair(oracle_pair):
    assert w1_cdf_1d(oracle_pair) == pytest.approx(W1_ORACLE_PAIR, abs=1e-12)


@pytest.mark.parametrize("shift", [0.05, 0.2, 0.33])
def test_cdf_shift_identity(shift):
    grid = Grid(1, 256)
    f = {"family": "uniform_box", "lo": [0.1], "hi": [0.4]}
    g = {"family": "uniform_box", "lo": [0.1 + shift], "hi": [0.4 + shift]}
    assert w1_cdf_1d(make_pair(grid, f, g)) == pytest.approx(shift, abs=grid.h)


def test_cdf_rejects_2d():
    box = {"family": "uniform_box", "lo": [0, 0], "hi": [1, 1]}
    with pytest.raises(ValueError):
        w1_cdf_1d(make_pair(Grid(2, 8), box, box))


def test_lp_two_points():
    assert w1_lp(DiscreteMeasurePair([[0.0]], [1.0], [[0.3]], [1.0])) == pytest.approx(0.3, abs=1e-12)


def test_lp_identical_measures():
    rng = np.random.default_rng(0)
    x = rng.random((30, 2))
    a = rng.random(30)
    a /= a.sum()
    assert w1_lp(DiscreteMeasurePair(x, a, x, a)) == pytest.approx(0.0, abs=1e-12)


def test_lp_mass_mismatch_rejected():
    with pytest.raises(ValueError, match="mass"):
        DiscreteMeasurePair([[0.0]], [1.0], [[0.3]], [0.9])


def test_lp_matches_cdf_on_oracle(oracle_pair):
    lp = w1_lp(discretize_pair(oracle_pair))
    assert lp == pytest.approx(W1_ORACLE_PAIR, abs=2 * oracle_pair.grid.h)
    assert lp == pytest.approx(w1_cdf_1d(oracle_pair), abs=2 * oracle_pair.grid.h)


def test_lp_against_sorted_1d_formula():
    # an independent route: 1-D W1 of point masses via quantile functions
    rng = np.random.default_rng(1)
    x = np.sort(rng.random(40))
    y = np.sort(rng.random(40))
    a = np.full(40, 1 / 40)
    exact = np.mean(np.abs(x - y))
    assert w1_lp(DiscreteMeasurePair(x[:, None], a, y[:, None], a)) == pytest.approx(exact, abs=1e-9)


def test_metric_axioms():
    rng = np.random.default_rng(2)
    pts = rng.random((25, 2))
    ws = [rng.random(25) for _ in range(3)]
    ws = [w / w.sum() for w in ws]
    d = {}
    for i in range(3):
        for j in range(3):
            d[i, j] = w1_lp(DiscreteMeasurePair(pts, ws[i], pts, ws[j]))
    for i in range(3):
        assert d[i, i] == pytest.approx(0.0, abs=1e-9)
        for j in range(3):
            assert abs(d[i, j] - d[j, i]) <= 1e-9
            for k in range(3):
                assert d[i, k] <= d[i, j] + d[j, k] + 1e-9


def test_translation_invariance():
    rng = np.random.default_rng(3)
    x, y = rng.random((20, 2)), rng.random((15, 2))
    a, b = rng.random(20), rng.random(15)
    a, b = a / a.sum(), b / b.sum()
    base = w1_lp(DiscreteMeasurePair(x, a, y, b))
    shift = np.array([0.37, -1.2])
    assert w1_lp(DiscreteMeasurePair(x + shift, a, y + shift, b)) == pytest.approx(base, abs=1e-9)


def test_grid_dispatch_1d(oracle_pair):
    res = w1_grid(oracle_pair)
    assert res.method == "cdf_1d" and res.w1 == w1_cdf_1d(oracle_pair)
    assert set(res.to_dict()) == {"w1", "method", "support_size", "coarsen_factor"}


def test_grid_2d_translated_boxes():
    grid = Grid(2, 64)
    f = {"family": "uniform_box", "lo": [0.1, 0.3], "hi": [0.4, 0.7]}
    g = {"family": "uniform_box", "lo": [0.35, 0.3], "hi": [0.65, 0.7]}
    res = w1_grid(make_pair(grid, f, g))
    assert res.method == "lp"
    assert res.w1 == pytest.approx(0.25, abs=2 * grid.h)


def test_grid_2d_equal_pair():
    box = {"family": "uniform_box", "lo": [0.2, 0.2], "hi": [0.6, 0.9]}
    assert w1_grid(make_pair(Grid(2, 16), box, box)).w1 == pytest.approx(0.0, abs=1e-12)


def test_grid_2d_coarsening():
    grid = Grid(2, 128)
    f = {"family": "uniform_box", "lo": [0.1, 0.3], "hi": [0.4, 0.7]}
    g = {"family": "uniform_box", "lo": [0.35, 0.3], "hi": [0.65, 0.7]}
    res = w1_grid(make_pair(grid, f, g))
    assert res.coarsen_factor == 2 and res.support_size <= 64 * 64
    assert res.w1 == pytest.approx(0.25, abs=2 / 64)


def test_coarsen_preserves_mass():
    grid = Grid(2, 8)
    d = np.random.default_rng(4).random(grid.shape)
    c = coarsen(grid, d, 4)
    assert c.shape == (2, 2)
    assert c.sum() * 16 == pytest.approx(d.sum())
