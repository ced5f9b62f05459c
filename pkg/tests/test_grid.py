import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctlab.grid import (
    Grid,
    divergence,
    gradient,
    integrate,
    pointwise_norm,
    read_field_csv,
    vector_inner,
    weighted_inner,
    write_field_csv,
)


def test_grid_geometry():
    g = Grid(2, 8)
    assert g.h == 0.125
    assert g.cell_volume == pytest.approx(1 / 64)
    assert g.shape == (8, 8)
    assert g.vector_shape == (2, 8, 8)
    assert g.centers().shape == (2, 8, 8)
    np.testing.assert_allclose(g.faces()[[0, -1]], [0.0, 1.0])


@pytest.mark.parametrize("dim, n", [(0, 4), (3, 4), (1, 1), (2, 2.5)])
def test_grid_rejects_bad_parameters(dim, n):
    with pytest.raises(ValueError):
        Grid(dim, n)


def test_gradient_of_linear_function_1d():
    g = Grid(1, 10)
    u = g.centers_1d() * 3.0
    grad = gradient(g, u)
    np.testing.assert_allclose(grad[0, :-1], 3.0)
    assert grad[0, -1] == 0.0


def test_gradient_of_constant_vanishes():
    g = Grid(2, 7)
    assert np.all(gradient(g, np.full(g.shape, 4.2)) == 0.0)


def test_divergence_has_zero_integral():
    g = Grid(2, 12)
    w = np.random.default_rng(0).standard_normal(g.vector_shape)
    assert abs(integrate(g, divergence(g, w))) < 1e-12


def test_divergence_ignores_boundary_slices():
    g = Grid(2, 5)
    w = np.zeros(g.vector_shape)
    w[0, -1, :] = 7.0
    w[1, :, -1] = -3.0
    assert np.all(divergence(g, w) == 0.0)


@settings(max_examples=40, deadline=None)
@given(dim=st.sampled_from([1, 2]), n=st.integers(2, 20), seed=st.integers(0, 2**31 - 1))
def test_integration_by_parts_is_exact(dim, n, seed):
    g = Grid(dim, n)
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(g.shape)
    w = rng.standard_normal(g.vector_shape)
    lhs = vector_inner(g, gradient(g, u), w)
    rhs = -weighted_inner(g, u, divergence(g, w))
    assert abs(lhs - rhs) <= 1e-12 * (1.0 + np.abs(u).max() * np.abs(w).max() * n)


def test_pointwise_norm():
    w = np.array([[3.0, 0.0], [4.0, 1.0]])
    np.testing.assert_allclose(pointwise_norm(w), [5.0, 1.0])


def test_check_shapes():
    g = Grid(2, 4)
    with pytest.raises(ValueError):
        g.check_scalar(np.zeros(5))
    with pytest.raises(ValueError):
        g.check_vector(np.zeros((1, 4, 4)))
    with pytest.raises(ValueError):
        g.check_scalar(np.full(g.shape, np.nan))


@pytest.mark.parametrize("dim", [1, 2])
def test_field_csv_roundtrip(tmp_path, dim):
    g = Grid(dim, 6)
    rng = np.random.default_rng(dim)
    s = rng.standard_normal(g.shape)
    v = rng.standard_normal(g.vector_shape)
    write_field_csv(tmp_path / "s.csv", g, s)
    write_field_csv(tmp_path / "v.csv", g, v)
    g2, s2 = read_field_csv(tmp_path / "s.csv")
    _, v2 = read_field_csv(tmp_path / "v.csv", vector=True)
    assert g2 == g
    assert np.array_equal(s, s2)
    assert np.array_equal(v, v2)
    first = (tmp_path / "s.csv").read_text().splitlines()[:2]
    assert first[0] == f"# grid d={dim} n=6"
    assert first[1].startswith("0,")


def test_read_field_csv_rejects_missing_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("0,1.0\n")
    with pytest.raises(ValueError):
        read_field_csv(p)
