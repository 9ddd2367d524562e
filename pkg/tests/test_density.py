import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chaoslab.density import (DensityGrid, check_geometry, gaussian_stencil, histogram,
                              kde_smooth, marginal, padded_box)
from chaoslab.errors import DensitySupportError, GeometryError
from chaoslab.initial_data import InitialDensitySpec, density_eval, sample_initial
from chaoslab.metrics import kl_divergence


def test_single_point_fills_one_cell():
    g = histogram([[0.3, 0.6]], [0, 0], [1, 1], (4, 4))
    assert g.mass[1, 2] == 1.0 and g.total == 1.0 and g.clipped == 0.0


def test_uniform_points_binomial():
    rng = np.random.default_rng(0)
    pts = rng.random((1_000_000, 2))
    g = histogram(pts, [0, 0], [1, 1], (10, 10))
    p = 0.01
    sd = np.sqrt(p * (1 - p) / pts.shape[0])
    assert np.all(np.abs(g.mass - p) < 5 * sd)


@settings(max_examples=40)
@given(st.integers(1, 400), st.integers(0, 2**31))
def test_total_plus_clipped_is_one(m, seed):
    pts = np.random.default_rng(seed).normal(scale=2.0, size=(m, 2))
    try:
        g = histogram(pts, [-1, -1], [1, 1], (5, 7))
    except DensitySupportError:
        return
    assert g.total + g.clipped == pytest.approx(1.0, abs=1e-12)


def test_all_outside_raises():
    with pytest.raises(DensitySupportError):
        histogram([[5.0, 5.0]], [0, 0], [1, 1], (2, 2))


def test_smoothing_identity_and_impulse():
    m = np.zeros((21, 21))
    m[10, 10] = 1.0
    g = DensityGrid(np.zeros(2), np.ones(2), m)
    assert kde_smooth(g, 0.0) is g
    s = kde_smooth(g, 2.0)
    w = gaussian_stencil(2.0)
    np.testing.assert_allclose(s.mass[4:17, 4:17], np.outer(w, w), atol=1e-15)
    np.testing.assert_allclose(s.mass, s.mass.T, atol=1e-15)
    np.testing.assert_allclose(s.mass, s.mass[::-1, ::-1], atol=1e-15)


def test_smoothing_shift_equivariant():
    rng = np.random.default_rng(2)
    m = np.zeros((40, 40))
    m[12:20, 14:18] = rng.random((8, 4))
    m /= m.sum()
    a = kde_smooth(DensityGrid(np.zeros(2), np.ones(2), m), 1.5).mass
    b = kde_smooth(DensityGrid(np.zeros(2), np.ones(2), np.roll(m, (5, 3), (0, 1))), 1.5).mass
    np.testing.assert_allclose(np.roll(a, (5, 3), (0, 1)), b, atol=1e-15)


def test_marginal_cases():
    p = np.array([0.2, 0.3, 0.5])
    q = np.array([0.1, 0.6, 0.3])
    g = DensityGrid(np.zeros(2), np.ones(2), np.outer(p, q))
    np.testing.assert_allclose(marginal(g, [0]).mass, p, atol=1e-15)
    np.testing.assert_allclose(marginal(g, [1]).mass, q, atol=1e-15)
    assert np.array_equal(marginal(g, [0, 1]).mass, g.mass)
    with pytest.raises(ValueError):
        marginal(g, [2])


@settings(max_examples=30)
@given(st.integers(0, 2**31), st.floats(0.0, 3.0))
def test_pipeline_conserves_mass(seed, h):
    pts = np.random.default_rng(seed).normal(size=(500, 3))
    lo, hi = padded_box(pts, 12, 2.0)
    g = histogram(pts, lo, hi, 12)
    s = kde_smooth(g, h)
    assert s.total == pytest.approx(g.total, abs=1e-10)
    assert marginal(s, [0, 2]).total == pytest.approx(g.total, abs=1e-10)
    assert g.clipped == 0.0


def test_padded_box_leaves_empty_border():
    pts = np.random.default_rng(4).normal(size=(2000, 2))
    lo, hi = padded_box(pts, 20, 2.0)
    g = histogram(pts, lo, hi, 20)
    assert g.mass[:2].sum() == 0 and g.mass[-2:].sum() == 0
    assert g.mass[:, :2].sum() == 0 and g.mass[:, -2:].sum() == 0


def test_geometry_mismatch():
    a = DensityGrid(np.zeros(2), np.ones(2), np.full((2, 2), 0.25))
    b = DensityGrid(np.zeros(2), np.full(2, 0.5), np.full((2, 2), 0.25))
    with pytest.raises(GeometryError):
        check_geometry(a, b)


def test_histogram_kl_consistency_kind2():
    spec = InitialDensitySpec(kind="polynomial_decay", d=1, alpha=3, beta=3)
    cells, lo, hi = 24, -4.0, 4.0
    # quadrature grid of f0: 8x8 Gauss-Legendre nodes per cell
    node, wt = np.polynomial.legendre.leggauss(8)
    e = (hi - lo) / cells
    centers = lo + (np.arange(cells) + 0.5) * e
    pts = (centers[:, None] + 0.5 * e * node[None, :]).ravel()
    wts = np.tile(0.5 * e * wt, cells)
    X, V = np.meshgrid(pts, pts, indexing="ij")
    f = density_eval(spec, X[..., None], V[..., None]) * np.outer(wts, wts)
    ref = f.reshape(cells, 8, cells, 8).sum(axis=(1, 3))
    ref = DensityGrid(np.full(2, lo), np.full(2, e), ref / ref.sum())
    kls = []
    for m in (1_000, 10_000, 100_000):
        s = sample_initial(spec, m, seed=9)
        g = histogram(s.phase(), [lo, lo], [hi, hi], cells)
        g = g.with_mass(g.mass / g.total, 0.0)
        kls.append(kl_divergence(g, ref))
    assert kls[0] > kls[1] > kls[2]
    assert kls[2] < 0.01
