"""Band-pass kernel, Laplacian construction, and both smoothing routes."""
import numpy as np
import pytest

from diffusegnn import autodiff as ad
from diffusegnn.autodiff import Tensor
from diffusegnn.ego_sampler import EgoInstance
from diffusegnn.spectral_filter import (FilterParams, build_laplacian,
                                        build_laplacian_batch,
                                        cheb_coefficients, kernel_eval,
                                        smooth_chebyshev, smooth_exact)
from conftest import random_adjacency, random_instance


def dense_smooth_oracle(adj, fp, x):
    """Independent dense evaluation of D^-1 A (I - Ltilde) X."""
    a = adj.astype(float).copy()
    iso = a.sum(axis=1) == 0
    a[iso, iso] = 1.0
    deg = a.sum(axis=1)
    d_sqrt = np.sqrt(deg)
    lap_sym = np.eye(len(a)) - a / np.outer(d_sqrt, d_sqrt)
    w, v = np.linalg.eigh(0.5 * (lap_sym + lap_sym.T))
    gvals = np.exp(-0.5 * ((w - fp.mu) ** 2 - 1.0) * fp.theta)
    ltilde = np.diag(1.0 / d_sqrt) @ v @ np.diag(gvals) @ v.T @ np.diag(d_sqrt)
    p = a / deg[:, None]
    return p @ (x - ltilde @ x)


# --------------------------------------------------------------------------
# Laplacian
# --------------------------------------------------------------------------

def test_laplacian_complete_graph_spectrum():
    a = 1 - np.eye(4)
    lb = build_laplacian_batch(a)
    want = np.eye(4) - (np.ones((4, 4)) - np.eye(4)) / 3.0
    np.testing.assert_allclose(lb.lap, want, atol=1e-12)
    np.testing.assert_allclose(np.sort(lb.eigenvalues), [0, 4 / 3, 4 / 3, 4 / 3],
                               atol=1e-9)


def test_laplacian_isolated_row_zero():
    a = np.zeros((3, 3))
    a[0, 1] = a[1, 0] = 1
    lb = build_laplacian_batch(a)
    np.testing.assert_allclose(lb.lap[2], 0.0, atol=1e-15)


def test_laplacian_eigenvalues_in_range(rng):
    for _ in range(20):
        a = random_adjacency(rng, 8, 0.4)
        lb = build_laplacian_batch(a.astype(float))
        ev = lb.eigenvalues
        assert ev.min() > -1e-9 and ev.max() < 2 + 1e-9


def test_laplacian_row_sums_zero(rng):
    a = random_adjacency(rng, 10, 0.3).astype(float)
    lb = build_laplacian_batch(a)
    np.testing.assert_allclose(lb.lap.sum(axis=1), 0.0, atol=1e-12)


def test_build_laplacian_from_instance(rng):
    inst = random_instance(rng, 8)
    lb = build_laplacian(inst)
    assert lb.m == 8


# --------------------------------------------------------------------------
# kernel
# --------------------------------------------------------------------------

@pytest.mark.parametrize("theta", [1.0, 3.0, 5.0, 7.0, 9.0])
def test_kernel_anchor_values(theta):
    fp = FilterParams(mu=0.4, theta=theta)
    g, _ = kernel_eval(fp, 0.4)
    assert g == pytest.approx(np.exp(theta / 2), abs=1e-12 * np.exp(theta / 2))
    for lam in (0.4 - 1, 0.4 + 1):
        g, _ = kernel_eval(fp, lam)
        assert g == pytest.approx(1.0, abs=1e-12)


def test_kernel_scalar_recomputation():
    fp = FilterParams(mu=0.4, theta=7.0)
    g, _ = kernel_eval(fp, 0.0)
    assert g == pytest.approx(np.exp(-0.5 * ((0.0 - 0.4) ** 2 - 1.0) * 7.0),
                              abs=1e-12)


def test_kernel_mu_derivative_matches_fd():
    fp = FilterParams(mu=0.4, theta=7.0)
    lam = np.linspace(0, 2, 17)
    _, dg = kernel_eval(fp, lam)
    h = 1e-6
    gp, _ = kernel_eval(FilterParams(mu=0.4 + h, theta=7.0), lam)
    gm, _ = kernel_eval(FilterParams(mu=0.4 - h, theta=7.0), lam)
    fd = (gp - gm) / (2 * h)
    np.testing.assert_allclose(dg, fd, rtol=1e-5)


# --------------------------------------------------------------------------
# exact smoothing
# --------------------------------------------------------------------------

def test_smooth_exact_forced_zero_kernel(rng):
    a = random_adjacency(rng, 6, 0.5).astype(float)
    lb = build_laplacian_batch(a)
    x = rng.normal(size=(6, 3))
    out = smooth_exact(lb, FilterParams(), x, force_zero_kernel=True)
    np.testing.assert_allclose(out, lb.propagate @ x, atol=1e-12)


def test_smooth_exact_zero_features(rng):
    a = random_adjacency(rng, 6, 0.5).astype(float)
    lb = build_laplacian_batch(a)
    out = smooth_exact(lb, FilterParams(), np.zeros((6, 4)))
    np.testing.assert_allclose(out, 0.0, atol=1e-15)


def test_smooth_exact_matches_dense_oracle(rng):
    for _ in range(10):
        a = random_adjacency(rng, 8, 0.4)
        fp = FilterParams(mu=0.4, theta=7.0)
        x = rng.normal(size=(8, 5))
        got = smooth_exact(build_laplacian_batch(a.astype(float)), fp, x)
        np.testing.assert_allclose(got, dense_smooth_oracle(a, fp, x), atol=1e-9)


def test_smooth_linear_in_features(rng):
    a = random_adjacency(rng, 8, 0.4).astype(float)
    lb = build_laplacian_batch(a)
    fp = FilterParams()
    x1 = rng.normal(size=(8, 4))
    x2 = rng.normal(size=(8, 4))
    for fn in (smooth_exact, smooth_chebyshev):
        lhs = fn(lb, fp, 2.0 * x1 - 3.0 * x2)
        rhs = 2.0 * fn(lb, fp, x1) - 3.0 * fn(lb, fp, x2)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)


# --------------------------------------------------------------------------
# chebyshev smoothing
# --------------------------------------------------------------------------

def test_chebyshev_close_to_exact_at_k16(rng):
    for _ in range(10):
        a = random_adjacency(rng, 8, 0.4).astype(float)
        lb = build_laplacian_batch(a)
        x = rng.normal(size=(8, 4))
        exact = smooth_exact(lb, FilterParams(cheb_order=16), x)
        cheb = smooth_chebyshev(lb, FilterParams(cheb_order=16), x)
        assert np.abs(cheb - exact).max() <= 1e-3


def test_chebyshev_k1_two_term_chain(rng):
    a = random_adjacency(rng, 6, 0.5).astype(float)
    lb = build_laplacian_batch(a)
    fp = FilterParams(cheb_order=1)
    x = rng.normal(size=(6, 3))
    c = cheb_coefficients(fp)
    shifted = lb.lap - np.eye(6)
    ltilde_x = c[0] * x + c[1] * shifted @ x
    want = lb.propagate @ (x - ltilde_x)
    np.testing.assert_allclose(smooth_chebyshev(lb, fp, x), want, atol=1e-12)


def test_chebyshev_theta_zero_gives_zero_output(rng):
    a = random_adjacency(rng, 7, 0.4).astype(float)
    lb = build_laplacian_batch(a)
    fp = FilterParams(theta=0.0, cheb_order=8)
    x = rng.normal(size=(7, 3))
    np.testing.assert_allclose(smooth_chebyshev(lb, fp, x), 0.0, atol=1e-12)
    np.testing.assert_allclose(smooth_exact(lb, fp, x), 0.0, atol=1e-12)


def test_chebyshev_error_nonincreasing_in_k(rng):
    for _ in range(5):
        m = int(rng.integers(4, 33))
        a = random_adjacency(rng, m, 0.3).astype(float)
        lb = build_laplacian_batch(a)
        x = rng.normal(size=(m, 4))
        exact = smooth_exact(lb, FilterParams(), x)
        errs = []
        for k in (2, 4, 8, 16, 24):
            cheb = smooth_chebyshev(lb, FilterParams(cheb_order=k), x)
            errs.append(np.abs(cheb - exact).max())
        for e_prev, e_next in zip(errs, errs[1:]):
            assert e_next <= e_prev + 1e-12


def test_padded_rows_stay_zero(rng):
    inst = random_instance(rng, 12)
    lb = build_laplacian(inst)
    x = rng.normal(size=(12, 5)) * inst.mask[:, None]
    for fn in (smooth_exact, smooth_chebyshev):
        out = fn(lb, FilterParams(), x)
        np.testing.assert_allclose(out[~inst.mask], 0.0, atol=1e-12)


def test_mu_gradient_through_both_routes(rng):
    a = random_adjacency(rng, 6, 0.5).astype(float)
    lb = build_laplacian_batch(a)
    x = rng.normal(size=(6, 3))
    h = 1e-6
    for fn in (smooth_exact, smooth_chebyshev):
        mu = Tensor(np.array(0.4), requires_grad=True)
        out = fn(lb, FilterParams(cheb_order=12), Tensor(x), mu=mu)
        ad.reduce_sum(ad.square(out)).backward()

        def val(mv):
            o = fn(lb, FilterParams(mu=mv, cheb_order=12), x)
            return float((o * o).sum())

        fd = (val(0.4 + h) - val(0.4 - h)) / (2 * h)
        assert float(mu.grad) == pytest.approx(fd, rel=1e-5)


def test_batched_matches_single(rng):
    adjs = np.stack([random_adjacency(rng, 6, 0.4) for _ in range(4)]).astype(float)
    xs = rng.normal(size=(4, 6, 3))
    fp = FilterParams(cheb_order=8)
    batch_out = smooth_chebyshev(build_laplacian_batch(adjs), fp, xs)
    for i in range(4):
        single = smooth_chebyshev(build_laplacian_batch(adjs[i]), fp, xs[i])
        np.testing.assert_allclose(batch_out[i], single, atol=1e-12)


@pytest.fixture
def rng():
    return np.random.default_rng(99)
