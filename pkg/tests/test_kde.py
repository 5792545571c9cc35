import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from kdelf.kde import (KernelSum, adaptive_kde_eval, adaptive_kde_loo, gauss_kernel,
                       kde_eval, kde_loo, local_bandwidths)

import oracles
from oracles import simpson

TWO_PI = 2 * math.pi


def test_gauss_kernel_values():
    assert gauss_kernel([0.0, 0.0]) == pytest.approx(0.15915494, abs=1e-8)
    assert gauss_kernel([1.0, 0.0]) == pytest.approx(0.09653235, abs=1e-8)
    assert gauss_kernel([0.0, 0.0, 0.0]) == pytest.approx(0.06349364, abs=1e-8)


def test_kde_eval_examples():
    assert kde_eval([[0.0, 0.0]], None, [1.0, 1.0], [0.0, 0.0]) == pytest.approx(1 / TWO_PI,
                                                                                rel=1e-14)
    v = kde_eval([[0.0, 0.0], [2.0, 0.0]], None, [1.0, 1.0], [1.0, 0.0])
    assert v == pytest.approx(math.exp(-0.5) / TWO_PI, rel=1e-14)


def test_constant_weights_cancel(rng=np.random.default_rng(1)):
    pts = rng.normal(size=(50, 2))
    q = rng.normal(size=(7, 2))
    a = kde_eval(pts, None, [0.4, 0.6], q)
    b = kde_eval(pts, np.full(50, 3.5), [0.4, 0.6], q)
    np.testing.assert_allclose(a, b, rtol=1e-13)


def test_loo_examples():
    pts = [[0.0, 0.0], [1.0, 1.0]]
    assert kde_loo(pts, None, [1.0, 1.0], 0) == pytest.approx(math.exp(-1) / TWO_PI,
                                                              rel=1e-14)
    with pytest.raises(ValueError):
        kde_loo([[0.0, 0.0]], None, [1.0, 1.0], 0)


def test_loo_equals_deleted_sample():
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(40, 2))
    for i in (0, 17, 39):
        rest = np.delete(pts, i, axis=0)
        assert kde_loo(pts, None, [0.5, 0.3], i) == pytest.approx(
            kde_eval(rest, None, [0.5, 0.3], pts[i]), rel=1e-12)


def test_loo_weight_only_in_normaliser():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(20, 2))
    w = rng.uniform(1, 3, 20)
    a = kde_loo(pts, w, [0.5, 0.5], 4)
    w2 = w.copy()
    w2[4] = 7.0
    b = kde_loo(pts, w2, [0.5, 0.5], 4)
    assert a * (w.sum() - w[4]) == pytest.approx(b * (w2.sum() - w2[4]), rel=1e-13)


def test_empty_sample_rejected():
    with pytest.raises(ValueError):
        kde_eval(np.empty((0, 2)), None, [1.0, 1.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        kde_eval([[0.0, 0.0]], None, [1.0, -1.0], [0.0, 0.0])


def test_integrates_to_one():
    rng = np.random.default_rng(4)
    pts = rng.normal(size=(30, 2))
    h = np.array([0.3, 0.5])
    ks = KernelSum(pts, None, h)
    pad = 8 * h.max()
    xs = np.linspace(pts[:, 0].min() - pad, pts[:, 0].max() + pad, 401)
    ys = np.linspace(pts[:, 1].min() - pad, pts[:, 1].max() + pad, 401)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vals = ks.evaluate(np.column_stack([X.ravel(), Y.ravel()])).reshape(X.shape)
    inner = np.array([simpson(lambda _, r=row: r, ys[0], ys[-1], ys.size) for row in vals])
    total = simpson(lambda _: inner, xs[0], xs[-1], xs.size)
    assert total == pytest.approx(1.0, abs=1e-4)


def test_reflected_half_plane_mass():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(30, 2))
    pts[:, 1] = np.abs(pts[:, 1])
    h = np.array([0.4, 0.3])
    ks = KernelSum(pts, None, h, reflect=True)
    xs = np.linspace(pts[:, 0].min() - 3.5, pts[:, 0].max() + 3.5, 401)
    ys = np.linspace(0.0, pts[:, 1].max() + 3.0, 401)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vals = ks.evaluate(np.column_stack([X.ravel(), Y.ravel()]), reflect=True).reshape(X.shape)
    inner = np.array([simpson(lambda _, r=row: r, ys[0], ys[-1], ys.size) for row in vals])
    assert simpson(lambda _: inner, xs[0], xs[-1], xs.size) == pytest.approx(1.0, abs=1e-4)


def test_local_bandwidth_examples():
    pts = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.5]])
    lb = local_bandwidths(pts, np.array([4.0, 1.0, 0.25]), (1.0, 2.0), 0.5)
    np.testing.assert_allclose(lb.h[:, 0], [0.5, 1.0, 2.0])
    lb0 = local_bandwidths(pts, np.array([4.0, 1.0, 0.25]), (1.0, 2.0), 0.0)
    np.testing.assert_array_equal(lb0.h, [[1.0, 2.0]] * 3)
    lb2 = local_bandwidths(pts, np.array([4.0, 1.0, 0.25]), (2.0, 2.0), 0.5)
    np.testing.assert_allclose(lb2.h[:, 0], 2 * lb.h[:, 0], rtol=1e-15)
    with pytest.raises(ValueError):
        local_bandwidths(pts, np.array([4.0, 0.0, 1.0]), (1.0, 1.0), 0.5)
    with pytest.raises(ValueError):
        local_bandwidths(pts, np.array([4.0, 1.0, 1.0]), (1.0, 1.0), 1.5)


def test_local_bandwidths_from_pilot_bandwidths():
    rng = np.random.default_rng(6)
    pts = rng.normal(size=(25, 2))
    lb = local_bandwidths(pts, np.array([0.5, 0.4]), (1.0, 1.0), 0.3)
    np.testing.assert_allclose(lb.pilot, kde_eval(pts, None, [0.5, 0.4], pts), rtol=1e-12)


def test_adaptive_equal_bandwidths_is_fixed():
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(30, 2))
    q = rng.normal(size=(5, 2))
    lb = local_bandwidths(pts, np.ones(30), (0.3, 0.7), 0.5)
    np.testing.assert_allclose(adaptive_kde_eval(pts, None, lb, q),
                               kde_eval(pts, None, [0.3, 0.7], q), rtol=1e-13)


def test_adaptive_three_points_brute_force():
    pts = np.array([[0.1, 0.2], [0.5, 1.1], [-0.4, 0.7]])
    lb = local_bandwidths(pts, np.array([0.5, 2.0, 1.3]), (0.6, 0.4), 0.7)
    q = np.array([0.2, 0.5])
    for reflect in (False, True):
        want = oracles.kde(pts.tolist(), None, lb.h, q.tolist(), reflect)
        got = adaptive_kde_eval(pts, None, lb, q, reflect)
        assert got == pytest.approx(want, rel=1e-12)


def test_adaptive_loo_two_points_by_hand():
    pts = np.array([[0.0, 0.5], [1.0, 1.0]])
    lb = local_bandwidths(pts, np.ones(2), (1.0, 1.0), 0.0)
    k = lambda a, b: math.exp(-0.5 * (a * a + b * b)) / TWO_PI
    # direct term from point 1; mirror terms from both points
    want = 2.0 / 3.0 * (k(-1.0, -0.5) + k(-1.0, 1.5) + k(0.0, 1.0))
    assert adaptive_kde_loo(pts, None, lb, 0, reflect=True) == pytest.approx(want, rel=1e-14)
    w1 = adaptive_kde_loo(pts, np.ones(2), lb, 0, reflect=True)
    assert w1 == pytest.approx(want, rel=1e-14)
    assert adaptive_kde_loo(pts, None, lb, 0) == pytest.approx(kde_loo(pts, None, [1, 1], 0),
                                                               rel=1e-14)


def test_reflected_symmetry_in_y():
    rng = np.random.default_rng(8)
    pts = np.abs(rng.normal(size=(60, 2)))
    q = rng.normal(size=(20, 2))
    qm = q * [1, -1]
    ks = KernelSum(pts, rng.uniform(1, 2, 60), [0.3, 0.2], reflect=True)
    np.testing.assert_allclose(ks.evaluate(q, True), ks.evaluate(qm, True), rtol=1e-12)


def test_three_dimensional_against_oracle():
    rng = np.random.default_rng(9)
    pts = rng.normal(size=(40, 3))
    q = pts[:5] + 0.1
    h = [0.5, 0.6, 0.7]
    got = kde_eval(pts, None, h, q)
    want = [oracles.kde(pts.tolist(), None, h, row.tolist()) for row in q]
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_pairwise_sum_on_large_sample():
    n = 40000
    pts = np.zeros((n, 2))
    pts[:, 0] = np.linspace(-1e-3, 1e-3, n)
    v = kde_eval(pts, None, [1.0, 1.0], [0.0, 0.0])
    terms = [math.exp(-0.5 * x * x) for x in pts[:, 0]]
    assert v == pytest.approx(math.fsum(terms) / n / TWO_PI, rel=1e-14)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (12, 2), elements=st.floats(-3, 3)), st.randoms())
def test_permutation_invariance(pts, r):
    perm = list(range(12))
    r.shuffle(perm)
    q = np.array([[0.1, -0.2], [1.0, 2.0]])
    a = kde_eval(pts, None, [0.7, 0.9], q)
    b = kde_eval(pts[perm], None, [0.7, 0.9], q)
    np.testing.assert_array_equal(a, b)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (10, 2), elements=st.floats(-2, 2)),
       st.floats(0.2, 2.0), st.floats(0.2, 2.0))
def test_density_non_negative(pts, h1, h2):
    q = np.array([[0.0, 0.0], [5.0, -5.0]])
    assert np.all(kde_eval(pts, None, [h1, h2], q) >= 0)
