import dataclasses

import numpy as np
import pytest
from scipy import stats

from kdelf.simulate import BatchSpec, EnvelopeError, Sample, draw_sample, run_batch
from kdelf.survey import ConstantLF, DoublePowerLaw, SurveyWindow, expected_count, in_window

KS_ALPHA_01 = 1.628  # Kolmogorov distribution, P(K > 1.628) = 0.01


def ks2d_uniform(u, v):
    """Largest quadrant discrepancy against the uniform distribution on the
    unit square, over quadrants centred on the data points."""
    n = u.size
    d = 0.0
    for s in range(0, n, 500):
        cu, cv = u[s:s + 500, None], v[s:s + 500, None]
        left, below = u[None, :] < cu, v[None, :] < cv
        for fl, fb, pu, pv in ((left, below, cu, cv), (left, ~below, cu, 1 - cv),
                               (~left, below, 1 - cu, cv), (~left, ~below, 1 - cu, 1 - cv)):
            emp = (fl & fb).sum(axis=1) / n
            d = max(d, float(np.max(np.abs(emp - (pu * pv).ravel()))))
    return d


def test_points_inside_window(small_sample, cosmo):
    s = small_sample
    assert s.n == 400
    assert np.all(in_window(s.z, s.L, s.window, cosmo))


def test_uniform_truth_is_uniform_on_window(toy_window, unit_cosmo):
    s = draw_sample(ConstantLF(1.0), toy_window, unit_cosmo, 10000, seed=11, exact_n=True)
    assert np.all(in_window(s.z, s.L, toy_window, unit_cosmo))
    # Rosenblatt transform to the unit square using the exact window shape
    f = lambda z: 0.5 + 0.75 * z
    width = lambda z: 3.0 - f(z)
    area = 2 * 3.0 - (2 * 0.5 + 0.5 * 2 * 1.5)
    cdf_z = lambda z: (2.5 * z - 0.375 * z * z) / area
    u = cdf_z(s.z)
    v = (s.L - f(s.z)) / width(s.z)
    d = ks2d_uniform(u, v)
    n = s.n
    crit = KS_ALPHA_01 * (1 + (0.25 - 0.75 / np.sqrt(n))) / np.sqrt(n)
    assert d < crit


def test_redshift_marginal_chi_square(truth, cosmo):
    w = SurveyWindow()
    s = draw_sample(truth, w, cosmo, 10000, seed=12, exact_n=True)
    edges = np.linspace(0.0, 6.0, 21)
    probs = np.array([expected_count(truth, dataclasses.replace(w, z_min=a, z_max=b), cosmo)
                      for a, b in zip(edges[:-1], edges[1:])])
    probs /= probs.sum()
    obs, _ = np.histogram(s.z, edges)
    chi2 = np.sum((obs - s.n * probs) ** 2 / (s.n * probs))
    assert stats.chi2.sf(chi2, df=19) > 0.01


def test_deterministic_given_seed(truth, cosmo):
    a = draw_sample(truth, SurveyWindow(), cosmo, 300, seed=[3, 1])
    b = draw_sample(truth, SurveyWindow(), cosmo, 300, seed=[3, 1])
    np.testing.assert_array_equal(a.z, b.z)
    np.testing.assert_array_equal(a.L, b.L)
    c = draw_sample(truth, SurveyWindow(), cosmo, 300, seed=[3, 2])
    assert a.n != c.n or not np.array_equal(a.z, c.z)


def test_solid_angle_is_adjusted(truth, cosmo):
    s = draw_sample(truth, SurveyWindow(), cosmo, 1234, seed=1)
    assert expected_count(truth, s.window, cosmo) == pytest.approx(1234, rel=1e-10)
    fixed = draw_sample(truth, SurveyWindow(omega=0.01), cosmo, 1234, seed=1,
                        adjust_omega=False)
    assert fixed.window.omega == 0.01


def test_poisson_counts(toy_window, unit_cosmo):
    counts = [draw_sample(ConstantLF(1.0), toy_window, unit_cosmo, 40, seed=k).n
              for k in range(200)]
    assert abs(np.mean(counts) - 40) < 3 * np.sqrt(40 / 200)
    assert np.var(counts, ddof=1) == pytest.approx(40, rel=0.3)


def test_spectral_index_draws(truth, cosmo):
    s = draw_sample(truth, SurveyWindow(), cosmo, 500, seed=5, exact_n=True,
                    alpha_spec=(0.75, 0.05))
    assert s.dim == 3 and s.alpha.shape == (500,)
    assert np.all(in_window(s.z, s.L, s.window, cosmo, s.alpha))
    assert abs(s.alpha.mean() - 0.75) < 0.02


def test_spiky_truth_aborts(toy_window, unit_cosmo):
    spike = DoublePowerLaw(log_phi_star=(0.0,), L_star=(1.70123,), faint_slope=-5000.0,
                           bright_slope=5000.0)
    with pytest.raises(EnvelopeError):
        draw_sample(spike, toy_window, unit_cosmo, 1000, seed=0)


def test_target_size_validated(truth, cosmo):
    with pytest.raises(ValueError):
        draw_sample(truth, SurveyWindow(), cosmo, 0.5, seed=0)


def test_sample_validation():
    w = SurveyWindow()
    with pytest.raises(ValueError):
        Sample(z=[1.0, 2.0], L=[25.0], window=w)
    with pytest.raises(ValueError):
        Sample(z=[1.0], L=[25.0], window=w, weights=[0.5])
    s = Sample(z=[1.0, 2.0], L=[25.0, 26.0], window=w, weights=[1.0, 3.0])
    assert s.n_eff == 4.0 and s.subset([1]).n == 1


def test_batch_plan_sizes():
    spec = BatchSpec(truth=DoublePowerLaw(), seed=9)
    plans = [spec.survey_plan(i) for i in range(200)]
    logs = np.array([p[0] for p in plans])
    sizes = np.array([p[1] for p in plans])
    assert np.all((logs >= -2.5) & (logs <= -0.5))
    assert np.all((sizes >= 2000) & (sizes <= 40000))
    assert spec.size_for(-2.5) == 40000 and spec.size_for(-0.5) == 2000
    # deeper limit, more sources
    order = np.argsort(logs)
    assert np.all(np.diff(sizes[order]) <= 0)


def test_batch_is_reproducible(cosmo):
    spec = BatchSpec(count=3, size_range=(100, 300), truth=DoublePowerLaw(), seed=4)
    a = run_batch(spec, cosmo)
    b = run_batch(spec, cosmo, workers=2)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.z, y.z)
        np.testing.assert_array_equal(x.L, y.L)
        assert x.window == y.window
    for s in a:
        assert s.window.flux_limit == pytest.approx(10 ** s.meta["log_flux_limit"])


def test_batch_validation():
    with pytest.raises(ValueError):
        BatchSpec(count=0)
    with pytest.raises(ValueError):
        BatchSpec(size_range=(5000, 2000))
    with pytest.raises(ValueError):
        run_batch(BatchSpec(count=1), None)
