"""Mock flux-limited samples drawn from a truth LF, and survey batches.

Points are drawn by rejection from ``p(z, L) ~ phi(z, L) dV/dz`` restricted
to the window. Proposals are uniform in z and, at each z, uniform in L over
the window's visible L range; the acceptance ratio is
``phi * dV/dz * width(z) / M`` for a constant envelope ``M`` found on a
256 x 256 grid and inflated by 1.2.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .survey import SurveyWindow, expected_count, in_window

_ENVELOPE_GRID = 256
_ENVELOPE_INFLATE = 1.2
_MIN_EFFICIENCY = 1e-4
_CHUNK = 65536


class EnvelopeError(RuntimeError):
    """Raised when rejection sampling cannot proceed reliably."""


@dataclass
class Sample:
    """Observed points with optional spectral indices and weights."""

    z: np.ndarray
    L: np.ndarray
    window: SurveyWindow
    alpha: np.ndarray | None = None
    weights: np.ndarray | None = None
    seed: object = None
    truth: object = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.L = np.asarray(self.L, dtype=float)
        if self.z.shape != self.L.shape or self.z.ndim != 1:
            raise ValueError("z and L must be 1-d arrays of equal length")
        if self.alpha is not None:
            self.alpha = np.asarray(self.alpha, dtype=float)
            if self.alpha.shape != self.z.shape:
                raise ValueError("alpha must match the number of points")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != self.z.shape:
                raise ValueError("weights must match the number of points")
            if np.any(self.weights < 1):
                raise ValueError("weights are inverse selection probabilities (>= 1)")

    @property
    def n(self):
        return int(self.z.size)

    @property
    def n_eff(self):
        return float(self.n if self.weights is None else np.sum(self.weights))

    @property
    def dim(self):
        return 2 if self.alpha is None else 3

    def subset(self, idx):
        idx = np.asarray(idx)
        return replace(self, z=self.z[idx], L=self.L[idx],
                       alpha=None if self.alpha is None else self.alpha[idx],
                       weights=None if self.weights is None else self.weights[idx],
                       meta=dict(self.meta))


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(np.random.SeedSequence(seed))


def _alpha_nodes(alpha_spec, window):
    """Spectral-index values and probability weights used for envelopes and
    expected counts."""
    if alpha_spec is None:
        return [None], np.array([1.0])
    mean, sd = alpha_spec
    t, w = np.polynomial.hermite_e.hermegauss(9)
    return list(mean + sd * t), w / w.sum()


def _envelope(model, window, cosmo, alpha_values):
    n = _ENVELOPE_GRID
    zg = np.linspace(window.z_min, window.z_max, n)
    tg = np.linspace(0.0, 1.0, n)
    best = 0.0
    for a in alpha_values:
        lo, hi = window.L_limits(zg, cosmo, a)
        width = hi - lo
        L = lo[:, None] + width[:, None] * tg[None, :]
        g = np.asarray(model(zg[:, None], L)) * np.asarray(cosmo.dvolume_dz(zg))[:, None]
        best = max(best, float(np.max(g * width[:, None])))
    if not (best > 0 and np.isfinite(best)):
        raise EnvelopeError("target density vanishes or diverges on the window")
    return _ENVELOPE_INFLATE * best


def draw_sample(model, window, cosmo, target_n, seed, exact_n=False,
                adjust_omega=True, alpha_spec=None):
    """Draw a flux-limited sample.

    Parameters
    ----------
    model : callable ``phi(z, L)``
    window : SurveyWindow
    target_n : float
        Desired expected sample size. With ``adjust_omega`` the solid angle is
        rescaled so the expected count equals it; otherwise the count implied
        by ``window.omega`` is used.
    seed : int, sequence of ints or numpy Generator
    exact_n : bool
        Return exactly ``round(target_n)`` points instead of a Poisson count.
    alpha_spec : (mean, sd) or None
        When given, each source gets a normal spectral index and the boundary
        follows it.
    """
    if target_n < 1:
        raise ValueError("target_n must be at least 1")
    rng = _rng(seed)
    alphas, aw = _alpha_nodes(alpha_spec, window)
    unit = window.with_omega(1.0)
    per_sr = sum(wk * expected_count(model, unit, cosmo) if a is None else
                 wk * _expected_count_alpha(model, unit, cosmo, a)
                 for a, wk in zip(alphas, aw))
    if adjust_omega:
        window = window.with_omega(target_n / per_sr)
    mean_n = per_sr * window.omega
    count = int(round(target_n)) if exact_n else int(rng.poisson(mean_n))
    envelope = _envelope(model, window, cosmo, alphas)

    zs, Ls, als = [], [], []
    have = 0
    tried = 0
    while have < count:
        m = _CHUNK
        a = None
        if alpha_spec is not None:
            a = rng.normal(alpha_spec[0], alpha_spec[1], m)
        z = window.z_min + (window.z_max - window.z_min) * rng.random(m)
        lo, hi = window.L_limits(z, cosmo, a)
        width = hi - lo
        L = lo + width * rng.random(m)
        u = rng.random(m)
        g = np.asarray(model(z, L)) * np.asarray(cosmo.dvolume_dz(z)) * width
        if np.any(g > envelope):
            raise EnvelopeError("target exceeds the rejection envelope; "
                                "refine the envelope grid")
        ok = (u * envelope < g) & (width > 0)
        ok &= in_window(z, L, window, cosmo, a)
        tried += m
        zs.append(z[ok])
        Ls.append(L[ok])
        if a is not None:
            als.append(a[ok])
        have += int(ok.sum())
        if tried >= 20 * _CHUNK and have < _MIN_EFFICIENCY * tried:
            raise EnvelopeError(f"rejection efficiency {have / tried:.2e} below "
                                f"{_MIN_EFFICIENCY:g}; envelope too loose")
    z = np.concatenate(zs)[:count] if zs else np.empty(0)
    L = np.concatenate(Ls)[:count] if Ls else np.empty(0)
    alpha = np.concatenate(als)[:count] if alpha_spec is not None else None
    meta = {"expected_n": mean_n, "omega": window.omega, "envelope": envelope,
            "proposals": tried}
    return Sample(z=z, L=L, window=window, alpha=alpha, seed=seed, truth=model,
                  meta=meta)


def _expected_count_alpha(model, window, cosmo, alpha):
    from .survey import window_nodes
    z, L, w = window_nodes(window, cosmo, alpha=alpha)
    keep = w > 0
    vals = np.asarray(model(z[keep], L[keep])) * window.omega * cosmo.dvolume_dz(z[keep])
    return float(np.sum(vals * w[keep]))


@dataclass(frozen=True)
class BatchSpec:
    """A batch of surveys with log-uniform flux limits.

    The size of each survey is linear in log10 of its flux limit, running
    from ``size_range[1]`` at the deepest limit to ``size_range[0]`` at the
    shallowest.
    """

    count: int = 200
    flux_limit_range: tuple = (-2.5, -0.5)
    size_range: tuple = (2000, 40000)
    truth: object = None
    seed: int = 0
    window: SurveyWindow = field(default_factory=SurveyWindow)

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be at least 1")
        if not self.size_range[0] < self.size_range[1]:
            raise ValueError("size_range must be increasing")
        if not self.flux_limit_range[0] < self.flux_limit_range[1]:
            raise ValueError("flux_limit_range must be increasing")

    def size_for(self, log_flux):
        lo, hi = self.flux_limit_range
        n_lo, n_hi = self.size_range
        frac = (hi - log_flux) / (hi - lo)
        return n_lo + (n_hi - n_lo) * frac

    def survey_plan(self, index):
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, index, 0]))
        log_f = float(rng.uniform(*self.flux_limit_range))
        return log_f, int(round(self.size_for(log_f)))

    def to_dict(self):
        return {"count": self.count, "flux_limit_range": list(self.flux_limit_range),
                "size_range": list(self.size_range), "seed": self.seed,
                "truth": None if self.truth is None else self.truth.to_dict(),
                "window": self.window.to_dict(),
                "size_map": "n = n_lo + (n_hi - n_lo) * (logF_hi - logF) / (logF_hi - logF_lo)"}


def _one_survey(spec, cosmo, index, exact_n):
    log_f, n = spec.survey_plan(index)
    window = spec.window.with_flux_limit(10.0 ** log_f)
    try:
        s = draw_sample(spec.truth, window, cosmo, n, [spec.seed, index, 1],
                        exact_n=exact_n)
    except Exception as exc:
        raise RuntimeError(f"survey {index}: {exc}") from exc
    s.meta.update({"index": index, "log_flux_limit": log_f, "target_n": n})
    s.seed = [spec.seed, index, 1]
    return s


def run_batch(spec, cosmo, exact_n=False, workers=1):
    """Simulate ``spec.count`` surveys; results do not depend on ``workers``."""
    if spec.truth is None:
        raise ValueError("batch needs a truth LF")
    if workers <= 1:
        return [_one_survey(spec, cosmo, i, exact_n) for i in range(spec.count)]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futs = [ex.submit(_one_survey, spec, cosmo, i, exact_n) for i in range(spec.count)]
        return [f.result() for f in futs]
