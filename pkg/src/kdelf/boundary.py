"""Boundary-corrected kernel estimates of p(z, L) and of the LF.

Three estimators are provided, all working on transformed coordinates
``x = ln(z + delta1)`` and a depth ``D = sign * (L - f_lim(z))`` above the
truncation curve:

``t``
    ``y = ln(D + delta2)``; a plain KDE in (x, y).
``tr``
    ``y = D``; a KDE reflected across ``y = 0``.
``tra``
    as ``tr`` but with sample-point bandwidths ``h_k0 * pilot**(-beta)``,
    where the pilot is a frozen ``tr`` estimate.

The trivariate form (``tr`` only) prepends the spectral index ``alpha`` as an
untransformed first coordinate; the boundary then depends on each point's
alpha.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels, _quad
from .kde import CUTOFF2, KernelSum, local_bandwidths
from .survey import in_window, phi_from_p

KINDS = ("t", "tr", "tra")
PARAM_NAMES = {
    ("t", 2): ("h1", "h2", "delta1", "delta2"),
    ("tr", 2): ("h1", "h2", "delta1"),
    ("tr", 3): ("h1", "h2", "h3", "delta1"),
    ("tra", 2): ("h10", "h20", "beta"),
}
DELTA2_MIN = 1e-6

# quadrature resolution of window integrals, in units of the smallest bandwidth
_PANEL_PER_H = 3.0
_MAX_PANELS = 6000
_REFINE_DEPTH = 24
_LIMIT_STEP = 0.5


class TransformError(ValueError):
    """A point falls outside the domain of the coordinate transform."""


@dataclass(frozen=True)
class Pilot:
    """Frozen ``tr`` fit used to set adaptive bandwidths."""

    h1: float
    h2: float
    delta1: float
    values: tuple

    def to_dict(self):
        return {"h1": self.h1, "h2": self.h2, "delta1": self.delta1}


@dataclass(frozen=True)
class EstimatorConfig:
    """Estimator kind and its parameters.

    ``params`` holds ``h1, h2, delta1, delta2`` for ``t``; ``h1, h2, delta1``
    for ``tr`` (``h1, h2, h3, delta1`` in three dimensions, ``h1`` acting on
    alpha); ``h10, h20, beta`` for ``tra``, which also needs ``pilot``.
    """

    kind: str
    params: dict
    dim: int = 2
    weighted: bool = False
    pilot: Pilot | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        key = (self.kind, self.dim)
        if key not in PARAM_NAMES:
            raise ValueError(f"estimator {self.kind!r} is not available in {self.dim}-d")
        names = PARAM_NAMES[key]
        missing = [k for k in names if k not in self.params]
        if missing:
            raise ValueError(f"missing parameters: {', '.join(missing)}")
        params = {k: float(self.params[k]) for k in names}
        object.__setattr__(self, "params", params)
        for k, v in params.items():
            if not np.isfinite(v):
                raise ValueError(f"parameter {k} is not finite")
            if k.startswith("h") and v <= 0:
                raise ValueError(f"bandwidth {k} must be positive")
        if self.kind == "t" and params["delta2"] <= 0:
            raise ValueError("delta2 must be positive")
        if self.kind == "tra":
            if self.pilot is None:
                raise ValueError("tra needs a frozen tr pilot")
            if not 0.0 <= params["beta"] <= 1.0:
                raise ValueError("beta must lie in [0, 1]")

    @property
    def delta1(self):
        return self.pilot.delta1 if self.kind == "tra" else self.params["delta1"]

    @property
    def reflect(self):
        return self.kind != "t"

    def with_params(self, **kw):
        p = dict(self.params)
        p.update(kw)
        return replace(self, params=p)

    def to_dict(self):
        d = {"kind": self.kind, "dim": self.dim, "weighted": self.weighted,
             "params": dict(self.params)}
        if self.pilot is not None:
            d["pilot"] = self.pilot.to_dict()
        return d


def _delta1_check(delta1, z):
    arg = np.asarray(z, dtype=float) + delta1
    if np.any(~(arg > 0)):
        raise TransformError("z + delta1 must be positive")
    return arg


def transform_depth(z, depth, config):
    """Map (z, depth) to (x, y) and the Jacobian determinant of the map."""
    zd = _delta1_check(config.delta1, z)
    x = np.log(zd)
    depth = np.asarray(depth, dtype=float)
    if config.kind == "t":
        arg = depth + config.params["delta2"]
        if np.any(~(arg > 0)):
            raise TransformError("L - f_lim(z) + delta2 must be positive")
        return x, np.log(arg), 1.0 / (zd * arg)
    return x, depth, 1.0 / zd


def forward_transform(z, L, config, window, cosmo, alpha=None):
    """Transformed coordinates and ``|det J|`` for points in (z, L) or
    (alpha, z, L).

    Returns ``(X, jac)`` where ``X`` has shape (m, dim).
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    L = np.atleast_1d(np.asarray(L, dtype=float))
    if config.dim == 3:
        if alpha is None:
            raise ValueError("trivariate transform needs alpha")
        alpha = np.broadcast_to(np.asarray(alpha, dtype=float), z.shape)
    with np.errstate(invalid="ignore"):
        depth = window.depth(z, L, cosmo, alpha)
    x, y, jac = transform_depth(z, depth, config)
    cols = [x, y] if config.dim == 2 else [alpha, x, y]
    return np.column_stack(cols), jac


def _bandwidth_vector(config):
    p = config.params
    if config.kind == "tr" and config.dim == 3:
        return np.array([p["h1"], p["h2"], p["h3"]])
    if config.kind == "tra":
        return np.array([p["h10"], p["h20"]])
    return np.array([p["h1"], p["h2"]])


# -- window integrals ------------------------------------------------------

def _y_limits(z, config, window, cosmo, alpha=None):
    lo, hi = window.depth_limits(z, cosmo, alpha)
    if config.kind == "t":
        d2 = config.params["delta2"]
        with np.errstate(divide="ignore", invalid="ignore"):
            lo, hi = np.log(lo + d2), np.log(hi + d2)
    return lo, hi


def _limit_jump(lo, hi):
    """Largest change of either limit between consecutive edges (columns are
    edges), treating a change of finiteness as infinite."""
    out = np.zeros(lo.shape[-1] - 1)
    for v in (lo, hi):
        a, b = v[..., :-1], v[..., 1:]
        fin = np.isfinite(a) & np.isfinite(b)
        with np.errstate(invalid="ignore"):
            d = np.where(fin, np.abs(b - a), np.where(np.isfinite(a) ^ np.isfinite(b),
                                                       np.inf, 0.0))
        out = np.maximum(out, d.reshape(-1, d.shape[-1]).max(axis=0))
    return out


def _x_rule(config, window, cosmo, hx, hy, y_reach, alphas=None, order=8):
    """Composite Gauss-Legendre rule in x with panels refined wherever the
    window's y limits move by more than half the smallest y bandwidth.

    Limit values are clipped to ``y_reach``, the y range any kernel (or
    mirror image) touches, so that refinement ignores unreachable parts."""
    d1 = config.delta1
    x_lo = np.log(_delta1_check(d1, window.z_min))
    x_hi = np.log(window.z_max + d1)
    width = max(_PANEL_PER_H * hx, (x_hi - x_lo) / _MAX_PANELS)
    breaks = set()
    for a in ([None] if alphas is None else alphas):
        breaks.update(window.crossing_redshifts(cosmo, a))
    breaks_x = [np.log(zc + d1) for zc in sorted(breaks)]
    edges = _quad.panel_edges(x_lo, x_hi, width, breaks_x)
    a_col = None if alphas is None else np.asarray(alphas)[:, None]

    def limits(xe):
        z = np.clip(np.exp(xe) - d1, window.z_min, window.z_max)
        if a_col is None:
            return _y_limits(z, config, window, cosmo)
        lo, hi = _y_limits(z[None, :], config, window, cosmo, a_col)
        # alpha-free boundaries come back with a single row
        shape = (a_col.shape[0], z.size)
        return np.broadcast_to(lo, shape), np.broadcast_to(hi, shape)

    def clipped(xe):
        lo, hi = limits(xe)
        return np.clip(lo, *y_reach), np.clip(hi, *y_reach)

    lo, hi = clipped(edges)
    for _ in range(_REFINE_DEPTH):
        bad = _limit_jump(lo, hi) > _LIMIT_STEP * hy
        if not np.any(bad) or edges.size > 4 * _MAX_PANELS:
            break
        mids = 0.5 * (edges[:-1][bad] + edges[1:][bad])
        edges = np.sort(np.concatenate([edges, mids]))
        lo, hi = clipped(edges)
    nodes, weights = _quad.gauss_legendre_nodes(edges, order)
    ylo, yhi = limits(nodes)
    return nodes, weights, np.ascontiguousarray(ylo), np.ascontiguousarray(yhi)


def window_mass(config, X, h, weights, window, cosmo, alpha_range=None):
    """``sum_j w_j`` times the mass of kernel ``j`` (with its mirror image for
    reflected kinds) inside the transformed window."""
    h = np.broadcast_to(h, X.shape)
    w = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    y = X[:, -1]
    pad = np.sqrt(CUTOFF2) * h[:, -1].max()
    y_reach = (min(y.min(), -y.max() if config.reflect else np.inf) - pad,
               max(y.max(), -y.min() if config.reflect else -np.inf) + pad)
    if config.dim == 2:
        xn, xw, ylo, yhi = _x_rule(config, window, cosmo, h[:, 0].min(), h[:, 1].min(),
                                   y_reach)
        return _kernels.window_mass_2d(np.ascontiguousarray(X), np.ascontiguousarray(h), w,
                                       xn, xw, ylo, yhi, config.reflect, CUTOFF2)
    a1, a2 = alpha_range
    ha = h[:, 0].min()
    a_edges = _quad.panel_edges(a1, a2, max(_PANEL_PER_H * ha, (a2 - a1) / 400))
    an, aw = _quad.gauss_legendre_nodes(a_edges, 8)
    xn, xw, ylo, yhi = _x_rule(config, window, cosmo, h[:, 1].min(), h[:, 2].min(),
                               y_reach, alphas=an)
    return _kernels.window_mass_3d(np.ascontiguousarray(X), np.ascontiguousarray(h), w,
                                   an, aw, xn, xw, np.ascontiguousarray(ylo),
                                   np.ascontiguousarray(yhi), config.reflect, CUTOFF2)


# -- estimates --------------------------------------------------------------

class DensityEstimate:
    """A fitted estimate of ``p(z, L)`` (or ``p(alpha, z, L)``) for a sample.

    Parameters
    ----------
    config : EstimatorConfig
    sample : Sample
    cosmo : cosmology
    alpha_range : (float, float), optional
        Spectral-index limits of the trivariate window; defaults to the range
        of the sample.
    """

    def __init__(self, config, sample, cosmo, alpha_range=None):
        if config.dim != sample.dim:
            raise ValueError("estimator and sample dimensions differ")
        self.config = config
        self.sample = sample
        self.window = sample.window
        self.cosmo = cosmo
        if config.dim == 3 and alpha_range is None:
            alpha_range = (float(sample.alpha.min()), float(sample.alpha.max()))
        self.alpha_range = alpha_range
        self.weights = sample.weights if config.weighted else None
        self.n = sample.n
        self.n_eff = float(self.n if self.weights is None else np.sum(self.weights))
        self.X, self.jac = forward_transform(sample.z, sample.L, config, self.window,
                                             cosmo, sample.alpha)
        if config.kind == "tra":
            pilot = np.asarray(config.pilot.values, dtype=float)
            if pilot.shape != (self.n,):
                raise ValueError("pilot does not belong to this sample")
            g = _bandwidth_vector(config)
            self.local = local_bandwidths(self.X, pilot, g, config.params["beta"])
            self.h = self.local.h
        else:
            self.local = None
            self.h = _bandwidth_vector(config)
        self._ks = KernelSum(self.X, self.weights, self.h, config.reflect)
        self._mass = None

    # transformed space
    def f_hat(self, X):
        return self._ks.evaluate(np.atleast_2d(X), self.config.reflect)

    def f_hat_loo(self, index=None):
        return self._ks.loo(index, self.config.reflect)

    # original space
    def _query(self, z, L, alpha):
        z = np.asarray(z, dtype=float)
        L = np.asarray(L, dtype=float)
        if self.config.dim == 3 and alpha is None:
            raise ValueError("trivariate estimate needs alpha")
        shape = np.broadcast_shapes(z.shape, L.shape,
                                    () if alpha is None else np.shape(alpha))
        zb = np.broadcast_to(z, shape).ravel()
        Lb = np.broadcast_to(L, shape).ravel()
        ab = None if alpha is None else np.broadcast_to(alpha, shape).ravel()
        return zb, Lb, ab, shape

    def p_hat(self, z, L, alpha=None):
        """Density of (z, L) [or (alpha, z, L)]; NaN where the ``t`` transform
        is undefined (below the boundary by more than delta2)."""
        zb, Lb, ab, shape = self._query(z, L, alpha)
        out = np.full(zb.shape, np.nan)
        with np.errstate(invalid="ignore"):
            depth = self.window.depth(np.maximum(zb, 0.0), Lb, self.cosmo, ab)
        ok = zb + self.config.delta1 > 0
        if self.config.kind == "t":
            ok &= depth + self.config.params["delta2"] > 0
        if np.any(ok):
            x, y, jac = transform_depth(zb[ok], depth[ok], self.config)
            cols = [x, y] if ab is None else [ab[ok], x, y]
            out[ok] = self.f_hat(np.column_stack(cols)) * jac
        out = out.reshape(shape)
        return out if out.ndim else float(out)

    def p_hat_loo(self, index=None):
        """Leave-one-out density at sample points ``index`` (default: all)."""
        idx = None if index is None else np.atleast_1d(index)
        jac = self.jac if idx is None else self.jac[idx]
        out = self.f_hat_loo(idx) * jac
        return float(out[0]) if index is not None and np.ndim(index) == 0 else out

    def phi_hat(self, z, L, alpha=None):
        """LF estimate ``p_hat * n_eff / (omega dV/dz)``."""
        p = self.p_hat(z, L, alpha)
        zb = np.broadcast_to(np.asarray(z, dtype=float), np.shape(p))
        return phi_from_p(p, zb, self.n_eff, self.window, self.cosmo)

    def extrapolated(self, z, L, alpha=None):
        """True where (z, L) lies outside the survey window."""
        return ~np.asarray(in_window(z, L, self.window, self.cosmo, alpha))

    def window_integral(self):
        """Integral of ``p_hat`` over the survey window."""
        if self._mass is None:
            # the kernel-sum view is sorted, so the total does not depend on input order
            ks = self._ks
            self._mass = window_mass(self.config, ks.points, ks.h, ks.w, self.window,
                                     self.cosmo, self.alpha_range) / self.n_eff
        return self._mass


def fit_pilot_and_freeze(tr_estimate):
    """Freeze a fitted ``tr`` estimate as the pilot of an adaptive fit."""
    cfg = tr_estimate.config
    if cfg.kind != "tr" or cfg.dim != 2:
        raise ValueError("the pilot must be a bivariate tr estimate")
    values = tr_estimate.f_hat(tr_estimate.X)
    if np.any(~(values > 0)):
        raise ValueError("pilot density vanishes at a data point")
    p = cfg.params
    return Pilot(h1=p["h1"], h2=p["h2"], delta1=p["delta1"],
                 values=tuple(float(v) for v in values))


def tra_config(pilot, h10, h20, beta, weighted=False):
    return EstimatorConfig("tra", {"h10": h10, "h20": h20, "beta": beta},
                           weighted=weighted, pilot=pilot)


def marginalize_alpha(estimate, z, L, alpha_range=None, panels=None):
    """Bivariate LF from a trivariate estimate, integrating over alpha."""
    if estimate.config.dim != 3:
        raise ValueError("marginalize_alpha needs a trivariate estimate")
    a1, a2 = estimate.alpha_range if alpha_range is None else alpha_range
    z = np.asarray(z, dtype=float)
    L = np.asarray(L, dtype=float)
    shape = np.broadcast_shapes(z.shape, L.shape)
    if a2 <= a1:
        return np.zeros(shape) if shape else 0.0
    if panels is None:
        panels = max(4, int(np.ceil((a2 - a1) / (0.5 * estimate.h[0]))))
    an, aw = _quad.composite(a1, a2, panels, order=8)
    zb = np.broadcast_to(z, shape).ravel()
    Lb = np.broadcast_to(L, shape).ravel()
    vals = estimate.phi_hat(zb[None, :], Lb[None, :], an[:, None])
    out = (aw[:, None] * vals).sum(axis=0).reshape(shape)
    return out if out.ndim else float(out)
