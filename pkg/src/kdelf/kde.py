"""Gaussian product-kernel density estimates with diagonal bandwidths.

Fixed and sample-point adaptive estimators, their leave-one-out companions
and the reflected variants used for half-plane supports. In the reflected
forms each source contributes a second kernel mirrored across ``y = 0`` in
the last coordinate, so densities are meant for ``y >= 0``.

Normalisations, with ``N = sum(w)``:

* plain:            ``(1/N) sum_j w_j K_j``
* plain LOO:        ``1/(N - w_i) sum_{j!=i} w_j K_j``
* reflected:        ``(1/N) sum_j w_j (K_j + K'_j)``
* reflected LOO:    ``2/(2N - w_i) [sum_{j!=i} w_j K_j + sum_j w_j K'_j]``

The held-out point keeps its own mirror image in the reflected LOO form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels

# terms with u.u above this are dropped (relative size < 4e-18)
CUTOFF2 = 80.0


def gauss_kernel(u):
    """Standard multivariate normal density at ``u`` (last axis is d)."""
    u = np.asarray(u, dtype=float)
    d = u.shape[-1]
    return (2.0 * np.pi) ** (-0.5 * d) * np.exp(-0.5 * np.sum(u * u, axis=-1))


def _check_bandwidths(h, d):
    h = np.asarray(h, dtype=float)
    if h.shape[-1] != d:
        raise ValueError(f"expected {d} bandwidth components, got {h.shape[-1]}")
    if np.any(~np.isfinite(h)) or np.any(h <= 0):
        raise ValueError("bandwidths must be positive and finite")
    return h


def _check_points(points):
    pts = np.ascontiguousarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("need a non-empty (n, d) array of points")
    if pts.shape[1] not in (2, 3):
        raise ValueError("only 2 or 3 dimensions are supported")
    return pts


def _check_weights(weights, n):
    if weights is None:
        return np.ones(n)
    w = np.ascontiguousarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError("weights must match the number of points")
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("weights must be positive and finite")
    return w


def _pick_key(pts, hs, reflect):
    """Column whose sorted order gives the fewest candidate neighbours."""
    r = np.sqrt(CUTOFF2)
    best, best_cost = pts.shape[1] - 2, np.inf
    for k in (pts.shape[1] - 2, pts.shape[1] - 1) + tuple(range(pts.shape[1] - 2)):
        v = np.sort(pts[:, k])
        rk = r * hs[:, k].max()
        cost = np.sum(np.searchsorted(v, v + rk, side="right") - np.searchsorted(v, v - rk))
        if reflect and k == pts.shape[1] - 1:
            cost += np.sum(np.searchsorted(v, -v + rk, side="right")
                           - np.searchsorted(v, -v - rk))
        if cost < best_cost:
            best, best_cost = k, cost
    return best


class KernelSum:
    """Sorted, compiled view of a sample for repeated kernel-sum queries.

    Parameters
    ----------
    points : (n, d) array
    weights : (n,) array or None
    h : (d,) or (n, d) array
        Global bandwidths or per-source (sample-point) bandwidths.
    reflect : bool
        Only a hint for choosing the search axis; sums are reflected or not
        per call.
    """

    def __init__(self, points, weights, h, reflect=False):
        pts = _check_points(points)
        n, d = pts.shape
        w = _check_weights(weights, n)
        h = _check_bandwidths(h, d)
        hs = np.broadcast_to(h, (n, d)).astype(float)
        self.n, self.d = n, d
        self.key = _pick_key(pts, hs, reflect)
        # Sort on every column (key first) so that the order, and therefore
        # every reduction, is independent of the caller's ordering.
        cols = [w] + [hs[:, k] for k in range(d)[::-1]] + \
               [pts[:, k] for k in range(d)[::-1] if k != self.key] + [pts[:, self.key]]
        order = np.lexsort(cols)
        self.order = order
        self.rank = np.empty(n, dtype=np.int64)
        self.rank[order] = np.arange(n)
        self.points = np.ascontiguousarray(pts[order])
        self.h = np.ascontiguousarray(hs[order])
        self.w = np.ascontiguousarray(w[order])
        self.n_eff = float(np.sum(w))
        self._w_orig = w
        self._norm = (2.0 * np.pi) ** (-0.5 * d)

    def sums(self, queries, exclude=None, reflect=False):
        """Direct and mirrored weighted kernel sums (normalised kernels)."""
        q = np.ascontiguousarray(np.atleast_2d(np.asarray(queries, dtype=float)))
        if q.shape[1] != self.d:
            raise ValueError("query dimension does not match the sample")
        if exclude is None:
            skip = np.full(q.shape[0], -1, dtype=np.int64)
        else:
            skip = self.rank[np.asarray(exclude, dtype=np.int64)]
        direct, mirror = _kernels.kernel_sums(self.points, self.h, self.w, q, skip,
                                              bool(reflect), CUTOFF2, self.key)
        return direct * self._norm, mirror * self._norm

    def evaluate(self, queries, reflect=False):
        direct, mirror = self.sums(queries, reflect=reflect)
        return (direct + mirror) / self.n_eff if reflect else direct / self.n_eff

    def loo(self, index=None, reflect=False):
        """Leave-one-out density at sample points ``index`` (default: all)."""
        if self.n < 2:
            raise ValueError("leave-one-out needs at least two points")
        idx = np.arange(self.n) if index is None else np.atleast_1d(index).astype(np.int64)
        pts = self.points[self.rank[idx]]
        direct, mirror = self.sums(pts, exclude=idx, reflect=reflect)
        wi = self._w_orig[idx]
        if reflect:
            return 2.0 * (direct + mirror) / (2.0 * self.n_eff - wi)
        return direct / (self.n_eff - wi)


def _scalar_or_array(values, query):
    return float(values[0]) if np.ndim(query) == 1 else values


def kde_eval(points, weights, bw, query, reflect=False):
    """Weighted fixed-bandwidth KDE at ``query`` (one point or an (m, d) array)."""
    ks = KernelSum(points, weights, bw, reflect)
    return _scalar_or_array(ks.evaluate(query, reflect), np.asarray(query))


def kde_loo(points, weights, bw, i=None, reflect=False):
    """Leave-one-out KDE at sample point ``i`` (an int, array, or None for all)."""
    ks = KernelSum(points, weights, bw, reflect)
    out = ks.loo(i, reflect)
    return float(out[0]) if np.ndim(i) == 0 and i is not None else out


@dataclass(frozen=True)
class LocalBandwidths:
    """Sample-point bandwidths ``h_k(X_j) = h_k0 * pilot_j**(-beta)``."""

    h: np.ndarray
    globals: tuple
    beta: float
    pilot: np.ndarray


def local_bandwidths(points, pilot, globals, beta, weights=None, reflect=False):
    """Per-point bandwidths from a pilot density.

    ``pilot`` is either the pilot density at each point (array of length n)
    or pilot bandwidths, in which case the pilot density is the fixed KDE of
    ``points`` evaluated at the points themselves.
    """
    pts = _check_points(points)
    n, d = pts.shape
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    g = _check_bandwidths(globals, d)
    pilot = np.asarray(pilot, dtype=float)
    if pilot.shape == (d,) and n != d:
        pilot_vals = KernelSum(pts, weights, pilot, reflect).evaluate(pts, reflect)
    elif pilot.shape == (n,):
        pilot_vals = pilot
    else:
        raise ValueError("pilot must be n density values or d bandwidths")
    if np.any(~(pilot_vals > 0)) or np.any(~np.isfinite(pilot_vals)):
        raise ValueError("pilot density must be positive at every data point")
    h = g[None, :] * pilot_vals[:, None] ** (-beta)
    return LocalBandwidths(h=h, globals=tuple(float(v) for v in g), beta=float(beta),
                           pilot=pilot_vals)


def adaptive_kde_eval(points, weights, local, query, reflect=False):
    ks = KernelSum(points, weights, local.h, reflect)
    return _scalar_or_array(ks.evaluate(query, reflect), np.asarray(query))


def adaptive_kde_loo(points, weights, local, i=None, reflect=False):
    ks = KernelSum(points, weights, local.h, reflect)
    out = ks.loo(i, reflect)
    return float(out[0]) if np.ndim(i) == 0 and i is not None else out
