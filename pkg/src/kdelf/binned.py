"""Binned LF estimate with boundary-clipped surveyed volumes.

In each bin ``phi = N / (omega * int_{L bin} [V(min(z2, zmax(L))) - V(z1)]+ dL)``
where ``V`` is the comoving volume per steradian and ``zmax(L)`` the largest
redshift at which ``L`` is still above the truncation curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _quad
from .survey import zmax_array

PAPER_Z_EDGES = (0.0, 0.2, 0.5, 0.8, 1.2, 1.8, 2.2, 2.7, 3.3, 3.8, 4.2, 4.7, 5.3, 6.0)
SCHEMES = ("arbitrary", "flim-anchored")

_L_PANELS = 4
_Z_PANELS = 4


@dataclass
class BinGrid:
    """Bins per redshift slice; ``L`` edges are in natural units."""

    z_edges: np.ndarray
    dlogL: float
    scheme: str
    z_lo: np.ndarray
    z_hi: np.ndarray
    L_lo: np.ndarray
    L_hi: np.ndarray
    slice_index: np.ndarray
    volume: np.ndarray
    z_bary: np.ndarray
    L_bary: np.ndarray

    @property
    def size(self):
        return int(self.z_lo.size)

    @property
    def z_c(self):
        return 0.5 * (self.z_lo + self.z_hi)

    @property
    def L_c(self):
        return 0.5 * (self.L_lo + self.L_hi)


@dataclass
class BinnedResult:
    grid: BinGrid
    count: np.ndarray
    phi: np.ndarray
    phi_err: np.ndarray
    flag: list = field(default_factory=list)

    @property
    def n_zero(self):
        return int(np.sum(self.count == 0))

    def rows(self):
        g = self.grid
        for k in range(g.size):
            yield {"z_lo": g.z_lo[k], "z_hi": g.z_hi[k], "logL_lo": g.L_lo[k],
                   "logL_hi": g.L_hi[k], "z_c": g.z_c[k], "logL_c": g.L_c[k],
                   "N": _count_value(self.count[k]), "phi": self.phi[k], "phi_err": self.phi_err[k],
                   "flag": self.flag[k]}


def _count_value(c):
    c = float(c)
    return int(c) if c.is_integer() else c


def _bin_volume(z1, z2, u_lo, u_hi, window, cosmo):
    """Surveyed volume per steradian of one bin and its barycentre.

    ``u`` is the oriented luminosity ``sign * L``.
    """
    sign = window.sign
    f1, f2 = (float(window.oriented_flim(z, cosmo)) for z in (z1, z2))
    breaks = [b for b in (f1, f2) if np.isfinite(b)]
    un, uw = _quad.composite(u_lo, u_hi, _L_PANELS, order=8, breaks=breaks)
    zt = zmax_array(sign * un, window, cosmo)
    top = np.where(np.isnan(zt), z1, np.minimum(z2, zt))
    top = np.maximum(top, z1)
    vol = float(np.sum(uw * (cosmo.comoving_volume(top) - cosmo.comoving_volume(z1))))
    if not vol > 0:
        return 0.0, np.nan, np.nan
    # barycentre of the surveyed region, weighted by dV/dz
    t, tw = _quad.composite(0.0, 1.0, _Z_PANELS, order=8)
    span = top - z1
    zz = z1 + span[:, None] * t[None, :]
    ww = uw[:, None] * span[:, None] * tw[None, :] * cosmo.dvolume_dz(zz)
    m = ww.sum()
    zb = float(np.sum(ww * zz) / m) if m > 0 else np.nan
    ub = float(np.sum(ww * un[:, None]) / m) if m > 0 else np.nan
    return vol, zb, sign * ub


def make_bins(window, cosmo, z_edges=PAPER_Z_EDGES, dlogL=0.3, scheme="arbitrary"):
    """Bins of width ``dlogL`` in each redshift slice.

    ``arbitrary`` starts every slice at the window's lower luminosity limit;
    ``flim-anchored`` starts it at the boundary value at the slice's lower
    redshift edge. Bins with no surveyed volume are dropped.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}")
    if not dlogL > 0:
        raise ValueError("dlogL must be positive")
    ze = np.asarray(z_edges, dtype=float)
    if ze.ndim != 1 or ze.size < 2 or np.any(np.diff(ze) <= 0):
        raise ValueError("z_edges must be strictly increasing")
    if ze[0] < window.z_min - 1e-12 or ze[-1] > window.z_max + 1e-12:
        raise ValueError("z_edges must lie within the window")
    u_min, u_max = window.oriented_limits
    cols = {k: [] for k in ("z_lo", "z_hi", "L_lo", "L_hi", "slice", "vol", "zb", "Lb")}
    for s, (z1, z2) in enumerate(zip(ze[:-1], ze[1:])):
        start = u_min
        if scheme == "flim-anchored":
            f1 = float(window.oriented_flim(z1, cosmo))
            start = max(u_min, f1) if np.isfinite(f1) else u_min
        nb = int(np.ceil((u_max - start) / dlogL - 1e-9))
        edges = start + dlogL * np.arange(nb + 1)
        edges[-1] = min(edges[-1], u_max)
        for a, b in zip(edges[:-1], edges[1:]):
            if b <= a:
                continue
            vol, zb, Lb = _bin_volume(z1, z2, a, b, window, cosmo)
            if vol <= 0:
                continue
            lo, hi = sorted((window.sign * a, window.sign * b))
            for k, v in zip(cols, (z1, z2, lo, hi, s, vol, zb, Lb)):
                cols[k].append(v)
    if not cols["z_lo"]:
        raise ValueError("no bin has surveyed volume")
    a = {k: np.asarray(v) for k, v in cols.items()}
    return BinGrid(z_edges=ze, dlogL=float(dlogL), scheme=scheme, z_lo=a["z_lo"],
                   z_hi=a["z_hi"], L_lo=a["L_lo"], L_hi=a["L_hi"],
                   slice_index=a["slice"].astype(int), volume=a["vol"],
                   z_bary=a["zb"], L_bary=a["Lb"])


def _assign(values, lo, hi, closed_top):
    """Half-open membership ``lo <= v < hi``, closed at the top when asked."""
    inside = (values[:, None] >= lo[None, :]) & (values[:, None] < hi[None, :])
    if np.any(closed_top):
        inside |= closed_top[None, :] & (values[:, None] == hi[None, :])
    return inside


def binned_lf(sample, grid, cosmo, window=None):
    """Per-bin LF estimates and Poisson errors.

    Weighted samples use ``N = sum(w)`` and error ``sqrt(sum(w**2))``.
    """
    window = sample.window if window is None else window
    w = np.ones(sample.n) if sample.weights is None else sample.weights
    ze = grid.z_edges
    z_top = grid.z_hi == ze[-1]
    slice_top = np.zeros(grid.size, dtype=bool)
    for s in np.unique(grid.slice_index):
        idx = np.flatnonzero(grid.slice_index == s)
        slice_top[idx[np.argmax(grid.L_hi[idx])]] = True
    in_z = _assign(sample.z, grid.z_lo, grid.z_hi, z_top)
    in_L = _assign(sample.L, grid.L_lo, grid.L_hi, slice_top)
    member = in_z & in_L
    count = member.T.astype(float) @ w
    sumsq = member.T.astype(float) @ (w * w)
    denom = window.omega * grid.volume
    if np.any((denom <= 0) & (count > 0)):
        raise ValueError("sources fall in a bin with no surveyed volume")
    phi = np.where(denom > 0, count / denom, 0.0)
    err = np.where(denom > 0, np.sqrt(sumsq) / denom, 0.0)
    flag = ["zero_count" if c == 0 else "ok" for c in count]
    return BinnedResult(grid=grid, count=count, phi=phi, phi_err=err, flag=flag)
