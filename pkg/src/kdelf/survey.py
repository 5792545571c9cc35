"""Survey window, truncation boundary, truth luminosity functions and the
conversion between the (z, L) probability density and the LF.

``L`` is always log10 luminosity (W/Hz), or an absolute magnitude when the
window's ``axis_kind`` is ``"magnitude"``. In magnitude mode brighter objects
have smaller ``L`` and detection means ``M <= f_lim(z)``. Internally both
modes are handled in *oriented* coordinates ``sign * L`` where
``sign = +1`` (luminosity) or ``-1`` (magnitude), so that detection is always
``sign*L >= sign*f_lim(z)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import _quad
from .cosmo import JY_SI, MPC_M, kcorrection

_LOG10_4PI = np.log10(4.0 * np.pi)
_PC_M = MPC_M / 1e6


class BoundaryError(ValueError):
    """Raised where the truncation boundary is undefined."""


@dataclass(frozen=True)
class PowerLawBoundary:
    """Flux-limit boundary for a power-law spectrum of index ``alpha``."""

    alpha: float = 0.75

    def to_dict(self):
        return {"kind": "power_law", "alpha": self.alpha}


@dataclass(frozen=True)
class TabulatedBoundary:
    """Boundary given at knots and linearly interpolated between them."""

    z: tuple
    f: tuple

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.ndim != 1 or z.size < 2 or np.any(np.diff(z) <= 0):
            raise ValueError("tabulated boundary knots must be strictly increasing in z")
        if len(self.f) != z.size:
            raise ValueError("knot columns differ in length")
        object.__setattr__(self, "z", tuple(float(v) for v in self.z))
        object.__setattr__(self, "f", tuple(float(v) for v in self.f))

    @classmethod
    def from_csv(cls, path):
        zs, fs = [], []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                try:
                    zs.append(float(row[0]))
                    fs.append(float(row[1]))
                except ValueError:
                    continue  # header
        return cls(tuple(zs), tuple(fs))

    def to_dict(self):
        return {"kind": "tabulated", "z": list(self.z), "f": list(self.f)}


def boundary_from_dict(d):
    d = dict(d)
    kind = d.pop("kind", "power_law")
    if kind == "power_law":
        return PowerLawBoundary(**d)
    if kind == "tabulated":
        if "file" in d:
            return TabulatedBoundary.from_csv(d["file"])
        return TabulatedBoundary(tuple(d["z"]), tuple(d["f"]))
    raise ValueError(f"unknown boundary kind {kind!r}")


@dataclass(frozen=True)
class SurveyWindow:
    """The accessible region W of the (z, L) plane.

    ``flux_limit`` is in Jy for luminosity windows, or an apparent-magnitude
    limit for magnitude windows with a power-law boundary. ``omega`` is the
    solid angle in steradians.
    """

    z_min: float = 0.0
    z_max: float = 6.0
    L_min: float = 22.0
    L_max: float = 30.0
    omega: float = 0.456
    flux_limit: float = 0.04
    boundary: object = field(default_factory=PowerLawBoundary)
    axis_kind: str = "luminosity"

    def __post_init__(self):
        if not self.z_min < self.z_max:
            raise ValueError("z_min must be below z_max")
        if not self.L_min < self.L_max:
            raise ValueError("L_min must be below L_max")
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        if self.axis_kind not in ("luminosity", "magnitude"):
            raise ValueError("axis_kind must be 'luminosity' or 'magnitude'")
        if isinstance(self.boundary, PowerLawBoundary):
            if self.axis_kind == "luminosity" and not self.flux_limit > 0:
                raise ValueError("flux_limit must be positive")
        elif isinstance(self.boundary, TabulatedBoundary):
            zk = self.boundary.z
            if zk[0] > self.z_min or zk[-1] < self.z_max:
                raise ValueError("tabulated knots must cover [z_min, z_max]")
        else:
            raise TypeError("boundary must be PowerLawBoundary or TabulatedBoundary")

    @property
    def sign(self):
        return 1.0 if self.axis_kind == "luminosity" else -1.0

    @property
    def oriented_limits(self):
        """(lower, upper) of ``sign * L`` over the window."""
        a, b = self.sign * self.L_min, self.sign * self.L_max
        return min(a, b), max(a, b)

    def with_omega(self, omega):
        return replace(self, omega=float(omega))

    def with_flux_limit(self, flux_limit):
        return replace(self, flux_limit=float(flux_limit))

    def to_dict(self):
        return {"z_min": self.z_min, "z_max": self.z_max, "L_min": self.L_min,
                "L_max": self.L_max, "omega": self.omega,
                "flux_limit": self.flux_limit, "boundary": self.boundary.to_dict(),
                "axis_kind": self.axis_kind}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "boundary" in d:
            d["boundary"] = boundary_from_dict(d["boundary"])
        return cls(**d)

    # -- boundary -----------------------------------------------------------

    def flim(self, z, cosmo, alpha=None):
        """Boundary value at ``z``; ``-inf`` (or ``+inf`` for magnitudes) at z=0
        for flux-defined boundaries. ``alpha`` overrides the spectral index."""
        z = np.asarray(z, dtype=float)
        b = self.boundary
        if isinstance(b, TabulatedBoundary):
            zk = np.asarray(b.z)
            if np.any(z < zk[0] - 1e-12) or np.any(z > zk[-1] + 1e-12):
                raise BoundaryError("redshift outside the tabulated boundary range")
            return np.interp(z, zk, np.asarray(b.f))
        a = b.alpha if alpha is None else np.asarray(alpha, dtype=float)
        with np.errstate(divide="ignore"):
            log_dl = np.log10(cosmo.luminosity_distance(z) * MPC_M)
            logk = np.log10(kcorrection(z, a))
        if self.axis_kind == "luminosity":
            return _LOG10_4PI + 2.0 * log_dl + np.log10(self.flux_limit * JY_SI) - logk
        # absolute-magnitude limit from an apparent-magnitude limit
        return self.flux_limit - 5.0 * (log_dl - np.log10(10.0 * _PC_M)) + 2.5 * logk

    def oriented_flim(self, z, cosmo, alpha=None):
        return self.sign * self.flim(z, cosmo, alpha)

    def depth(self, z, L, cosmo, alpha=None):
        """Oriented distance above the boundary, ``sign*(L - f_lim(z))``."""
        return self.sign * (np.asarray(L, dtype=float) - self.flim(z, cosmo, alpha))

    def depth_limits(self, z, cosmo, alpha=None):
        """Range of depth covered by the window at redshift ``z``.

        Returns ``(lo, hi)``; where ``hi <= lo`` the window is empty at ``z``.
        """
        f = self.oriented_flim(z, cosmo, alpha)
        ulo, uhi = self.oriented_limits
        with np.errstate(invalid="ignore"):
            lo = np.maximum(ulo, f) - f
            hi = uhi - f
        lo = np.where(np.isneginf(f), np.inf, lo)
        hi = np.where(np.isneginf(f), np.inf, hi)
        return lo, hi

    def L_limits(self, z, cosmo, alpha=None):
        """Lower and upper ``L`` of the window at ``z`` in natural orientation.

        Empty slices return equal limits."""
        f = self.oriented_flim(z, cosmo, alpha)
        ulo, uhi = self.oriented_limits
        lo = np.minimum(np.maximum(ulo, f), uhi)
        if self.sign > 0:
            return lo, np.full_like(lo, uhi)
        return np.full_like(lo, -uhi), -lo

    def crossing_redshifts(self, cosmo, alpha=None):
        """Redshifts where the boundary crosses the window's L limits."""
        out = []
        for level in self.oriented_limits:
            zc = _last_visible_z(np.array([level]), self, cosmo, alpha)[0]
            if np.isfinite(zc) and self.z_min < zc < self.z_max:
                out.append(float(zc))
        return out


def flim_logL(z, window, cosmo, alpha=None):
    """Truncation boundary f_lim(z) in log10 luminosity (or magnitude) units."""
    z_arr = np.asarray(z, dtype=float)
    if isinstance(window.boundary, PowerLawBoundary) and np.any(z_arr <= 0):
        raise BoundaryError("flux-limit boundary is singular at z = 0")
    out = window.flim(z_arr, cosmo, alpha)
    return out if np.ndim(out) else float(out)


def _last_visible_z(levels, window, cosmo, alpha=None, ngrid=513, iters=60):
    """Vectorised largest z in the window with oriented flim(z) <= level."""
    levels = np.asarray(levels, dtype=float)
    zg = np.linspace(window.z_min, window.z_max, ngrid)
    fg = window.oriented_flim(zg, cosmo, alpha)
    vis = fg[None, :] <= levels[:, None]
    out = np.full(levels.shape, np.nan)
    anyvis = vis.any(axis=1)
    last = np.where(anyvis, ngrid - 1 - np.argmax(vis[:, ::-1], axis=1), -1)
    full = last == ngrid - 1
    out[full] = window.z_max
    todo = anyvis & ~full
    if np.any(todo):
        lo = zg[last[todo]]
        hi = zg[last[todo] + 1]
        lev = levels[todo]
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            ok = window.oriented_flim(mid, cosmo, alpha) <= lev
            lo = np.where(ok, mid, lo)
            hi = np.where(ok, hi, mid)
            if np.all(hi - lo <= 1e-13):
                break
        out[todo] = lo
    return out


def zmax_of_L(Llog, window, cosmo):
    """Largest redshift at which a source of ``Llog`` stays above the boundary.

    Returns ``None`` when the source is invisible everywhere in the window.
    """
    z = _last_visible_z(np.array([window.sign * float(Llog)]), window, cosmo)[0]
    return None if np.isnan(z) else float(z)


def zmax_array(L, window, cosmo):
    """Vectorised :func:`zmax_of_L`; NaN marks no visibility."""
    L = np.asarray(L, dtype=float)
    return _last_visible_z(window.sign * L.ravel(), window, cosmo).reshape(L.shape)


def in_window(z, Llog, window, cosmo, alpha=None):
    """Closed-region membership test for W."""
    z = np.asarray(z, dtype=float)
    L = np.asarray(Llog, dtype=float)
    zc = np.clip(z, window.z_min, window.z_max)
    inside = ((z >= window.z_min) & (z <= window.z_max)
              & (L >= window.L_min) & (L <= window.L_max))
    with np.errstate(invalid="ignore"):
        above = window.depth(zc, L, cosmo, alpha) >= 0
    out = inside & above
    return bool(out) if out.ndim == 0 else out


def phi_from_p(p_value, z, n_eff, window, cosmo):
    """phi = p * n_eff / (omega * dV/dz)."""
    dv = np.asarray(cosmo.dvolume_dz(z), dtype=float)
    if np.any(dv <= 0):
        raise ZeroDivisionError("dV/dz vanishes (z = 0)")
    out = np.asarray(p_value, dtype=float) * n_eff / (window.omega * dv)
    return out if np.ndim(out) else float(out)


def p_from_phi(phi_value, z, n_eff, window, cosmo):
    dv = np.asarray(cosmo.dvolume_dz(z), dtype=float)
    out = np.asarray(phi_value, dtype=float) * window.omega * dv / n_eff
    return out if np.ndim(out) else float(out)


# -- truth luminosity functions -----------------------------------------------

@dataclass(frozen=True)
class DoublePowerLaw:
    """Evolving double power-law LF.

    ``phi(z, L) = phi*(z) / (10**(a*(L - L*(z))) + 10**(b*(L - L*(z))))`` with
    ``log10 phi*(z)`` and ``L*(z)`` polynomials in z (coefficients in
    increasing order). ``a`` is the faint-end slope, ``b`` the bright-end one;
    ``phi`` is per Mpc^3 per dex.
    """

    log_phi_star: tuple = (-5.321, 1.1, -0.22)
    L_star: tuple = (24.7, 1.0, -0.12)
    faint_slope: float = 0.5
    bright_slope: float = 2.3

    kind = "double_power_law"

    def log_phi_star_at(self, z):
        return np.polynomial.polynomial.polyval(np.asarray(z, dtype=float), self.log_phi_star)

    def L_star_at(self, z):
        return np.polynomial.polynomial.polyval(np.asarray(z, dtype=float), self.L_star)

    def __call__(self, z, L):
        z = np.asarray(z, dtype=float)
        d = np.asarray(L, dtype=float) - self.L_star_at(z)
        with np.errstate(over="ignore"):  # an infinite denominator is the right limit
            out = 10.0 ** self.log_phi_star_at(z) / (10.0 ** (self.faint_slope * d)
                                                     + 10.0 ** (self.bright_slope * d))
        return out if out.ndim else float(out)

    def scaled(self, factor):
        c = list(self.log_phi_star)
        c[0] += np.log10(factor)
        return replace(self, log_phi_star=tuple(c))

    def to_dict(self):
        return {"kind": self.kind, "log_phi_star": list(self.log_phi_star),
                "L_star": list(self.L_star), "faint_slope": self.faint_slope,
                "bright_slope": self.bright_slope}


@dataclass(frozen=True)
class ConstantLF:
    value: float = 1.0

    kind = "constant"

    def __call__(self, z, L):
        out = np.broadcast_to(self.value, np.broadcast(np.asarray(z), np.asarray(L)).shape)
        out = np.array(out, dtype=float)
        return out if out.ndim else float(out)

    def scaled(self, factor):
        return ConstantLF(self.value * factor)

    def to_dict(self):
        return {"kind": self.kind, "value": self.value}


def lf_from_dict(d):
    d = dict(d)
    kind = d.pop("kind", "double_power_law")
    if kind == "double_power_law":
        return DoublePowerLaw(**{k: tuple(v) if isinstance(v, list) else v
                                 for k, v in d.items()})
    if kind == "constant":
        return ConstantLF(**d)
    raise ValueError(f"unknown LF kind {kind!r}")


def lf_model_eval(model, z, Llog):
    return model(z, Llog)


def window_nodes(window, cosmo, nz=192, nL=96, order=8, alpha=None):
    """Tensor-product quadrature nodes over W in (z, L).

    Returns flattened ``z, L, weight`` arrays; the L rule is mapped onto the
    window's L range at each z so the boundary curve is followed exactly.
    """
    breaks = window.crossing_redshifts(cosmo, alpha)
    zn, zw = _quad.composite(window.z_min, window.z_max, nz, order, breaks)
    lo, hi = window.L_limits(zn, cosmo, alpha)
    t, w = _quad.composite(0.0, 1.0, nL, order)
    L = lo[:, None] + (hi - lo)[:, None] * t[None, :]
    wt = zw[:, None] * (hi - lo)[:, None] * w[None, :]
    z = np.broadcast_to(zn[:, None], L.shape)
    return z.ravel(), L.ravel(), wt.ravel()


def integrate_window(func, window, cosmo, nz=192, nL=96):
    """Integrate ``func(z, L)`` over W."""
    z, L, w = window_nodes(window, cosmo, nz, nL)
    keep = w > 0
    vals = func(z[keep], L[keep])
    return float(np.sum(vals * w[keep]))


def expected_count(model, window, cosmo, nz=192, nL=96):
    """Expected sample size: integral of phi * omega * dV/dz over W."""
    z, L, w = window_nodes(window, cosmo, nz, nL)
    keep = w > 0
    zk = z[keep]
    vals = np.asarray(model(zk, L[keep])) * window.omega * cosmo.dvolume_dz(zk)
    total = float(np.sum(vals * w[keep]))
    if not np.isfinite(total):
        raise FloatingPointError("LF model is not integrable over the window")
    return total
