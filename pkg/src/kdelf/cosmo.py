"""Flat LCDM kinematics: luminosity distance, comoving volume and K-correction."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

C_KMS = 299792.458
MPC_M = 3.0856775814913673e22
JY_SI = 1e-26

# redshift range covered by the cached distance table
_TABLE_ZMAX = 10.0
_TABLE_KNOTS = 4096


def _as_redshift(z):
    z = np.asarray(z, dtype=float)
    if np.any(z < 0) or np.any(~np.isfinite(z)):
        raise ValueError("redshift must be finite and non-negative")
    return z


@dataclass(frozen=True)
class FlatLambdaCDM:
    """Flat Lambda-CDM cosmology.

    Parameters
    ----------
    omega_m, omega_lambda : float
        Matter and dark-energy densities; must sum to one.
    h0 : float
        Hubble constant in km/s/Mpc.
    """

    omega_m: float = 0.27
    omega_lambda: float = 0.73
    h0: float = 71.0

    def __post_init__(self):
        if self.omega_m < 0 or self.omega_lambda < 0:
            raise ValueError("density parameters must be non-negative")
        if not self.h0 > 0:
            raise ValueError("h0 must be positive")
        if abs(self.omega_m + self.omega_lambda - 1.0) > 1e-9:
            raise ValueError("only flat cosmologies are supported "
                             "(omega_m + omega_lambda must equal 1)")

    @property
    def hubble_distance(self):
        """c/H0 in Mpc."""
        return C_KMS / self.h0

    def efunc(self, z):
        z = np.asarray(z, dtype=float)
        return np.sqrt(self.omega_m * (1.0 + z) ** 3 + self.omega_lambda)

    def comoving_distance_exact(self, z):
        """Line-of-sight comoving distance by adaptive Gauss-Kronrod quadrature."""
        z = _as_redshift(z)
        f = lambda t: 1.0 / np.sqrt(self.omega_m * (1.0 + t) ** 3 + self.omega_lambda)
        out = np.empty(z.shape)
        for idx, zz in np.ndenumerate(z):
            val, _ = integrate.quad(f, 0.0, float(zz), epsabs=1e-10, epsrel=1e-8,
                                    limit=200)
            out[idx] = val
        out = out * self.hubble_distance
        return out if out.ndim else float(out)

    @cached_property
    def _dc_spline(self):
        # Knot values from per-segment 10-point Gauss-Legendre sums; each
        # segment is 2.4e-3 wide so the rule is exact to rounding.
        edges = np.linspace(0.0, _TABLE_ZMAX, _TABLE_KNOTS + 1)
        t, w = np.polynomial.legendre.leggauss(10)
        mid = 0.5 * (edges[1:] + edges[:-1])
        half = 0.5 * np.diff(edges)
        nodes = mid[:, None] + half[:, None] * t[None, :]
        seg = (half[:, None] * w[None, :] / self.efunc(nodes)).sum(axis=1)
        dc = np.concatenate([[0.0], np.cumsum(seg)]) * self.hubble_distance
        return CubicSpline(edges, dc)

    def comoving_distance(self, z):
        """Comoving distance in Mpc (cached spline for z <= 10)."""
        z = _as_redshift(z)
        if np.all(z <= _TABLE_ZMAX):
            out = self._dc_spline(z)
        else:
            out = np.where(z <= _TABLE_ZMAX, self._dc_spline(np.minimum(z, _TABLE_ZMAX)),
                           self.comoving_distance_exact(z))
        return out if np.ndim(out) else float(out)

    def luminosity_distance(self, z):
        """Luminosity distance in Mpc."""
        z = _as_redshift(z)
        out = (1.0 + z) * self.comoving_distance(z)
        return out if np.ndim(out) else float(out)

    def dvolume_dz(self, z):
        """Differential comoving volume per unit redshift per steradian, Mpc^3/sr."""
        z = _as_redshift(z)
        dc = self.comoving_distance(z)
        out = self.hubble_distance * dc ** 2 / self.efunc(z)
        return out if np.ndim(out) else float(out)

    def comoving_volume(self, z):
        """Comoving volume out to ``z`` per steradian, Mpc^3/sr."""
        z = _as_redshift(z)
        out = self.comoving_distance(z) ** 3 / 3.0
        return out if np.ndim(out) else float(out)

    def to_dict(self):
        return {"omega_m": self.omega_m, "omega_lambda": self.omega_lambda,
                "h0": self.h0}


class UnitVolume:
    """Toy geometry with dV/dz == 1 per steradian.

    Only volume-related methods exist; flux-defined boundaries need a real
    cosmology. Used for validating estimators against closed forms.
    """

    def dvolume_dz(self, z):
        z = _as_redshift(z)
        out = np.ones_like(z)
        return out if out.ndim else 1.0

    def comoving_volume(self, z):
        z = _as_redshift(z)
        return z.copy() if z.ndim else float(z)

    def luminosity_distance(self, z):
        raise NotImplementedError("UnitVolume has no distance scale")

    def to_dict(self):
        return {"kind": "unit_volume"}


def kcorrection(z, alpha):
    """Power-law K-correction ``(1+z)**(1-alpha)``."""
    z = _as_redshift(z)
    out = (1.0 + z) ** (1.0 - np.asarray(alpha, dtype=float))
    return out if np.ndim(out) else float(out)


def luminosity_distance(z, cosmo):
    return cosmo.luminosity_distance(z)


def dvolume_dz(z, cosmo):
    return cosmo.dvolume_dz(z)
