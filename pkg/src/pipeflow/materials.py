"""Temperature-dependent density and the enthalpy change of variables.

The density is a piecewise-linear, nonincreasing table in temperature with
constant extension outside the tabulated range.  Because the table is
piecewise linear, the enthalpy

    E(theta) = c_v * int_0^theta rho(s) ds

is piecewise quadratic and can be inverted segment by segment in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class MaterialError(ValueError):
    pass


@dataclass(frozen=True)
class DensityLaw:
    """Piecewise-linear density law rho(theta) plus scalar material constants.

    ``breakpoints`` is a sequence of ``(theta, rho)`` pairs with strictly
    increasing temperatures and nonincreasing, strictly positive densities.
    A single pair gives a constant density.
    """

    breakpoints: tuple[tuple[float, float], ...]
    c_v: float = 1.0
    conductivity: float = 1.0
    viscosity: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        pts = tuple((float(t), float(r)) for t, r in self.breakpoints)
        object.__setattr__(self, "breakpoints", pts)
        if not pts:
            raise MaterialError("density law needs at least one breakpoint")
        theta = np.array([p[0] for p in pts])
        rho = np.array([p[1] for p in pts])
        if not np.all(np.isfinite(theta)) or not np.all(np.isfinite(rho)):
            raise MaterialError("breakpoints must be finite")
        if np.any(np.diff(theta) <= 0):
            raise MaterialError("breakpoint temperatures must be strictly increasing")
        if np.any(rho <= 0):
            raise MaterialError("density must be strictly positive")
        if np.any(np.diff(rho) > 0):
            raise MaterialError("density must be nonincreasing in temperature")
        for name in ("c_v", "conductivity", "viscosity", "alpha"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise MaterialError(f"{name} must be positive, got {value}")

    @classmethod
    def constant(cls, rho: float = 1.0, **constants) -> "DensityLaw":
        return cls(((0.0, rho),), **constants)

    @property
    def rho_min(self) -> float:
        """rho_1, the value of the right extension."""
        return self.breakpoints[-1][1]

    @property
    def rho_max(self) -> float:
        """rho_2, the value of the left extension."""
        return self.breakpoints[0][1]

    def density(self, theta):
        theta_k = np.array([p[0] for p in self.breakpoints])
        rho_k = np.array([p[1] for p in self.breakpoints])
        return np.interp(theta, theta_k, rho_k)


@dataclass(frozen=True)
class EnthalpyMap:
    """Enthalpy E, its inverse beta, and the derived coefficients of a law."""

    law: DensityLaw
    _theta: np.ndarray = field(init=False, repr=False)
    _rho: np.ndarray = field(init=False, repr=False)
    _slope: np.ndarray = field(init=False, repr=False)
    _enth: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        theta = np.array([p[0] for p in self.law.breakpoints])
        rho = np.array([p[1] for p in self.law.breakpoints])
        slope = np.zeros_like(rho)
        slope[:-1] = np.diff(rho) / np.diff(theta)
        # antiderivative of rho measured from the first breakpoint
        prim = np.zeros_like(theta)
        prim[1:] = np.cumsum(0.5 * (rho[1:] + rho[:-1]) * np.diff(theta))
        prim0 = self._primitive(0.0, theta, rho, slope, prim)
        enth = self.law.c_v * (prim - prim0)
        for name, value in (("_theta", theta), ("_rho", rho), ("_slope", slope), ("_enth", enth)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "_prim0", prim0)
        object.__setattr__(self, "_prim", prim)

    @staticmethod
    def _primitive(theta, theta_k, rho_k, slope_k, prim_k):
        theta = np.asarray(theta, dtype=float)
        k = np.clip(np.searchsorted(theta_k, theta, side="right") - 1, 0, len(theta_k) - 1)
        s = theta - theta_k[k]
        # left of the table: constant extension rho_2
        left = theta < theta_k[0]
        m = np.where(left, 0.0, slope_k[k])
        return prim_k[k] + rho_k[k] * s + 0.5 * m * s * s

    # bounds -------------------------------------------------------------
    @property
    def kappa_min(self) -> float:
        return self.law.conductivity / (self.law.c_v * self.law.rho_max)

    @property
    def kappa_max(self) -> float:
        return self.law.conductivity / (self.law.c_v * self.law.rho_min)

    def lipschitz_bound(self) -> float:
        """C_beta = 1 / (c_v rho_1)."""
        return 1.0 / (self.law.c_v * self.law.rho_min)

    # maps ---------------------------------------------------------------
    def enthalpy(self, theta):
        prim = self._primitive(theta, self._theta, self._rho, self._slope, self._prim)
        return self.law.c_v * (prim - self._prim0)

    def inverse_enthalpy(self, e):
        """beta(e): the temperature with enthalpy e."""
        e = np.asarray(e, dtype=float)
        k = np.clip(np.searchsorted(self._enth, e, side="right") - 1, 0, len(self._enth) - 1)
        left = e < self._enth[0]
        rho0 = self._rho[k]
        m = np.where(left, 0.0, self._slope[k])
        r = (e - self._enth[k]) / self.law.c_v
        # root of 0.5*m*s^2 + rho0*s - r = 0 in cancellation-free form
        disc = np.maximum(rho0 * rho0 + 2.0 * m * r, 0.0)
        s = 2.0 * r / (rho0 + np.sqrt(disc))
        out = self._theta[k] + s
        # rounding must not carry theta past the segment's right breakpoint
        last = len(self._theta) - 1
        upper = np.where(left | (k == last), np.inf, self._theta[np.minimum(k + 1, last)])
        out = np.minimum(out, upper)
        return out if out.ndim else float(out)

    def density_of_enthalpy(self, e):
        return self.law.density(self.inverse_enthalpy(e))

    def kappa(self, e):
        return self.law.conductivity / (self.law.c_v * self.density_of_enthalpy(e))

    def beta_prime(self, e):
        """d beta / d e = 1 / (c_v rho(beta(e))), always in (0, C_beta]."""
        return 1.0 / (self.law.c_v * self.density_of_enthalpy(e))


def material_from_table(
    breakpoints: Sequence[Sequence[float]], **constants
) -> EnthalpyMap:
    return EnthalpyMap(DensityLaw(tuple(tuple(p) for p in breakpoints), **constants))
