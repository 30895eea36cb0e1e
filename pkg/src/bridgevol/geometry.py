"""Spherical (geographic) coordinates of OHLC triples and the angular domain S_kappa."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSampleError, DomainError

HALF_PI = 0.5 * math.pi


@dataclass(frozen=True)
class SphericalPoint:
    r: float
    theta: float
    phi: float

    def to_cartesian(self) -> tuple[float, float, float]:
        return to_cartesian(self.r, self.theta, self.phi)


def spherical_coordinates(h, l, c):
    """(R, Theta, Phi) with H = R cos(Theta) cos(Phi), L = R cos(Theta) sin(Phi), C = R sin(Theta).

    Vectorised. Phi = -pi/2 when H = 0 < -L. Raises DegenerateSampleError if
    any triple is all zero.
    """
    h, l, c = (np.asarray(v, dtype=float) for v in (h, l, c))
    r = np.sqrt(h * h + l * l + c * c)
    if np.any(r == 0):
        raise DegenerateSampleError("all-zero OHLC sample has no direction")
    theta = np.arctan2(c, np.hypot(h, l))
    phi = np.arctan2(l, h)
    if r.ndim == 0:
        return float(r), float(theta), float(phi)
    return r, theta, phi


def to_cartesian(r, theta, phi):
    r, theta, phi = (np.asarray(v, dtype=float) for v in (r, theta, phi))
    ct = np.cos(theta)
    out = (r * ct * np.cos(phi), r * ct * np.sin(phi), r * np.sin(theta))
    if r.ndim == 0 and theta.ndim == 0 and phi.ndim == 0:
        return tuple(float(v) for v in out)
    return out


def unit_direction(theta, phi):
    """(h~, l~, c~) on the unit sphere."""
    return to_cartesian(1.0, theta, phi)


@dataclass(frozen=True)
class DomainSkappa:
    """Admissible directions: arctan(sin(phi)/(1-kappa)) <= theta <= arctan(cos(phi)/(1-kappa)),
    -pi/2 <= phi <= 0."""

    kappa: float

    def __post_init__(self):
        if not (0.0 <= self.kappa <= 1.0):
            raise DomainError(f"kappa must lie in [0, 1], got {self.kappa}")

    @property
    def complete(self) -> bool:
        return self.kappa == 1.0

    def theta_bounds(self, phi):
        phi = np.asarray(phi, dtype=float)
        if self.complete:
            lo = np.full(phi.shape, -HALF_PI)
            hi = np.full(phi.shape, HALF_PI)
        else:
            q = 1.0 - self.kappa
            lo = np.arctan(np.sin(phi) / q)
            hi = np.arctan(np.cos(phi) / q)
        if phi.ndim == 0:
            return float(lo), float(hi)
        return lo, hi

    def contains(self, theta, phi, tol: float = 1e-12):
        theta = np.asarray(theta, dtype=float)
        phi = np.asarray(phi, dtype=float)
        lo, hi = self.theta_bounds(phi)
        ok = (
            (phi >= -HALF_PI - tol)
            & (phi <= tol)
            & (theta >= np.asarray(lo) - tol)
            & (theta <= np.asarray(hi) + tol)
        )
        return bool(ok) if ok.ndim == 0 else ok

    def theta_from_s(self, phi, s):
        """Map the normalised coordinate s in [0, 1] to theta at azimuth phi."""
        lo, hi = self.theta_bounds(phi)
        return np.asarray(lo) + np.asarray(s) * (np.asarray(hi) - np.asarray(lo))

    def s_from_theta(self, theta, phi):
        lo, hi = self.theta_bounds(phi)
        lo, hi = np.asarray(lo), np.asarray(hi)
        return (np.asarray(theta) - lo) / (hi - lo)

    def violated_constraint(self, h: float, l: float, c: float, tol: float = 0.0) -> str | None:
        """Name of the first violated support constraint of (h, l, c), or None."""
        cp = (1.0 - self.kappa) * c
        if h < -tol:
            return f"high >= 0 violated (h={h})"
        if l > tol:
            return f"low <= 0 violated (l={l})"
        if cp > h + tol:
            return f"(1-kappa)*close <= high violated ({cp} > {h})"
        if cp < l - tol:
            return f"low <= (1-kappa)*close violated ({l} > {cp})"
        return None
