"""Tensor Gauss-Legendre rules over the angular domain S_kappa.

Nodes live in (phi, s) with s the normalised position between the two theta
limits, so every row of the rule spans the exact slice of the domain. The
weights already carry the Jacobian (theta_hi - theta_lo) and cos(theta), so
an integral over S_kappa of f cos(theta) dtheta dphi is ``rule.integrate(f)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import HALF_PI, DomainSkappa

DEFAULT_NODES = 96


@dataclass(frozen=True, eq=False)
class SkappaRule:
    kappa: float
    phi: np.ndarray
    s: np.ndarray
    theta: np.ndarray
    weights: np.ndarray

    @property
    def key(self) -> tuple:
        return ("gauss-legendre", self.kappa, self.phi.shape)

    def integrate(self, values) -> float:
        return float(np.sum(self.weights * values))


@lru_cache(maxsize=64)
def tensor_rule(kappa: float, n_phi: int = DEFAULT_NODES, n_s: int | None = None) -> SkappaRule:
    """Product rule with ``n_phi`` x ``n_s`` nodes.

    The weight field is smooth on the closed domain (it stays finite on the
    edge h = (1-kappa) c and decays to 0 where h - l -> 0), so the plain
    product rule converges spectrally without any mesh grading.
    """
    n_s = n_phi if n_s is None else n_s
    if n_phi < 2 or n_s < 2:
        raise ValueError("a quadrature rule needs at least 2 nodes per direction")
    domain = DomainSkappa(kappa)
    xp, wp = np.polynomial.legendre.leggauss(n_phi)
    xs, ws = np.polynomial.legendre.leggauss(n_s)
    phi1 = -HALF_PI + HALF_PI * 0.5 * (xp + 1.0)
    s1 = 0.5 * (xs + 1.0)
    phi, s = np.meshgrid(phi1, s1, indexing="ij")
    lo, hi = domain.theta_bounds(phi)
    theta = lo + s * (hi - lo)
    weights = np.outer(0.25 * HALF_PI * wp, ws) * (hi - lo) * np.cos(theta)
    for arr in (phi, s, theta, weights):
        arr.setflags(write=False)
    return SkappaRule(kappa, phi, s, theta, weights)


def domain_area(kappa: float) -> float:
    """Measure of S_kappa under cos(theta) dtheta dphi."""
    domain = DomainSkappa(kappa)
    x, w = np.polynomial.legendre.leggauss(200)
    phi = -HALF_PI + HALF_PI * 0.5 * (x + 1.0)
    lo, hi = domain.theta_bounds(phi)
    return float(np.sum(0.5 * HALF_PI * w * (np.sin(hi) - np.sin(lo))))



