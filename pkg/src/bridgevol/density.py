"""Joint density of (high, low) of the incomplete bridge and the close.

Conditional on the close C = c, the incomplete bridge Y(t) = X(t) - kappa t X(1)
is a unit Brownian bridge from 0 to c' = (1 - kappa) c, so everything below is
expressed through the survival probability S(h, l; c') of that bridge inside
the strip [l, h] and its mixed derivative.

Two representations are used for the bridge quantities:

* the image (reflection) sum, terms ~ exp(-2 (h-l)^2 m^2), fast for wide strips;
* the eigenfunction (sine) sum, terms ~ exp(-n^2 pi^2 / (2 (h-l)^2)), fast for
  narrow strips where the image sum cancels catastrophically.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DomainError
from .specialfn import DEFAULT_POLICY, SQRT_2PI, SeriesPolicy, gaussian_pdf, sum_bilateral

# strips narrower than this use the sine representation
SINE_RANGE_CUTOFF = 1.5
# points this close to the support boundary are reported as density 0
BOUNDARY_BAND = 1e-12
# |1 - kappa| below this is treated as the complete bridge
COMPLETE_BRIDGE_EPS = 1e-8


@dataclass(frozen=True)
class DensityParams:
    kappa: float = 0.0
    gamma: float = 0.0
    series: SeriesPolicy = field(default_factory=SeriesPolicy)

    def __post_init__(self):
        if not (math.isfinite(self.kappa) and math.isfinite(self.gamma)):
            raise DomainError("kappa and gamma must be finite")
        if self.kappa > 1 + COMPLETE_BRIDGE_EPS:
            raise DomainError(f"kappa = {self.kappa} > 1 is not supported")

    @property
    def complete(self) -> bool:
        return abs(1.0 - self.kappa) < COMPLETE_BRIDGE_EPS


@dataclass(frozen=True)
class BarrierSpec:
    """Absorbing barriers a + alpha*tau (lower) and b + beta*tau (upper)."""

    a: float
    b: float
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if not (self.a < 0 < self.b):
            raise DomainError(f"barriers must bracket the origin: a={self.a}, b={self.b}")

    @classmethod
    def for_bridge(cls, h: float, l: float, kappa: float, gamma: float) -> "BarrierSpec":
        """Barriers in the time-changed problem equivalent to l <= Y <= h."""
        if kappa >= 1:
            raise DomainError("the time-changed barrier problem needs kappa < 1")
        q = 1.0 - kappa
        slope = (1.0 - q * q) / q
        return cls(a=q * l, b=q * h, alpha=slope * l - gamma, beta=slope * h - gamma)



def barrier_density(omega, tau: float, spec: BarrierSpec, series: SeriesPolicy = DEFAULT_POLICY):
    """Density phi(omega; tau) of W(tau) killed at the two moving barriers.

    Image sum solving d(phi)/d(tau) = phi''/2 with phi(., 0) = delta and
    phi = 0 on both barriers. Zero outside (a + alpha tau, b + beta tau).
    """
    if not tau > 0:
        raise DomainError("tau must be positive")
    omega = np.asarray(omega, dtype=float)
    a, b, al, be = spec.a, spec.b, spec.alpha, spec.beta
    lo, hi = a + al * tau, b + be * tau
    if not lo < hi:
        raise DomainError(f"barriers cross before tau = {tau}")
    width = b - a

    def term(m):
        # exponents combined before exp(): the m^2 prefactor may grow when alpha > beta
        weight = 2 * (al - be) * width * m * m + 2 * (al * b - be * a) * m
        x1 = omega + 2 * m * width
        x2 = x1 - 2 * a
        e1 = weight - x1 * x1 / (2 * tau)
        e2 = weight + 2 * a * (2 * (be - al) * m - al) - x2 * x2 / (2 * tau)
        return (np.exp(e1) - np.exp(e2)) / math.sqrt(2 * math.pi * tau)

    value = sum_bilateral(term, series).value
    inside = (omega > lo) & (omega < hi)
    out = np.where(inside, value, 0.0)
    return out if out.ndim else float(out)


def kernel_d(x, y):
    """Building block 4 ((y - 2x)^2 - 1) exp(2x (y - x)) of the image series."""
    return 4.0 * (np.square(y - 2.0 * x) - 1.0) * np.exp(2.0 * x * (y - x))


# ---------------------------------------------------------------------------
# bridge kernels, vectorised over broadcast arrays (h >= 0 >= l, l <= cp <= h)


def _survival_images(h, l, cp, series):
    width = h - l

    def term(m):
        base = -2.0 * width * width * m * m - 2.0 * m * width * cp
        return np.exp(base) - np.exp(base + 4.0 * width * l * m - 2.0 * l * (l - cp))

    return sum_bilateral(term, series).value


def _survival_sines(h, l, cp, series):
    width = h - l
    total = np.zeros(np.broadcast(h, l, cp).shape)
    for n in range(1, series.max_terms + 1):
        k = n * math.pi
        t = (
            2.0 / width
            * np.sin(k * (-l) / width)
            * np.sin(k * (cp - l) / width)
            * np.exp(0.5 * cp * cp - k * k / (2.0 * width * width))
        )
        total = total + t
        if np.all(np.abs(t) <= series.abs_tol + series.rel_tol * np.abs(total)) and n > 1:
            return SQRT_2PI * total
    raise ConvergenceError("sine series for the bridge survival did not converge", total)


def _density_images(h, l, cp, series):
    width = h - l

    def term(m):
        if m == 0:
            return np.zeros(np.broadcast(h, l, cp).shape)
        return m * (m * kernel_d(m * width, cp) + (1 - m) * kernel_d(m * width + l, cp))

    return sum_bilateral(term, series).value


def _density_sines(h, l, cp, series):
    width = h - l
    total = np.zeros(np.broadcast(h, l, cp).shape)
    s_sum = h + l
    for n in range(1, series.max_terms + 1):
        k = n * math.pi
        s1 = np.sin(k * l / width)
        c1 = np.cos(k * l / width)
        s2 = np.sin(k * (cp - l) / width)
        c2 = np.cos(k * (cp - l) / width)
        ss, cc = s1 * s2, c1 * c2
        sc, cs = s2 * c1, s1 * c2
        poly = (
            k**4 * ss
            - k**3 * width * (s_sum * sc + (2 * cp - s_sum) * cs)
            - k**2 * width**2 * ((h * l + (cp - h) * (cp - l) + 5.0) * ss - (h * (cp - l) + l * (cp - h)) * cc)
            + k * width**3 * ((h + 3 * l) * sc + (4 * cp - h - 3 * l) * cs)
            + width**4 * (k * (sc - cs) + 2.0 * ss)
        )
        t = -2.0 * poly * np.exp(0.5 * cp * cp - k * k / (2.0 * width * width)) / width**7
        total = total + t
        if n > 1 and np.all(np.abs(t) <= series.abs_tol + series.rel_tol * np.abs(total)):
            return SQRT_2PI * total
    raise ConvergenceError("sine series for the bridge density did not converge", total)


def _split_eval(fn_images, fn_sines, h, l, cp, mask, series):
    """Evaluate on ``mask`` points, choosing the representation by strip width."""
    out = np.zeros(h.shape)
    if not np.any(mask):
        return out
    width = h - l
    narrow = mask & (width < SINE_RANGE_CUTOFF)
    wide = mask & ~narrow
    if np.any(narrow):
        out[narrow] = fn_sines(h[narrow], l[narrow], cp[narrow], series)
    if np.any(wide):
        out[wide] = fn_images(h[wide], l[wide], cp[wide], series)
    return out


def _support(h, l, cp):
    """Interior of {h >= max(0, c'), l <= min(0, c')} minus a thin boundary band."""
    band = BOUNDARY_BAND
    return (h - np.maximum(0.0, cp) > band) & (np.minimum(0.0, cp) - l > band)


def _prepare(h, l, c):
    h, l, c = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (h, l, c)))
    return h.astype(float), l.astype(float), c.astype(float)


def _finish(out):
    out = np.asarray(out, dtype=float)
    return out if out.ndim else float(out)


def bridge_range_density(h, l, cp, series: SeriesPolicy = DEFAULT_POLICY):
    """Joint density of (max, min) of a unit Brownian bridge from 0 to ``cp``."""
    h, l, cp = _prepare(h, l, cp)
    mask = _support(h, l, cp)
    return _finish(_split_eval(_density_images, _density_sines, h, l, cp, mask, series))


def conditional_pdf(h, l, c, kappa: float, series: SeriesPolicy = DEFAULT_POLICY):
    """Density of (H, L) given C = c; does not depend on the drift."""
    h, l, c = _prepare(h, l, c)
    cp = (1.0 - kappa) * c
    mask = _support(h, l, cp)
    return _finish(_split_eval(_density_images, _density_sines, h, l, cp, mask, series))


def complete_bridge_pdf(h, l, c, gamma: float, series: SeriesPolicy = DEFAULT_POLICY):
    """Joint density for kappa = 1: g(c - gamma) times the bridge (max, min) density."""
    h, l, c = _prepare(h, l, c)
    zero = np.zeros_like(h)
    mask = _support(h, l, zero)
    r = _split_eval(_density_images, _density_sines, h, l, zero, mask, series)
    return _finish(gaussian_pdf(c - gamma) * r)


def joint_pdf(h, l, c, params: DensityParams):
    """Joint density Q(h, l, c; kappa, gamma) of bridge high, low and the close."""
    if params.complete:
        return complete_bridge_pdf(h, l, c, params.gamma, params.series)
    h, l, c = _prepare(h, l, c)
    r = conditional_pdf(h, l, c, params.kappa, params.series)
    return _finish(gaussian_pdf(c - params.gamma) * r)


def survival_function(h, l, c, params: DensityParams):
    """f(h, l, c) = P{l <= Y(t) <= h for all t, C in dc} / dc."""
    h, l, c = _prepare(h, l, c)
    cp = (1.0 - params.kappa) * c
    inside = (h > np.maximum(0.0, cp)) & (l < np.minimum(0.0, cp))
    s = _split_eval(_survival_images, _survival_sines, h, l, cp, inside, params.series)
    return _finish(gaussian_pdf(c - params.gamma) * s)


def dump_grid_csv(path, h, l, c, params: DensityParams) -> None:
    """Write Q on the tensor grid h x l x c as CSV rows ``h,l,c,q``."""
    hh, ll, cc = np.meshgrid(np.asarray(h, float), np.asarray(l, float), np.asarray(c, float), indexing="ij")
    q = np.asarray(joint_pdf(hh, ll, cc, params))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["h", "l", "c", "q"])
        for row in zip(hh.ravel(), ll.ravel(), cc.ravel(), q.ravel()):
            writer.writerow([repr(float(v)) for v in row])
