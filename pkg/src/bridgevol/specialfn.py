"""Special-function kernel: Kummer's function, the Gaussian density and
symmetric summation of bilateral series."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import mpmath
import numpy as np

from .errors import ConvergenceError, DomainError

SQRT_2PI = math.sqrt(2.0 * math.pi)

# above this |z| Kummer's function switches to its large-argument expansion
KUMMER_ASYMPTOTIC_Z = 50.0
# condition number (sum|t|/|sum t|) beyond which the series is redone in mpmath
KUMMER_CANCELLATION_LIMIT = 1e6


@dataclass(frozen=True)
class SeriesPolicy:
    """Truncation rule for the infinite sums over image index m."""

    abs_tol: float = 1e-12
    rel_tol: float = 1e-10
    max_terms: int = 200

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("series tolerances must be positive")
        if self.max_terms < 1:
            raise ValueError("max_terms must be >= 1")


DEFAULT_POLICY = SeriesPolicy()


class SeriesSum(NamedTuple):
    value: float | np.ndarray
    terms: int


def gaussian_pdf(x):
    """Standard normal density, elementwise."""
    x = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * x * x) / SQRT_2PI
    return out if out.ndim else float(out)


def sum_bilateral(
    term: Callable[[int], float | np.ndarray], policy: SeriesPolicy = DEFAULT_POLICY
) -> SeriesSum:
    """Sum ``term(m)`` over all integers m, expanding in shells 0, +-1, +-2, ...

    Stops once a full shell (m and -m) stays below ``abs_tol + rel_tol*|S|``
    for two consecutive shells. ``term`` may return arrays; the test is then
    applied elementwise. Raises ConvergenceError carrying the partial sum when
    ``policy.max_terms`` shells are exhausted.
    """
    total = np.asarray(term(0), dtype=float).copy()
    quiet = 0
    for m in range(1, policy.max_terms + 1):
        shell = np.asarray(term(m), dtype=float) + np.asarray(term(-m), dtype=float)
        total = total + shell
        # both tails checked separately so an odd series (t(m) = -t(-m)) is not
        # mistaken for a converged one after a single cancelling shell
        small = np.all(
            np.abs(np.asarray(term(m), dtype=float))
            <= policy.abs_tol + policy.rel_tol * np.abs(total)
        ) and np.all(
            np.abs(np.asarray(term(-m), dtype=float))
            <= policy.abs_tol + policy.rel_tol * np.abs(total)
        )
        quiet = quiet + 1 if small else 0
        if quiet >= 2:
            value = total if total.ndim else float(total)
            return SeriesSum(value, 2 * m + 1)
    raise ConvergenceError(
        f"bilateral series did not converge within {policy.max_terms} shells",
        partial=total if total.ndim else float(total),
        terms=2 * policy.max_terms + 1,
    )


def _check_b(b: float) -> None:
    if b <= 0 and float(b).is_integer():
        raise DomainError(f"Kummer M(a, b, z) undefined for b = {b} (pole of Gamma(b))")


def _kummer_series(a, b, z, rel_tol, max_terms):
    """Power series for M(a, b, z), vectorised over z.

    Returns (value, sum of |terms|).
    """
    term = np.ones_like(z)
    total = np.ones_like(z)
    absolute = np.ones_like(z)
    for n in range(max_terms):
        term = term * (a + n) / (b + n) * z / (n + 1)
        total = total + term
        absolute = absolute + np.abs(term)
        # every term after the peak shrinks monotonically once n > |z|
        if n > 2 and np.all(np.abs(term) <= rel_tol * np.abs(total) * 1e-2):
            return total, absolute
        if (a + n) == 0:
            return total, absolute
    raise ConvergenceError(
        "Kummer power series did not converge", partial=total, terms=max_terms
    )


def _kummer_asymptotic(a, b, z, rel_tol):
    """Large positive z: M ~ Gamma(b)/Gamma(a) e^z z^(a-b) sum_n (b-a)_n (1-a)_n / (n! z^n).

    Returns (value, relative truncation error estimate).
    """
    term = np.ones_like(z)
    total = np.ones_like(z)
    smallest = np.ones_like(z)
    active = np.ones(z.shape, dtype=bool)
    for n in range(200):
        nxt = term * (b - a + n) * (1 - a + n) / ((n + 1) * z)
        # the expansion is divergent: stop each entry at its smallest term
        active &= np.abs(nxt) < np.abs(term)
        if not np.any(active):
            break
        term = np.where(active, nxt, term)
        total = total + np.where(active, nxt, 0.0)
        smallest = np.where(active, np.abs(nxt), smallest)
        if np.all(smallest <= rel_tol * np.abs(total) * 1e-2):
            break
    sign = math.copysign(1.0, math.gamma(b)) * math.copysign(1.0, math.gamma(a))
    log_pref = math.lgamma(b) - math.lgamma(a)
    value = sign * np.exp(log_pref + z + (a - b) * np.log(z)) * total
    return value, smallest / np.abs(total)


def kummer_m(a: float, b: float, z, rel_tol: float = 1e-14, max_terms: int = 2000):
    """Confluent hypergeometric function of the first kind M(a, b, z).

    Vectorised over ``z`` for scalar ``a`` and ``b``. Negative arguments are
    mapped through Kummer's transformation M(a,b,z) = e^z M(b-a,b,-z); large
    positive arguments use the asymptotic expansion. Entries whose power
    series is cancellation-dominated are recomputed with mpmath.
    """
    _check_b(b)
    z = np.asarray(z, dtype=float)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    if not np.all(np.isfinite(z)):
        raise DomainError("Kummer argument must be finite")
    out = np.empty_like(z)

    polynomial = a <= 0 and float(a).is_integer()
    # the direct series alternates for z < 0; the transformed one does not
    use_transform = (z < 0) & (not polynomial)
    big = (z > KUMMER_ASYMPTOTIC_Z) & (not polynomial)
    small = ~big & ~use_transform

    if np.any(small):
        zs = z[small]
        val, absolute = _kummer_series(a, b, zs, rel_tol, max_terms)
        bad = absolute > KUMMER_CANCELLATION_LIMIT * np.abs(val)
        if np.any(bad):
            with mpmath.workdps(50):
                val[bad] = [float(mpmath.hyp1f1(a, b, float(x))) for x in zs[bad]]
        out[small] = val
    if np.any(use_transform):
        zt = z[use_transform]
        out[use_transform] = np.exp(zt) * kummer_m(b - a, b, -zt, rel_tol, max_terms)
    if np.any(big):
        val, err = _kummer_asymptotic(a, b, z[big], rel_tol)
        loose = err > 10 * rel_tol
        if np.any(loose):
            zb = z[big][loose]
            series, absolute = _kummer_series(a, b, zb, rel_tol, max_terms)
            bad = absolute > KUMMER_CANCELLATION_LIMIT * np.abs(series)
            if np.any(bad):
                with mpmath.workdps(50):
                    series[bad] = [float(mpmath.hyp1f1(a, b, float(x))) for x in zb[bad]]
            val[loose] = series
        out[big] = val
    return float(out[0]) if scalar else out
