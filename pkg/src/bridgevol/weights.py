"""Weight field g_lambda(theta, phi; kappa, gamma): the radial moment
int_0^inf rho^(lambda+2) Q(rho h~, rho l~, rho c~) d rho of the joint density.

Three evaluation routes:

``closed_form_gamma0``
    drift-free closed form. The image sum over m of radial integrals I_lambda
    is used where it is well conditioned; for narrow strips relative to the
    close (|c~| sqrt(kappa(2-kappa)) / (h~-l~) >= BESSEL_SWITCH) the sine
    representation is integrated term by term into modified Bessel functions.
``kummer_series``
    image sum with the four-term Kummer-function expression of I_lambda (any
    drift). Cancellation-dominated points fall back to radial quadrature.
``quadrature_oracle``
    adaptive quadrature of rho^(lambda+2) Q along the ray; independent of the
    two series routes.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import density
from .errors import ConvergenceError, DomainError
from .geometry import DomainSkappa, unit_direction
from .specialfn import DEFAULT_POLICY, SQRT_2PI, SeriesPolicy, kummer_m

MODES = ("closed_form_gamma0", "kummer_series", "quadrature_oracle")

# terms of the image sum summed explicitly before the Euler-Maclaurin tail
IMAGE_TERMS = 64
# crossover from the image sum to the Bessel (sine) sum
BESSEL_SWITCH = 0.5
# sum|terms| / |sum| above which the Kummer image sum is not trusted
CONDITION_LIMIT = 1e4

_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


@dataclass(frozen=True)
class WeightField:
    lam: float
    kappa: float = 0.0
    gamma: float = 0.0
    series: SeriesPolicy = field(default_factory=SeriesPolicy)
    mode: str | None = None

    def __post_init__(self):
        if not self.lam + 3 > 0:
            raise DomainError(f"radial moment diverges for lambda = {self.lam} <= -3")
        if not 0.0 <= self.kappa <= 1.0:
            raise DomainError(f"kappa must lie in [0, 1], got {self.kappa}")
        mode = self.mode
        if mode is None:
            mode = "closed_form_gamma0" if self.gamma == 0 else "kummer_series"
            object.__setattr__(self, "mode", mode)
        if mode not in MODES:
            raise ValueError(f"unknown evaluation mode {mode!r}")
        if mode == "closed_form_gamma0" and self.gamma != 0:
            raise ValueError("closed_form_gamma0 requires gamma = 0")

    @property
    def domain(self) -> DomainSkappa:
        return DomainSkappa(self.kappa)

    def with_lambda(self, lam: float) -> "WeightField":
        return WeightField(lam, self.kappa, self.gamma, self.series, self.mode)


# ---------------------------------------------------------------------------
# radial integrals along one image


def _image_params(h, c, kappa):
    q = 1.0 - kappa
    a = 4.0 * h * (h - q * c) + c * c
    b = np.square(2.0 * h - q * c)
    return a, b


def i_lambda_gamma0(h, c, lam: float, kappa: float):
    """Drift-free radial integral: 2^((5+l)/2) Gamma((3+l)/2) ((3+l) b - a) / a^((5+l)/2)."""
    a, b = _image_params(np.asarray(h, float), np.asarray(c, float), kappa)
    if np.any(a <= 0):
        raise DomainError("I_lambda needs a > 0 (point on or outside the support boundary)")
    return 2.0 ** ((5 + lam) / 2) * math.gamma((3 + lam) / 2) * ((3 + lam) * b - a) / a ** ((5 + lam) / 2)


def i_lambda(h, c, lam: float, kappa: float, gamma: float):
    """Radial integral int rho^(2+l) exp(gamma c rho - c^2 rho^2/2) D(h rho, (1-kappa) c rho) d rho
    through Kummer functions of argument d^2/(2a), d = gamma c."""
    h = np.asarray(h, float)
    c = np.asarray(c, float)
    a, b = _image_params(h, c, kappa)
    if np.any(a <= 0):
        raise DomainError("I_lambda needs a > 0 (point on or outside the support boundary)")
    d = gamma * c
    z = np.broadcast_to(d * d / (2.0 * a), np.broadcast(a, d).shape)
    shape = z.shape
    zf = np.ravel(z)
    m1 = kummer_m((5 + lam) / 2, 0.5, zf).reshape(shape)
    m2 = kummer_m((3 + lam) / 2, 0.5, zf).reshape(shape)
    m3 = kummer_m(3 + lam / 2, 1.5, zf).reshape(shape)
    m4 = kummer_m(2 + lam / 2, 1.5, zf).reshape(shape)
    g = math.gamma
    bracket = (
        b * np.sqrt(2.0 * a) * g((5 + lam) / 2) * m1
        - a * np.sqrt(a / 2.0) * g((3 + lam) / 2) * m2
        + 2.0 * d * b * g(3 + lam / 2) * m3
        - d * a * g(2 + lam / 2) * m4
    )
    out = (2.0 / a) ** (3 + lam / 2) * bracket
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# the bilateral image sum, vectorised over points


def _image_sum(ht, lt, ct, radial):
    """sum_m m [m I(m w, c) + (1-m) I(m w + l, c)] with w = h - l.

    Terms m = +-1..IMAGE_TERMS are summed exactly; the remaining power-law tail
    is the integral of the paired summand from IMAGE_TERMS + 1/2 plus the
    first Euler-Maclaurin (midpoint) correction. Returns (sum, sum of |terms|).
    """
    width = (ht - lt)[:, None]
    lt_, ct_ = lt[:, None], ct[:, None]

    def paired(x):
        def one(y):
            return y * (y * radial(y * width, ct_) + (1 - y) * radial(y * width + lt_, ct_))

        return one(x), one(-x)

    m = np.arange(1, IMAGE_TERMS + 1, dtype=float)[None, :]
    plus, minus = paired(m)
    body = np.sum(plus + minus, axis=1)
    absolute = np.sum(np.abs(plus) + np.abs(minus), axis=1)

    start = IMAGE_TERMS + 0.5
    t = 0.5 * (_GL_X + 1.0)[None, :]
    wts = 0.5 * _GL_W[None, :]
    tp, tm = paired(start / t)
    tail = np.sum(wts * (tp + tm) * start / t**2, axis=1)
    eps = 1e-3
    fp, fm = paired(np.array([[start + eps, start - eps]]))
    slope = ((fp[:, 0] + fm[:, 0]) - (fp[:, 1] + fm[:, 1])) / (2 * eps)
    return body + tail + slope / 24.0, absolute


def _bessel_sum(ht, lt, ct, lam: float, kappa: float, series: SeriesPolicy):
    """Drift-free weight from the sine representation integrated radially.

    Each sine term is a polynomial in rho (degrees 0, 2, 4 after factoring the
    scale-free sines) times exp(-A rho^2 - B_n / rho^2), whose moments are
    (B/A)^((p+1)/4) K_((p+1)/2)(2 sqrt(AB)).
    """
    width = ht - lt
    cp = (1.0 - kappa) * ct
    big_a = 0.5 * ct * ct * kappa * (2.0 - kappa)
    s_sum = ht + lt
    total = np.zeros(ht.shape)
    for n in range(1, 4 * series.max_terms + 1):
        k = n * math.pi
        s1 = np.sin(k * lt / width)
        c1 = np.cos(k * lt / width)
        s2 = np.sin(k * (cp - lt) / width)
        c2 = np.cos(k * (cp - lt) / width)
        ss, cc = s1 * s2, c1 * c2
        sc, cs = s2 * c1, s1 * c2
        p1 = s_sum * sc + (2 * cp - s_sum) * cs
        p2 = (ht * lt + (cp - ht) * (cp - lt)) * ss - (ht * (cp - lt) + lt * (cp - ht)) * cc
        p3 = (ht + 3 * lt) * sc + (4 * cp - ht - 3 * lt) * cs
        coef0 = k**4 * ss
        coef2 = -(k**3) * width * p1 - 5 * k * k * width**2 * ss
        coef4 = -k * k * width**2 * p2 + k * width**3 * p3 + width**4 * (k * (sc - cs) + 2 * ss)
        big_b = k * k / (2.0 * width * width)
        arg = 2.0 * np.sqrt(big_a * big_b)
        ratio = np.log(big_b / big_a)

        def moment(p):
            # kve(x) = K(x) e^x keeps the scale for large arguments
            expo = 0.25 * (p + 1) * ratio - arg
            live = expo > -745.0
            out = np.zeros(expo.shape)
            out[live] = np.exp(expo[live]) * special.kve((p + 1) / 2, arg[live])
            return out

        t = -2.0 * (coef0 * moment(lam - 5) + coef2 * moment(lam - 3) + coef4 * moment(lam - 1)) / width**7
        total = total + t
        if n > 1 and np.all(np.abs(t) <= series.abs_tol * 1e-6 + series.rel_tol * np.abs(total)):
            return total
    raise DomainError("Bessel series for the weight field did not converge")


def _conditioning(ht, lt, ct, kappa):
    """|c~| sqrt(kappa (2 - kappa)) / (h~ - l~): large where the image sum cancels."""
    return np.abs(ct) * math.sqrt(max(kappa * (2.0 - kappa), 0.0)) / (ht - lt)


# ---------------------------------------------------------------------------
# radial quadrature


def _ray_density(rho, ht, lt, ct, kappa, gamma, series):
    params = density.DensityParams(kappa=min(kappa, 1.0), gamma=gamma, series=series)
    return density.joint_pdf(rho * ht, rho * lt, rho * ct, params)


def _radial_range(ht, lt, ct, kappa):
    """Interval of rho carrying all but a negligible part of the radial moment."""
    width = ht - lt
    a1, _ = _image_params(width, ct, kappa)
    a1 = np.minimum(a1, 4.0 * width * width)
    lo = math.pi / (width * 40.0)
    hi = 45.0 / np.sqrt(a1)
    return lo, hi


def _radial_quadrature(ht, lt, ct, lam, kappa, gamma, series, rel_tol=1e-10, max_level=7):
    """Adaptive trapezoid rule in u = log(rho), vectorised over points.

    In u the integrand rho^(lam+3) Q decays double-exponentially at both ends,
    so the trapezoid rule converges geometrically; the node spacing is halved
    until successive estimates agree to ``rel_tol`` at every point.
    """
    lo, hi = _radial_range(ht, lt, ct, kappa)
    lo = np.broadcast_to(lo, ht.shape)
    ulo, uhi = np.log(lo)[:, None], np.log(hi)[:, None]
    cols = (ht[:, None], lt[:, None], ct[:, None])

    def f(frac):
        u = ulo + (uhi - ulo) * frac[None, :]
        rho = np.exp(u)
        return rho ** (lam + 3) * _ray_density(rho, *cols, kappa, gamma, series)

    n = 64
    step = (uhi - ulo)[:, 0] / n
    vals = f(np.linspace(0.0, 1.0, n + 1))
    total = step * (vals.sum(axis=1) - 0.5 * (vals[:, 0] + vals[:, -1]))
    for _ in range(max_level):
        mids = (np.arange(n) + 0.5) / n
        refined = 0.5 * total + 0.5 * step * f(mids).sum(axis=1)
        n, step = 2 * n, 0.5 * step
        done = np.abs(refined - total) <= rel_tol * np.abs(refined) + 1e-300
        total = refined
        if np.all(done):
            return total
    raise ConvergenceError("radial quadrature of the weight field did not converge", partial=total)


# ---------------------------------------------------------------------------
# public evaluation


def _evaluate(ht, lt, ct, wf: WeightField):
    lam, kappa, gamma = wf.lam, wf.kappa, wf.gamma
    pref = math.exp(-0.5 * gamma * gamma) / SQRT_2PI
    if wf.mode == "quadrature_oracle":
        return _radial_quadrature(ht, lt, ct, lam, kappa, gamma, wf.series)

    out = np.empty(ht.shape)
    narrow = _conditioning(ht, lt, ct, kappa) >= BESSEL_SWITCH
    wide = ~narrow
    if wf.mode == "closed_form_gamma0":
        if np.any(wide):
            val, _ = _image_sum(
                ht[wide], lt[wide], ct[wide], lambda h, c: i_lambda_gamma0(h, c, lam, kappa)
            )
            out[wide] = pref * val
        if np.any(narrow):
            out[narrow] = _bessel_sum(ht[narrow], lt[narrow], ct[narrow], lam, kappa, wf.series)
        return out

    val, absolute = _image_sum(ht, lt, ct, lambda h, c: i_lambda(h, c, lam, kappa, gamma))
    out = pref * val
    bad = absolute > CONDITION_LIMIT * np.abs(val)
    if np.any(bad):
        # the truncated image sum cannot resolve these points in any precision:
        # its tail error is relative to sum|terms|, not to the (tiny) result
        out[bad] = _radial_quadrature(ht[bad], lt[bad], ct[bad], lam, kappa, gamma, wf.series)
    return out


def kummer_fallback_mask(theta, phi, wf: WeightField):
    """Points where ``kummer_series`` mode delegates to radial quadrature."""
    ht, lt, ct = (np.atleast_1d(np.asarray(v, float)) for v in unit_direction(theta, phi))
    val, absolute = _image_sum(ht, lt, ct, lambda h, c: i_lambda(h, c, wf.lam, wf.kappa, wf.gamma))
    return absolute > CONDITION_LIMIT * np.abs(val)


def weight(theta, phi, wf: WeightField, check_domain: bool = True):
    """g_lambda at (theta, phi) in S_kappa; vectorised over broadcast arrays."""
    theta, phi = np.broadcast_arrays(np.asarray(theta, float), np.asarray(phi, float))
    if check_domain and not np.all(wf.domain.contains(theta, phi)):
        raise DomainError("direction outside S_kappa")
    shape = theta.shape
    ht, lt, ct = (np.ravel(np.asarray(v, dtype=float)) for v in unit_direction(theta.ravel(), phi.ravel()))
    out = np.zeros(ht.shape)
    interior = (ht - lt) > 0
    if np.any(interior):
        out[interior] = _evaluate(ht[interior], lt[interior], ct[interior], wf)
    out = out.reshape(shape)
    return out if out.ndim else float(out)


class WeightCache:
    """Memo of weight values on quadrature grids keyed by (lambda, kappa, gamma, mode, grid key).

    Readers never block each other; insertion happens under a lock.
    """

    def __init__(self):
        self._store: dict = {}
        self._lock = threading.Lock()

    def get(self, wf: WeightField, grid) -> np.ndarray:
        key = (wf.lam, wf.kappa, wf.gamma, wf.mode, grid.key)
        hit = self._store.get(key)
        if hit is not None:
            return hit
        values = weight(grid.theta, grid.phi, wf, check_domain=False)
        values.setflags(write=False)
        with self._lock:
            return self._store.setdefault(key, values)

    def clear(self) -> None:
        with self._lock:
            self._store.clear()


DEFAULT_CACHE = WeightCache()


def dump_grid_csv(path, theta, phi, values) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theta", "phi", "g"])
        for row in zip(np.ravel(theta), np.ravel(phi), np.ravel(values)):
            writer.writerow([repr(float(v)) for v in row])
