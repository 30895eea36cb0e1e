"""Applying diagrams to OHLC data: canonical estimates, classical estimators, batch reports."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .diagram import FOUR_LN2, GK_K1, GK_K2, GK_K3, Diagram
from .errors import BridgeVolError, DegenerateSampleError, DomainError
from .geometry import DomainSkappa
from .reports import EfficiencyReport
from .stochastic import OhlcSample, support_violation

SCALES = ("canonical", "price-scale")
# support checks tolerate this much rounding, relative to R
SUPPORT_BAND = 1e-9
MAX_REJECTED_FRACTION = 1e-3


@dataclass(frozen=True)
class EstimateRequest:
    samples: Sequence[OhlcSample]
    diagram: Diagram
    interval: float | Sequence[float] = 1.0
    scale: str = "canonical"

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ValueError(f"scale must be one of {SCALES}")
        t = np.asarray(self.interval, dtype=float)
        if np.any(~(t > 0)):
            raise DomainError("interval length T must be positive")
        if t.ndim and t.size != len(self.samples):
            raise ValueError("one interval length per sample, or a single one")
        for s in self.samples:
            if s.kappa != self.diagram.kappa:
                raise DomainError(f"sample kappa {s.kappa} differs from diagram kappa {self.diagram.kappa}")


def estimate_arrays(h, l, c, diagram: Diagram, interval=1.0, scale: str = "canonical"):
    """Vectorised R^lambda psi(Theta, Phi); returns (estimates, rejected mask).

    Rejected entries (R = 0 or support violated beyond SUPPORT_BAND * R) are NaN.
    """
    h, l, c, t = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (h, l, c, interval)))
    r = np.sqrt(h * h + l * l + c * c)
    band = SUPPORT_BAND * r
    cp = (1.0 - diagram.kappa) * c
    ok = (r > 0) & (h >= -band) & (l <= band) & (cp <= h + band) & (cp >= l - band)
    safe_r = np.where(ok, r, 1.0)
    theta = np.arcsin(np.clip(np.where(ok, c, 0.0) / safe_r, -1.0, 1.0))
    phi = np.arctan2(np.minimum(l, 0.0), np.maximum(h, 0.0))
    lo, hi = DomainSkappa(diagram.kappa).theta_bounds(phi)
    theta = np.clip(theta, lo, hi)
    psi = np.asarray(diagram(theta, phi))
    out = safe_r ** diagram.lam * psi
    if scale == "price-scale":
        out = out / t ** (diagram.lam / 2)
    return np.where(ok, out, np.nan), ~ok


def estimate_one(sample: OhlcSample, diagram: Diagram, interval: float = 1.0, scale: str = "canonical") -> float:
    """Estimate of sigma^lambda (price-scale) or the canonical R^lambda psi."""
    if scale not in SCALES:
        raise ValueError(f"scale must be one of {SCALES}")
    if not interval > 0:
        raise DomainError("interval length T must be positive")
    if sample.kappa != diagram.kappa:
        raise DomainError(f"sample kappa {sample.kappa} differs from diagram kappa {diagram.kappa}")
    r = math.sqrt(sample.h ** 2 + sample.l ** 2 + sample.c ** 2)
    if r == 0:
        raise DegenerateSampleError("all-zero OHLC sample has no direction")
    bad = support_violation(sample.h, sample.l, sample.c, sample.kappa, SUPPORT_BAND * r)
    if bad:
        raise DomainError(f"sample outside the diagram domain: {bad}")
    value, _ = estimate_arrays(sample.h, sample.l, sample.c, diagram, interval, scale)
    return float(value)


def classic_gk(sample: OhlcSample) -> float:
    """k1 (H-L)^2 - k2 ((1-kappa) C (H+L) - 2 H L) - k3 (1-kappa)^2 C^2."""
    q = 1.0 - sample.kappa
    h, l, c = sample.h, sample.l, sample.c
    return GK_K1 * (h - l) ** 2 - GK_K2 * (q * c * (h + l) - 2 * h * l) - GK_K3 * q * q * c * c


def classic_gk_arrays(h, l, c, kappa: float):
    q = 1.0 - kappa
    return GK_K1 * (h - l) ** 2 - GK_K2 * (q * c * (h + l) - 2 * h * l) - GK_K3 * q * q * c * c


def classic_parkinson(sample: OhlcSample) -> float:
    return (sample.h - sample.l) ** 2 / FOUR_LN2


def summarize(values, design, rejected: int = 0) -> EfficiencyReport:
    """Sample mean, variance and their standard errors."""
    x = np.asarray(values, dtype=float)
    n = x.size
    if n < 2:
        raise BridgeVolError("a report needs at least 2 estimates")
    mean = float(np.mean(x))
    var = float(np.var(x, ddof=1))
    m4 = float(np.mean((x - mean) ** 4))
    return EfficiencyReport(
        mean=mean,
        variance=var,
        n=n,
        standard_error=math.sqrt(var / n),
        design=design,
        rejected=rejected,
        variance_standard_error=math.sqrt(max(m4 - var * var, 0.0) / n),
    )


def batch_report(req: EstimateRequest) -> EfficiencyReport:
    """Statistics of the per-sample estimates; fails if more than 0.1% are rejected."""
    if len(req.samples) < 2:
        raise BridgeVolError("batch report needs at least 2 samples")
    h = np.array([s.h for s in req.samples])
    l = np.array([s.l for s in req.samples])
    c = np.array([s.c for s in req.samples])
    values, rejected = estimate_arrays(h, l, c, req.diagram, req.interval, req.scale)
    n_bad = int(rejected.sum())
    if n_bad == len(req.samples):
        raise BridgeVolError("every sample was rejected")
    if n_bad > MAX_REJECTED_FRACTION * len(req.samples):
        raise BridgeVolError(f"{n_bad} of {len(req.samples)} samples rejected (limit 0.1%)")
    d = req.diagram
    return summarize(values[~rejected], (d.lam, d.kappa, d.gamma0), n_bad)
