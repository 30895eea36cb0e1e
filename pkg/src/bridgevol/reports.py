"""Summary statistics of a canonical estimator."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class EfficiencyReport:
    """Mean and variance of a (normalised) canonical estimator.

    ``n`` is None and ``standard_error`` 0 for reports computed by quadrature.
    ``raw_mean`` is the un-normalised expectation M of R^lambda psi, when known.
    """

    mean: float
    variance: float
    n: int | None
    standard_error: float
    design: tuple[float, float, float]
    raw_mean: float | None = None
    rejected: int = 0
    # sqrt((m4 - var^2) / n): standard error of the sample variance
    variance_standard_error: float = 0.0

    def __post_init__(self):
        if not self.variance >= -1e-12:
            raise ValueError(f"negative variance {self.variance}")
