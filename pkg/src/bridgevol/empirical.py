"""Monte Carlo synthesis of weight fields and most-efficient diagrams for tick walks.

Binned estimate of the weight field: over a bin delta of S_kappa,
g_lambda cos(theta) dtheta dphi ~ (1/M) sum_m R_m^lambda 1{(Theta_m, Phi_m) in delta}.
Bins are a regular grid over (phi, s), where s is the normalised position
between the theta limits, so no bin straddles the edge of S_kappa. In the
ratio g_lambda / g_2lambda and in the efficiency sum, the bin area cancels.
Only the accumulated masses are needed.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import __version__
from .diagram import Diagram, build_garman_klass, build_most_efficient, custom_grid, fill_nearest, moments
from .errors import BridgeVolError, DomainError
from .estimators import classic_gk_arrays, estimate_arrays
from .geometry import HALF_PI, DomainSkappa
from .stochastic import RNG_ALGORITHM, ProcessConfig, iter_ohlc_chunks

DEFAULT_BINS = 50
MIN_SIMULATIONS = 10_000
MIN_BIN_COUNT = 10
MAX_UNUSABLE_FRACTION = 0.2
TABLE1_COLUMNS = ("K", "var_gk_k0", "var_me_k0", "var_gk_k1", "var_me_k1")


@dataclass(frozen=True, eq=False)
class BinnedWeight:
    kappa: float
    lam: float
    mass: np.ndarray  # (n_phi, n_s): sum of R^lambda over the bin, divided by M
    count: np.ndarray  # (n_phi, n_s) samples per bin
    simulations: int
    degenerate: int = 0  # all-zero samples, outside every bin
    meta: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mass.shape

    def empty_bins(self) -> int:
        return int(np.sum(self.count == 0))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["phi_bin", "s_bin", "count", "mass"])
            for (i, j), m in np.ndenumerate(self.mass):
                writer.writerow([i, j, int(self.count[i, j]), format(float(m), ".17g")])
        meta = {
            "kappa": self.kappa,
            "lambda": self.lam,
            "simulations": self.simulations,
            "degenerate": self.degenerate,
            "bins": list(self.shape),
            "library_version": __version__,
            **self.meta,
        }
        with open(str(path) + ".json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)

    @classmethod
    def from_csv(cls, path) -> "BinnedWeight":
        with open(str(path) + ".json") as fh:
            meta = json.load(fh)
        n_phi, n_s = meta["bins"]
        mass = np.zeros((n_phi, n_s))
        count = np.zeros((n_phi, n_s), dtype=np.int64)
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                i, j = int(row["phi_bin"]), int(row["s_bin"])
                mass[i, j] = float(row["mass"])
                count[i, j] = int(row["count"])
        extra = {k: v for k, v in meta.items()
                 if k not in ("kappa", "lambda", "simulations", "degenerate", "bins", "library_version")}
        return cls(meta["kappa"], meta["lambda"], mass, count, meta["simulations"], meta["degenerate"], extra)


def bin_index(h, l, c, kappa: float, bins: tuple[int, int]):
    """Flat bin index of each sample and its radius; index -1 for all-zero samples."""
    r = np.sqrt(h * h + l * l + c * c)
    live = r > 0
    theta = np.arcsin(np.clip(c / np.where(live, r, 1.0), -1.0, 1.0))
    phi = np.arctan2(np.minimum(l, 0.0), np.maximum(h, 0.0))
    s = DomainSkappa(kappa).s_from_theta(theta, phi)
    n_phi, n_s = bins
    i = np.clip(np.floor((phi + HALF_PI) / HALF_PI * n_phi).astype(np.int64), 0, n_phi - 1)
    j = np.clip(np.floor(s * n_s).astype(np.int64), 0, n_s - 1)
    return np.where(live, i * n_s + j, -1), r


def accumulate_weights(
    config: ProcessConfig,
    lams: Sequence[float],
    kappas: Sequence[float],
    simulations: int,
    seed: int,
    stream: int = 0,
    bins: int | tuple[int, int] = DEFAULT_BINS,
    workers: int = 1,
) -> dict[tuple[float, float], BinnedWeight]:
    """Binned weights for every (kappa, lambda) from one set of shared walks.

    Each chunk is histogrammed separately and the partial sums are added in
    chunk order, so the result does not depend on ``workers``.
    """
    if simulations < MIN_SIMULATIONS:
        raise DomainError(f"at least {MIN_SIMULATIONS} simulations are needed for a binned weight")
    bins = (bins, bins) if np.isscalar(bins) else tuple(bins)
    size = bins[0] * bins[1]
    kappas = tuple(float(k) for k in kappas)
    mass = {(k, lam): np.zeros(size) for k in kappas for lam in lams}
    count = {k: np.zeros(size, dtype=np.int64) for k in kappas}
    degenerate = {k: 0 for k in kappas}
    for h, l, c in iter_ohlc_chunks(config, simulations, seed, stream, kappas, workers):
        for i, kappa in enumerate(kappas):
            idx, r = bin_index(h[i], l[i], c, kappa, bins)
            live = idx >= 0
            degenerate[kappa] += int(np.sum(~live))
            count[kappa] += np.bincount(idx[live], minlength=size)
            for lam in lams:
                mass[(kappa, lam)] += np.bincount(idx[live], weights=r[live] ** lam, minlength=size)
    meta = {"seed": seed, "stream": stream, "process": config.as_dict(), "rng": RNG_ALGORITHM}
    return {
        (kappa, lam): BinnedWeight(
            kappa, lam, (mass[(kappa, lam)] / simulations).reshape(bins), count[kappa].reshape(bins).copy(),
            simulations, degenerate[kappa], dict(meta, process=dict(config.as_dict(), kappa=kappa)),
        )
        for kappa in kappas
        for lam in lams
    }


def synthesize_weight(config: ProcessConfig, lam: float, simulations: int, seed: int, stream: int = 0,
                      bins: int | tuple[int, int] = DEFAULT_BINS, workers: int = 1) -> BinnedWeight:
    """Histogram of R^lambda mass over S_kappa (kappa taken from ``config``)."""
    return accumulate_weights(config, (lam,), (config.kappa,), simulations, seed, stream, bins, workers)[
        (float(config.kappa), lam)
    ]


@dataclass(frozen=True, eq=False)
class SyntheticDiagram:
    diagram: Diagram
    efficiency: float
    unusable: np.ndarray  # bins filled by nearest-neighbour extrapolation


def synthesize_diagram(glam: BinnedWeight, g2lam: BinnedWeight, min_count: int = MIN_BIN_COUNT,
                       max_unusable: float = MAX_UNUSABLE_FRACTION) -> SyntheticDiagram:
    """psi = (g_lambda / g_2lambda) / E over the bins, as a linearly interpolated grid diagram."""
    if glam.shape != g2lam.shape or glam.kappa != g2lam.kappa:
        raise DomainError("weights must share the grid and kappa")
    if not math.isclose(g2lam.lam, 2 * glam.lam):
        raise DomainError("second weight must be of order 2 lambda")
    usable = (glam.count >= min_count) & (g2lam.count >= min_count) & (g2lam.mass > 0)
    share = 1.0 - usable.mean()
    if share > max_unusable:
        raise BridgeVolError(f"{share:.1%} of bins unusable (limit {max_unusable:.0%}); increase the simulation count")
    ratio = np.where(usable, glam.mass / np.where(usable, g2lam.mass, 1.0), 0.0)
    e = float(np.sum(np.where(usable, glam.mass * ratio, 0.0)))
    table = fill_nearest(ratio, usable) / e
    diagram = custom_grid(glam.lam, glam.kappa, table, normalizer=e, flagged=~usable)
    return SyntheticDiagram(diagram, e, ~usable)


def relative_variance(x) -> tuple[float, float]:
    """Var[x] / E[x]^2 and its delta-method standard error."""
    x = np.asarray(x, dtype=float)
    n = x.size
    mean = x.mean()
    d = x / mean - 1.0
    v = float(np.mean(d * d))
    # influence function of v = E[(x/mu - 1)^2], first order in the estimated mean
    infl = d * d - v - 2.0 * v * d
    return v, float(np.sqrt(np.mean(infl * infl) / n))


@dataclass(frozen=True)
class Table1Row:
    K: int | None
    values: dict
    errors: dict


def _finite_row(K, m_diagram, n_eval, seed, index, bins, workers):
    config = ProcessConfig(ticks=K)
    # diagram synthesis and evaluation draw from disjoint streams
    build_stream, eval_stream = 2 * index, 2 * index + 1
    weights = accumulate_weights(config, (2.0, 4.0), (0.0, 1.0), m_diagram, seed, build_stream, bins, workers)
    chunks = list(iter_ohlc_chunks(config, n_eval, seed, eval_stream, (0.0, 1.0), workers))
    h = np.concatenate([p[0] for p in chunks], axis=1)
    l = np.concatenate([p[1] for p in chunks], axis=1)
    c = np.concatenate([p[2] for p in chunks])
    values, errors = {}, {}
    for i, kappa in enumerate((0.0, 1.0)):
        tag = "k0" if kappa == 0 else "k1"
        gk = classic_gk_arrays(h[i], l[i], c, kappa)
        values[f"var_gk_{tag}"], errors[f"var_gk_{tag}"] = relative_variance(gk)
        synth = synthesize_diagram(weights[(kappa, 2.0)], weights[(kappa, 4.0)])
        est, rejected = estimate_arrays(h[i], l[i], c, synth.diagram)
        # all-zero walks carry no direction; their estimate is 0
        est = np.where(rejected, 0.0, est)
        values[f"var_me_{tag}"], errors[f"var_me_{tag}"] = relative_variance(est)
    return Table1Row(K, values, errors)


def _analytic_row():
    values = {}
    for kappa, tag in ((0.0, "k0"), (1.0, "k1")):
        values[f"var_gk_{tag}"] = moments(build_garman_klass(2, kappa)).variance
        values[f"var_me_{tag}"] = moments(build_most_efficient(2, kappa)).variance
    return Table1Row(None, values, {k: 0.0 for k in values})


def table1_benchmark(K_values: Sequence[int | None] = (10, 100, 1000, None), m_diagram: int = 10_000_000,
                     n_eval: int = 100_000, seed: int = 2024, bins: int = DEFAULT_BINS,
                     workers: int = 1) -> list[Table1Row]:
    """Relative variances Var/E^2 of G&K and synthetic most-efficient variance estimators.

    Finite K: the diagram is synthesised from ``m_diagram`` walks and evaluated
    on ``n_eval`` fresh walks (disjoint seed streams). ``None`` stands for the
    continuous limit, taken from the analytic weight field.
    """
    rows = []
    for index, K in enumerate(K_values):
        if K is None:
            rows.append(_analytic_row())
        else:
            rows.append(_finite_row(int(K), m_diagram, n_eval, seed, index, bins, workers))
    return rows


def write_table1_csv(path, rows: Sequence[Table1Row]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TABLE1_COLUMNS)
        for row in rows:
            writer.writerow(["inf" if row.K is None else row.K]
                            + [format(row.values[c], ".17g") for c in TABLE1_COLUMNS[1:]])
