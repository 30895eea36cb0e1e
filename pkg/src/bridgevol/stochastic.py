"""Simulation of the normalised log-price walk, the incomplete bridge and OHLC samples.

The process is X(t) = gamma t + W(t) on [0, 1]. A finite number of ticks K
gives the walk X(k/K) = gamma k/K + sum_{i<=k} eps_i / sqrt(K); the continuous
limit is approximated by ``CONTINUUM_TICKS`` Gaussian steps. Extremes are
taken over grid points only, with no correction for excursions between ticks.

Randomness comes from numpy's PCG64 seeded through SeedSequence. Work is cut
into fixed-size chunks, and chunk j always draws from the child stream
``SeedSequence(seed, spawn_key=(stream, j))``. Results therefore do not depend
on how chunks are spread over threads.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import DomainError

CONTINUUM_TICKS = 4096
RNG_ALGORITHM = "numpy PCG64 seeded by SeedSequence(seed, spawn_key=(stream, chunk))"
# paths generated per chunk; fixed so that results are independent of threading
CHUNK_PATHS = 1 << 14
# elements per random block (paths x ticks) held in memory at once
BLOCK_ELEMENTS = 1 << 22
MOMENT_CHECK_DRAWS = 200_000
MOMENT_TOLERANCE = 1e-2

_CUSTOM_INNOVATIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {}


def register_innovation(name: str, inverse_cdf: Callable[[np.ndarray], np.ndarray], seed: int = 0) -> None:
    """Register a zero-mean, unit-variance innovation law by its inverse CDF.

    The moments are checked once here on a large sample, not per draw.
    """
    if name in ("gaussian", "rademacher"):
        raise ValueError(f"{name!r} is a built-in innovation")
    u = np.random.Generator(np.random.PCG64(seed)).random(MOMENT_CHECK_DRAWS)
    x = np.asarray(inverse_cdf(u), dtype=float)
    if x.shape != u.shape or not np.all(np.isfinite(x)):
        raise DomainError("inverse CDF must map uniforms elementwise to finite values")
    mean, var = float(x.mean()), float(x.var())
    if abs(mean) > MOMENT_TOLERANCE or abs(var - 1.0) > MOMENT_TOLERANCE:
        raise DomainError(f"innovation {name!r} has mean {mean:.4f}, variance {var:.4f}; need 0 and 1")
    _CUSTOM_INNOVATIONS[name] = inverse_cdf


@dataclass(frozen=True)
class ProcessConfig:
    gamma: float = 0.0
    kappa: float = 0.0
    ticks: int | None = None  # None is the continuous limit
    innovation: str = "gaussian"

    def __post_init__(self):
        if self.ticks is not None:
            if isinstance(self.ticks, bool) or int(self.ticks) != self.ticks or self.ticks < 1:
                raise DomainError(f"ticks must be a positive integer or None, got {self.ticks!r}")
            object.__setattr__(self, "ticks", int(self.ticks))
        if not (math.isfinite(self.gamma) and math.isfinite(self.kappa)):
            raise DomainError("gamma and kappa must be finite")
        if self.innovation not in ("gaussian", "rademacher") and self.innovation not in _CUSTOM_INNOVATIONS:
            raise DomainError(f"unknown innovation {self.innovation!r}")

    @property
    def steps(self) -> int:
        return CONTINUUM_TICKS if self.ticks is None else self.ticks

    def as_dict(self) -> dict:
        return {"gamma": self.gamma, "kappa": self.kappa, "ticks": self.ticks, "innovation": self.innovation}


@dataclass(frozen=True, eq=False)
class PathSample:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size < 2:
            raise DomainError("path needs matching 1-d times and values with at least 2 points")
        if t[0] != 0.0 or t[-1] != 1.0 or np.any(np.diff(t) <= 0):
            raise DomainError("path times must increase strictly from 0 to 1")
        if v[0] != 0.0:
            raise DomainError("path must start at 0")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class OhlcSample:
    """Bridge high and low with the close of the underlying process."""

    h: float
    l: float
    c: float
    kappa: float
    tol: float = field(default=0.0, repr=False, compare=False)

    def __post_init__(self):
        for name in ("h", "l", "c", "kappa"):
            object.__setattr__(self, name, float(getattr(self, name)))
        bad = support_violation(self.h, self.l, self.c, self.kappa, self.tol)
        if bad:
            raise DomainError(bad)

    def scaled(self, factor: float) -> "OhlcSample":
        return OhlcSample(self.h * factor, self.l * factor, self.c * factor, self.kappa, self.tol * abs(factor))


def support_violation(h: float, l: float, c: float, kappa: float, tol: float = 0.0) -> str | None:
    """Name of the first violated constraint among h >= 0 >= l and l <= (1-kappa)c <= h."""
    cp = (1.0 - kappa) * c
    if h < -tol:
        return f"high >= 0 violated (h={h!r})"
    if l > tol:
        return f"low <= 0 violated (l={l!r})"
    if cp > h + tol:
        return f"(1-kappa)*close <= high violated ({cp!r} > {h!r})"
    if cp < l - tol:
        return f"low <= (1-kappa)*close violated ({l!r} > {cp!r})"
    return None


def child_generator(seed: int, stream: int = 0, chunk: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream, chunk))))


def _innovations(rng: np.random.Generator, shape, innovation: str) -> np.ndarray:
    if innovation == "gaussian":
        return rng.standard_normal(shape)
    if innovation == "rademacher":
        return 2.0 * rng.integers(0, 2, size=shape).astype(float) - 1.0
    return np.asarray(_CUSTOM_INNOVATIONS[innovation](rng.random(shape)), dtype=float)


def simulate_path(config: ProcessConfig, seed: int, stream: int = 0) -> PathSample:
    """One realisation of X on the grid k/K, k = 0..K."""
    k = config.steps
    rng = child_generator(seed, stream)
    eps = _innovations(rng, k, config.innovation)
    times = np.arange(k + 1) / k
    values = np.empty(k + 1)
    values[0] = 0.0
    values[1:] = np.cumsum(config.gamma / k + eps / math.sqrt(k))
    return PathSample(times, values)


def simulate_paths(config: ProcessConfig, n: int, seed: int, stream: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """n walks as a (n, K+1) array with the shared time grid; chunked like iter_ohlc_chunks."""
    n = _check_count(n)
    k = config.steps
    values = np.zeros((n, k + 1))
    for j, start in enumerate(range(0, n, CHUNK_PATHS)):
        stop = min(n, start + CHUNK_PATHS)
        eps = _innovations(child_generator(seed, stream, j), (stop - start, k), config.innovation)
        values[start:stop, 1:] = np.cumsum(config.gamma / k + eps / math.sqrt(k), axis=1)
    return np.arange(k + 1) / k, values


def bridge_transform(path: PathSample, kappa: float) -> PathSample:
    """Y(t) = X(t) - kappa t X(1) on the same grid."""
    if kappa == 0:
        return path
    values = path.values - kappa * path.times * path.values[-1]
    # Y(1) = (1-kappa) X(1) exactly, so the support constraint cannot fail by an ulp
    values[-1] = (1.0 - kappa) * path.values[-1]
    return PathSample(path.times, values)


def extract_ohlc(path: PathSample, kappa: float) -> OhlcSample:
    bridge = bridge_transform(path, kappa)
    # the grid includes t = 0 (Y = 0) and t = 1 (Y = (1-kappa)C), so the support holds exactly
    return OhlcSample(float(bridge.values.max()), float(bridge.values.min()), float(path.values[-1]), kappa)


@dataclass(frozen=True, eq=False)
class OhlcBatch:
    """Arrays of bridge extremes for one or more kappa values over shared paths."""

    kappas: tuple[float, ...]
    h: np.ndarray  # shape (len(kappas), n)
    l: np.ndarray
    c: np.ndarray  # shape (n,)

    def __len__(self) -> int:
        return self.c.size

    def select(self, kappa: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        i = self.kappas.index(kappa)
        return self.h[i], self.l[i], self.c

    def samples(self, kappa: float) -> Iterator[OhlcSample]:
        h, l, c = self.select(kappa)
        for hi, li, ci in zip(h, l, c):
            yield OhlcSample(hi, li, ci, kappa)


def _chunk_extremes(gamma, steps, innovation, kappas, n, rng):
    """Extremes of n walks for every kappa, processed in memory-bounded blocks."""
    h = np.empty((len(kappas), n))
    l = np.empty((len(kappas), n))
    c = np.empty(n)
    rows = max(1, BLOCK_ELEMENTS // steps)
    t = np.arange(1, steps + 1) / steps
    scale = 1.0 / math.sqrt(steps)
    for start in range(0, n, rows):
        stop = min(n, start + rows)
        x = _innovations(rng, (stop - start, steps), innovation)
        x *= scale
        if gamma:
            x += gamma / steps
        np.cumsum(x, axis=1, out=x)
        close = x[:, -1].copy()
        c[start:stop] = close
        for i, kappa in enumerate(kappas):
            if kappa != 0:
                y = x - kappa * close[:, None] * t
                # Y(1) = (1-kappa) C exactly, so l <= (1-kappa) c <= h holds without rounding slack
                y[:, -1] = (1.0 - kappa) * close
            else:
                y = x
            # the floor at 0 is the t = 0 grid point
            h[i, start:stop] = np.maximum(np.max(y, axis=1, initial=0.0), 0.0)
            l[i, start:stop] = np.minimum(np.min(y, axis=1, initial=0.0), 0.0)
    return h, l, c


def _check_count(n) -> int:
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise DomainError(f"number of samples must be a positive integer, got {n!r}")
    return int(n)


def iter_ohlc_chunks(
    config: ProcessConfig,
    n: int,
    seed: int,
    stream: int = 0,
    kappas: Sequence[float] | None = None,
    workers: int = 1,
) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Yield (h, l, c) per chunk in chunk order; h and l have one row per kappa.

    Chunk j of CHUNK_PATHS paths uses its own child stream, so the sequence
    of chunks is identical for any ``workers``.
    """
    n = _check_count(n)
    kappas = tuple(float(k) for k in (kappas if kappas is not None else (config.kappa,)))
    starts = list(range(0, n, CHUNK_PATHS))

    def run(j):
        size = min(CHUNK_PATHS, n - starts[j])
        return _chunk_extremes(
            config.gamma, config.steps, config.innovation, kappas, size, child_generator(seed, stream, j)
        )

    if workers <= 1:
        for j in range(len(starts)):
            yield run(j)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # bounded look-ahead keeps memory flat while preserving chunk order
        for first in range(0, len(starts), 2 * workers):
            yield from pool.map(run, range(first, min(len(starts), first + 2 * workers)))


def simulate_ohlc(
    config: ProcessConfig,
    n: int,
    seed: int,
    stream: int = 0,
    kappas: Sequence[float] | None = None,
    workers: int = 1,
) -> OhlcBatch:
    """n independent OHLC samples on shared paths for each kappa (default: config.kappa)."""
    kappas = tuple(float(k) for k in (kappas if kappas is not None else (config.kappa,)))
    parts = list(iter_ohlc_chunks(config, n, seed, stream, kappas, workers))
    h = np.concatenate([p[0] for p in parts], axis=1)
    l = np.concatenate([p[1] for p in parts], axis=1)
    c = np.concatenate([p[2] for p in parts])
    return OhlcBatch(kappas, h, l, c)


def monte_carlo_ohlc(config: ProcessConfig, n: int, seed: int, stream: int = 0) -> Iterator[OhlcSample]:
    """Stream of n OhlcSample objects for config.kappa (see simulate_ohlc)."""
    batch = simulate_ohlc(config, n, seed, stream)
    return batch.samples(config.kappa)


def dump_ohlc_csv(path, batch: OhlcBatch, kappa: float) -> None:
    h, l, c = batch.select(kappa)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["h", "l", "c", "kappa"])
        for row in zip(h, l, c):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(kappa))])


def dump_path_csv(path, sample: PathSample) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "value"])
        for t, v in zip(sample.times, sample.values):
            writer.writerow([repr(float(t)), repr(float(v))])
