"""Diagrams psi(theta, phi) of canonical estimators and their moments over S_kappa.

A canonical homogeneous estimator of order lambda is R^lambda psi(Theta, Phi).
Its expectation is M = int psi g_lambda cos(theta) and its second moment
N = int psi^2 g_2lambda cos(theta), both over S_kappa.

Gridded diagrams are tables over (phi, s) with s in [0, 1] the normalised
position between the theta limits. Nodes sit at cell centres, and lookups
outside the outermost centres take the nearest edge value.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.ndimage import distance_transform_edt

from . import __version__
from .errors import BridgeVolError, DomainError
from .geometry import HALF_PI, DomainSkappa, SphericalPoint, spherical_coordinates
from .quadrature import SkappaRule, domain_area, tensor_rule
from .reports import EfficiencyReport
from .specialfn import DEFAULT_POLICY, SeriesPolicy
from .stochastic import OhlcSample
from .weights import DEFAULT_CACHE, WeightCache, WeightField, weight

KINDS = ("most_efficient", "garman_klass", "parkinson", "custom_grid")
GK_K1, GK_K2, GK_K3 = 0.511, 0.019, 0.383
FOUR_LN2 = 4.0 * math.log(2.0)
DEFAULT_GRID = 200
# largest share of the domain measure on which psi_GK may be clamped at 0
CLAMP_LIMIT = 1e-3
FORMAT_VERSION = 1


def to_spherical(sample: OhlcSample) -> SphericalPoint:
    r, theta, phi = spherical_coordinates(sample.h, sample.l, sample.c)
    return SphericalPoint(r, theta, phi)


def psi_garman_klass(theta, phi, kappa: float):
    """Bridge G&K quadratic form on the unit sphere (may be negative)."""
    ct2 = np.cos(theta) ** 2
    q = 1.0 - kappa
    return (
        GK_K1 * ct2 * (np.cos(phi) - np.sin(phi)) ** 2
        + GK_K2 * (ct2 * np.sin(2 * phi) - 0.5 * q * np.sin(2 * theta) * (np.cos(phi) + np.sin(phi)))
        - GK_K3 * q * q * np.sin(theta) ** 2
    )


def psi_parkinson(theta, phi):
    return np.cos(theta) ** 2 * (1.0 - np.sin(2 * phi)) / FOUR_LN2


def grid_nodes(n_phi: int, n_s: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Cell-centre nodes of an n_phi x n_s table over [-pi/2, 0] x [0, 1]."""
    n_s = n_phi if n_s is None else n_s
    phi = -HALF_PI + HALF_PI * (np.arange(n_phi) + 0.5) / n_phi
    s = (np.arange(n_s) + 0.5) / n_s
    return phi, s


def fill_nearest(table: np.ndarray, usable: np.ndarray) -> np.ndarray:
    """Replace unusable cells by the value of the nearest usable cell."""
    if usable.all():
        return table
    if not usable.any():
        raise BridgeVolError("no usable cells to extrapolate from")
    idx = distance_transform_edt(~usable, return_distances=False, return_indices=True)
    return table[tuple(idx)]


@dataclass(frozen=True, eq=False)
class Diagram:
    """psi_lambda on S_kappa, already divided by ``normalizer``.

    For ``most_efficient`` the normalizer is the efficiency functional E; for
    the classical kinds it is M(kappa, gamma=0) of the raw diagram; for
    ``custom_grid`` it is whatever the builder used.
    """

    lam: float
    kappa: float
    gamma0: float
    kind: str
    normalizer: float
    phi_nodes: np.ndarray | None = None
    s_nodes: np.ndarray | None = None
    table: np.ndarray | None = None
    efficiency: float | None = None
    clamped_fraction: float = 0.0
    flagged: np.ndarray | None = field(default=None, repr=False)
    _interp: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown diagram kind {self.kind!r}")
        if self.gridded:
            for name in ("phi_nodes", "s_nodes", "table"):
                arr = np.array(getattr(self, name), dtype=float)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)
            if self.table.shape != (self.phi_nodes.size, self.s_nodes.size):
                raise ValueError("table shape does not match the node vectors")
            interp = RegularGridInterpolator((self.phi_nodes, self.s_nodes), self.table, method="linear")
            object.__setattr__(self, "_interp", interp)

    @property
    def gridded(self) -> bool:
        return self.kind in ("most_efficient", "custom_grid")

    @property
    def domain(self) -> DomainSkappa:
        return DomainSkappa(self.kappa)

    def _fractional(self) -> bool:
        return not float(self.lam / 2).is_integer()

    def raw(self, theta, phi):
        """Un-normalised diagram value."""
        theta, phi = np.broadcast_arrays(np.asarray(theta, float), np.asarray(phi, float))
        if self.kind == "parkinson":
            return psi_parkinson(theta, phi) ** (self.lam / 2)
        if self.kind == "garman_klass":
            base = psi_garman_klass(theta, phi, self.kappa)
            if self._fractional():
                base = np.maximum(base, 0.0)
            return base ** (self.lam / 2)
        return self._lookup(theta, phi) * self.normalizer

    def _lookup(self, theta, phi):
        s = np.clip(self.domain.s_from_theta(theta, phi), self.s_nodes[0], self.s_nodes[-1])
        p = np.clip(phi, self.phi_nodes[0], self.phi_nodes[-1])
        return self._interp(np.stack([p.ravel(), s.ravel()], axis=-1)).reshape(p.shape)

    def __call__(self, theta, phi):
        if self.gridded:
            theta, phi = np.broadcast_arrays(np.asarray(theta, float), np.asarray(phi, float))
            out = self._lookup(theta, phi)
        else:
            out = np.asarray(self.raw(theta, phi) / self.normalizer, dtype=float)
        return out if out.ndim else float(out)

    def describe(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "library_version": __version__,
            "kind": self.kind,
            "lambda": self.lam,
            "kappa": self.kappa,
            "gamma0": self.gamma0,
            "normalizer": self.normalizer,
            "efficiency": self.efficiency,
            "clamped_fraction": self.clamped_fraction,
            "grid": None if not self.gridded else [int(self.phi_nodes.size), int(self.s_nodes.size)],
        }


# ---------------------------------------------------------------------------
# moments


def _weights_on(rule: SkappaRule, lam: float, kappa: float, gamma: float, series, cache: WeightCache):
    return cache.get(WeightField(lam, kappa, gamma, series), rule)


def raw_moments(diagram: Diagram, gamma: float, rule: SkappaRule | None = None,
                series: SeriesPolicy = DEFAULT_POLICY, cache: WeightCache = DEFAULT_CACHE):
    """(M, N) of the normalised diagram at drift gamma."""
    rule = rule or tensor_rule(diagram.kappa)
    if rule.kappa != diagram.kappa:
        raise DomainError("quadrature rule and diagram are on different domains")
    psi = np.asarray(diagram(rule.theta, rule.phi))
    g1 = _weights_on(rule, diagram.lam, diagram.kappa, gamma, series, cache)
    g2 = _weights_on(rule, 2 * diagram.lam, diagram.kappa, gamma, series, cache)
    return rule.integrate(psi * g1), rule.integrate(psi * psi * g2)


def moments(diagram: Diagram, gamma: float | None = None, rule: SkappaRule | None = None,
            series: SeriesPolicy = DEFAULT_POLICY, cache: WeightCache = DEFAULT_CACHE) -> EfficiencyReport:
    """Mean M(gamma)/M(gamma0) and variance (N - M^2)/M(gamma0)^2 of the estimator."""
    gamma = diagram.gamma0 if gamma is None else gamma
    m, n = raw_moments(diagram, gamma, rule, series, cache)
    m0 = m if gamma == diagram.gamma0 else raw_moments(diagram, diagram.gamma0, rule, series, cache)[0]
    return EfficiencyReport(
        mean=m / m0,
        variance=(n - m * m) / (m0 * m0),
        n=None,
        standard_error=0.0,
        design=(diagram.lam, diagram.kappa, diagram.gamma0),
        raw_mean=m * diagram.normalizer,
    )


def efficiency(lam: float, kappa: float, gamma: float = 0.0, rule: SkappaRule | None = None,
               series: SeriesPolicy = DEFAULT_POLICY, cache: WeightCache = DEFAULT_CACHE) -> float:
    """E_lambda = int g_lambda^2 / g_2lambda cos(theta); 1/E - 1 is the minimal variance."""
    rule = rule or tensor_rule(kappa)
    g1 = _weights_on(rule, lam, kappa, gamma, series, cache)
    g2 = _weights_on(rule, 2 * lam, kappa, gamma, series, cache)
    ok = g2 > 0
    return rule.integrate(np.where(ok, g1 * g1 / np.where(ok, g2, 1.0), 0.0))


# ---------------------------------------------------------------------------
# builders


def build_most_efficient(lam: float, kappa: float, gamma0: float = 0.0, grid: int | tuple[int, int] = DEFAULT_GRID,
                         series: SeriesPolicy = DEFAULT_POLICY, rule: SkappaRule | None = None,
                         cache: WeightCache = DEFAULT_CACHE) -> Diagram:
    """psi_me = (g_lambda / g_2lambda) / E_lambda tabulated on a (phi, s) grid.

    Cells where g_2lambda underflows to 0 (domain corners) take the value of
    the nearest finite cell.
    """
    n_phi, n_s = (grid, grid) if np.isscalar(grid) else grid
    phi1, s1 = grid_nodes(n_phi, n_s)
    phi, s = np.meshgrid(phi1, s1, indexing="ij")
    theta = DomainSkappa(kappa).theta_from_s(phi, s)
    g1 = weight(theta, phi, WeightField(lam, kappa, gamma0, series), check_domain=False)
    g2 = weight(theta, phi, WeightField(2 * lam, kappa, gamma0, series), check_domain=False)
    usable = (g1 > 0) & (g2 > 0) & np.isfinite(g1) & np.isfinite(g2)
    ratio = np.where(usable, g1 / np.where(usable, g2, 1.0), 0.0)
    ratio = fill_nearest(ratio, usable)
    e = efficiency(lam, kappa, gamma0, rule, series, cache)
    return Diagram(lam, kappa, gamma0, "most_efficient", e, phi1, s1, ratio / e, efficiency=e, flagged=~usable)


def _classical(kind: str, lam: float, kappa: float, series, rule, cache) -> Diagram:
    proto = Diagram(lam, kappa, 0.0, kind, 1.0)
    rule = rule or tensor_rule(kappa)
    clamped = 0.0
    if kind == "garman_klass" and proto._fractional():
        negative = psi_garman_klass(rule.theta, rule.phi, kappa) < 0
        clamped = rule.integrate(negative) / domain_area(kappa)
        if clamped > CLAMP_LIMIT:
            raise BridgeVolError(f"G&K diagram negative on {clamped:.2e} of S_kappa; cannot take psi^{lam / 2}")
    m0 = raw_moments(proto, 0.0, rule, series, cache)[0]
    return replace(proto, normalizer=m0, clamped_fraction=clamped)


def build_garman_klass(lam: float, kappa: float, series: SeriesPolicy = DEFAULT_POLICY,
                       rule: SkappaRule | None = None, cache: WeightCache = DEFAULT_CACHE) -> Diagram:
    """psi_GK^(lambda/2) / M_GK,lambda(kappa); psi_GK is clamped at 0 for odd lambda."""
    return _classical("garman_klass", lam, kappa, series, rule, cache)


def build_parkinson(lam: float, kappa: float, series: SeriesPolicy = DEFAULT_POLICY,
                    rule: SkappaRule | None = None, cache: WeightCache = DEFAULT_CACHE) -> Diagram:
    return _classical("parkinson", lam, kappa, series, rule, cache)


def custom_grid(lam: float, kappa: float, table, gamma0: float = 0.0, normalizer: float = 1.0,
                flagged=None) -> Diagram:
    """Wrap a (phi, s) cell-centre table (already normalised) as a diagram."""
    table = np.asarray(table, dtype=float)
    phi1, s1 = grid_nodes(*table.shape)
    return Diagram(lam, kappa, gamma0, "custom_grid", normalizer, phi1, s1, table, flagged=flagged)


# ---------------------------------------------------------------------------
# serialisation


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def to_csv(diagram: Diagram) -> str:
    """Header lines ``# key=value`` then rows ``phi,s,psi`` (17 significant digits).

    Analytic kinds are written on their metadata alone.
    """
    buf = io.StringIO()
    for key, value in diagram.describe().items():
        if isinstance(value, float):
            value = _fmt(value)
        elif isinstance(value, list):
            value = "x".join(str(v) for v in value)
        buf.write(f"# {key}={value}\n")
    if diagram.gridded:
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["phi", "s", "psi"])
        for i, p in enumerate(diagram.phi_nodes):
            for j, s in enumerate(diagram.s_nodes):
                writer.writerow([_fmt(p), _fmt(s), _fmt(diagram.table[i, j])])
    return buf.getvalue()


def from_csv(text: str) -> Diagram:
    meta: dict[str, str] = {}
    rows = []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key] = value
        elif line and not line.startswith("phi"):
            rows.append([float(v) for v in line.split(",")])
    if int(meta.get("format_version", -1)) != FORMAT_VERSION:
        raise ValueError("unsupported diagram format version")

    def num(key):
        value = meta.get(key, "None")
        return None if value == "None" else float(value)

    kind = meta["kind"]
    common = dict(lam=num("lambda"), kappa=num("kappa"), gamma0=num("gamma0"), kind=kind,
                  normalizer=num("normalizer"), efficiency=num("efficiency"),
                  clamped_fraction=num("clamped_fraction") or 0.0)
    if kind in ("garman_klass", "parkinson"):
        return Diagram(**common)
    n_phi, n_s = (int(v) for v in meta["grid"].split("x"))
    data = np.array(rows, dtype=float)
    if data.shape != (n_phi * n_s, 3):
        raise ValueError("diagram table size does not match its header")
    return Diagram(**common, phi_nodes=data[::n_s, 0], s_nodes=data[:n_s, 1], table=data[:, 2].reshape(n_phi, n_s))


def save(diagram: Diagram, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(to_csv(diagram))


def load(path) -> Diagram:
    with open(path) as fh:
        return from_csv(fh.read())
