"""Command-line front end.

Every command writes ``<name>.csv`` plus a ``<name>.json`` sidecar into
``--out``. The sidecar records the effective configuration, seeds, library
version and wall-clock time. Passing a sidecar back through ``--config``
reruns the command with identical CSV output.
"""

from __future__ import annotations

import csv
import json
import math
import sys
import time
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import click
import numpy as np
import yaml

from . import __version__
from .diagram import build_garman_klass, build_most_efficient, build_parkinson, load, moments, to_csv
from .empirical import table1_benchmark, write_table1_csv
from .errors import BridgeVolError, ConfigError, ConvergenceError, InputError
from .estimators import estimate_arrays
from .quadrature import tensor_rule
from .stochastic import RNG_ALGORITHM, ProcessConfig, dump_ohlc_csv, simulate_ohlc, simulate_path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_NUMERICAL = 4
EXIT_OTHER = 5

ESTIMATORS = ("me", "gk", "park")


# ---------------------------------------------------------------------------
# configuration


def default_config() -> dict:
    text = resources.files("bridgevol").joinpath("default_config.yaml").read_text()
    return yaml.safe_load(text)


def _read_config(path) -> dict:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a key-value mapping")
    return doc


def resolve(command: str, config_path, overrides: dict) -> dict:
    """Defaults < config file (top level, then command section) < flags."""
    base = default_config()
    merged = {k: v for k, v in base.items() if not isinstance(v, dict)}
    merged.update(base.get(command, {}))
    if config_path:
        doc = _read_config(config_path)
        if "command" in doc and "config" in doc:
            # a sidecar from an earlier run
            if doc["command"] != command:
                raise ConfigError(f"sidecar belongs to command {doc['command']!r}, not {command!r}")
            merged.update(doc["config"])
        else:
            merged.update({k: v for k, v in doc.items() if not isinstance(v, dict)})
            section = doc.get(command, {})
            if not isinstance(section, dict):
                raise ConfigError(f"section {command!r} must be a mapping")
            merged.update(section)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


def _floats(value, name) -> list[float]:
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    if not isinstance(value, (list, tuple)):
        value = [value]
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be numbers, got {value!r}") from exc


def _kappa(cfg) -> float:
    k = _number(cfg, "kappa")
    if not 0.0 <= k <= 1.0:
        raise ConfigError(f"kappa must lie in [0, 1], got {k}")
    return k


def _lambda(cfg) -> float:
    lam = _number(cfg, "lambda")
    if not lam > 0:
        raise ConfigError(f"lambda must be positive, got {lam}")
    return lam


def _ticks(value):
    if value is None or (isinstance(value, str) and value.strip().lower() in ("inf", "none", "null", "")):
        return None
    try:
        k = float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"K must be a positive integer or inf, got {value!r}") from exc
    if math.isinf(k):
        return None
    if k != int(k) or k < 1:
        raise ConfigError(f"K must be a positive integer or inf, got {value!r}")
    return int(k)


def _ticks_list(value):
    if isinstance(value, str):
        value = value.split(",")
    if not isinstance(value, (list, tuple)):
        value = [value]
    return [_ticks(v) for v in value]


def _number(cfg, key, kind=float):
    try:
        value = kind(cfg[key])
    except KeyError as exc:
        raise ConfigError(f"missing setting {key!r}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"setting {key!r} must be {kind.__name__}, got {cfg[key]!r}") from exc
    return value


# ---------------------------------------------------------------------------
# output


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _write_outputs(out_dir, name: str, command: str, cfg: dict, header, rows, started: float, extra=None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / f"{name}.csv"
    with open(target, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    _write_sidecar(out / f"{name}.json", command, cfg, started, extra)
    return target


def _write_sidecar(path, command, cfg, started, extra=None) -> None:
    sidecar = {
        "command": command,
        "config": cfg,
        "seeds": {"seed": cfg.get("seed"), "rng": RNG_ALGORITHM},
        "library_version": __version__,
        "started_utc": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "wall_clock_seconds": time.time() - started,
    }
    if extra:
        sidecar.update(extra)
    with open(path, "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)


def _run(fn):
    """Map package errors to exit codes."""
    try:
        fn()
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except InputError as exc:
        click.echo(f"input error: {exc}", err=True)
        sys.exit(EXIT_INPUT)
    except ConvergenceError as exc:
        click.echo(f"numerical error: {exc}", err=True)
        sys.exit(EXIT_NUMERICAL)
    except BridgeVolError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_OTHER)


def _diagram(estimator: str, lam: float, kappa: float, gamma: float, grid: int, rule):
    if estimator == "me":
        return build_most_efficient(lam, kappa, gamma, grid=grid, rule=rule)
    if estimator == "gk":
        return build_garman_klass(lam, kappa, rule=rule)
    if estimator == "park":
        return build_parkinson(lam, kappa, rule=rule)
    raise ConfigError(f"estimator must be one of {ESTIMATORS}, got {estimator!r}")


# ---------------------------------------------------------------------------
# commands

common = [
    click.option("--config", "config_path", type=click.Path(dir_okay=False), help="YAML or sidecar JSON file."),
    click.option("--out", "out_dir", type=click.Path(file_okay=False), default=".", show_default=True),
]


def with_common(fn):
    for option in reversed(common):
        fn = option(fn)
    return fn


@click.group()
@click.version_option(__version__)
def main():
    """Most-efficient OHLC bridge estimators of volatility and variance."""


@main.command("variance-curve")
@click.option("--lambda", "lam", type=float)
@click.option("--gamma", type=float)
@click.option("--kappa", type=str, help="Comma-separated kappa grid.")
@click.option("--grid", type=int, help="Most-efficient diagram table size.")
@with_common
def variance_curve(lam, gamma, kappa, grid, config_path, out_dir):
    """Variances of the normalised ME, G&K and PARK estimators against kappa."""

    def go():
        started = time.time()
        cfg = resolve("variance-curve", config_path, {"lambda": lam, "gamma": gamma, "kappa": kappa, "grid": grid})
        kappas = _floats(cfg["kappa"], "kappa")
        if any(not 0.0 <= k <= 1.0 for k in kappas):
            raise ConfigError("kappa grid must lie in [0, 1]")
        lam_, gamma_, grid_ = _lambda(cfg), _number(cfg, "gamma"), _number(cfg, "grid", int)
        nodes = _number(cfg, "quadrature_nodes", int)
        rows = []
        for k in kappas:
            rule = tensor_rule(k, nodes)
            var = [moments(_diagram(e, lam_, k, 0.0, grid_, rule), gamma_, rule).variance for e in ESTIMATORS]
            rows.append([_fmt(k)] + [_fmt(v) for v in var])
        cfg["kappa"] = kappas
        _write_outputs(out_dir, "variance_curve", "variance-curve", cfg,
                       ["kappa", "var_me", "var_gk", "var_park"], rows, started)

    _run(go)


@main.command("bias-curve")
@click.option("--lambda", "lam", type=float)
@click.option("--gamma", type=float)
@click.option("--kappa", type=str, help="Comma-separated kappa grid.")
@with_common
def bias_curve(lam, gamma, kappa, config_path, out_dir):
    """Un-normalised means M of the bridge G&K and PARK estimators against kappa."""

    def go():
        started = time.time()
        cfg = resolve("bias-curve", config_path, {"lambda": lam, "gamma": gamma, "kappa": kappa})
        kappas = _floats(cfg["kappa"], "kappa")
        if any(not 0.0 <= k <= 1.0 for k in kappas):
            raise ConfigError("kappa grid must lie in [0, 1]")
        lam_, gamma_ = _lambda(cfg), _number(cfg, "gamma")
        nodes = _number(cfg, "quadrature_nodes", int)
        rows = []
        for k in kappas:
            rule = tensor_rule(k, nodes)
            gk = moments(build_garman_klass(lam_, k, rule=rule), gamma_, rule).raw_mean
            park = moments(build_parkinson(lam_, k, rule=rule), gamma_, rule).raw_mean
            # the PARK diagram already carries 1/(4 ln 2), so its raw mean is the classical one
            rows.append([_fmt(k), _fmt(gk), _fmt(park)])
        cfg["kappa"] = kappas
        _write_outputs(out_dir, "bias_curve", "bias-curve", cfg, ["kappa", "mean_gk", "mean_park"], rows, started)

    _run(go)


@main.command("sample-panel")
@click.option("--N", "n", type=int, help="Number of realisations.")
@click.option("--lambda", "lam", type=float)
@click.option("--kappa", type=float)
@click.option("--gamma", type=float)
@click.option("--K", "ticks", type=str, help="Ticks per interval, or inf.")
@click.option("--grid", type=int)
@click.option("--seed", type=int)
@with_common
def sample_panel(n, lam, kappa, gamma, ticks, grid, seed, config_path, out_dir):
    """Per-realisation estimates on shared paths: ME and PARK on the bridge, G&K on the raw process."""

    def go():
        started = time.time()
        cfg = resolve("sample-panel", config_path, {"N": n, "lambda": lam, "kappa": kappa, "gamma": gamma,
                                                    "K": ticks, "grid": grid, "seed": seed})
        count, lam_, k = _number(cfg, "N", int), _lambda(cfg), _kappa(cfg)
        cfg["K"] = _ticks(cfg.get("K"))
        if count < 1:
            raise ConfigError("N must be at least 1")
        config = ProcessConfig(gamma=_number(cfg, "gamma"), ticks=cfg["K"])
        batch = simulate_ohlc(config, count, _number(cfg, "seed", int), kappas=(0.0, k) if k != 0 else (0.0,),
                              workers=_number(cfg, "workers", int))
        nodes = _number(cfg, "quadrature_nodes", int)
        rule = tensor_rule(k, nodes)
        me = estimate_arrays(*batch.select(k), build_most_efficient(lam_, k, grid=_number(cfg, "grid", int),
                                                                    rule=rule))[0]
        park = estimate_arrays(*batch.select(k), build_parkinson(lam_, k, rule=rule))[0]
        gk = estimate_arrays(*batch.select(0.0), build_garman_klass(lam_, 0.0, rule=tensor_rule(0.0, nodes)))[0]
        rows = [[i, _fmt(a), _fmt(b), _fmt(c)] for i, (a, b, c) in enumerate(zip(me, gk, park))]
        _write_outputs(out_dir, "sample_panel", "sample-panel", cfg, ["idx", "me", "gk", "park"], rows, started)

    _run(go)


@main.command("table1")
@click.option("--K", "ticks", type=str, help="Comma-separated tick counts; inf for the continuous limit.")
@click.option("--M", "m", type=int, help="Walks per synthetic diagram.")
@click.option("--N", "n", type=int, help="Walks for evaluation.")
@click.option("--seed", type=int)
@click.option("--workers", type=int)
@with_common
def table1(ticks, m, n, seed, workers, config_path, out_dir):
    """Relative variances of G&K and synthetic most-efficient estimators for tick walks."""

    def go():
        started = time.time()
        cfg = resolve("table1", config_path, {"K": ticks, "M": m, "N": n, "seed": seed, "workers": workers})
        cfg["K"] = _ticks_list(cfg["K"])
        rows = table1_benchmark(cfg["K"], _number(cfg, "M", int), _number(cfg, "N", int),
                                _number(cfg, "seed", int), _number(cfg, "bins", int), _number(cfg, "workers", int))
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_table1_csv(out / "table1.csv", rows)
        errors = {("inf" if r.K is None else str(r.K)): r.errors for r in rows}
        _write_sidecar(out / "table1.json", "table1", cfg, started, {"standard_errors": errors})

    _run(go)


@main.command("diagram-dump")
@click.option("--estimator", type=click.Choice(ESTIMATORS))
@click.option("--lambda", "lam", type=float)
@click.option("--kappa", type=float)
@click.option("--gamma", type=float, help="Design drift of the most-efficient diagram.")
@click.option("--grid", type=int)
@with_common
def diagram_dump(estimator, lam, kappa, gamma, grid, config_path, out_dir):
    """Write a diagram table (header metadata, then phi,s,psi rows)."""

    def go():
        started = time.time()
        cfg = resolve("diagram-dump", config_path, {"estimator": estimator, "lambda": lam, "kappa": kappa,
                                                    "gamma": gamma, "grid": grid})
        k = _kappa(cfg)
        d = _diagram(cfg["estimator"], _lambda(cfg), k, _number(cfg, "gamma"),
                     _number(cfg, "grid", int), tensor_rule(k, _number(cfg, "quadrature_nodes", int)))
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "diagram.csv").write_text(to_csv(d))
        _write_sidecar(out / "diagram.json", "diagram-dump", cfg, started)

    _run(go)


@main.command("simulate")
@click.option("--format", "fmt", type=click.Choice(["ticks", "ohlc"]))
@click.option("--N", "n", type=int, help="Number of intervals.")
@click.option("--K", "ticks", type=str, help="Ticks per interval, or inf.")
@click.option("--kappa", type=float)
@click.option("--gamma", type=float, help="Canonical drift (ohlc format).")
@click.option("--sigma", type=float, help="Volatility per unit time (ticks format).")
@click.option("--mu", type=float, help="Log-price drift per unit time (ticks format).")
@click.option("--interval", type=float, help="Interval length T in time units (ticks format).")
@click.option("--seed", type=int)
@with_common
def simulate(fmt, n, ticks, kappa, gamma, sigma, mu, interval, seed, config_path, out_dir):
    """Simulate tick prices (interval,t,price) or canonical OHLC samples (h,l,c,kappa)."""

    def go():
        started = time.time()
        cfg = resolve("simulate", config_path, {"format": fmt, "N": n, "K": ticks, "kappa": kappa, "gamma": gamma,
                                                "sigma": sigma, "mu": mu, "interval": interval, "seed": seed})
        cfg["K"] = _ticks(cfg.get("K"))
        count, seed_ = _number(cfg, "N", int), _number(cfg, "seed", int)
        if count < 1:
            raise ConfigError("N must be at least 1")
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if cfg["format"] == "ohlc":
            k = _kappa(cfg)
            batch = simulate_ohlc(ProcessConfig(_number(cfg, "gamma"), k, cfg["K"]), count, seed_,
                                  workers=_number(cfg, "workers", int))
            dump_ohlc_csv(out / "simulate.csv", batch, k)
        else:
            sig, drift, length = _number(cfg, "sigma"), _number(cfg, "mu"), _number(cfg, "interval")
            if not (sig > 0 and length > 0):
                raise ConfigError("sigma and interval must be positive")
            config = ProcessConfig(gamma=drift * math.sqrt(length) / sig, ticks=cfg["K"])
            log_price = math.log(_number(cfg, "price"))
            with open(out / "simulate.csv", "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["interval", "t", "price"])
                for i in range(count):
                    path = simulate_path(config, seed_, stream=i)
                    a = log_price + sig * math.sqrt(length) * path.values
                    for u, v in zip(path.times, a):
                        writer.writerow([i, _fmt((i + u) * length), _fmt(math.exp(v))])
                    log_price = a[-1]
        _write_sidecar(out / "simulate.json", "simulate", cfg, started)

    _run(go)


def _read_rows(path):
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InputError(f"{path} is empty")
        return [h.strip().lower() for h in header], list(enumerate(reader, start=2))


def _ohlc_intervals(header, rows, kappa):
    if kappa != 0:
        raise InputError("bridge OHLC needs the intra-interval path; supply tick data (interval,t,price) for kappa > 0")
    cols = {name: header.index(name) for name in ("open", "high", "low", "close", "t_start", "t_end")}
    out, bad = [], []
    last_end = -math.inf
    for line, row in rows:
        try:
            o, hi, lo, cl, t0, t1 = (float(row[cols[k]]) for k in ("open", "high", "low", "close", "t_start", "t_end"))
            if min(o, hi, lo, cl) <= 0 or not t1 > t0 or t0 < last_end or not lo <= min(o, cl) <= max(o, cl) <= hi:
                raise ValueError("inconsistent prices or timestamps")
        except (ValueError, IndexError) as exc:
            bad.append((line, str(exc)))
            continue
        last_end = t1
        a0 = math.log(o)
        out.append((math.log(hi) - a0, math.log(lo) - a0, math.log(cl) - a0, t1 - t0, t0))
    return out, bad


def _tick_intervals(header, rows, kappa):
    cols = {name: header.index(name) for name in ("interval", "t", "price")}
    groups: dict[str, list] = {}
    bad = []
    for line, row in rows:
        try:
            key = row[cols["interval"]].strip()
            t, p = float(row[cols["t"]]), float(row[cols["price"]])
            if not p > 0 or not math.isfinite(t):
                raise ValueError("price must be positive and time finite")
        except (ValueError, IndexError) as exc:
            bad.append((line, str(exc)))
            continue
        groups.setdefault(key, []).append((t, p, line))
    out = []
    for key, ticks in groups.items():
        t = np.array([x[0] for x in ticks])
        if t.size < 2 or np.any(np.diff(t) <= 0):
            bad.append((ticks[0][2], f"interval {key}: timestamps must increase and number at least 2"))
            continue
        a = np.log([x[1] for x in ticks])
        x = a - a[0]
        u = (t - t[0]) / (t[-1] - t[0])
        y = x - kappa * u * x[-1]
        out.append((float(max(y.max(), 0.0)), float(min(y.min(), 0.0)), float(x[-1]), float(t[-1] - t[0]),
                    float(t[0])))
    return out, bad


@main.command("estimate")
@click.argument("input_csv", type=click.Path(dir_okay=False))
@click.option("--estimator", type=click.Choice(ESTIMATORS))
@click.option("--diagram", "diagram_path", type=click.Path(dir_okay=False), help="Diagram file from diagram-dump.")
@click.option("--lambda", "lam", type=float)
@click.option("--kappa", type=float)
@click.option("--grid", type=int)
@click.option("--scale", type=click.Choice(["canonical", "price-scale"]))
@with_common
def estimate(input_csv, estimator, diagram_path, lam, kappa, grid, scale, config_path, out_dir):
    """Per-interval estimates from OHLC rows (open,high,low,close,t_start,t_end) or ticks (interval,t,price).

    canonical: R^lambda psi of the log-price OHLC, an estimate of (sigma^2 T)^(lambda/2);
    price-scale: the same divided by T^(lambda/2), an estimate of sigma^lambda.
    """

    def go():
        started = time.time()
        cfg = resolve("estimate", config_path, {"estimator": estimator, "lambda": lam, "kappa": kappa,
                                                "grid": grid, "scale": scale, "diagram": diagram_path})
        cfg["input"] = str(input_csv)
        if cfg.get("diagram"):
            try:
                d = load(cfg["diagram"])
            except (OSError, ValueError, KeyError) as exc:
                raise InputError(f"cannot read diagram {cfg['diagram']}: {exc}") from exc
        else:
            k = _kappa(cfg)
            d = _diagram(cfg["estimator"], _lambda(cfg), k, 0.0, _number(cfg, "grid", int),
                         tensor_rule(k, _number(cfg, "quadrature_nodes", int)))
        header, rows = _read_rows(input_csv)
        if {"open", "high", "low", "close", "t_start", "t_end"} <= set(header):
            intervals, bad = _ohlc_intervals(header, rows, d.kappa)
        elif {"interval", "t", "price"} <= set(header):
            intervals, bad = _tick_intervals(header, rows, d.kappa)
        else:
            raise InputError("expected columns open,high,low,close,t_start,t_end or interval,t,price")
        for line, reason in bad:
            click.echo(f"warning: line {line} skipped: {reason}", err=True)
        if not intervals:
            raise InputError("no usable intervals in the input")
        h, l, c, length, t0 = (np.array(v) for v in zip(*intervals))
        values, rejected = estimate_arrays(h, l, c, d, length, cfg["scale"])
        rows_out = [[_fmt(t), _fmt(v) if not r else "nan"] for t, v, r in zip(t0, values, rejected)]
        good = values[~rejected]
        summary = {
            "intervals": int(values.size),
            "skipped_rows": len(bad),
            "support_violations": int(rejected.sum()),
            "mean": float(np.mean(good)) if good.size else None,
            "variance": float(np.var(good, ddof=1)) if good.size > 1 else None,
            "standard_error": float(np.std(good, ddof=1) / math.sqrt(good.size)) if good.size > 1 else None,
            "diagram": d.describe(),
        }
        _write_outputs(out_dir, "estimate", "estimate", cfg, ["t_start", "estimate"], rows_out, started,
                       {"summary": summary})
        click.echo(json.dumps(summary, sort_keys=True))

    _run(go)


if __name__ == "__main__":
    main()
