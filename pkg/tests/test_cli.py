import csv
import json
import math

import numpy as np
import pytest
from click.testing import CliRunner

from bridgevol.cli import EXIT_CONFIG, EXIT_INPUT, main, resolve


def run(*args):
    result = CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)
    return result


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestCurves:
    def test_variance_curve_endpoints(self, tmp_path):
        r = run("variance-curve", "--kappa", "0,1", "--out", tmp_path)
        assert r.exit_code == 0, r.output
        rows = read_csv(tmp_path / "variance_curve.csv")
        k0, k1 = ({k: float(v) for k, v in row.items()} for row in rows)
        assert k0["var_me"] == pytest.approx(0.2584, abs=0.003)
        assert k0["var_gk"] == pytest.approx(0.2693, abs=0.003)
        assert k0["var_park"] == pytest.approx(0.4073, abs=0.003)
        assert k1["var_me"] == pytest.approx(0.1794, abs=0.003)
        assert k1["var_gk"] == pytest.approx(0.2, abs=0.003)
        assert k1["var_park"] == pytest.approx(0.2, abs=0.003)
        side = json.loads((tmp_path / "variance_curve.json").read_text())
        assert side["command"] == "variance-curve" and side["config"]["kappa"] == [0.0, 1.0]

    def test_variance_curve_order_one(self, tmp_path):
        r = run("variance-curve", "--lambda", 1, "--kappa", "1", "--out", tmp_path)
        assert r.exit_code == 0, r.output
        row = {k: float(v) for k, v in read_csv(tmp_path / "variance_curve.csv")[0].items()}
        assert row["var_me"] == pytest.approx(0.0428, abs=0.001)
        assert row["var_gk"] == pytest.approx(0.0473, abs=0.001)
        assert row["var_park"] == pytest.approx(0.0472, abs=0.001)

    @pytest.mark.slow
    def test_most_efficient_curve_monotone(self, tmp_path):
        r = run("variance-curve", "--out", tmp_path)
        assert r.exit_code == 0, r.output
        var = np.array([float(row["var_me"]) for row in read_csv(tmp_path / "variance_curve.csv")])
        assert var.size == 13
        assert np.all(np.diff(var) <= 1e-3)

    def test_bias_curve(self, tmp_path):
        r = run("bias-curve", "--kappa", "0,0.5,1", "--out", tmp_path)
        assert r.exit_code == 0, r.output
        rows = [{k: float(v) for k, v in row.items()} for row in read_csv(tmp_path / "bias_curve.csv")]
        assert rows[0]["mean_gk"] == pytest.approx(1.0, abs=0.003)
        assert rows[0]["mean_park"] == pytest.approx(1.0, abs=0.003)
        for key in ("mean_gk", "mean_park"):
            assert abs(rows[1][key] - 1.0) > 0.05
        # the complete bridge shrinks both (Fig. 3 endpoints)
        assert rows[2]["mean_gk"] == pytest.approx(0.8283, abs=1e-3)
        assert rows[2]["mean_park"] == pytest.approx(0.5933, abs=1e-3)

    def test_bad_kappa_grid(self, tmp_path):
        r = run("variance-curve", "--kappa", "0,1.5", "--out", tmp_path)
        assert r.exit_code == EXIT_CONFIG


class TestSamplePanel:
    def test_single_row(self, tmp_path):
        r = run("sample-panel", "--N", 1, "--K", 64, "--out", tmp_path)
        assert r.exit_code == 0, r.output
        rows = read_csv(tmp_path / "sample_panel.csv")
        assert len(rows) == 1 and list(rows[0]) == ["idx", "me", "gk", "park"]

    def test_same_seed_same_bytes(self, tmp_path):
        for sub in ("a", "b"):
            assert run("sample-panel", "--N", 50, "--K", 32, "--seed", 7, "--out", tmp_path / sub).exit_code == 0
        assert (tmp_path / "a/sample_panel.csv").read_bytes() == (tmp_path / "b/sample_panel.csv").read_bytes()
        run("sample-panel", "--N", 50, "--K", 32, "--seed", 8, "--out", tmp_path / "c")
        assert (tmp_path / "a/sample_panel.csv").read_bytes() != (tmp_path / "c/sample_panel.csv").read_bytes()

    @pytest.mark.slow
    def test_ordering_over_repeated_panels(self, tmp_path):
        # 100 disjoint panels of 200 shared paths, cut from one run at the default seed
        r = run("sample-panel", "--N", 20_000, "--out", tmp_path)
        assert r.exit_code == 0, r.output
        rows = read_csv(tmp_path / "sample_panel.csv")
        v = {k: np.array([float(row[k]) for row in rows]).reshape(100, 200).var(axis=1, ddof=1)
             for k in ("me", "gk", "park")}
        ordered = (v["me"] < v["park"]) & (v["park"] < v["gk"])
        assert ordered.sum() >= 95


def write_ohlc(path, n, seed, bad_line=None):
    rng = np.random.default_rng(seed)
    from bridgevol.stochastic import ProcessConfig, simulate_ohlc

    h, l, c = simulate_ohlc(ProcessConfig(ticks=256), n, seed).select(0.0)
    sig = 0.01
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["open", "high", "low", "close", "t_start", "t_end"])
        for i in range(n):
            o = 100 * math.exp(rng.normal(scale=0.05))
            row = [o, o * math.exp(sig * h[i]), o * math.exp(sig * l[i]), o * math.exp(sig * c[i]), i, i + 1]
            if i == bad_line:
                row[1] = "n/a"
            w.writerow(row)


class TestEstimate:
    def test_empty_file(self, tmp_path):
        (tmp_path / "e.csv").write_text("")
        r = run("estimate", tmp_path / "e.csv", "--out", tmp_path)
        assert r.exit_code == EXIT_INPUT

    def test_missing_columns(self, tmp_path):
        (tmp_path / "x.csv").write_text("a,b\n1,2\n")
        assert run("estimate", tmp_path / "x.csv", "--out", tmp_path).exit_code == EXIT_INPUT

    def test_one_bad_row(self, tmp_path):
        write_ohlc(tmp_path / "o.csv", 1000, 3, bad_line=500)
        r = CliRunner().invoke(main, ["estimate", str(tmp_path / "o.csv"), "--estimator", "gk",
                                     "--out", str(tmp_path)])
        assert r.exit_code == 0, r.stderr
        assert len(read_csv(tmp_path / "estimate.csv")) == 999
        warnings = [x for x in r.stderr.splitlines() if x.startswith("warning")]
        assert len(warnings) == 1 and "line 502" in warnings[0]
        summary = json.loads(r.stdout)
        assert summary["skipped_rows"] == 1 and summary["intervals"] == 999

    def test_bridge_needs_ticks(self, tmp_path):
        write_ohlc(tmp_path / "o.csv", 10, 3)
        r = run("estimate", tmp_path / "o.csv", "--kappa", 1, "--out", tmp_path)
        assert r.exit_code == EXIT_INPUT

    @pytest.mark.parametrize("kappa", [0.0, 1.0])
    def test_tick_round_trip(self, tmp_path, kappa):
        # sigma = 0.2 per sqrt(year), one trading day per interval
        sim = tmp_path / "sim"
        r = run("simulate", "--N", 250, "--sigma", 0.2, "--interval", 1 / 250, "--seed", 5, "--out", sim)
        assert r.exit_code == 0, r.output
        r = CliRunner().invoke(main, ["estimate", str(sim / "simulate.csv"), "--kappa", str(kappa),
                                     "--out", str(tmp_path)])
        assert r.exit_code == 0, r.stderr
        s = json.loads(r.stdout)
        assert s["intervals"] == 250 and s["support_violations"] == 0
        target = 0.2**2 / 250
        assert abs(s["mean"] - target) < 3 * s["standard_error"]

    def test_saved_diagram(self, tmp_path):
        assert run("diagram-dump", "--estimator", "park", "--kappa", 0, "--out", tmp_path).exit_code == 0
        dumped = sorted(p.name for p in tmp_path.iterdir())
        diagram_file = next(tmp_path / n for n in dumped if n.endswith(".csv"))
        write_ohlc(tmp_path / "o.csv", 20, 4)
        r = CliRunner().invoke(main, ["estimate", str(tmp_path / "o.csv"), "--diagram",
                                     str(diagram_file), "--out", str(tmp_path / "est")])
        assert r.exit_code == 0, r.stderr
        assert json.loads(r.stdout)["diagram"]["kind"] == "parkinson"


class TestConfig:
    def test_missing_config(self, tmp_path):
        assert run("bias-curve", "--config", tmp_path / "nope.yaml", "--out", tmp_path).exit_code == EXIT_CONFIG

    def test_bad_values(self, tmp_path):
        assert run("sample-panel", "--kappa", 2, "--out", tmp_path).exit_code == EXIT_CONFIG
        assert run("sample-panel", "--N", 0, "--out", tmp_path).exit_code == EXIT_CONFIG
        assert run("variance-curve", "--lambda", -1, "--kappa", "0", "--out", tmp_path).exit_code == EXIT_CONFIG

    def test_precedence(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("seed: 11\nsample-panel:\n  N: 7\n  K: 16\n")
        merged = resolve("sample-panel", cfg, {"N": 3, "seed": None})
        assert merged["N"] == 3 and merged["seed"] == 11 and merged["K"] == 16
        assert merged["lambda"] == 2  # shipped default

    def test_rerun_from_sidecar(self, tmp_path):
        assert run("sample-panel", "--N", 30, "--K", 16, "--seed", 3, "--out", tmp_path / "a").exit_code == 0
        r = run("sample-panel", "--config", tmp_path / "a/sample_panel.json", "--out", tmp_path / "b")
        assert r.exit_code == 0, r.output
        assert (tmp_path / "a/sample_panel.csv").read_bytes() == (tmp_path / "b/sample_panel.csv").read_bytes()
        side = json.loads((tmp_path / "a/sample_panel.json").read_text())
        assert {"command", "config", "seeds", "library_version", "started_utc", "wall_clock_seconds"} <= set(side)

    def test_simulate_ohlc_workers(self, tmp_path):
        base = ["simulate", "--format", "ohlc", "--N", 40_000, "--K", 20, "--kappa", 0.5, "--seed", 9]
        assert run(*base, "--out", tmp_path / "a").exit_code == 0
        cfg = tmp_path / "w.yaml"
        cfg.write_text("workers: 3\n")
        assert run(*base, "--config", cfg, "--out", tmp_path / "b").exit_code == 0
        assert (tmp_path / "a/simulate.csv").read_bytes() == (tmp_path / "b/simulate.csv").read_bytes()

    def test_table1_small(self, tmp_path):
        r = run("table1", "--K", "10,inf", "--M", 1_000_000, "--N", 20_000, "--out", tmp_path)
        assert r.exit_code == 0, r.output
        lines = (tmp_path / "table1.csv").read_text().splitlines()
        assert lines[0] == "K,var_gk_k0,var_me_k0,var_gk_k1,var_me_k1"
        assert [x.split(",")[0] for x in lines[1:]] == ["10", "inf"]
        side = json.loads((tmp_path / "table1.json").read_text())
        assert set(side["standard_errors"]) == {"10", "inf"}
