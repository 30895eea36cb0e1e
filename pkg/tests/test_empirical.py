import math

import numpy as np
import pytest
from scipy import stats

from bridgevol import empirical
from bridgevol.diagram import build_most_efficient
from bridgevol.errors import BridgeVolError, DomainError
from bridgevol.estimators import estimate_arrays
from bridgevol.empirical import (
    TABLE1_COLUMNS,
    BinnedWeight,
    Table1Row,
    accumulate_weights,
    bin_index,
    relative_variance,
    synthesize_diagram,
    synthesize_weight,
    table1_benchmark,
    write_table1_csv,
)
from bridgevol.geometry import HALF_PI, DomainSkappa
from bridgevol.stochastic import ProcessConfig, iter_ohlc_chunks

from oracles import analytic_bin_mass, continuous_ohlc

BINS = (50, 50)


def chi2_against(mass, var, expected, expected_count, min_count=200):
    use = expected_count >= min_count
    z = (mass - expected)[use] / np.sqrt(var[use])
    chi2 = float(np.sum(z * z))
    return chi2, int(use.sum()), float(stats.chi2.sf(chi2, use.sum()))


def bin_centres(kappa, bins):
    n_phi, n_s = bins
    phi = -HALF_PI + (np.arange(n_phi) + 0.5) * HALF_PI / n_phi
    s = (np.arange(n_s) + 0.5) / n_s
    P, S = np.meshgrid(phi, s, indexing="ij")
    return DomainSkappa(kappa).theta_from_s(P, S), P


class TestSynthesizeWeight:
    def test_probability_mass(self):
        m = 10**5
        w = synthesize_weight(ProcessConfig(ticks=64), 0.0, m, seed=1)
        assert w.mass.sum() == pytest.approx(1.0, abs=2 / math.sqrt(m))
        assert w.count.sum() == m and np.all(w.count >= 0)
        assert w.shape == BINS

    def test_minimum_simulations(self):
        with pytest.raises(DomainError):
            synthesize_weight(ProcessConfig(ticks=10), 2.0, 9_999, seed=1)

    def test_single_rademacher_step(self):
        w = synthesize_weight(ProcessConfig(ticks=1, innovation="rademacher"), 2.0, 10**4, seed=3)
        up, _ = bin_index(np.array([1.0]), np.array([0.0]), np.array([1.0]), 0.0, BINS)
        down, _ = bin_index(np.array([0.0]), np.array([-1.0]), np.array([-1.0]), 0.0, BINS)
        flat = w.count.ravel()
        assert np.count_nonzero(flat) == 2
        assert flat[up[0]] + flat[down[0]] == 10**4
        # R^2 = 2 for both outcomes
        assert w.mass.sum() == pytest.approx(2.0, rel=1e-14)

    def test_binning_matches_analytic_weight_exact_extremes(self):
        # binning machinery against the analytic field, on continuously monitored samples
        m = 4 * 10**5
        h, l, c = continuous_ohlc(m, 0.0, 0.0, np.random.default_rng(11))
        idx, r = bin_index(h, l, c, 0.0, BINS)
        size = BINS[0] * BINS[1]
        m2 = np.bincount(idx, weights=r**2, minlength=size).reshape(BINS) / m
        m4 = np.bincount(idx, weights=r**4, minlength=size).reshape(BINS) / m
        expected = analytic_bin_mass(0.0, 2.0, BINS)
        count = m * analytic_bin_mass(0.0, 0.0, BINS)
        chi2, dof, p = chi2_against(m2, (m4 - m2**2) / m, expected, count)
        assert dof > 100 and p > 0.01

    @pytest.mark.slow
    def test_gaussian_walk_matches_analytic_weight(self):
        # K = 4096 grid maxima are biased low; the leading 1/sqrt(K) term is removed per bin
        # by comparing against K = 8192 on a disjoint stream
        m = 2 * 10**5
        runs = [accumulate_weights(ProcessConfig(ticks=k), (0.0, 2.0, 4.0), (0.0,), m, seed=5, stream=i)
                for i, k in enumerate((4096, 8192))]
        mass = [w[(0.0, 2.0)].mass for w in runs]
        var = [(w[(0.0, 4.0)].mass - w[(0.0, 2.0)].mass ** 2) / m for w in runs]
        r = 1 / (1 - 2**-0.5)
        corrected = r * mass[1] - (r - 1) * mass[0]
        corrected_var = r * r * var[1] + (r - 1) ** 2 * var[0]
        expected = analytic_bin_mass(0.0, 2.0, BINS)
        count = m * analytic_bin_mass(0.0, 0.0, BINS)
        chi2, dof, p = chi2_against(corrected, corrected_var, expected, count)
        assert dof > 100 and p > 0.01
        # the uncorrected grid histogram is visibly biased at this sample size
        assert chi2_against(mass[0], var[0], expected, count)[2] < 1e-6

    def test_workers_do_not_change_histograms(self):
        cfg = ProcessConfig(ticks=20)
        a = accumulate_weights(cfg, (2.0,), (0.0, 1.0), 50_000, seed=4, workers=1)
        b = accumulate_weights(cfg, (2.0,), (0.0, 1.0), 50_000, seed=4, workers=3)
        for key in a:
            np.testing.assert_array_equal(a[key].mass, b[key].mass)
            np.testing.assert_array_equal(a[key].count, b[key].count)

    def test_refinement_halves_noise(self):
        # relative bin noise from 16 independent replicates per M; a single pair is dominated by
        # a few high-R bins and scatters by about 20% on its own
        cfg = ProcessConfig(ticks=10)

        def replicates(m, first):
            w = [synthesize_weight(cfg, 2.0, m, seed=8, stream=s, bins=20) for s in range(first, first + 16)]
            return np.array([x.mass for x in w]), np.mean([x.count for x in w], axis=0)

        def noise(mass, use):
            rel = mass.std(axis=0, ddof=1)[use] / mass.mean(axis=0)[use]
            return math.sqrt(np.mean(rel**2))

        small, count = replicates(10**5, 0)
        large, _ = replicates(2 * 10**5, 100)
        # one bin set for both sizes; reselecting at 2M would admit sparser, noisier bins
        use = count >= 200
        ratio = noise(small, use) / noise(large, use)
        assert ratio == pytest.approx(math.sqrt(2), rel=0.2)

    def test_csv_round_trip(self, tmp_path):
        w = synthesize_weight(ProcessConfig(ticks=8), 2.0, 10**4, seed=2, bins=(6, 4))
        w.to_csv(tmp_path / "w.csv")
        back = BinnedWeight.from_csv(tmp_path / "w.csv")
        np.testing.assert_array_equal(back.mass, w.mass)
        np.testing.assert_array_equal(back.count, w.count)
        assert (back.kappa, back.lam, back.simulations) == (w.kappa, w.lam, w.simulations)
        assert back.meta["seed"] == 2 and back.meta["process"]["ticks"] == 8
        header = (tmp_path / "w.csv").read_text().splitlines()[0]
        assert header == "phi_bin,s_bin,count,mass"


def injected(kappa, lam, bins, count=10**6):
    mass = analytic_bin_mass(kappa, lam, bins)
    return BinnedWeight(kappa, lam, mass, np.full(bins, count), 10**9)


class TestSynthesizeDiagram:
    @pytest.mark.parametrize("kappa", [0.0, 1.0])
    def test_analytic_injection(self, kappa):
        bins = (100, 100)
        g2 = injected(kappa, 2.0, bins)
        synth = synthesize_diagram(g2, injected(kappa, 4.0, bins))
        ref = build_most_efficient(2, kappa)
        theta, phi = bin_centres(kappa, bins)
        a, b = synth.diagram(theta, phi), ref(theta, phi)
        err2 = ((a - b) / b) ** 2
        # RMS under the g_2 measure, the one the estimator's moments are taken against
        assert math.sqrt(np.sum(g2.mass * err2) / g2.mass.sum()) < 0.01
        if kappa == 0.0:
            assert math.sqrt(np.mean(err2)) < 0.01
        else:
            # next to theta = +-pi/2 the complete-bridge field decays with a lambda-dependent power,
            # so a ratio of bin means differs from the pointwise ratio by a fixed factor there
            assert math.sqrt(np.mean(err2[:, 10:-10])) < 0.01
        assert synth.efficiency == pytest.approx(ref.efficiency, rel=1e-3)
        assert not synth.unusable.any()

    def test_nonnegative_and_flagged(self):
        w = accumulate_weights(ProcessConfig(ticks=16), (2.0, 4.0), (0.5,), 10**6, seed=6)
        synth = synthesize_diagram(w[(0.5, 2.0)], w[(0.5, 4.0)])
        assert np.all(synth.diagram.table[~synth.unusable] >= 0)
        assert np.all(synth.diagram.table >= 0)
        np.testing.assert_array_equal(synth.diagram.flagged, synth.unusable)

    def test_too_many_unusable_bins(self):
        w = accumulate_weights(ProcessConfig(ticks=10), (2.0, 4.0), (0.0,), 10**4, seed=1)
        with pytest.raises(BridgeVolError, match="increase"):
            synthesize_diagram(w[(0.0, 2.0)], w[(0.0, 4.0)])

    def test_mismatched_weights(self):
        a = injected(0.0, 2.0, (10, 10))
        with pytest.raises(DomainError):
            synthesize_diagram(a, injected(0.0, 3.0, (10, 10)))
        with pytest.raises(DomainError):
            synthesize_diagram(a, injected(0.0, 4.0, (12, 10)))

    @pytest.mark.slow
    def test_out_of_sample_unbiased(self):
        cfg = ProcessConfig(ticks=10, kappa=1.0)
        w = accumulate_weights(cfg, (2.0, 4.0), (1.0,), 10**7, seed=12, stream=0)
        synth = synthesize_diagram(w[(1.0, 2.0)], w[(1.0, 4.0)])
        parts = list(iter_ohlc_chunks(cfg, 10**6, 12, 1, (1.0,)))
        h = np.concatenate([p[0][0] for p in parts])
        l = np.concatenate([p[1][0] for p in parts])
        c = np.concatenate([p[2] for p in parts])
        est, rejected = estimate_arrays(h, l, c, synth.diagram)
        est = np.where(rejected, 0.0, est)
        se = est.std(ddof=1) / math.sqrt(est.size)
        assert abs(est.mean() - 1.0) < 3 * se


class TestTable1:
    def test_relative_variance(self):
        x = np.random.default_rng(0).exponential(2.0, 10**6)
        v, se = relative_variance(x)
        assert v == pytest.approx(1.0, abs=3 * se)
        assert relative_variance(3 * x)[0] == pytest.approx(v, rel=1e-12)

    def test_streams_are_disjoint(self, monkeypatch):
        seen = {"build": [], "eval": []}
        real_acc, real_iter = empirical.accumulate_weights, empirical.iter_ohlc_chunks

        building = []

        def acc(config, lams, kappas, m, seed, stream=0, *a, **k):
            seen["build"].append(stream)
            building.append(True)
            try:
                return real_acc(config, lams, kappas, m, seed, stream, *a, **k)
            finally:
                building.pop()

        def it(config, n, seed, stream=0, *a, **k):
            # walks drawn inside accumulate_weights belong to the build side
            if not building:
                seen["eval"].append(stream)
            return real_iter(config, n, seed, stream, *a, **k)

        monkeypatch.setattr(empirical, "accumulate_weights", acc)
        monkeypatch.setattr(empirical, "iter_ohlc_chunks", it)
        table1_benchmark((10, 20), m_diagram=10**5, n_eval=10**4, bins=10)
        assert len(seen["build"]) == 2 and len(seen["eval"]) == 2
        assert not set(seen["build"]) & set(seen["eval"])

    def test_small_run_and_csv(self, tmp_path):
        rows = table1_benchmark((10, None), m_diagram=10**5, n_eval=2 * 10**4, bins=20)
        assert [r.K for r in rows] == [10, None]
        for r in rows:
            assert set(r.values) == set(TABLE1_COLUMNS[1:])
        # rough shape of the K = 10 row at this small scale
        v = rows[0].values
        assert v["var_gk_k0"] == pytest.approx(0.5103, abs=0.05)
        assert v["var_me_k1"] < v["var_me_k0"]
        write_table1_csv(tmp_path / "t.csv", rows)
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == ",".join(TABLE1_COLUMNS)
        assert lines[1].startswith("10,") and lines[2].startswith("inf,")
        assert float(lines[2].split(",")[2]) == pytest.approx(0.2584, abs=0.002)

    def test_row_type(self):
        row = Table1Row(None, {"a": 1.0}, {"a": 0.0})
        assert row.K is None
