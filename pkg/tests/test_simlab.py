import math

import numpy as np
import pytest

from dimtest.rank2 import fit_rank2, fit_rank2_many
from dimtest.rng import SubstreamPool, substream
from dimtest.simlab import (
    SimulationSpec,
    TestConfig,
    _draw_errors,
    alternating_mu2,
    case_direction,
    gen_dataset,
    make_spec,
    reproduce_table,
    run_cell,
)


class TestErrorDistributions:
    @pytest.mark.parametrize("dist", ["normal", "t5_scaled", "chisq_centered"])
    def test_variance_5000(self, dist):
        x = _draw_errors(substream(1234, 0), dist, (1_000_000,))
        assert abs(x.mean()) < 10.0
        assert 4900.0 <= x.var() <= 5100.0

    def test_chisq_skewed(self):
        x = _draw_errors(substream(5, 0), "chisq_centered", (200_000,))
        skew = np.mean((x - x.mean()) ** 3) / x.std() ** 3
        assert skew > 1.0

    def test_none_is_zero(self):
        assert not _draw_errors(substream(6, 0), "none", (100,)).any()


class TestSimulationSpec:
    def test_defaults(self):
        spec = SimulationSpec(n=8)
        assert spec.m == 12
        assert np.allclose(spec.mu1, 4500.0)
        assert spec.hypothesis == "null"
        assert abs(spec.phi1 @ spec.phi1 - 1.0) < 1e-15
        assert abs(spec.phi1 @ spec.phi2) < 1e-15
        # the standard phi1 is (2 sqrt(3))^-1 (1, ..., 1) at m = 12
        assert abs(spec.phi1[0] - 1.0 / (2.0 * math.sqrt(3.0))) < 1e-15

    def test_alternative(self):
        spec = make_spec(8, "normal", "alternative", seed=0)
        assert spec.hypothesis == "alternative"
        assert np.array_equal(spec.mu2, [125, -125] * 4)
        assert abs(spec.mu1 @ spec.mu2) == 0.0

    def test_rejects_non_orthogonal_mu(self):
        with pytest.raises(ValueError, match="orthogonal"):
            SimulationSpec(n=4, mu2=np.array([1.0, 1.0, 1.0, 1.0]))

    def test_rejects_bad_phi(self):
        with pytest.raises(ValueError, match="unit"):
            SimulationSpec(n=4, phi1=np.ones(12), phi2=np.ones(12))

    def test_rejects_odd_n_alternating(self):
        with pytest.raises(ValueError, match="even"):
            alternating_mu2(7)


class TestGenDataset:
    def test_deterministic_and_distinct(self):
        spec = make_spec(8, "normal", "null", seed=3)
        a = gen_dataset(spec, 0)
        b = gen_dataset(spec, 0)
        c = gen_dataset(spec, 1)
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)
        assert a.values.shape == (8, 12)

    def test_seed_changes_data(self):
        a = gen_dataset(make_spec(8, "normal", "null", seed=3), 0)
        b = gen_dataset(make_spec(8, "normal", "null", seed=4), 0)
        assert not np.array_equal(a.values, b.values)

    def test_noiseless_degenerate_recovery(self):
        spec = SimulationSpec(
            n=8,
            mu2=alternating_mu2(8),
            var_theta1=0.0,
            var_theta2=0.0,
            error_dist="none",
        )
        fit = fit_rank2(gen_dataset(spec, 0))
        assert np.abs(np.abs(fit.phi1) - np.abs(spec.phi1)).max() < 1e-8
        assert np.abs(np.abs(fit.phi2) - np.abs(spec.phi2)).max() < 1e-8
        # exact in real arithmetic; round-off scales with the intensity^2 units
        assert abs(fit.resid_sigma2) < 1e-9 * fit.eigen_est1

    def test_mean_structure(self):
        # averaging many replicates recovers mu1 phi1' + mu2 phi2'
        spec = make_spec(8, "normal", "alternative", seed=9)
        pool_mean = np.zeros((8, 12))
        reps = 400
        for r in range(reps):
            pool_mean += gen_dataset(spec, r).values
        pool_mean /= reps
        expect = np.outer(spec.mu1, spec.phi1) + np.outer(spec.mu2, spec.phi2)
        err = np.abs(pool_mean - expect).max()
        assert err < 5.0 * math.sqrt((150_000 / 12 + 10_000 / 12 + 5000) / reps)


class TestCaseDirections:
    def test_case1_norm(self):
        for n in (6, 8, 16, 128):
            a = case_direction(1, n)
            assert a @ a == n
            assert abs(a.sum()) == 0.0

    def test_case2_norm_n8(self):
        a = case_direction(2, 8)
        assert abs(a @ a - 8.0) < 1e-12

    def test_case2_norm_n6_unnormalized(self):
        a = case_direction(2, 6)
        assert abs(a @ a - (6.0 + math.sqrt(3.0))) < 1e-12

    def test_case2_composition(self):
        a = case_direction(2, 8)
        alt = case_direction(1, 8)
        halves = np.where(np.arange(8) < 4, 1.0, -1.0)
        assert np.allclose(a, math.sqrt(3.0) / 2.0 * alt + 0.5 * halves)


class TestRunCell:
    def test_deterministic(self):
        spec = make_spec(8, "normal", "null", seed=3)
        cfg = TestConfig(test="target")
        a = run_cell(spec, cfg, reps=200)
        b = run_cell(spec, cfg, reps=200)
        assert a.rejection_rate == b.rejection_rate

    def test_rejects_tiny_reps(self):
        with pytest.raises(ValueError, match="100"):
            run_cell(make_spec(8, "normal", "null", seed=0), TestConfig(test="target"), reps=50)

    def test_hadamard_needs_power_of_two(self):
        with pytest.raises(ValueError, match="power of two"):
            run_cell(make_spec(6, "normal", "null", seed=0), TestConfig(test="chisq", k=4), reps=100)

    def test_mc_stderr(self):
        res = run_cell(make_spec(8, "normal", "null", seed=3), TestConfig(test="target"), reps=400)
        r = res.rejection_rate
        assert abs(res.mc_stderr - math.sqrt(r * (1 - r) / 400)) < 1e-15

    def test_method_tags(self):
        assert TestConfig(test="target", direction_case=2).method_tag == "target_case2"
        assert TestConfig(test="chisq", k=4).method_tag == "chisq_k4"
        assert TestConfig(test="chisq", k=4, bootstrap=True).method_tag == "chisq_k4_bootstrap"
        assert TestConfig(test="max").method_tag == "max"

    def test_bootstrap_cell_deterministic(self):
        spec = make_spec(6, "normal", "null", seed=5)
        cfg = TestConfig(test="target", direction_case=2, bootstrap=True, bootstrap_B=100)
        a = run_cell(spec, cfg, reps=120)
        b = run_cell(spec, cfg, reps=120)
        assert a.rejection_rate == b.rejection_rate


class TestResidualVarianceRecovery:
    def test_mean_resid_near_5000(self):
        # the residual-variance estimator averages to the true noise variance
        spec = make_spec(128, "normal", "null", seed=13)
        pool = SubstreamPool()
        from dimtest.simlab import _gen_values

        values = np.stack([_gen_values(spec, r, pool) for r in range(100)])
        batch = fit_rank2_many(values)
        mean_resid = float(batch.resid_sigma2.mean())
        assert 4500.0 <= mean_resid <= 5500.0


class TestReproduceTable:
    def test_table2_structure(self):
        table = reproduce_table(2, reps=100, seed=1)
        assert [row["n"] for row in table.rows] == [8, 16, 32, 64]
        for row in table.rows:
            for col in ("null_normal", "null_t5", "null_chisq", "alt_normal"):
                assert 0.0 <= row[col] <= 1.0
                assert 0.0 <= row[f"se_{col}"] <= 0.06
        assert table.metadata["generator"] == "philox4x64"
        text = table.to_tsv()
        assert text.startswith("#")
        header = [l for l in text.splitlines() if not l.startswith("#")][0]
        assert header.split("\t")[0] == "n"

    def test_table1_has_cases(self):
        table = reproduce_table(1, reps=100, seed=1)
        assert len(table.rows) == 8
        assert {row["case"] for row in table.rows} == {1, 2}
        assert table.cell("null_normal", case=1, n=8) == table.rows[0]["null_normal"]

    def test_table3_structure(self):
        table = reproduce_table(3, reps=100, seed=1, bootstrap_B=100)
        assert len(table.rows) == 8
        sections = {row["section"] for row in table.rows}
        assert sections == {"type1", "power"}
        configs = [row["config"] for row in table.rows if row["section"] == "type1"]
        assert configs == ["target_n6", "target_n8", "chisq_n8", "chisq_n16"]
        assert "boot_normal" in table.rows[0]
        assert table.metadata["bootstrap_B"] == 100

    def test_bad_table_id(self):
        with pytest.raises(ValueError):
            reproduce_table(5, reps=100, seed=0)

    def test_deterministic_across_runs(self):
        a = reproduce_table(4, reps=100, seed=2)
        b = reproduce_table(4, reps=100, seed=2)
        assert a.rows == b.rows
