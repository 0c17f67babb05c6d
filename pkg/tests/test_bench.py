import csv

import numpy as np
import pytest

from hybridse import data
from hybridse.bench import (Scenario, ScenarioError, aggregate_rows,
                            compute_metrics, load_scenario, run_montecarlo)
from hybridse.bench.metrics import MetricsRow
from hybridse.cli import main
from hybridse.powerflow import SystemState


class TestMetrics:
    def test_exact_estimate_zero(self, toy2):
        truth = SystemState(v={1: 1.0, 2: 0.98}, theta={1: 0.0, 2: -0.01})
        row = compute_metrics(toy2, dict(truth.v), dict(truth.theta), truth)
        assert row.aae_v_ac == row.mae_v_ac == 0.0
        assert row.aae_theta_deg == 0.0

    def test_direct_arithmetic(self, toy2):
        truth = SystemState(v={1: 1.0, 2: 1.0}, theta={1: 0.0, 2: 0.0})
        est_v = {1: 1.01, 2: 0.97}
        row = compute_metrics(toy2, est_v, {1: 0.0, 2: 0.0}, truth)
        assert row.aae_v_ac == pytest.approx(0.02)
        assert row.mae_v_ac == pytest.approx(0.03)

    def test_aae_le_mae(self, toy5):
        rng = np.random.default_rng(0)
        truth = SystemState(v={n.id: 1.0 for n in toy5.nodes},
                            theta={n.id: 0.0 for n in toy5.nodes if n.kind == "ac"})
        v = {n.id: 1.0 + rng.normal(0, 0.01) for n in toy5.nodes}
        th = {n.id: rng.normal(0, 0.01) for n in toy5.nodes if n.kind == "ac"}
        row = compute_metrics(toy5, v, th, truth)
        for pair in [("aae_v_ac", "mae_v_ac"), ("aae_theta_deg", "mae_theta_deg"),
                     ("aae_v_dc", "mae_v_dc")]:
            assert getattr(row, pair[0]) <= getattr(row, pair[1])

    def test_node_mismatch_rejected(self, toy5):
        truth = SystemState.flat(toy5)
        with pytest.raises(ValueError, match="misses nodes"):
            compute_metrics(toy5, {1: 1.0}, {1: 0.0}, truth)

    def test_aggregation_rule(self):
        rows = [MetricsRow(0.01, 0.02, 0.1, 0.2, 0.001, 0.002, 0.01, 0.02),
                MetricsRow(0.03, 0.08, 0.3, 0.6, 0.003, 0.008, 0.03, 0.08)]
        agg = aggregate_rows(rows)
        assert agg["aae_v_ac_mean"] == pytest.approx(0.02)
        assert agg["mae_v_ac_max"] == pytest.approx(0.08)
        assert agg["mae_v_ac_mean"] == pytest.approx(0.05)


def toy_scenario(method="drse", runs=2, **over):
    kw = dict(grid=str(data.path(data.TOY5_HYBRID)), method=method, runs=runs,
              seed=4242, base_profile=str(data.path(data.TOY5_HYBRID_LOADS)),
              profile_days=10, test_days=5)
    kw.update(over)
    return Scenario(**kw)


class TestScenario:
    def test_validation(self):
        with pytest.raises(ScenarioError, match="unknown method"):
            toy_scenario(method="bogus")
        with pytest.raises(ScenarioError, match="runs"):
            toy_scenario(runs=0)
        with pytest.raises(ScenarioError, match="pseudo_pct"):
            toy_scenario(pseudo_pct=42.0)

    def test_tick_convention(self):
        assert toy_scenario(method="drse").tick_time == 3600.0
        assert toy_scenario(method="drse_dnn").tick_time == 900.0
        assert toy_scenario(method="cwls_pseudo").tick_time == 900.0

    def test_load_scenario_roundtrip(self, tmp_path):
        import json
        doc = {"grid": str(data.path(data.TOY5_HYBRID)), "method": "dwls",
               "runs": 3, "seed": 7,
               "base_profile": str(data.path(data.TOY5_HYBRID_LOADS))}
        path = tmp_path / "s.json"
        path.write_text(json.dumps(doc))
        sc = load_scenario(path)
        assert sc.method == "dwls" and sc.runs == 3
        doc["nope"] = 1
        path.write_text(json.dumps(doc))
        with pytest.raises(ScenarioError, match="unknown scenario keys"):
            load_scenario(path)


class TestMonteCarlo:
    def test_zero_noise_toy_exact(self, tmp_path):
        # flat no-load truth makes the linear model exact: AAE below 1e-6
        zero_loads = tmp_path / "zero.csv"
        zero_loads.write_text("node_id,P,Q\n")
        sc = toy_scenario(runs=1, base_profile=str(zero_loads),
                          schedule={"scada_vmag_pct": 0.0, "scada_power_pct": 0.0,
                                    "smart_meter_pct": 0.0})
        result = run_montecarlo(sc)
        assert result.records[0].metrics.aae_v_all < 1e-6

    def test_artifacts_and_determinism(self, tmp_path):
        sc = toy_scenario(runs=3)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        run_montecarlo(sc, out_dir=out1)
        run_montecarlo(sc, out_dir=out2)
        for name in ("runs.csv", "aggregate.csv", "trace_boundary.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
        assert (out1 / "timing.csv").exists()

    def test_aggregate_recomputable_from_runs(self, tmp_path):
        sc = toy_scenario(runs=4)
        out = tmp_path / "r"
        result = run_montecarlo(sc, out_dir=out)
        with open(out / "runs.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        recomputed = np.mean([float(r["aae_v_ac"]) for r in rows])
        assert recomputed == pytest.approx(result.aggregate["aae_v_ac_mean"], abs=1e-15)
        recomputed_max = max(float(r["mae_v_ac"]) for r in rows)
        assert recomputed_max == pytest.approx(result.aggregate["mae_v_ac_max"], abs=1e-15)

    def test_timing_sanity(self, tmp_path):
        sc = toy_scenario(runs=2)
        result = run_montecarlo(sc)
        for rec in result.records:
            for iteration, t_total, t_algebra, t_regions in rec.timing_rows:
                assert t_total >= max(t_regions.values()) - 1e-12
                assert t_total >= t_algebra - 1e-12

    def test_per_run_seed_derivation(self):
        sc = toy_scenario(runs=3)
        result = run_montecarlo(sc)
        assert [r.seed for r in result.records] == [4242, 4243, 4244]


class TestCli:
    def test_pf_and_simulate_and_estimate(self, tmp_path):
        grid = str(data.path(data.CASE33_HYBRID))
        loads = str(data.path(data.CASE33_HYBRID_LOADS))
        state = tmp_path / "state.csv"
        assert main(["pf", "--grid", grid, "--injections", loads,
                     "--out", str(state)]) == 0
        assert state.exists()

        meas = tmp_path / "meas.csv"
        assert main(["simulate", "--grid", grid, "--injections", loads,
                     "--t", "3600", "--seed", "3",
                     "--scada-lines", "1-2,2-19,3-23,6-26",
                     "--out", str(meas)]) == 0

        est = tmp_path / "est.csv"
        assert main(["estimate", "--method", "drse", "--grid", grid,
                     "--meas", str(meas), "--out", str(est)]) == 0
        rows = est.read_text().strip().splitlines()
        assert rows[0] == "node_id,V,theta"
        assert len(rows) == 38   # 37 nodes + header

    def test_unknown_method_usage_exit(self, tmp_path):
        assert main(["estimate", "--method", "bogus", "--grid", "g", "--meas", "m",
                     "--out", str(tmp_path / "x.csv")]) == 1

    def test_missing_grid_validation_exit(self, tmp_path):
        assert main(["pf", "--grid", str(tmp_path / "none.json"),
                     "--injections", str(tmp_path / "none.csv")]) == 2

    def test_divergence_numerical_exit(self, tmp_path):
        grid = str(data.path(data.TOY5_HYBRID))
        bad = tmp_path / "bad.csv"
        bad.write_text("node_id,P,Q\n5,-50.0,\n")
        assert main(["pf", "--grid", grid, "--injections", str(bad)]) == 3

    def test_train_then_estimate_dnn(self, tmp_path):
        grid = str(data.path(data.TOY5_HYBRID))
        loads = str(data.path(data.TOY5_HYBRID_LOADS))
        model = tmp_path / "model.json"
        assert main(["train", "--grid", grid, "--base", loads, "--days", "30",
                     "--trials", "120", "--epochs", "60", "--seed", "8",
                     "--out", str(model)]) == 0
        meas = tmp_path / "m.csv"
        assert main(["simulate", "--grid", grid, "--injections", loads,
                     "--t", "900", "--seed", "2", "--out", str(meas)]) == 0
        est = tmp_path / "est.csv"
        assert main(["estimate", "--method", "drse_dnn", "--grid", grid,
                     "--meas", str(meas), "--model", str(model),
                     "--out", str(est)]) == 0
        assert est.exists()

    def test_gen_profiles_cli(self, tmp_path):
        grid = str(data.path(data.TOY5_HYBRID))
        loads = str(data.path(data.TOY5_HYBRID_LOADS))
        out = tmp_path / "profiles.csv"
        assert main(["gen-profiles", "--grid", grid, "--base", loads,
                     "--days", "2", "--seed", "3", "--out", str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "node_id,tick,P,Q"
        assert len(lines) == 1 + 2 * 24 * 2   # two injection nodes, two days

    def test_benchmark_cli(self, tmp_path):
        import json
        doc = {"grid": str(data.path(data.TOY5_HYBRID)), "method": "drse",
               "runs": 2, "seed": 1,
               "base_profile": str(data.path(data.TOY5_HYBRID_LOADS)),
               "profile_days": 5, "test_days": 3}
        scen = tmp_path / "s.json"
        scen.write_text(json.dumps(doc))
        out = tmp_path / "res"
        assert main(["benchmark", "--scenario", str(scen), "--seed", "99",
                     "--out", str(out)]) == 0
        assert (out / "runs.csv").exists()
        assert (out / "aggregate.csv").exists()
