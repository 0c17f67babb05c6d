import math

import numpy as np
import pytest

from hybridse.injection import (GmmModel, ProfileParams, TrainingError,
                                build_training_set, drift_check, fit_error_gmm,
                                fit_gmm, fit_injection_gmms, gen_load_profiles,
                                init_model, loss_and_grads, scada_vector,
                                train_mlp)
from hybridse.telemetry import ScheduleConfig

CASE33_SCHED = ScheduleConfig(scada_ac_branches=((1, 2), (2, 19), (3, 23), (6, 26)))


class TestProfiles:
    def test_zero_noise_repeats_daily_shape(self, case33, case33_loads):
        params = ProfileParams(noise_amp=0.0, pf_jitter=0.0, solar_jitter=0.0,
                               solar_beta_lo=0.7, solar_beta_hi=0.7)
        prof = gen_load_profiles(case33, days=3, seed=1, base=case33_loads,
                                 params=params)
        series = prof.p[5]
        assert np.allclose(series[:24], series[24:48])
        assert np.allclose(series[:24], series[48:72])

    def test_deterministic(self, case33, case33_loads):
        a = gen_load_profiles(case33, days=2, seed=9, base=case33_loads)
        b = gen_load_profiles(case33, days=2, seed=9, base=case33_loads)
        for node in a.p:
            assert np.array_equal(a.p[node], b.p[node])

    def test_sample_mean_matches_analytic(self, case33, case33_loads):
        prof = gen_load_profiles(case33, days=365, seed=3, base=case33_loads)
        for node in (5, 9, 24):   # plain load, AC generation, DC generation
            series = prof.p[node].reshape(365, 24)
            for hour in (3, 12, 19):
                sample = series[:, hour]
                se = sample.std(ddof=1) / math.sqrt(series.shape[0])
                assert abs(sample.mean() - prof.analytic_mean(node, hour)) <= 3 * se

    def test_junctions_have_no_series(self, case33, case33_loads):
        prof = gen_load_profiles(case33, days=1, seed=1, base=case33_loads)
        for junction in (21, 28, 36, 37):
            assert junction not in prof.p

    def test_solar_flips_sign_midday(self, case33, case33_loads):
        params = ProfileParams(noise_amp=0.0, solar_beta_lo=1.0, solar_beta_hi=1.0,
                               solar_jitter=0.0)
        prof = gen_load_profiles(case33, days=1, seed=1, base=case33_loads,
                                 params=params)
        assert prof.p[9][12] > 0.0      # generation at noon
        assert prof.p[9][0] < 0.0       # plain load at night


class TestGmm:
    def test_degenerate_input(self):
        model, trace = fit_gmm(np.full(50, 0.3), k=2, seed=0)
        assert np.allclose(model.means, 0.3, atol=1e-9)
        assert np.all(model.variances <= 1e-7)

    def test_recovers_two_cluster_mixture(self):
        rng = np.random.default_rng(5)
        a = rng.normal(0.2, 0.01, size=2500)
        b = rng.normal(0.8, 0.01, size=2500)
        samples = np.concatenate([a, b])
        model, _ = fit_gmm(samples, k=2, seed=1)
        means = sorted(model.means[:, 0])
        assert abs(means[0] - 0.2) < 0.005
        assert abs(means[1] - 0.8) < 0.005
        assert abs(model.weights[0] - 0.5) < 0.05

    def test_loglik_monotone(self):
        rng = np.random.default_rng(11)
        for trial in range(20):
            samples = rng.normal(rng.uniform(-1, 1), rng.uniform(0.05, 0.5),
                                 size=120)
            _, trace = fit_gmm(samples, k=int(rng.integers(1, 4)), seed=trial)
            diffs = np.diff(trace)
            assert np.all(diffs >= -1e-9)

    def test_overall_variance_analytic(self):
        model = GmmModel(weights=np.array([0.5, 0.5]),
                         means=np.array([[-0.01], [0.01]]),
                         variances=np.array([[1e-8], [1e-8]]))
        # equal-mass symmetric components: variance = mu^2 + sigma^2
        assert model.overall_variance()[0] == pytest.approx(1e-4 + 1e-8, rel=1e-9)

    def test_coupled_sampling_preserves_marginals(self):
        model = GmmModel(weights=np.array([0.3, 0.7]),
                         means=np.array([[0.0], [1.0]]),
                         variances=np.array([[0.01], [0.01]]))
        rng = np.random.default_rng(8)
        draws = np.array([model.sample_coupled(rng.uniform(),
                                               rng.standard_normal(1),
                                               rng.standard_normal(1), 0.8)[0]
                          for _ in range(4000)])
        low = (draws < 0.5).mean()
        assert abs(low - 0.3) < 0.03
        assert abs(draws.mean() - 0.7) < 0.02


class TestTrainingSet:
    def test_single_trial_zero_noise(self, case33, case33_loads):
        sched = ScheduleConfig(scada_ac_branches=CASE33_SCHED.scada_ac_branches,
                               scada_vmag_pct=0.0, scada_power_pct=0.0,
                               smart_meter_pct=0.0)
        profiles = gen_load_profiles(case33, days=30, seed=2, base=case33_loads)
        gmms = fit_injection_gmms(case33, profiles, seed=0)
        ts = build_training_set(case33, gmms, n_trials=1, schedule=sched, seed=5)
        # z must equal the exact SCADA readings of the sampled scenario
        from hybridse.injection import profile_from_components
        from hybridse.powerflow import solve_powerflow
        from hybridse.telemetry import simulate_measurements
        prof = profile_from_components(ts.components, ts.y[0])
        res = solve_powerflow(case33, prof)
        ms = simulate_measurements(case33, res.state, sched, t=900.0, seed=0)
        assert np.allclose(ts.z[0], scada_vector(ms, ts.channels), atol=1e-12)

    def test_deterministic(self, case33, case33_loads):
        profiles = gen_load_profiles(case33, days=30, seed=2, base=case33_loads)
        gmms = fit_injection_gmms(case33, profiles, seed=0)
        t1 = build_training_set(case33, gmms, 20, CASE33_SCHED, seed=7)
        t2 = build_training_set(case33, gmms, 20, CASE33_SCHED, seed=7)
        assert np.array_equal(t1.z, t2.z)
        assert np.array_equal(t1.y, t2.y)

    def test_low_drop_rate(self, case33, case33_loads):
        profiles = gen_load_profiles(case33, days=60, seed=2, base=case33_loads)
        gmms = fit_injection_gmms(case33, profiles, seed=0)
        ts = build_training_set(case33, gmms, 400, CASE33_SCHED, seed=13)
        assert ts.dropped / 400 < 0.01


class TestMlp:
    def test_learns_linear_map(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, size=(800, 1))
        y = 2.0 * x + 1.0
        model, report = train_mlp(x, y, hidden=[8], epochs=200, seed=1)
        assert math.sqrt(report.holdout_loss) < 1e-2

    def test_zero_epochs_predicts_mean(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(100, 3))
        y = rng.normal(2.0, 0.5, size=(100, 2))
        model, _ = train_mlp(x, y, hidden=[16], epochs=0, seed=3)
        pred = model.predict(rng.normal(size=(10, 3)))
        assert np.allclose(pred, model.y_mean, atol=1e-12)

    def test_backprop_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        model = init_model(2, [2], 1, rng)
        # give the zeroed output layer structure so gradients flow
        model.weights[-1] = rng.normal(size=model.weights[-1].shape)
        for _ in range(5):
            x = rng.normal(size=(3, 2))
            y = rng.normal(size=(3, 1))
            loss, gw, gb = loss_and_grads(model, x, y)
            eps = 1e-6
            for layer in range(len(model.weights)):
                w = model.weights[layer]
                idx = (int(rng.integers(w.shape[0])), int(rng.integers(w.shape[1])))
                w[idx] += eps
                up, _, _ = loss_and_grads(model, x, y)
                w[idx] -= 2 * eps
                dn, _, _ = loss_and_grads(model, x, y)
                w[idx] += eps
                fd = (up - dn) / (2 * eps)
                assert gw[layer][idx] == pytest.approx(fd, rel=1e-5, abs=1e-10)

    def test_deterministic_training(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(200, 2))
        y = x @ np.array([[1.0], [-0.5]])
        m1, _ = train_mlp(x, y, hidden=[8], epochs=50, seed=7)
        m2, _ = train_mlp(x, y, hidden=[8], epochs=50, seed=7)
        for w1, w2 in zip(m1.weights, m2.weights):
            assert np.array_equal(w1, w2)

    def test_nonfinite_loss_reported(self):
        x = np.array([[1.0], [2.0]])
        y = np.array([[1.0], [2.0]])
        with pytest.raises(TrainingError, match="epoch"):
            train_mlp(x, y, hidden=[4], epochs=50, lr=1e9, seed=0, holdout=0.0)


class TestErrorGmm:
    def test_zero_residuals_floor(self):
        sigma = fit_error_gmm(np.zeros((100, 1)), ["p:1"])
        assert sigma["p:1"] == 1e-4

    def test_known_normal(self):
        rng = np.random.default_rng(9)
        r = rng.normal(0.0, 0.005, size=(2000, 1))
        sigma = fit_error_gmm(r, ["p:1"])
        assert abs(sigma["p:1"] - 0.005) / 0.005 < 0.10

    def test_bimodal(self):
        rng = np.random.default_rng(10)
        half = rng.normal(0.01, 1e-4, size=1000)
        other = rng.normal(-0.01, 1e-4, size=1000)
        r = np.concatenate([half, other])[:, None]
        sigma = fit_error_gmm(r, ["p:1"])
        assert sigma["p:1"] == pytest.approx(0.01, rel=0.05)


class TestDrift:
    def test_identical_no_retrain(self):
        inj = {"p:1": 0.1, "q:1": 0.05}
        assert drift_check(inj, dict(inj), threshold=0.01) is False

    def test_large_deviation_flags(self):
        a = {"p:1": 0.1}
        b = {"p:1": 0.2}
        assert drift_check(a, b, threshold=0.01) is True

    def test_boundary_is_strict(self):
        a = {"p:1": 0.0}
        b = {"p:1": 0.01}
        assert drift_check(a, b, threshold=0.01) is False
