import math

import numpy as np
import pytest

from hybridse.powerflow import (InjectionProfile, PowerFlowDivergence, ac_branch_flow,
                                conservation_residual, converter_loss, dc_branch_flow,
                                solve_ac_region, solve_dc_region, solve_powerflow)

D = (0.011, 0.003, 0.004)


class TestConverterLoss:
    def test_zero_current_floor(self):
        loss, i_c = converter_loss(0.0, 0.0, 1.0, D)
        assert i_c == 0.0
        assert loss == pytest.approx(0.011)

    def test_hand_evaluated_point(self):
        # i = sqrt(0.36 + 0.09) / sqrt(3) = 0.3872983346...; i^2 = 0.15
        loss, i_c = converter_loss(0.6, 0.3, 1.0, D)
        assert i_c == pytest.approx(0.3872983346207417, abs=1e-12)
        assert loss == pytest.approx(0.012761895003862225, abs=1e-12)

    def test_reversed_flow_symmetry(self):
        assert converter_loss(-0.6, 0.3, 1.0, D) == converter_loss(0.6, 0.3, 1.0, D)

    def test_monotone_in_apparent_power(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            s1, s2 = sorted(rng.uniform(0, 2, size=2))
            phi = rng.uniform(0, 2 * math.pi)
            v = rng.uniform(0.9, 1.1)
            l1, _ = converter_loss(s1 * math.cos(phi), s1 * math.sin(phi), v, D)
            l2, _ = converter_loss(s2 * math.cos(phi), s2 * math.sin(phi), v, D)
            assert l2 >= l1 - 1e-15


class TestAcRegion:
    def test_flat_no_load(self, toy2):
        st = solve_ac_region(toy2, toy2.regions[0], {})
        for v, th in st.values():
            assert v == pytest.approx(1.0, abs=1e-12)
            assert th == pytest.approx(0.0, abs=1e-12)

    def test_backsubstitution_is_oracle(self, toy2):
        st = solve_ac_region(toy2, toy2.regions[0], {2: (-0.5, -0.2)})
        v2, th2 = st[2]
        assert v2 < 1.0 and th2 < 0.0
        p, q = ac_branch_flow(v2, th2, st[1][0], st[1][1], 0.01, 0.02)
        assert p == pytest.approx(-0.5, abs=1e-8)
        assert q == pytest.approx(-0.2, abs=1e-8)

    def test_infeasible_load_diverges(self, toy2):
        with pytest.raises(PowerFlowDivergence):
            solve_ac_region(toy2, toy2.regions[0], {2: (-100.0, 0.0)})


class TestDcRegion:
    def test_flat(self, toy5):
        st = solve_dc_region(toy5, toy5.region(1), {}, ref_node=4)
        assert st[4] == 1.0
        assert st[5] == pytest.approx(1.0, abs=1e-12)

    def test_quadratic_root(self, toy5):
        # 10 v (v - 1) = -0.1 has root (1 + sqrt(0.96)) / 2
        st = solve_dc_region(toy5, toy5.region(1), {5: -0.1}, ref_node=4)
        expected = (1.0 + math.sqrt(0.96)) / 2.0
        assert st[5] == pytest.approx(expected, abs=1e-10)
        assert dc_branch_flow(st[5], st[4], 10.0) == pytest.approx(-0.1, abs=1e-9)

    def test_overload_diverges(self, toy5):
        # max transferable power of g=10 from v=1 is g/4 = 2.5
        with pytest.raises(PowerFlowDivergence):
            solve_dc_region(toy5, toy5.region(1), {5: -3.0}, ref_node=4)


class TestHybridSolve:
    def test_lossless_no_load_flat(self, toy5):
        import dataclasses
        convs = tuple(dataclasses.replace(c, d1=0.0, d2=0.0, d3=0.0)
                      for c in toy5.converters)
        lossless = dataclasses.replace(toy5, converters=convs)
        res = solve_powerflow(lossless, InjectionProfile())
        for v in res.state.v.values():
            assert v == pytest.approx(1.0, abs=1e-9)
        assert res.converters[0].p_vsc == pytest.approx(0.0, abs=1e-9)

    def test_loaded_toy_conservation(self, toy5, toy5_loads):
        res = solve_powerflow(toy5, toy5_loads)
        sol = res.converters[0]
        assert sol.balance_residual <= 1e-6
        assert res.coupling_residual <= 1e-6
        # AC side supplies DC load + DC line loss + converter loss
        dc_line_loss = (dc_branch_flow(res.state.v[4], res.state.v[5], 10.0)
                        + dc_branch_flow(res.state.v[5], res.state.v[4], 10.0))
        assert -sol.p_vsc == pytest.approx(0.2 + dc_line_loss + sol.p_loss, abs=1e-6)
        assert abs(conservation_residual(toy5, toy5_loads, res)) <= 1e-6

    def test_case33_nominal(self, case33, case33_loads):
        res = solve_powerflow(case33, case33_loads)
        assert res.max_mismatch <= 1e-8
        assert res.coupling_residual <= 1e-6
        assert abs(conservation_residual(case33, case33_loads, res)) <= 1e-6
        assert min(res.state.v.values()) > 0.90
        assert max(res.state.v.values()) <= 1.0 + 1e-9

    def test_deterministic(self, case33, case33_loads):
        r1 = solve_powerflow(case33, case33_loads)
        r2 = solve_powerflow(case33, case33_loads)
        assert r1.state.v == r2.state.v
        assert r1.state.theta == r2.state.theta


def test_backsubstitution_property(case33, case33_loads):
    res = solve_powerflow(case33, case33_loads)
    assert res.max_mismatch <= 1e-8
