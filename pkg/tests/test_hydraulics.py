"""Steady-state solver against hand-computed networks and its own balance check."""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import parallel_inp, pump_inp, series_inp, two_node_inp
from wdnpress.errors import BadPumpCurve, ClosedLink, NonPositiveGeometry, NotConverged, SingularSystem
from wdnpress.hydraulics import (
    ControlSettings,
    HydraulicSolver,
    SolverConfig,
    check_balance,
    fit_pump_curve,
    friction_factor,
    headloss_coefficient,
    link_headloss,
    solve_steady_state,
)
from wdnpress.inp import parse_inp
from wdnpress.network import HeadlossFormula, LinkStatus, Pipe

HW = HeadlossFormula.HAZEN_WILLIAMS
DW = HeadlossFormula.DARCY_WEISBACH


def hw_loss(q: float, c: float, d: float, length: float) -> float:
    return 10.667 * c**-1.852 * d**-4.871 * length * abs(q) ** 1.852


class TestHeadlossCoefficient:
    def test_unit_identity(self) -> None:
        pipe = Pipe("p", "a", "b", length=100**1.852 / 10.667, diameter=1.0, roughness=100.0)
        assert headloss_coefficient(pipe, HW) == pytest.approx(1.0, rel=1e-12)

    def test_hand_value(self) -> None:
        # 10.667 * 130^-1.852 * 0.3^-4.871 * 1000, evaluated by hand
        pipe = Pipe("p", "a", "b", length=1000.0, diameter=0.3, roughness=130.0)
        assert headloss_coefficient(pipe, HW) == pytest.approx(457.0477495615209, rel=1e-12)

    @pytest.mark.parametrize("formula", [HW, DW])
    def test_linear_in_length(self, formula) -> None:
        a = Pipe("p", "a", "b", length=321.0, diameter=0.2, roughness=0.1 if formula == DW else 120)
        b = dataclasses.replace(a, length=642.0)
        assert headloss_coefficient(b, formula) == 2.0 * headloss_coefficient(a, formula)

    def test_darcy_geometric_factor(self) -> None:
        pipe = Pipe("p", "a", "b", length=50.0, diameter=0.1, roughness=1e-4)
        assert headloss_coefficient(pipe, DW) == pytest.approx(8 * 50 / (math.pi**2 * 9.80665 * 1e-5))

    def test_nonpositive(self) -> None:
        with pytest.raises(NonPositiveGeometry):
            headloss_coefficient(Pipe("p", "a", "b", length=0.0, diameter=0.1, roughness=100), HW)


class TestLinkHeadloss:
    def test_zero_flow(self, two_node) -> None:
        cfg = SolverConfig()
        h, dh = link_headloss(two_node, two_node.pipes[0], 0.0, cfg=cfg)
        r = headloss_coefficient(two_node.pipes[0], HW)
        assert h == 0.0
        assert dh == pytest.approx(1.852 * r * cfg.q_min**0.852)

    def test_unit_pipe(self) -> None:
        m = parse_inp(two_node_inp(length=100**1.852 / 10.667, diam_mm=1000.0, c=100.0))
        h, _ = link_headloss(m, m.pipes[0], 1.0)
        assert h == pytest.approx(1.0, rel=1e-12)

    def test_odd(self, two_node) -> None:
        h1, d1 = link_headloss(two_node, two_node.pipes[0], 0.03)
        h2, d2 = link_headloss(two_node, two_node.pipes[0], -0.03)
        assert h1 == -h2 and d1 == d2

    def test_closed(self) -> None:
        m = parse_inp(two_node_inp().replace("0  Open", "0  Closed"))
        with pytest.raises(ClosedLink):
            link_headloss(m, m.pipes[0], 0.0)

    def test_pump_rated_point(self) -> None:
        m = parse_inp(pump_inp(100.0, 20.0))
        h, _ = link_headloss(m, m.pumps[0], 0.1)
        assert -h == pytest.approx(20.0, abs=1e-12)

    def test_pump_speed_affinity(self) -> None:
        m = parse_inp(pump_inp(100.0, 20.0))
        h, _ = link_headloss(m, m.pumps[0], 0.0, pump_speed=0.8)
        assert -h == pytest.approx(0.64 * 20.0 * 4 / 3)

    @pytest.mark.parametrize("q", [1e-4, 3e-3, 0.02, 0.4])
    @pytest.mark.parametrize("formula", ["H-W", "D-W"])
    def test_slope_matches_difference(self, q: float, formula: str) -> None:
        rough = "0.26" if formula == "D-W" else "100"
        text = two_node_inp().replace("300.0  100.0", f"150.0  {rough}").replace("H-W", formula)
        text = text.replace("0  Open", "2.5  Open")
        m = parse_inp(text)
        step = q * 1e-6
        hp, _ = link_headloss(m, m.pipes[0], q + step)
        hm, _ = link_headloss(m, m.pipes[0], q - step)
        _, dh = link_headloss(m, m.pipes[0], q)
        assert dh == pytest.approx((hp - hm) / (2 * step), rel=1e-6)


class TestFrictionFactor:
    def test_laminar(self) -> None:
        f, _ = friction_factor(np.array([1000.0]), np.array([1e-3]))
        assert f[0] == pytest.approx(0.064)

    def test_turbulent_swamee_jain(self) -> None:
        f, _ = friction_factor(np.array([1e5]), np.array([1e-4]))
        ref = 0.25 / math.log10(1e-4 / 3.7 + 5.74 / 1e5**0.9) ** 2
        assert f[0] == pytest.approx(ref, rel=1e-14)

    def test_blend_continuous(self) -> None:
        f, _ = friction_factor(np.array([2000.0, 2000.0 + 1e-7, 4000.0 - 1e-7, 4000.0]), np.array([1e-3]))
        assert f[0] == pytest.approx(f[1], rel=1e-9)
        assert f[2] == pytest.approx(f[3], rel=1e-9)

    @pytest.mark.parametrize("re", [500.0, 2500.0, 3500.0, 1e4, 1e6])
    def test_derivative(self, re: float) -> None:
        eps = np.array([2e-4])
        step = re * 1e-7
        fp, _ = friction_factor(np.array([re + step]), eps)
        fm, _ = friction_factor(np.array([re - step]), eps)
        _, df = friction_factor(np.array([re]), eps)
        assert df[0] == pytest.approx((fp[0] - fm[0]) / (2 * step), rel=1e-5)


class TestPumpCurve:
    def test_single_point(self) -> None:
        c = fit_pump_curve([(0.1, 20.0)])
        assert (c.h0, c.m) == (pytest.approx(80 / 3), 2.0)
        assert c.gain(0.1) == pytest.approx(20.0)

    def test_three_point_exact(self) -> None:
        pts = [(0.0, 50.0), (0.1, 45.0), (0.2, 30.0)]
        c = fit_pump_curve(pts)
        for q, h in pts:
            assert c.gain(q) == pytest.approx(h, rel=1e-12)

    def test_multi_point_close(self) -> None:
        pts = [(0.0, 91.44), (0.12618, 89.0016), (0.25236, 82.296), (0.37854, 70.104), (0.50472, 55.1688)]
        c = fit_pump_curve(pts)
        assert max(abs(c.gain(q) - h) for q, h in pts) < 1.5

    def test_non_monotone(self) -> None:
        with pytest.raises(BadPumpCurve):
            fit_pump_curve([(0.0, 10.0), (0.1, 12.0), (0.2, 5.0)])

    def test_empty(self) -> None:
        with pytest.raises(BadPumpCurve):
            fit_pump_curve([])


class TestHandNetworks:
    def test_zero_demand(self) -> None:
        s = solve_steady_state(parse_inp(two_node_inp()))
        assert s.pressure[0] == pytest.approx(40.0, abs=1e-9)
        assert s.flow[0] == pytest.approx(0.0, abs=1e-12)

    def test_single_pipe_demand(self) -> None:
        s = solve_steady_state(parse_inp(two_node_inp(demand_lps=50.0)))
        # hand value of 10.667 * 100^-1.852 * 0.3^-4.871 * 1000 * 0.05^1.852
        assert s.pressure[0] == pytest.approx(40.0 - 2.8938572981091815, abs=1e-6)
        assert s.flow[0] == pytest.approx(0.05, abs=1e-9)

    def test_series(self) -> None:
        s = solve_steady_state(parse_inp(series_inp(20.0, 15.0)))
        h1 = hw_loss(0.035, 120, 0.25, 800)
        h2 = hw_loss(0.015, 110, 0.2, 600)
        assert s.pressure[0] == pytest.approx(60 - h1 - 5, abs=1e-6)
        assert s.pressure[1] == pytest.approx(60 - h1 - h2 - 2, abs=1e-6)

    def test_parallel_split(self) -> None:
        s = solve_steady_state(parse_inp(parallel_inp(80.0)))
        assert s.flow[0] == pytest.approx(0.04, abs=1e-9)
        assert s.flow[0] == pytest.approx(s.flow[1], abs=1e-12)
        assert s.pressure[0] == pytest.approx(30 - hw_loss(0.04, 100, 0.2, 500), abs=1e-6)

    def test_pump_lift(self) -> None:
        s = solve_steady_state(parse_inp(pump_inp(100.0, 20.0)))
        assert s.flow[-1] == pytest.approx(0.1, abs=1e-9)
        assert s.head[0] == pytest.approx(20.0, abs=1e-6)

    def test_fixed_heads_exact(self, anytown) -> None:
        s = solve_steady_state(anytown)
        nj = len(anytown.junctions)
        np.testing.assert_array_equal(s.head[nj:], anytown.fixed_heads())
        np.testing.assert_array_equal(s.pressure, s.head - anytown.node_elevations())


class TestBenchmarks:
    @pytest.mark.parametrize("name", ["anytown", "hanoi", "net1", "ltown"])
    def test_balance(self, name: str) -> None:
        from wdnpress.benchmarks import load_network

        m = load_network(name)
        s = solve_steady_state(m)
        b = check_balance(m, s)
        assert s.converged
        assert b.max_mass_residual <= 1e-6
        assert b.max_energy_residual <= 1e-4

    def test_anytown_near_reference(self, anytown) -> None:
        # EPANET 2.2 run of the same file (piecewise pump curve, so within 1 m)
        s = solve_steady_state(anytown)
        p = dict(zip(s.node_ids, s.pressure))
        for node, ref in [("20", 78.33), ("30", 50.4), ("120", 28.85), ("55", 41.1)]:
            assert abs(p[node] - ref) < 1.0


class TestBalanceCheck:
    def test_perturbed_flow(self) -> None:
        m = parse_inp(series_inp(20.0, 15.0))
        s = solve_steady_state(m)
        s.flow[1] += 0.01
        b = check_balance(m, s)
        assert b.mass_residual["J1"] == pytest.approx(-0.01, abs=1e-9)
        assert b.mass_residual["J2"] == pytest.approx(0.01, abs=1e-9)
        assert b.max_mass_residual == pytest.approx(0.01, abs=1e-9)


class TestStatusAndErrors:
    def test_isolated_junction(self) -> None:
        m = parse_inp(series_inp(1.0, 1.0))
        controls = ControlSettings.base(m)
        controls.link_status["P2"] = LinkStatus.CLOSED
        with pytest.raises(SingularSystem):
            solve_steady_state(m, controls)

    def test_not_converged_carries_state(self, anytown) -> None:
        with pytest.raises(NotConverged) as exc:
            solve_steady_state(anytown, cfg=SolverConfig(max_iterations=1))
        assert exc.value.state.converged is False
        assert exc.value.state.iterations == 1

    def test_check_valve_closes_on_reverse(self) -> None:
        text = """
[JUNCTIONS]
J1 0 10
[RESERVOIRS]
R1 40
R2 20
[PIPES]
P1 R1 J1 100 200 100
P2 R2 J1 100 200 100 0 CV
[OPTIONS]
Units LPS
"""
        s = solve_steady_state(parse_inp(text))
        assert not s.link_open[1] and s.flow[1] == 0.0
        assert s.flow[0] == pytest.approx(0.01, abs=1e-9)

    def test_pump_shuts_against_high_head(self) -> None:
        text = pump_inp(100.0, 20.0).replace("R1  0", "R1  0\nR2  200").replace(
            "P1  J1  J2", "P2 R2 J2 10 300 100\nP1  J1  J2"
        )
        s = solve_steady_state(parse_inp(text))
        pump = s.link_ids.index("PU1")
        assert not s.link_open[pump]

    def test_bad_controls_shape(self, anytown) -> None:
        c = ControlSettings.base(anytown)
        c.demands = c.demands[:-1]
        with pytest.raises(ValueError):
            solve_steady_state(anytown, c)


class TestProperties:
    def test_zero_demand_single_source(self) -> None:
        from wdnpress.benchmarks import load_network

        m = load_network("hanoi")
        c = ControlSettings.base(m).scaled(0.0)
        s = solve_steady_state(m, c)
        nj = len(m.junctions)
        np.testing.assert_allclose(s.pressure[:nj], m.reservoirs[0].head - m.node_elevations()[:nj], atol=1e-6)
        assert np.max(np.abs(s.flow)) < 1e-6

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.0, 200.0), st.floats(0.1, 50.0))
    def test_monotone_single_pipe(self, d: float, step: float) -> None:
        lo = solve_steady_state(parse_inp(two_node_inp(demand_lps=d)))
        hi = solve_steady_state(parse_inp(two_node_inp(demand_lps=d + step)))
        assert hi.pressure[0] < lo.pressure[0]

    def test_relabeling(self, anytown) -> None:
        perm = dataclasses.replace(anytown, junctions=anytown.junctions[::-1], pipes=anytown.pipes[::-1])
        a, b = solve_steady_state(anytown), solve_steady_state(perm)
        pa, pb = dict(zip(a.node_ids, a.pressure)), dict(zip(b.node_ids, b.pressure))
        for k in pa:
            assert pa[k] == pytest.approx(pb[k], abs=1e-6)

    def test_deterministic(self, anytown) -> None:
        solver = HydraulicSolver(anytown)
        a, b = solver.solve(), solve_steady_state(anytown)
        assert a.head.tobytes() == b.head.tobytes()
        assert a.flow.tobytes() == b.flow.tobytes()

    def test_state_json(self, two_node) -> None:
        js = solve_steady_state(two_node).to_json()
        assert js["nodes"]["J1"]["pressure"] == pytest.approx(40.0)
        assert js["converged"] is True
