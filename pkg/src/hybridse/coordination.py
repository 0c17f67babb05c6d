"""Distributed estimation loop and centralized baseline.

Each iteration solves every region against the neighbors' previous-iteration
boundary packets (Jacobi style, so regions can run in parallel), AC regions
recompute their converters' losses from the fresh estimate, and per-converter
Lagrange multipliers grow by xi * |boundary mismatch|.  The loop exits when
every converter's AC-side and DC-side power claims agree within tau, or after
the iteration cap.  Only BoundaryPacket fields ever cross a region boundary.

Per-iteration wall times are recorded as t_l = max over AC regions + max over
DC regions + algebra time, the parallel-execution accounting of the
coordination scheme.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .estimation import (BadDataReport, BoundaryTerm, EstimationResult, lnr_test,
                         solve_wlav_region, solve_wls)
from .grid import AC, DC, GridModel
from .measmodel import NonlinearModel, build_region_model, build_system_model
from .powerflow import ac_branch_flow, converter_loss
from .telemetry import MeasurementKind, MeasurementSet, build_region_H


@dataclass(frozen=True)
class BoundaryPacket:
    """The only data a region shares: its view of one converter's operating
    point at one iteration."""

    converter: int
    p_vsc: float
    q_vsc: float
    p_loss: float
    v_pcc: float
    iteration: int


@dataclass(frozen=True)
class CoordinationParams:
    lambda0: float = 0.0
    xi: float = 1.0
    tau: float = 1e-4
    max_iterations: int = 20
    nr_test: bool = True          # WLS variants only
    nr_threshold: float = 3.0

    def __post_init__(self):
        if self.xi <= 0 or self.tau <= 0 or self.max_iterations < 1:
            raise ValueError("xi and tau must be positive, max_iterations >= 1")


@dataclass
class IterationTiming:
    iteration: int
    t_total: float
    t_regions: dict[int, float]
    t_algebra: float


@dataclass
class SystemEstimate:
    method: str
    v: dict[int, float]
    theta: dict[int, float]
    regions: dict[int, EstimationResult]
    mismatch_history: dict[int, list[float]]
    lambdas: dict[int, float]
    iterations: int
    converged: bool
    timing: list[IterationTiming]
    packet_trace: list[BoundaryPacket] = field(default_factory=list)
    bad_data: dict = field(default_factory=dict)
    rerun: bool = False           # WLS loop repeated after bad-data removal

    @property
    def se_time(self) -> float:
        return sum(t.t_total for t in self.timing)

    def residual_map(self) -> dict[int, float]:
        """Global measurement index -> residual at the final estimate."""
        out: dict[int, float] = {}
        for result in self.regions.values():
            for idx, r in zip(result.meas_indices, result.residuals):
                if idx >= 0:
                    out[idx] = float(r)
        return out

    def max_mismatch(self) -> float:
        if not self.mismatch_history:
            return 0.0
        return max(hist[-1] for hist in self.mismatch_history.values())

    def dump_boundary_trace(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["iteration", "converter", "side", "p_vsc", "q_vsc",
                        "p_loss", "v_pcc"])
            for side, pkt in _trace_sides(self.packet_trace):
                w.writerow([pkt.iteration, pkt.converter, side, repr(pkt.p_vsc),
                            repr(pkt.q_vsc), repr(pkt.p_loss), repr(pkt.v_pcc)])


def _trace_sides(trace):
    # packets are appended AC-side then DC-side per converter per iteration
    for k, pkt in enumerate(trace):
        yield ("ac" if k % 2 == 0 else "dc"), pkt


# -- bootstrap ----------------------------------------------------------------


def _bootstrap_packets(grid: GridModel, ms: MeasurementSet):
    """Iteration-0 packets from the converters' own telemetry (or defaults)."""
    conv_p: dict[int, float] = {}
    conv_q: dict[int, float] = {}
    v_pcc: dict[int, float] = {}
    for m in ms:
        if m.kind is MeasurementKind.CONV_P and m.direction == "ac":
            conv_p[m.location[0]] = m.value
        elif m.kind is MeasurementKind.CONV_Q and m.direction == "ac":
            conv_q[m.location[0]] = m.value
        elif m.kind is MeasurementKind.AC_V_MAG:
            v_pcc[m.location[0]] = m.value
    ac_pkts, dc_pkts = {}, {}
    for conv in grid.converters:
        p = conv_p.get(conv.id, 0.0)
        q = conv_q.get(conv.id, conv.control.q_set)
        v = v_pcc.get(conv.aux_node, 1.0)
        loss, _ = converter_loss(p, q, v, (conv.d1, conv.d2, conv.d3))
        pkt = BoundaryPacket(conv.id, p, q, loss, v, 0)
        ac_pkts[conv.id] = pkt
        dc_pkts[conv.id] = pkt
    return ac_pkts, dc_pkts


def _boundary_terms(grid, region, lambdas, ac_pkts, dc_pkts):
    """BoundaryTerm per converter of a region, from neighbor packets only."""
    terms: dict[int, BoundaryTerm] = {}
    for cid, orient in region.boundary:
        if orient == "owns-ac-side":
            terms[cid] = BoundaryTerm(lam=lambdas[cid],
                                      neighbor_p=dc_pkts[cid].p_vsc)
        else:
            terms[cid] = BoundaryTerm(lam=lambdas[cid],
                                      neighbor_p=ac_pkts[cid].p_vsc,
                                      loss_const=ac_pkts[cid].p_loss)
    return terms


# -- DRSE ----------------------------------------------------------------------


def _solve_drse_region(model, terms, basis):
    """Regional WLAV solve; sees only its own model and BoundaryTerm values."""
    return solve_wlav_region(model, terms, basis=basis)


def run_drse(grid: GridModel, ms: MeasurementSet,
             params: CoordinationParams = CoordinationParams(),
             parallel: bool = False) -> SystemEstimate:
    """Distributed robust estimation: regional WLAV LPs under Lagrangian
    boundary coordination.  Non-convergence at the iteration cap is reported
    through the mismatch trace, not as a failure."""
    by_region = ms.by_region(grid)
    models = {r.id: build_region_H(grid, r, by_region[r.id]) for r in grid.regions}
    ac_regions = [r.id for r in grid.regions if r.kind == AC]
    dc_regions = [r.id for r in grid.regions if r.kind == DC]

    lambdas = {c.id: params.lambda0 for c in grid.converters}
    ac_pkts, dc_pkts = _bootstrap_packets(grid, ms)
    mismatch_hist: dict[int, list[float]] = {c.id: [] for c in grid.converters}
    timing: list[IterationTiming] = []
    trace: list[BoundaryPacket] = []
    results: dict[int, EstimationResult] = {}
    bases: dict[int, tuple | None] = {r.id: None for r in grid.regions}
    converged = not grid.converters
    iteration = 0

    for iteration in range(1, params.max_iterations + 1):
        t_regions: dict[int, float] = {}

        def solve_one(region):
            terms = _boundary_terms(grid, region, lambdas, ac_pkts, dc_pkts)
            t0 = time.perf_counter()
            result, sol = _solve_drse_region(models[region.id], terms,
                                             bases[region.id])
            return region.id, result, sol, time.perf_counter() - t0

        if parallel:
            with ThreadPoolExecutor(max_workers=len(grid.regions)) as pool:
                solved = list(pool.map(solve_one, grid.regions))
        else:
            solved = [solve_one(r) for r in grid.regions]
        for rid, result, sol, dt in solved:
            results[rid] = result
            bases[rid] = sol.basis
            t_regions[rid] = dt

        t0 = time.perf_counter()
        new_ac, new_dc = {}, {}
        for conv in grid.converters:
            ac_rid = grid.node(conv.aux_node).region
            dc_rid = grid.node(conv.dc_node).region
            ac_res, dc_res = results[ac_rid], results[dc_rid]
            p_ac = ac_res.boundary_p[conv.id]
            q_ac = float(models[ac_rid].boundary_q[conv.id] @ ac_res.x)
            v_ac = ac_res.v[conv.aux_node]
            loss, _ = converter_loss(p_ac, q_ac, v_ac, (conv.d1, conv.d2, conv.d3))
            pkt_ac = BoundaryPacket(conv.id, p_ac, q_ac, loss, v_ac, iteration)
            pkt_dc = BoundaryPacket(conv.id, dc_res.boundary_p[conv.id],
                                    conv.control.q_set, ac_pkts[conv.id].p_loss,
                                    dc_res.v[conv.dc_node], iteration)
            new_ac[conv.id], new_dc[conv.id] = pkt_ac, pkt_dc
            trace += [pkt_ac, pkt_dc]
            mismatch = abs(pkt_ac.p_vsc - pkt_dc.p_vsc)
            mismatch_hist[conv.id].append(mismatch)
            lambdas[conv.id] += params.xi * mismatch
        ac_pkts, dc_pkts = new_ac, new_dc
        t_algebra = time.perf_counter() - t0

        t_ac = max((t_regions[r] for r in ac_regions), default=0.0)
        t_dc = max((t_regions[r] for r in dc_regions), default=0.0)
        timing.append(IterationTiming(iteration, t_ac + t_dc + t_algebra,
                                      t_regions, t_algebra))

        worst = max((mismatch_hist[c.id][-1] for c in grid.converters), default=0.0)
        if worst <= params.tau:
            converged = True
            break

    v, theta = _merge_states(grid, results)
    return SystemEstimate(method="drse", v=v, theta=theta, regions=results,
                          mismatch_history=mismatch_hist, lambdas=lambdas,
                          iterations=iteration, converged=converged,
                          timing=timing, packet_trace=trace)


# -- DWLS ----------------------------------------------------------------------


def run_dwls(grid: GridModel, ms: MeasurementSet,
             params: CoordinationParams = CoordinationParams(),
             parallel: bool = False) -> SystemEstimate:
    """Distributed nonlinear WLS under the same partition and packet exchange,
    with a quadratic boundary penalty and a per-region normalized-residual
    test; any rejection triggers one full re-run on the cleaned set."""
    estimate, reports = _dwls_pass(grid, ms, params, parallel)
    estimate.bad_data = reports
    if params.nr_test and any(rep.any_flagged for rep in reports.values()):
        flagged = {idx for rep in reports.values() for idx, _ in rep.flagged}
        kept = [m for i, m in enumerate(ms.measurements) if i not in flagged]
        # keep global indices stable for downstream scoring
        keep_idx = [i for i in range(len(ms.measurements)) if i not in flagged]
        cleaned = MeasurementSet(kept, ms.corrupt_indices)
        cleaned_pairs = {new: old for new, old in enumerate(keep_idx)}
        second, _ = _dwls_pass(grid, cleaned, params, parallel,
                               index_map=cleaned_pairs)
        second.bad_data = reports
        second.rerun = True
        return second
    return estimate


def _dwls_pass(grid, ms, params, parallel, index_map=None):
    by_region = ms.by_region(grid)
    models: dict[int, NonlinearModel] = {}
    boundary_rows: dict[int, dict[int, int]] = {}
    for region in grid.regions:
        pairs = by_region[region.id]
        if index_map is not None:
            pairs = [(index_map[i], m) for i, m in pairs]
        model = build_region_model(grid, region, pairs)
        rows = {}
        for cid, orient in region.boundary:
            conv = grid.converter(cid)
            if orient == "owns-ac-side":
                spec = ("ac_flow", conv.aux_node, conv.ac_node,
                        conv.coupling_r, conv.coupling_x, "p")
            else:
                spec = ("var", "pdjc", cid)
            rows[cid] = len(model.rows)
            model.append_row(spec, 0.0, 1.0, "boundary")
        models[region.id] = model
        boundary_rows[region.id] = rows

    ac_regions = [r.id for r in grid.regions if r.kind == AC]
    dc_regions = [r.id for r in grid.regions if r.kind == DC]
    lambdas = {c.id: params.lambda0 for c in grid.converters}
    ac_pkts, dc_pkts = _bootstrap_packets(grid, ms)
    mismatch_hist: dict[int, list[float]] = {c.id: [] for c in grid.converters}
    timing: list[IterationTiming] = []
    trace: list[BoundaryPacket] = []
    results: dict[int, EstimationResult] = {}
    warm: dict[int, np.ndarray | None] = {r.id: None for r in grid.regions}
    converged = not grid.converters
    iteration = 0

    for iteration in range(1, params.max_iterations + 1):
        t_regions: dict[int, float] = {}

        def solve_one(region):
            model = models[region.id]
            terms = _boundary_terms(grid, region, lambdas, ac_pkts, dc_pkts)
            overrides = {}
            for cid, term in terms.items():
                row = boundary_rows[region.id][cid]
                model.z[row] = term.neighbor_p + term.loss_const
                overrides[row] = term.lam
            t0 = time.perf_counter()
            result = solve_wls(model, x0=warm[region.id],
                               weight_overrides=overrides)
            return region.id, result, time.perf_counter() - t0

        if parallel:
            with ThreadPoolExecutor(max_workers=len(grid.regions)) as pool:
                solved = list(pool.map(solve_one, grid.regions))
        else:
            solved = [solve_one(r) for r in grid.regions]
        for rid, result, dt in solved:
            results[rid] = result
            warm[rid] = result.x
            t_regions[rid] = dt

        t0 = time.perf_counter()
        new_ac, new_dc = {}, {}
        for conv in grid.converters:
            ac_rid = grid.node(conv.aux_node).region
            dc_rid = grid.node(conv.dc_node).region
            ac_res, dc_res = results[ac_rid], results[dc_rid]
            p_ac, q_ac = ac_branch_flow(
                ac_res.v[conv.aux_node], ac_res.theta[conv.aux_node],
                ac_res.v[conv.ac_node], ac_res.theta[conv.ac_node],
                conv.coupling_r, conv.coupling_x)
            v_ac = ac_res.v[conv.aux_node]
            loss, _ = converter_loss(p_ac, q_ac, v_ac, (conv.d1, conv.d2, conv.d3))
            pkt_ac = BoundaryPacket(conv.id, p_ac, q_ac, loss, v_ac, iteration)
            p_dc = dc_res.conv_vars[("pdjc", conv.id)] - ac_pkts[conv.id].p_loss
            pkt_dc = BoundaryPacket(conv.id, p_dc, conv.control.q_set,
                                    ac_pkts[conv.id].p_loss,
                                    dc_res.v[conv.dc_node], iteration)
            new_ac[conv.id], new_dc[conv.id] = pkt_ac, pkt_dc
            trace += [pkt_ac, pkt_dc]
            mismatch = abs(pkt_ac.p_vsc - pkt_dc.p_vsc)
            mismatch_hist[conv.id].append(mismatch)
            lambdas[conv.id] += params.xi * mismatch
        ac_pkts, dc_pkts = new_ac, new_dc
        t_algebra = time.perf_counter() - t0

        t_ac = max((t_regions[r] for r in ac_regions), default=0.0)
        t_dc = max((t_regions[r] for r in dc_regions), default=0.0)
        timing.append(IterationTiming(iteration, t_ac + t_dc + t_algebra,
                                      t_regions, t_algebra))

        worst = max((mismatch_hist[c.id][-1] for c in grid.converters), default=0.0)
        if worst <= params.tau:
            converged = True
            break

    reports: dict[int, BadDataReport] = {}
    if params.nr_test:
        for region in grid.regions:
            out = lnr_test(models[region.id], results[region.id],
                           threshold=params.nr_threshold)
            reports[region.id] = out.report
            results[region.id] = out.result

    v, theta = _merge_states(grid, results)
    estimate = SystemEstimate(method="dwls", v=v, theta=theta, regions=results,
                              mismatch_history=mismatch_hist, lambdas=lambdas,
                              iterations=iteration, converged=converged,
                              timing=timing, packet_trace=trace)
    return estimate, reports


# -- CWLS ----------------------------------------------------------------------


def run_cwls(grid: GridModel, ms: MeasurementSet, nr_test: bool = True,
             nr_threshold: float = 3.0) -> SystemEstimate:
    """Centralized nonlinear WLS over all regions jointly, with the converter
    balance enforced by high-weight virtual rows and a global NR test."""
    model = build_system_model(grid, list(enumerate(ms.measurements)))
    t0 = time.perf_counter()
    result = solve_wls(model)
    report = None
    if nr_test:
        out = lnr_test(model, result, threshold=nr_threshold)
        report = out.report
        result = out.result
    wall = time.perf_counter() - t0

    v = dict(result.v)
    theta = dict(result.theta)
    estimate = SystemEstimate(
        method="cwls", v=v, theta=theta, regions={-1: result},
        mismatch_history={}, lambdas={}, iterations=result.iterations,
        converged=result.converged,
        timing=[IterationTiming(1, wall, {-1: wall}, 0.0)])
    if report is not None:
        estimate.bad_data = {-1: report}
    return estimate


def _merge_states(grid: GridModel, results: dict[int, EstimationResult]):
    v: dict[int, float] = {}
    theta: dict[int, float] = {}
    for region in grid.regions:
        res = results[region.id]
        for node in region.nodes:
            v[node] = res.v[node]
            if grid.node(node).kind == AC:
                theta[node] = res.theta[node]
    return v, theta
