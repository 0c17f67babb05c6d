"""Measurement definitions and measurement functions.

Covers the nonlinear measurement functions (branch flows, injections, voltage
magnitudes, converter powers), their analytic Jacobians for nonlinear
estimation, the linear measurement rows over squared AC voltage magnitudes /
DC voltages used by the robust regional estimator, telemetry synthesis on the
SCADA / smart-meter timescales, and gross-error injection for the bad-data
case studies.

The linear AC model works in ``(U, theta)`` with ``U = V^2``; voltage
magnitude readings are squared on entry and their sigma mapped by first-order
propagation ``sigma_U = 2 V sigma_V``.  DC regions keep ``V`` directly and
gain one extra variable per boundary converter: the power the region feeds
into that converter.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .grid import AC, DC, Converter, GridModel, Region
from .powerflow import (ConverterSolution, SystemState, ac_branch_flow,
                        converter_loss, dc_branch_flow)


class TelemetryError(ValueError):
    pass


class MeasurementKind(Enum):
    AC_P_FLOW = "ac_p_flow"
    AC_Q_FLOW = "ac_q_flow"
    AC_P_INJ = "ac_p_inj"
    AC_Q_INJ = "ac_q_inj"
    AC_V_MAG = "ac_v_mag"
    DC_P_FLOW = "dc_p_flow"
    DC_P_INJ = "dc_p_inj"
    DC_V_MAG = "dc_v_mag"
    CONV_P = "conv_p"
    CONV_Q = "conv_q"
    ZERO_P_INJ = "zero_p_inj"
    ZERO_Q_INJ = "zero_q_inj"


FLOW_KINDS = {MeasurementKind.AC_P_FLOW, MeasurementKind.AC_Q_FLOW,
              MeasurementKind.DC_P_FLOW}
NODE_KINDS = {MeasurementKind.AC_P_INJ, MeasurementKind.AC_Q_INJ,
              MeasurementKind.AC_V_MAG, MeasurementKind.DC_P_INJ,
              MeasurementKind.DC_V_MAG, MeasurementKind.ZERO_P_INJ,
              MeasurementKind.ZERO_Q_INJ}
CONV_KINDS = {MeasurementKind.CONV_P, MeasurementKind.CONV_Q}

SOURCE_SCADA = "scada"
SOURCE_SMART_METER = "smart_meter"
SOURCE_PSEUDO = "pseudo"
SOURCE_DNN = "dnn"
SOURCE_VIRTUAL_ZERO = "virtual_zero"


@dataclass(frozen=True)
class Measurement:
    kind: MeasurementKind
    location: tuple[int, ...]   # (node,) | (from, to) | (converter,)
    direction: str              # fwd/rev for flows, ac/dc for converter kinds
    value: float
    sigma: float
    source: str
    timestamp: float = 0.0


class MeasurementSet:
    """Ordered measurements plus a per-region index and an audit trail.

    ``corrupt_indices`` records gross-error injections for scoring; the
    estimators never read it.
    """

    def __init__(self, measurements: list[Measurement],
                 corrupt_indices: tuple[int, ...] = ()):
        self.measurements = list(measurements)
        self.corrupt_indices = tuple(corrupt_indices)

    def __len__(self) -> int:
        return len(self.measurements)

    def __iter__(self):
        return iter(self.measurements)

    def __getitem__(self, idx: int) -> Measurement:
        return self.measurements[idx]

    def region_of(self, m: Measurement, grid: GridModel) -> int:
        if m.kind in NODE_KINDS:
            return grid.node(m.location[0]).region
        if m.kind in FLOW_KINDS:
            return grid.node(m.location[0]).region
        conv = grid.converter(m.location[0])
        if m.direction == "dc":
            return grid.node(conv.dc_node).region
        return grid.node(conv.aux_node).region

    def by_region(self, grid: GridModel) -> dict[int, list[tuple[int, Measurement]]]:
        """Stable partition of the set: region id -> [(global index, measurement)]."""
        out: dict[int, list[tuple[int, Measurement]]] = {r.id: [] for r in grid.regions}
        for idx, m in enumerate(self.measurements):
            out[self.region_of(m, grid)].append((idx, m))
        return out

    def replaced(self, idx: int, value: float) -> "MeasurementSet":
        ms = list(self.measurements)
        ms[idx] = replace(ms[idx], value=value)
        return MeasurementSet(ms, self.corrupt_indices)

    # -- CSV ----------------------------------------------------------------

    CSV_HEADER = "kind,location,direction,value,sigma,source,timestamp"

    def to_csv(self, path: str | Path) -> None:
        lines = [self.CSV_HEADER]
        for m in self.measurements:
            loc = "-".join(str(x) for x in m.location)
            lines.append(f"{m.kind.value},{loc},{m.direction},{m.value!r},"
                         f"{m.sigma!r},{m.source},{m.timestamp!r}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> "MeasurementSet":
        out = []
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                out.append(Measurement(
                    kind=MeasurementKind(row["kind"]),
                    location=tuple(int(x) for x in row["location"].split("-")),
                    direction=row["direction"],
                    value=float(row["value"]),
                    sigma=float(row["sigma"]),
                    source=row["source"],
                    timestamp=float(row["timestamp"])))
        return cls(out)


# -- nonlinear evaluation -----------------------------------------------------


def _branch_params_ac(grid: GridModel, a: int, b: int) -> tuple[float, float]:
    for ln in grid.ac_lines:
        if {ln.from_node, ln.to_node} == {a, b}:
            return ln.r, ln.x
    for c in grid.converters:
        if {c.aux_node, c.ac_node} == {a, b}:
            return c.coupling_r, c.coupling_x
    raise TelemetryError(f"no AC branch between {a} and {b}")


def _branch_params_dc(grid: GridModel, a: int, b: int) -> float:
    for ln in grid.dc_lines:
        if {ln.from_node, ln.to_node} == {a, b}:
            return ln.g
    raise TelemetryError(f"no DC branch between {a} and {b}")


def _flow_ends(m: Measurement) -> tuple[int, int]:
    a, b = m.location
    return (a, b) if m.direction != "rev" else (b, a)


def _conv_flow(grid: GridModel, state: SystemState, conv: Converter) -> tuple[float, float]:
    return ac_branch_flow(state.v[conv.aux_node], state.theta[conv.aux_node],
                          state.v[conv.ac_node], state.theta[conv.ac_node],
                          conv.coupling_r, conv.coupling_x)


def _node_injection(grid: GridModel, state: SystemState, node: int) -> tuple[float, float]:
    n = grid.node(node)
    if n.kind == AC:
        p = q = 0.0
        for other, r, x in grid.incident_ac_branches(node):
            fp, fq = ac_branch_flow(state.v[node], state.theta[node],
                                    state.v[other], state.theta[other], r, x)
            p += fp
            q += fq
        return p, q
    p = sum(dc_branch_flow(state.v[node], state.v[other], g)
            for other, g in grid.incident_dc_branches(node))
    # local injection at a converter terminal excludes the converter draw
    for conv in grid.converters_at_dc_node(node):
        fp, fq = _conv_flow(grid, state, conv)
        loss, _ = converter_loss(fp, fq, state.v[conv.aux_node],
                                 (conv.d1, conv.d2, conv.d3))
        p += fp + loss
    return p, 0.0


def eval_h_nonlinear(grid: GridModel, state: SystemState, m: Measurement) -> float:
    """Physical value of a measurement at a state, powerflow-consistent."""
    k = m.kind
    if k is MeasurementKind.AC_V_MAG:
        node = m.location[0]
        if grid.node(node).kind != AC:
            raise TelemetryError(f"AC_V_MAG at non-AC node {node}")
        return state.v[node]
    if k is MeasurementKind.DC_V_MAG:
        node = m.location[0]
        if grid.node(node).kind != DC:
            raise TelemetryError(f"DC_V_MAG at non-DC node {node}")
        return state.v[node]
    if k in (MeasurementKind.AC_P_FLOW, MeasurementKind.AC_Q_FLOW):
        f, t = _flow_ends(m)
        r, x = _branch_params_ac(grid, f, t)
        p, q = ac_branch_flow(state.v[f], state.theta[f], state.v[t], state.theta[t], r, x)
        return p if k is MeasurementKind.AC_P_FLOW else q
    if k is MeasurementKind.DC_P_FLOW:
        f, t = _flow_ends(m)
        g = _branch_params_dc(grid, f, t)
        return dc_branch_flow(state.v[f], state.v[t], g)
    if k in (MeasurementKind.AC_P_INJ, MeasurementKind.ZERO_P_INJ):
        return _node_injection(grid, state, m.location[0])[0]
    if k in (MeasurementKind.AC_Q_INJ, MeasurementKind.ZERO_Q_INJ):
        node = m.location[0]
        if grid.node(node).kind != AC:
            raise TelemetryError(f"reactive injection at non-AC node {node}")
        return _node_injection(grid, state, node)[1]
    if k is MeasurementKind.DC_P_INJ:
        node = m.location[0]
        if grid.node(node).kind != DC:
            raise TelemetryError(f"DC_P_INJ at non-DC node {node}")
        return _node_injection(grid, state, node)[0]
    if k in CONV_KINDS:
        conv = grid.converter(m.location[0])
        p, q = _conv_flow(grid, state, conv)
        if m.direction == "dc":
            if k is MeasurementKind.CONV_Q:
                raise TelemetryError("CONV_Q has no DC side")
            loss, _ = converter_loss(p, q, state.v[conv.aux_node],
                                     (conv.d1, conv.d2, conv.d3))
            return p + loss
        return p if k is MeasurementKind.CONV_P else q
    raise TelemetryError(f"unsupported kind {k}")


# -- linear model ---------------------------------------------------------------


def linear_row_ac_flow(r: float, x: float) -> tuple[float, float]:
    """Coefficients of the linear P-flow row: ``a`` on (U_f - U_t), ``c`` on
    (theta_f - theta_t), with P = a dU + c dth.  The Q row reuses them as
    Q = (x-coefficient) dU - (r-coefficient) dth; see :func:`_add_flow_row`.
    """
    d = r * r + x * x
    return r / (2.0 * d), x / d


def linear_row_dc_flow(g: float) -> float:
    """First-order DC flow about V=1: P = g (V_f - V_t)."""
    return g


@dataclass
class LinearRegionModel:
    """Constant measurement matrix of one region: z ~ H x + const.

    AC regions: x = [U per node, theta per non-reference node].
    DC regions: x = [V per node, draw per boundary converter].
    """

    region_id: int
    kind: str
    labels: list[tuple[str, int]]
    index: dict[tuple[str, int], int]
    H: np.ndarray
    const: np.ndarray
    z: np.ndarray
    sigma: np.ndarray
    sources: list[str]
    zero_mask: np.ndarray
    meas_indices: list[int]          # positions in the parent MeasurementSet
    measurements: list[Measurement]
    angle_ref: int | None
    boundary: dict[int, np.ndarray]    # converter id -> row of its AC-side power
    boundary_q: dict[int, np.ndarray]  # reactive companion (AC regions only)

    @property
    def n_states(self) -> int:
        return len(self.labels)

    @property
    def scope(self) -> str:
        return f"region:{self.region_id}"

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return self.H @ x + self.const

    # estimator-facing interface, shared with the nonlinear model
    def h(self, x: np.ndarray) -> np.ndarray:
        return self.H @ x + self.const

    def jac(self, x: np.ndarray) -> np.ndarray:
        return self.H

    def h_jac(self, x: np.ndarray, with_jac: bool = True):
        return self.h(x), (self.H if with_jac else None)

    def x0(self) -> np.ndarray:
        x = np.zeros(self.n_states)
        for (tag, _), col in self.index.items():
            if tag in ("u", "v"):
                x[col] = 1.0
        return x

    def clone(self) -> "LinearRegionModel":
        import copy
        out = copy.copy(self)
        out.H = np.array(self.H)
        out.const = np.array(self.const)
        out.z = np.array(self.z)
        out.sigma = np.array(self.sigma)
        out.sources = list(self.sources)
        out.zero_mask = np.array(self.zero_mask)
        out.meas_indices = list(self.meas_indices)
        out.measurements = list(self.measurements)
        return out

    def drop_row(self, i: int) -> None:
        self.H = np.delete(self.H, i, axis=0)
        self.const = np.delete(self.const, i)
        self.z = np.delete(self.z, i)
        self.sigma = np.delete(self.sigma, i)
        self.zero_mask = np.delete(self.zero_mask, i)
        self.sources = self.sources[:i] + self.sources[i + 1:]
        self.meas_indices = self.meas_indices[:i] + self.meas_indices[i + 1:]
        self.measurements = self.measurements[:i] + self.measurements[i + 1:]

    def truth_vector(self, state: SystemState,
                     converters: dict[int, ConverterSolution] | None = None) -> np.ndarray:
        x = np.zeros(self.n_states)
        for (tag, key), col in self.index.items():
            if tag == "u":
                x[col] = state.v[key] ** 2
            elif tag == "th":
                x[col] = state.theta[key]
            elif tag == "v":
                x[col] = state.v[key]
            elif tag == "pconv":
                if converters is None:
                    raise TelemetryError("converter solution needed for pconv truth")
                x[col] = converters[key].p_djc
        return x

    def extract_state(self, x: np.ndarray) -> tuple[dict[int, float], dict[int, float], dict[int, float]]:
        """x -> (v by node, theta by node, converter draw by id)."""
        v: dict[int, float] = {}
        theta: dict[int, float] = {}
        pconv: dict[int, float] = {}
        for (tag, key), col in self.index.items():
            if tag == "u":
                v[key] = math.sqrt(max(float(x[col]), 1e-12))
            elif tag == "th":
                theta[key] = float(x[col])
            elif tag == "v":
                v[key] = float(x[col])
            elif tag == "pconv":
                pconv[key] = float(x[col])
        if self.kind == AC and self.angle_ref is not None:
            theta[self.angle_ref] = 0.0
        return v, theta, pconv


def _ac_labels(grid: GridModel, region: Region) -> tuple[list, int]:
    ref = grid.angle_reference(region.id)
    nodes = sorted(region.nodes)
    labels = [("u", n) for n in nodes]
    labels += [("th", n) for n in nodes if n != ref]
    return labels, ref


def _dc_labels(grid: GridModel, region: Region) -> list:
    labels = [("v", n) for n in sorted(region.nodes)]
    for cid, orient in region.boundary:
        if orient == "owns-dc-side":
            labels.append(("pconv", cid))
    return labels


def build_region_H(grid: GridModel, region: Region,
                   measurements: list[tuple[int, Measurement]]) -> LinearRegionModel:
    """Assemble the constant regional matrix, one row per measurement.

    Voltage-magnitude readings are mapped to U-space (value squared, sigma
    by first-order propagation).  Injection rows are sums of their incident
    flow rows; zero-injection rows are flagged exact.
    """
    if region.kind == AC:
        labels, ref = _ac_labels(grid, region)
    else:
        labels, ref = _dc_labels(grid, region), None
    index = {lab: k for k, lab in enumerate(labels)}
    n = len(labels)

    def u_col(node):
        return index.get(("u", node))

    def th_col(node):
        return index.get(("th", node))

    def add_ac_flow(row, f, t, r, x, which, sign=1.0):
        a, c = linear_row_ac_flow(r, x)
        if which == "p":
            cu, cth = a, c
        else:
            d = r * r + x * x
            cu, cth = x / (2.0 * d), -r / d
        for node, s in ((f, sign), (t, -sign)):
            row[u_col(node)] += s * cu
            tc = th_col(node)
            if tc is not None:
                row[tc] += s * cth

    def add_dc_flow(row, f, t, g, sign=1.0):
        row[index[("v", f)]] += sign * g
        row[index[("v", t)]] -= sign * g

    def check_node(node):
        if node not in region.nodes:
            raise TelemetryError(f"measurement at node {node} outside region {region.id}")

    rows = []
    z = []
    sig = []
    sources = []
    zero = []
    midx = []
    mlist = []
    for gidx, m in measurements:
        row = np.zeros(n)
        value, sigma = m.value, m.sigma
        k = m.kind
        if k is MeasurementKind.AC_V_MAG:
            check_node(m.location[0])
            row[u_col(m.location[0])] = 1.0
            value = m.value * m.value
            sigma = 2.0 * abs(m.value) * m.sigma
        elif k is MeasurementKind.DC_V_MAG:
            check_node(m.location[0])
            row[index[("v", m.location[0])]] = 1.0
        elif k in (MeasurementKind.AC_P_FLOW, MeasurementKind.AC_Q_FLOW):
            f, t = _flow_ends(m)
            check_node(f), check_node(t)
            r, x = _branch_params_ac(grid, f, t)
            add_ac_flow(row, f, t, r, x, "p" if k is MeasurementKind.AC_P_FLOW else "q")
        elif k is MeasurementKind.DC_P_FLOW:
            f, t = _flow_ends(m)
            check_node(f), check_node(t)
            add_dc_flow(row, f, t, _branch_params_dc(grid, f, t))
        elif k in (MeasurementKind.AC_P_INJ, MeasurementKind.AC_Q_INJ,
                   MeasurementKind.ZERO_P_INJ, MeasurementKind.ZERO_Q_INJ,
                   MeasurementKind.DC_P_INJ):
            node = m.location[0]
            check_node(node)
            if region.kind == AC:
                which = "p" if k in (MeasurementKind.AC_P_INJ, MeasurementKind.ZERO_P_INJ) else "q"
                for other, r, x in grid.incident_ac_branches(node):
                    add_ac_flow(row, node, other, r, x, which)
            else:
                if k in (MeasurementKind.AC_Q_INJ, MeasurementKind.ZERO_Q_INJ):
                    raise TelemetryError(f"reactive injection at DC node {node}")
                for other, g in grid.incident_dc_branches(node):
                    add_dc_flow(row, node, other, g)
                for conv in grid.converters_at_dc_node(node):
                    row[index[("pconv", conv.id)]] += 1.0
        elif k in CONV_KINDS:
            conv = grid.converter(m.location[0])
            if m.direction == "dc":
                if k is MeasurementKind.CONV_Q:
                    raise TelemetryError("CONV_Q has no DC side")
                if ("pconv", conv.id) not in index:
                    raise TelemetryError(
                        f"converter {conv.id} not on region {region.id} boundary")
                row[index[("pconv", conv.id)]] = 1.0
            else:
                check_node(conv.aux_node)
                add_ac_flow(row, conv.aux_node, conv.ac_node,
                            conv.coupling_r, conv.coupling_x,
                            "p" if k is MeasurementKind.CONV_P else "q")
        else:
            raise TelemetryError(f"unsupported kind {k}")
        rows.append(row)
        z.append(value)
        sig.append(sigma)
        sources.append(m.source)
        zero.append(m.source == SOURCE_VIRTUAL_ZERO)
        midx.append(gidx)
        mlist.append(m)

    boundary: dict[int, np.ndarray] = {}
    boundary_q: dict[int, np.ndarray] = {}
    for cid, orient in region.boundary:
        conv = grid.converter(cid)
        brow = np.zeros(n)
        if orient == "owns-ac-side":
            add_ac_flow(brow, conv.aux_node, conv.ac_node,
                        conv.coupling_r, conv.coupling_x, "p")
            qrow = np.zeros(n)
            add_ac_flow(qrow, conv.aux_node, conv.ac_node,
                        conv.coupling_r, conv.coupling_x, "q")
            boundary_q[cid] = qrow
        else:
            brow[index[("pconv", cid)]] = 1.0
        boundary[cid] = brow

    m_count = len(rows)
    return LinearRegionModel(
        region_id=region.id, kind=region.kind, labels=labels, index=index,
        H=np.vstack(rows) if rows else np.zeros((0, n)),
        const=np.zeros(m_count), z=np.asarray(z, dtype=float),
        sigma=np.asarray(sig, dtype=float), sources=sources,
        zero_mask=np.asarray(zero, dtype=bool), meas_indices=midx,
        measurements=mlist, angle_ref=ref, boundary=boundary,
        boundary_q=boundary_q)


# -- telemetry synthesis --------------------------------------------------------


@dataclass(frozen=True)
class ScheduleConfig:
    """Measurement cadence and accuracy.  ``*_pct`` are fractional
    uncertainties read as 3-sigma bounds (0.01 = 1%)."""

    scada_period: float = 900.0
    smart_meter_period: float = 3600.0
    scada_vmag_pct: float = 0.01
    scada_power_pct: float = 0.02
    smart_meter_pct: float = 0.02
    sigma_floor: float = 1e-4
    scada_ac_branches: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self):
        if self.scada_period <= 0 or self.smart_meter_period <= 0:
            raise ValueError("periods must be positive")
        if min(self.scada_vmag_pct, self.scada_power_pct, self.smart_meter_pct) < 0:
            raise ValueError("uncertainty percentages must be non-negative")


def default_scada_branches(grid: GridModel) -> tuple[tuple[int, int], ...]:
    """AC lines incident to the substation, measured at their upstream end."""
    out = []
    for ln in grid.ac_lines:
        if ln.from_node == grid.slack or ln.to_node == grid.slack:
            out.append((ln.from_node, ln.to_node))
    return tuple(out)


def _noisy(value: float, pct: float, floor: float, rng) -> tuple[float, float]:
    sigma = max(pct / 3.0 * abs(value), floor)
    if pct > 0:
        value = value + rng.normal(0.0, sigma)
    return value, sigma


def simulate_measurements(grid: GridModel, state: SystemState,
                          schedule: ScheduleConfig, t: float,
                          seed: int | np.random.Generator = 0) -> MeasurementSet:
    """Synthesize the telemetry visible at scenario time ``t`` (seconds).

    SCADA entries appear at multiples of the SCADA period, smart-meter
    entries at multiples of the smart-meter period; zero-injection virtual
    measurements are always present.  Noise is Gaussian with
    sigma = pct/3 * |true value|, floored at ``sigma_floor``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out: list[Measurement] = []

    def emit(kind, location, direction, source, pct):
        probe = Measurement(kind=kind, location=location, direction=direction,
                            value=0.0, sigma=1.0, source=source, timestamp=t)
        true = eval_h_nonlinear(grid, state, probe)
        value, sigma = _noisy(true, pct, schedule.sigma_floor, rng)
        out.append(replace(probe, value=value, sigma=sigma))

    scada_tick = (t % schedule.scada_period) == 0
    sm_tick = (t % schedule.smart_meter_period) == 0

    if scada_tick:
        emit(MeasurementKind.AC_V_MAG, (grid.slack,), "", SOURCE_SCADA,
             schedule.scada_vmag_pct)
        for conv in grid.converters:
            emit(MeasurementKind.AC_V_MAG, (conv.aux_node,), "", SOURCE_SCADA,
                 schedule.scada_vmag_pct)
        for conv in grid.converters:
            emit(MeasurementKind.DC_V_MAG, (conv.dc_node,), "", SOURCE_SCADA,
                 schedule.scada_vmag_pct)
        branches = schedule.scada_ac_branches
        if branches is None:
            branches = default_scada_branches(grid)
        for f, tno in branches:
            emit(MeasurementKind.AC_P_FLOW, (f, tno), "fwd", SOURCE_SCADA,
                 schedule.scada_power_pct)
            emit(MeasurementKind.AC_Q_FLOW, (f, tno), "fwd", SOURCE_SCADA,
                 schedule.scada_power_pct)
        for ln in grid.dc_lines:
            emit(MeasurementKind.DC_P_FLOW, (ln.from_node, ln.to_node), "fwd",
                 SOURCE_SCADA, schedule.scada_power_pct)
        for conv in grid.converters:
            emit(MeasurementKind.CONV_P, (conv.id,), "ac", SOURCE_SCADA,
                 schedule.scada_power_pct)
        for conv in grid.converters:
            emit(MeasurementKind.CONV_Q, (conv.id,), "ac", SOURCE_SCADA,
                 schedule.scada_power_pct)
        # converter-bay line measurements: the PCC coupling branch seen from
        # the grid side, giving the converter power verifiable redundancy
        for conv in grid.converters:
            emit(MeasurementKind.AC_P_FLOW, (conv.ac_node, conv.aux_node), "fwd",
                 SOURCE_SCADA, schedule.scada_power_pct)
            emit(MeasurementKind.AC_Q_FLOW, (conv.ac_node, conv.aux_node), "fwd",
                 SOURCE_SCADA, schedule.scada_power_pct)

    if sm_tick:
        for node in grid.injection_nodes():
            if node.kind == AC:
                emit(MeasurementKind.AC_P_INJ, (node.id,), "", SOURCE_SMART_METER,
                     schedule.smart_meter_pct)
                emit(MeasurementKind.AC_Q_INJ, (node.id,), "", SOURCE_SMART_METER,
                     schedule.smart_meter_pct)
            else:
                emit(MeasurementKind.DC_P_INJ, (node.id,), "", SOURCE_SMART_METER,
                     schedule.smart_meter_pct)

    for node in grid.junction_nodes():
        if node.kind == AC:
            out.append(Measurement(MeasurementKind.ZERO_P_INJ, (node.id,), "",
                                   0.0, 0.0, SOURCE_VIRTUAL_ZERO, t))
            out.append(Measurement(MeasurementKind.ZERO_Q_INJ, (node.id,), "",
                                   0.0, 0.0, SOURCE_VIRTUAL_ZERO, t))
        else:
            out.append(Measurement(MeasurementKind.ZERO_P_INJ, (node.id,), "",
                                   0.0, 0.0, SOURCE_VIRTUAL_ZERO, t))

    return MeasurementSet(out)


def linearize_measurements(grid: GridModel, ms: MeasurementSet,
                           state: SystemState) -> MeasurementSet:
    """Replace every reading with the linear-model value of ``state``.

    The returned set is exactly consistent with the regional linear models
    and with the converter balance evaluated at the linear boundary
    quantities, so a robust regional estimate reproduces the state exactly
    and the boundary coordination agrees at the first iteration.
    """
    by_region = ms.by_region(grid)
    models = {r.id: build_region_H(grid, r, by_region[r.id]) for r in grid.regions}

    # converter draws consistent with the linear AC-side flows and the loss law
    draws: dict[int, ConverterSolution] = {}
    for conv in grid.converters:
        ac_model = models[grid.node(conv.aux_node).region]
        x_ac = ac_model.truth_vector(state)
        p_lin = float(ac_model.boundary[conv.id] @ x_ac)
        q_lin = float(ac_model.boundary_q[conv.id] @ x_ac)
        v_c = state.v[conv.aux_node]
        loss, i_c = converter_loss(p_lin, q_lin, v_c, (conv.d1, conv.d2, conv.d3))
        draws[conv.id] = ConverterSolution(p_vsc=p_lin, q_vsc=q_lin, p_loss=loss,
                                           i_c=i_c, v_c=v_c, p_djc=p_lin + loss)

    values: dict[int, float] = {}
    for region in grid.regions:
        model = models[region.id]
        z_lin = model.evaluate(model.truth_vector(state, draws))
        for row, gidx in enumerate(model.meas_indices):
            m = model.measurements[row]
            if m.kind is MeasurementKind.AC_V_MAG:
                values[gidx] = math.sqrt(max(z_lin[row], 1e-12))
            else:
                values[gidx] = float(z_lin[row])
    out = [replace(m, value=values.get(i, m.value)) for i, m in enumerate(ms)]
    return MeasurementSet(out, ms.corrupt_indices)


# -- bad data -------------------------------------------------------------------


def inject_bad_data(ms: MeasurementSet, case: int,
                    target: tuple | int | None = None,
                    seed: int | None = None) -> MeasurementSet:
    """Corrupt a measurement set per the three case studies.

    Case 1 doubles one AC active-flow reading, case 2 doubles one converter
    active-power reading, case 3 negates a (P, Q) flow pair of one AC line.
    Default target: the largest-magnitude eligible measurement; pass a branch
    tuple / converter id to override, or seed for a random eligible pick.
    """
    if case not in (1, 2, 3):
        raise ValueError("case must be 1, 2 or 3")
    want_kind = {1: MeasurementKind.AC_P_FLOW, 2: MeasurementKind.CONV_P,
                 3: MeasurementKind.AC_P_FLOW}[case]

    eligible = [(i, m) for i, m in enumerate(ms.measurements)
                if m.kind is want_kind and m.source == SOURCE_SCADA]
    if target is not None:
        key = (target,) if isinstance(target, int) else tuple(target)
        eligible = [(i, m) for i, m in eligible if m.location == key]
    if not eligible:
        raise TelemetryError(f"no eligible target for case {case}")
    if target is None and seed is not None:
        rng = np.random.default_rng(seed)
        idx, chosen = eligible[int(rng.integers(len(eligible)))]
    else:
        idx, chosen = max(eligible, key=lambda im: abs(im[1].value))

    out = list(ms.measurements)
    corrupt = [idx]
    if case in (1, 2):
        out[idx] = replace(chosen, value=2.0 * chosen.value)
    else:
        out[idx] = replace(chosen, value=-chosen.value)
        mate = None
        for j, m in enumerate(ms.measurements):
            if (m.kind is MeasurementKind.AC_Q_FLOW and m.location == chosen.location
                    and m.direction == chosen.direction):
                mate = j
                break
        if mate is None:
            raise TelemetryError("case 3 target has no reactive-flow mate")
        out[mate] = replace(ms.measurements[mate], value=-ms.measurements[mate].value)
        corrupt.append(mate)

    return MeasurementSet(out, tuple(sorted(set(ms.corrupt_indices) | set(corrupt))))
