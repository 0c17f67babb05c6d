"""Offline learning and online generation of nodal power injections.

Offline: per-node mixtures are fit on smart-meter history; Monte-Carlo trials
sample injection scenarios from those mixtures (with a shared regime quantile
and common factor so cross-node structure survives), run the power flow, and
read noisy SCADA vectors, producing (z, y) training pairs; a feedforward
network is fit by empirical risk minimization; the holdout prediction errors
get their own per-component mixtures whose standard deviations become the
measurement weights of generated injections.

Online: the trained network maps the current SCADA vector to a full injection
vector at the SCADA rate.  Gross errors in the SCADA input are screened by a
linear WLS pass with mixture-mean priors and substituted with their
model-implied values before inference.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..estimation import lnr_test
from ..grid import AC, GridModel
from ..powerflow import (InjectionProfile, PowerFlowError, SystemState,
                         solve_powerflow)
from ..telemetry import (Measurement, MeasurementKind, MeasurementSet,
                         ScheduleConfig, SOURCE_DNN, SOURCE_PSEUDO,
                         build_region_H, eval_h_nonlinear, simulate_measurements)
from .gmm import GmmModel, fit_gmm
from .mlp import MlpModel, TrainReport, train_mlp
from .profiles import LoadProfiles

SIGMA_FLOOR = 1e-4


# -- canonical SCADA channel ordering -------------------------------------------


def scada_channels(grid: GridModel, schedule: ScheduleConfig) -> list[str]:
    """Stable channel keys matching the telemetry synthesis order."""
    from ..telemetry import default_scada_branches
    branches = schedule.scada_ac_branches
    if branches is None:
        branches = default_scada_branches(grid)
    keys = [f"vmag_ac:{grid.slack}"]
    keys += [f"vmag_ac:{c.aux_node}" for c in grid.converters]
    keys += [f"vmag_dc:{c.dc_node}" for c in grid.converters]
    for f, t in branches:
        keys.append(f"pflow_ac:{f}-{t}")
        keys.append(f"qflow_ac:{f}-{t}")
    keys += [f"pflow_dc:{l.from_node}-{l.to_node}" for l in grid.dc_lines]
    keys += [f"convp:{c.id}" for c in grid.converters]
    keys += [f"convq:{c.id}" for c in grid.converters]
    for c in grid.converters:
        keys.append(f"pflow_ac:{c.ac_node}-{c.aux_node}")
        keys.append(f"qflow_ac:{c.ac_node}-{c.aux_node}")
    return keys


def _channel_of(m: Measurement) -> str | None:
    k = m.kind
    if k is MeasurementKind.AC_V_MAG:
        return f"vmag_ac:{m.location[0]}"
    if k is MeasurementKind.DC_V_MAG:
        return f"vmag_dc:{m.location[0]}"
    if k is MeasurementKind.AC_P_FLOW:
        return f"pflow_ac:{m.location[0]}-{m.location[1]}"
    if k is MeasurementKind.AC_Q_FLOW:
        return f"qflow_ac:{m.location[0]}-{m.location[1]}"
    if k is MeasurementKind.DC_P_FLOW:
        return f"pflow_dc:{m.location[0]}-{m.location[1]}"
    if k is MeasurementKind.CONV_P and m.direction == "ac":
        return f"convp:{m.location[0]}"
    if k is MeasurementKind.CONV_Q and m.direction == "ac":
        return f"convq:{m.location[0]}"
    return None


def scada_vector(ms: MeasurementSet, channels: list[str]) -> np.ndarray:
    found: dict[str, float] = {}
    for m in ms:
        if m.source != "scada":
            continue
        key = _channel_of(m)
        if key is not None:
            found[key] = m.value
    missing = [c for c in channels if c not in found]
    if missing:
        raise ValueError(f"SCADA channels missing from the set: {missing}")
    return np.array([found[c] for c in channels])


def injection_components(grid: GridModel) -> list[str]:
    """Component keys of the injection vector: p (and q for AC) per node."""
    keys = []
    for node in grid.injection_nodes():
        keys.append(f"p:{node.id}")
        if node.kind == AC:
            keys.append(f"q:{node.id}")
    return keys


def profile_from_components(keys: list[str], values: np.ndarray) -> InjectionProfile:
    prof = InjectionProfile()
    for key, val in zip(keys, values):
        tag, node = key.split(":")
        if tag == "p":
            prof.p[int(node)] = float(val)
        else:
            prof.q[int(node)] = float(val)
    return prof


# -- training set ----------------------------------------------------------------


@dataclass
class TrainingSet:
    z: np.ndarray
    y: np.ndarray
    channels: list[str]
    components: list[str]
    seed: int
    dropped: int = 0

    def to_csv(self, path: str | Path) -> None:
        header = ",".join([f"z.{c}" for c in self.channels]
                          + [f"y.{c}" for c in self.components])
        lines = [f"# seed={self.seed} dropped={self.dropped}", header]
        for zrow, yrow in zip(self.z, self.y):
            lines.append(",".join(repr(float(v)) for v in list(zrow) + list(yrow)))
        Path(path).write_text("\n".join(lines) + "\n")


def fit_injection_gmms(grid: GridModel, profiles: LoadProfiles, k: int = 2,
                       seed: int = 0) -> dict[int, GmmModel]:
    """Per-node mixtures over (P, Q) history for AC nodes, P for DC nodes."""
    gmms: dict[int, GmmModel] = {}
    for node in grid.injection_nodes():
        p = profiles.p[node.id]
        if node.id in profiles.q:
            samples = np.column_stack([p, profiles.q[node.id]])
        else:
            samples = p
        gmms[node.id], _ = fit_gmm(samples, k=k, seed=seed + node.id)
    return gmms


def sample_injections(grid: GridModel, gmms: dict[int, GmmModel],
                      rng: np.random.Generator, rho: float = 0.8) -> InjectionProfile:
    """One joint scenario: marginals follow each node's mixture while a shared
    regime quantile and common factor couple the nodes, mirroring the common
    daily-shape structure the mixtures were learned from."""
    u = float(rng.uniform())
    g = rng.standard_normal(2)          # shared factor per dimension (P, Q)
    prof = InjectionProfile()
    for node in grid.injection_nodes():
        model = gmms[node.id]
        g_own = rng.standard_normal(model.dim)
        draw = model.sample_coupled(u, g[:model.dim], g_own, rho)
        prof.p[node.id] = float(draw[0])
        if model.dim > 1:
            prof.q[node.id] = float(draw[1])
    return prof


def build_training_set(grid: GridModel, gmms: dict[int, GmmModel], n_trials: int,
                       schedule: ScheduleConfig, seed: int,
                       rho: float = 0.8) -> TrainingSet:
    """Monte-Carlo (y, z) extraction: sample scenarios, solve the power flow,
    read the SCADA channels with measurement noise.  Aborts when more than 20%
    of the trials fail to converge (mixtures inconsistent with the grid)."""
    rng = np.random.default_rng(seed)
    channels = scada_channels(grid, schedule)
    components = injection_components(grid)
    zs, ys = [], []
    dropped = 0
    for _ in range(n_trials):
        prof = sample_injections(grid, gmms, rng, rho)
        try:
            res = solve_powerflow(grid, prof)
        except PowerFlowError:
            dropped += 1
            if dropped > 0.2 * n_trials:
                raise RuntimeError(
                    f"{dropped} of {n_trials} trials diverged; injection "
                    "mixtures are inconsistent with grid capacity")
            continue
        ms = simulate_measurements(grid, res.state, schedule,
                                   t=schedule.scada_period, seed=rng)
        zs.append(scada_vector(ms, channels))
        ys.append([prof.p[int(c.split(":")[1])] if c.startswith("p:")
                   else prof.q[int(c.split(":")[1])] for c in components])
    return TrainingSet(z=np.array(zs), y=np.array(ys), channels=channels,
                       components=components, seed=seed, dropped=dropped)


# -- the trained artifact ----------------------------------------------------------


@dataclass
class InjectionModel:
    """Mixtures + regression network + error-based weights, all per grid."""

    mlp: MlpModel
    channels: list[str]
    components: list[str]
    error_sigma: dict[str, float]
    gmm_means: dict[str, float]
    gmms: dict[int, GmmModel] = field(default_factory=dict, repr=False)
    meta: dict = field(default_factory=dict)

    def save(self, path: str | Path) -> None:
        doc = {
            "version": 1,
            "mlp": self.mlp.to_dict(),
            "channels": self.channels,
            "components": self.components,
            "error_sigma": self.error_sigma,
            "gmm_means": self.gmm_means,
            "gmms": {str(n): {"weights": g.weights.tolist(),
                              "means": g.means.tolist(),
                              "variances": g.variances.tolist()}
                     for n, g in self.gmms.items()},
            "meta": self.meta,
        }
        Path(path).write_text(json.dumps(doc, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "InjectionModel":
        doc = json.loads(Path(path).read_text())
        if doc.get("version") != 1:
            raise ValueError("unsupported injection model version")
        gmms = {int(n): GmmModel(weights=np.array(g["weights"]),
                                 means=np.array(g["means"]),
                                 variances=np.array(g["variances"]))
                for n, g in doc["gmms"].items()}
        return cls(mlp=MlpModel.from_dict(doc["mlp"]), channels=doc["channels"],
                   components=doc["components"], error_sigma=doc["error_sigma"],
                   gmm_means=doc["gmm_means"], gmms=gmms, meta=doc.get("meta", {}))


def fit_error_gmm(residuals: np.ndarray, components: list[str],
                  seed: int = 0) -> dict[str, float]:
    """Two-component mixture per injection component over holdout residuals;
    the weight sigma is the mixture's overall standard deviation, floored."""
    sigma: dict[str, float] = {}
    for col, key in enumerate(components):
        r = residuals[:, col]
        if np.allclose(r, r[0]):
            sigma[key] = SIGMA_FLOOR
        elif r.size < 20:
            # too few holdout points for a mixture; plain spread
            sigma[key] = max(float(r.std()), SIGMA_FLOOR)
        else:
            model, _ = fit_gmm(r, k=2, seed=seed + col)
            sigma[key] = max(float(np.sqrt(model.overall_variance()[0])), SIGMA_FLOOR)
    return sigma


def train_injection_model(grid: GridModel, profiles: LoadProfiles,
                          schedule: ScheduleConfig, n_trials: int = 2500,
                          hidden: list[int] = [64, 64], epochs: int = 400,
                          lr: float = 0.01, batch: int = 32, seed: int = 0,
                          gmm_k: int = 2, rho: float = 0.8
                          ) -> tuple[InjectionModel, TrainReport]:
    """The full offline stage: distribution learning, Monte-Carlo training
    data, network fit, error-mixture weighting."""
    gmms = fit_injection_gmms(grid, profiles, k=gmm_k, seed=seed)
    ts = build_training_set(grid, gmms, n_trials, schedule, seed=seed + 1, rho=rho)
    mlp, report = train_mlp(ts.z, ts.y, hidden=hidden, lr=lr, batch=batch,
                            epochs=epochs, seed=seed + 2)
    hold = report.holdout_indices
    residuals = ts.y[hold] - mlp.predict(ts.z[hold])
    error_sigma = fit_error_gmm(residuals, ts.components, seed=seed + 3)

    gmm_means: dict[str, float] = {}
    for node in grid.injection_nodes():
        mean = gmms[node.id].mean()
        gmm_means[f"p:{node.id}"] = float(mean[0])
        if gmms[node.id].dim > 1:
            gmm_means[f"q:{node.id}"] = float(mean[1])

    model = InjectionModel(mlp=mlp, channels=ts.channels, components=ts.components,
                           error_sigma=error_sigma, gmm_means=gmm_means, gmms=gmms,
                           meta={"seed": seed, "n_trials": n_trials,
                                 "dropped": ts.dropped,
                                 "holdout_loss": report.holdout_loss})
    return model, report


# -- online stage -------------------------------------------------------------------


def infer_injections(model: InjectionModel, z_now: np.ndarray) -> dict[str, float]:
    z_now = np.asarray(z_now, dtype=float).ravel()
    if z_now.size != len(model.channels):
        raise ValueError(f"expected {len(model.channels)} SCADA channels, "
                         f"got {z_now.size}")
    y = model.mlp.predict(z_now[None, :])[0]
    return dict(zip(model.components, y))


def generated_measurements(model: InjectionModel, ms: MeasurementSet,
                           grid: GridModel, t: float,
                           sanitize: bool = True) -> list[Measurement]:
    """DNN-generated injection rows for the current tick, weighted by the
    error-mixture sigmas.  The SCADA input is screened first when asked."""
    source = ms
    if sanitize:
        source = sanitize_scada(grid, ms, model)
    z = scada_vector(source, model.channels)
    values = infer_injections(model, z)
    return _injection_rows(grid, values,
                           {k: model.error_sigma[k] for k in values},
                           SOURCE_DNN, t)


def pseudo_measurements(grid: GridModel, profile: InjectionProfile, t: float,
                        pct: float,
                        rng: np.random.Generator | int = 0) -> list[Measurement]:
    """Forecast-style pseudo injections: the true injections perturbed by
    Gaussian errors of the stated relative uncertainty, with matching sigmas.

    Unlike metering accuracies (3-sigma bounds), a forecast's stated
    uncertainty is its error standard deviation: 0.30 means sigma = 30% of
    the true value.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    values: dict[str, float] = {}
    sigmas: dict[str, float] = {}
    for node in grid.injection_nodes():
        for tag, true in (("p", profile.p_at(node.id)),
                          ("q", profile.q_at(node.id) if node.kind == AC else None)):
            if true is None:
                continue
            key = f"{tag}:{node.id}"
            sigma = max(pct * abs(true), SIGMA_FLOOR)
            values[key] = true + rng.normal(0.0, sigma)
            sigmas[key] = sigma
    return _injection_rows(grid, values, sigmas, SOURCE_PSEUDO, t)


def prior_measurements(model: InjectionModel, grid: GridModel, t: float,
                       pct: float = 0.30) -> list[Measurement]:
    """Mixture-mean injection priors with broad pct-derived sigmas; used to
    back the SCADA screening pass, never as benchmark pseudo telemetry."""
    sigmas = {k: max(pct * abs(v), SIGMA_FLOOR)
              for k, v in model.gmm_means.items()}
    return _injection_rows(grid, model.gmm_means, sigmas, SOURCE_PSEUDO, t)


def _injection_rows(grid: GridModel, values: dict[str, float],
                    sigmas: dict[str, float], source: str,
                    t: float) -> list[Measurement]:
    rows = []
    for key in values:
        tag, node = key.split(":")
        if tag == "q":
            kind = MeasurementKind.AC_Q_INJ
        elif grid.node(int(node)).kind == AC:
            kind = MeasurementKind.AC_P_INJ
        else:
            kind = MeasurementKind.DC_P_INJ
        rows.append(Measurement(kind=kind, location=(int(node),), direction="",
                                value=float(values[key]),
                                sigma=float(sigmas[key]), source=source,
                                timestamp=t))
    return rows


SCREEN_MODEL_ERROR = 5e-4   # linearization allowance of the screening pass
SCREEN_THRESHOLD = 20.0     # gross-error screen, an order above the NR test


def sanitize_scada(grid: GridModel, ms: MeasurementSet, model: InjectionModel,
                   threshold: float = SCREEN_THRESHOLD) -> MeasurementSet:
    """Screen the SCADA vector for gross errors before network inference.

    A linear WLS pass per region, backed by broad mixture-mean priors at the
    injection nodes, runs the normalized-residual cycle in substitution mode;
    flagged SCADA readings are replaced by their model-implied values.  The
    screen hunts doubled/negated readings, so its sigmas carry a linear-model
    allowance and its threshold sits far above the estimation-level test.
    """
    priors = prior_measurements(model, grid, t=0.0, pct=0.30)
    screen = MeasurementSet(list(ms.measurements) + priors)
    by_region = screen.by_region(grid)
    corrected: dict[int, float] = {}
    for region in grid.regions:
        lin = build_region_H(grid, region, by_region[region.id])
        lin.sigma = np.sqrt(lin.sigma ** 2 + SCREEN_MODEL_ERROR ** 2)
        out = lnr_test(lin, threshold=threshold, interpolate=True)
        for gidx, value in out.replaced.items():
            if gidx >= len(ms.measurements):
                continue   # a prior row was corrected; it is synthetic anyway
            m = ms.measurements[gidx]
            if m.kind is MeasurementKind.AC_V_MAG:
                value = math.sqrt(max(value, 1e-12))
            corrected[gidx] = value
    if not corrected:
        return ms
    fixed = [m if i not in corrected else
             Measurement(m.kind, m.location, m.direction, corrected[i], m.sigma,
                         m.source, m.timestamp)
             for i, m in enumerate(ms.measurements)]
    return MeasurementSet(fixed, ms.corrupt_indices)


# -- drift ---------------------------------------------------------------------------


def estimated_injections(grid: GridModel, v: dict[int, float],
                         theta: dict[int, float]) -> dict[str, float]:
    """Nodal injections implied by an estimated state (for drift checks)."""
    state = SystemState(v=v, theta=theta)
    out: dict[str, float] = {}
    for node in grid.injection_nodes():
        probe = Measurement(MeasurementKind.AC_P_INJ if node.kind == AC
                            else MeasurementKind.DC_P_INJ,
                            (node.id,), "", 0.0, 1.0, "scada")
        out[f"p:{node.id}"] = eval_h_nonlinear(grid, state, probe)
        if node.kind == AC:
            probe = Measurement(MeasurementKind.AC_Q_INJ, (node.id,), "", 0.0,
                                1.0, "scada")
            out[f"q:{node.id}"] = eval_h_nonlinear(grid, state, probe)
    return out


def drift_check(se_injections: dict[str, float], generated: dict[str, float],
                threshold: float | None = None,
                model: InjectionModel | None = None) -> bool:
    """True when the offline stage should be re-run: the average absolute
    deviation between SE-implied and generated injections exceeds the
    threshold (default: five times the mean error sigma)."""
    keys = sorted(set(se_injections) & set(generated))
    if not keys:
        raise ValueError("no common injection components")
    if threshold is None:
        if model is None:
            raise ValueError("need a model to derive the default threshold")
        threshold = 5.0 * float(np.mean([model.error_sigma[k] for k in keys]))
    aae = float(np.mean([abs(se_injections[k] - generated[k]) for k in keys]))
    return aae > threshold
