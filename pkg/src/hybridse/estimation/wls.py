"""Gauss-Newton weighted least squares and the normalized-residual test."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..telemetry import SOURCE_VIRTUAL_ZERO
from .result import BadDataReport, EstimationResult, UnobservableError

ZERO_INJ_SIGMA = 1e-6
REMOVABLE_SOURCES = ("scada", "smart_meter", "pseudo", "dnn")


class MatrixModel:
    """Plain linear model z = H x + e with the shared estimator interface."""

    def __init__(self, h_mat, z, sigma, sources=None, meas_indices=None,
                 scope: str = "linear"):
        self.H = np.atleast_2d(np.asarray(h_mat, dtype=float))
        self.z = np.asarray(z, dtype=float)
        self.sigma = np.asarray(sigma, dtype=float)
        m = self.z.size
        self.sources = list(sources) if sources is not None else ["scada"] * m
        self.meas_indices = list(meas_indices) if meas_indices is not None else list(range(m))
        self.measurements = [None] * m
        self.scope = scope

    @property
    def n_states(self):
        return self.H.shape[1]

    def x0(self):
        return np.zeros(self.n_states)

    def h(self, x):
        return self.H @ x

    def jac(self, x):
        return self.H

    def h_jac(self, x, with_jac=True):
        return self.H @ x, (self.H if with_jac else None)

    def evaluate(self, x):
        return self.H @ x

    def extract_state(self, x):
        return {}, {}, {}

    def clone(self):
        return MatrixModel(self.H.copy(), self.z.copy(), self.sigma.copy(),
                           list(self.sources), list(self.meas_indices), self.scope)

    def drop_row(self, i):
        self.H = np.delete(self.H, i, axis=0)
        self.z = np.delete(self.z, i)
        self.sigma = np.delete(self.sigma, i)
        self.sources = self.sources[:i] + self.sources[i + 1:]
        self.meas_indices = self.meas_indices[:i] + self.meas_indices[i + 1:]
        self.measurements = self.measurements[:i] + self.measurements[i + 1:]


def effective_sigma(model) -> np.ndarray:
    """Measurement sigmas with exact-zero rows pinned to a tight weight."""
    sigma = np.asarray(model.sigma, dtype=float).copy()
    for i, src in enumerate(model.sources):
        if src == SOURCE_VIRTUAL_ZERO:
            sigma[i] = ZERO_INJ_SIGMA
    return sigma


def solve_wls(model, x0: np.ndarray | None = None, tol: float = 1e-6,
              max_iter: int = 50,
              weight_overrides: dict[int, float] | None = None) -> EstimationResult:
    """Iterate Gauss-Newton until max |dx| < tol, with step halving.

    ``weight_overrides`` maps row index to an explicit weight (used for
    boundary penalty rows whose weight is a multiplier, not 1/sigma^2).
    Raises UnobservableError when the weighted Jacobian is rank deficient.
    """
    t0 = time.perf_counter()
    sigma = effective_sigma(model)
    w = 1.0 / (sigma * sigma)
    if weight_overrides:
        for i, wi in weight_overrides.items():
            w[i] = wi
    sw = np.sqrt(w)
    z = model.z

    x = model.x0() if x0 is None else np.asarray(x0, dtype=float).copy()
    n = x.size

    def objective(xv):
        r = z - model.h(xv)
        return float(w @ (r * r)), r

    obj, r = objective(x)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        h, jac = model.h_jac(x)
        r = z - h
        a = jac * sw[:, None]
        rhs = r * sw
        dx, _, rank, _ = np.linalg.lstsq(a, rhs, rcond=None)
        if rank < n:
            raise UnobservableError(rank, n, scope=getattr(model, "scope", ""))

        step = 1.0
        for _ in range(10):
            trial = x + step * dx
            trial_obj, _ = objective(trial)
            if trial_obj <= obj + 1e-12:
                break
            step *= 0.5
        else:
            break  # no improving step: treat as stalled
        x = x + step * dx
        obj, r = objective(x)
        if np.abs(step * dx).max() < tol:
            converged = True
            break

    v, theta, conv = model.extract_state(x)
    result = EstimationResult(scope=getattr(model, "scope", "wls"), v=v, theta=theta,
                              conv_vars=conv, residuals=z - model.h(x),
                              objective=obj, iterations=it, converged=converged,
                              wall_time=time.perf_counter() - t0,
                              meas_indices=list(model.meas_indices))
    result.x = x
    return result


@dataclass
class _NrOutcome:
    report: BadDataReport
    result: EstimationResult
    model: object
    replaced: dict[int, float]          # global meas index -> substituted value


def lnr_test(model, result: EstimationResult | None = None, threshold: float = 3.0,
             max_cycles: int = 5, interpolate: bool = False,
             tol: float = 1e-6) -> _NrOutcome:
    """Largest-normalized-residual bad-data cycle.

    Solves, normalizes residuals by sqrt of their covariance
    Omega = R - H G^-1 H^T, and removes (or, with ``interpolate=True``,
    substitutes with the model-implied value) the worst offender above the
    threshold, repeating up to ``max_cycles`` times.  Rows whose residual
    variance is numerically zero are critical and reported untestable.
    """
    work = model.clone()
    if result is None:
        result = solve_wls(work, tol=tol)
    flagged: list[tuple[int, float]] = []
    untestable: list[int] = []
    replaced: dict[int, float] = {}
    cycles = 0

    for _ in range(max_cycles):
        cycles += 1
        x = result.x
        h, jac = work.h_jac(x)
        sigma = effective_sigma(work)
        w = 1.0 / (sigma * sigma)
        r = work.z - h
        a = jac * np.sqrt(w)[:, None]
        gain = a.T @ a
        try:
            ginv_ht = np.linalg.solve(gain, jac.T)
        except np.linalg.LinAlgError as exc:
            raise UnobservableError(int(np.linalg.matrix_rank(gain)), x.size) from exc
        omega_diag = sigma * sigma - np.einsum("ij,ji->i", jac, ginv_ht)

        best_idx, best_nr = -1, 0.0
        untestable_now = []
        for i, src in enumerate(work.sources):
            if src not in REMOVABLE_SOURCES:
                continue
            if omega_diag[i] <= 1e-4 * sigma[i] * sigma[i]:
                untestable_now.append(work.meas_indices[i])
                continue
            nr = abs(r[i]) / np.sqrt(omega_diag[i])
            if nr > best_nr:
                best_idx, best_nr = i, nr
        untestable = untestable_now

        if best_idx < 0 or best_nr <= threshold:
            break
        gidx = work.meas_indices[best_idx]
        flagged.append((gidx, float(best_nr)))
        if interpolate:
            # corrected-measurement substitution: subtracting the gross error's
            # own influence share reproduces the clean reading in the linear case
            corrected = work.z[best_idx] - (sigma[best_idx] ** 2 / omega_diag[best_idx]) * r[best_idx]
            work.z[best_idx] = corrected
            replaced[gidx] = float(corrected)
        else:
            work.drop_row(best_idx)
        result = solve_wls(work, x0=x, tol=tol)

    report = BadDataReport(flagged=flagged, threshold=threshold, cycles=cycles,
                           untestable=untestable)
    return _NrOutcome(report=report, result=result, model=work, replaced=replaced)
