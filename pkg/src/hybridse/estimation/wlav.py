"""Regional robust estimation: weighted least absolute value as an LP.

The residual of every measurement row is split into non-negative slacks
(u - l = z - H x), zero-injection rows are exact equalities with no slack,
and each boundary converter contributes a pair (a, b) priced at the current
Lagrange multiplier: a - b = P_conv(x) - P_neighbor.  State variables are
free and split inside the LP kernel.  WLAV weights are 1/sigma.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .lp import LpProblem, LpSolution, lp_solve
from .result import EstimationResult


@dataclass
class BoundaryTerm:
    """One converter's coupling term as seen by a region.

    ``neighbor_p`` is the AC-side converter power claimed by the neighbor
    region's last packet; ``loss_const`` is the converter loss to subtract
    from a DC region's converter-draw variable (zero on the AC side).
    """

    lam: float
    neighbor_p: float
    loss_const: float = 0.0


@dataclass
class WlavMeta:
    n_states: int
    u_col: dict[int, int]
    l_col: dict[int, int]
    ab_cols: dict[int, tuple[int, int]]
    row_of_meas: dict[int, int]
    boundary_rows: dict[int, int]
    basis_hint: list[int | None]


def build_regional_wlav_lp(model, boundary: dict[int, BoundaryTerm]) -> tuple[LpProblem, WlavMeta]:
    """Assemble the regional LP from a constant linear measurement model."""
    m = len(model.z)
    if m == 0:
        raise ValueError(f"region {model.region_id} has no measurements")
    n = model.n_states
    slack_rows = [i for i in range(m) if not model.zero_mask[i]]
    convs = sorted(boundary)

    n_cols = n + 2 * len(slack_rows) + 2 * len(convs)
    u_col = {row: n + 2 * k for k, row in enumerate(slack_rows)}
    l_col = {row: n + 2 * k + 1 for k, row in enumerate(slack_rows)}
    ab0 = n + 2 * len(slack_rows)
    ab_cols = {cid: (ab0 + 2 * k, ab0 + 2 * k + 1) for k, cid in enumerate(convs)}

    n_rows = m + len(convs)
    a = np.zeros((n_rows, n_cols))
    b = np.zeros(n_rows)
    c = np.zeros(n_cols)
    tags = ["state"] * n + ["u", "l"] * len(slack_rows) + ["a", "b"] * len(convs)
    hint: list[int | None] = [None] * n_rows

    a[:m, :n] = model.H
    b[:m] = model.z - model.const
    for row in slack_rows:
        a[row, u_col[row]] = 1.0
        a[row, l_col[row]] = -1.0
        weight = 1.0 / model.sigma[row]
        c[u_col[row]] = weight
        c[l_col[row]] = weight
        hint[row] = u_col[row] if b[row] >= 0 else l_col[row]

    boundary_rows = {}
    for k, cid in enumerate(convs):
        term = boundary[cid]
        row = m + k
        boundary_rows[cid] = row
        a[row, :n] = model.boundary[cid]
        acol, bcol = ab_cols[cid]
        a[row, acol] = -1.0
        a[row, bcol] = 1.0
        b[row] = term.neighbor_p + term.loss_const
        c[acol] = term.lam
        c[bcol] = term.lam
        hint[row] = bcol if b[row] >= 0 else acol

    free = np.zeros(n_cols, dtype=bool)
    free[:n] = True
    problem = LpProblem(c=c, a_eq=a, b_eq=b, free_mask=free, tags=tags)
    meta = WlavMeta(n_states=n, u_col=u_col, l_col=l_col, ab_cols=ab_cols,
                    row_of_meas={model.meas_indices[i]: i for i in range(m)},
                    boundary_rows=boundary_rows, basis_hint=hint)
    return problem, meta


def solve_wlav_region(model, boundary: dict[int, BoundaryTerm] | None = None,
                      basis: tuple[int, ...] | None = None
                      ) -> tuple[EstimationResult, LpSolution]:
    """Solve one region's WLAV problem; returns the estimate and the LP
    solution (whose basis warm-starts the next coordination iteration)."""
    t0 = time.perf_counter()
    boundary = boundary or {}
    problem, meta = build_regional_wlav_lp(model, boundary)
    sol = lp_solve(problem, basis=basis, basis_hint=meta.basis_hint)

    x = sol.x[:meta.n_states]
    v, theta, pconv = model.extract_state(x)
    residuals = model.z - model.evaluate(x)
    boundary_p = {}
    for cid, term in boundary.items():
        boundary_p[cid] = float(model.boundary[cid] @ x - term.loss_const)

    result = EstimationResult(scope=f"region:{model.region_id}", v=v, theta=theta,
                              conv_vars={("pdjc", cid): val for cid, val in pconv.items()},
                              residuals=residuals, objective=sol.objective,
                              iterations=sol.iterations, converged=True,
                              wall_time=time.perf_counter() - t0,
                              meas_indices=list(model.meas_indices),
                              boundary_p=boundary_p)
    result.x = x
    return result, sol
