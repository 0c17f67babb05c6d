"""Dense two-phase simplex for desk-scale linear programs.

Standard form: minimize c.v subject to A v = b with v >= 0; variables marked
free are split internally into positive and negative parts.  Pricing is
Dantzig's rule with a switch to Bland's rule after a run of degenerate pivots,
which guarantees termination.  Tie-breaking is by lowest index everywhere, so
solves are deterministic.

The returned basis can be passed back to warm-start a later solve of a
problem with identical constraint structure (only costs / right-hand sides
changed); an unusable basis silently falls back to a cold start.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class LpError(RuntimeError):
    pass


class LpInfeasible(LpError):
    pass


class LpUnbounded(LpError):
    pass


@dataclass
class LpProblem:
    c: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray
    free_mask: np.ndarray                  # True where the variable is unbounded below
    tags: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.a_eq = np.atleast_2d(np.asarray(self.a_eq, dtype=float))
        self.b_eq = np.asarray(self.b_eq, dtype=float)
        self.free_mask = np.asarray(self.free_mask, dtype=bool)
        m, n = self.a_eq.shape
        if self.c.size != n or self.free_mask.size != n or self.b_eq.size != m:
            raise ValueError("inconsistent LP dimensions")


@dataclass
class LpSolution:
    x: np.ndarray
    objective: float
    iterations: int
    basis: tuple[int, ...]      # internal (split-variable) basis for warm starts


_DEGENERATE_STREAK = 30


def lp_solve(problem: LpProblem, basis: tuple[int, ...] | None = None,
             basis_hint: list[int | None] | None = None,
             tol: float = 1e-9, max_iter: int = 20000) -> LpSolution:
    """Solve an equality-form LP; optimal basic solution, deterministic.

    A stale warm-start basis can leave the reduced tableau numerically
    degenerate; any solver failure under a warm start falls back to a cold
    start before being reported.
    """
    if basis is not None:
        try:
            return _lp_solve(problem, basis, basis_hint, tol, max_iter)
        except LpError:
            pass
    return _lp_solve(problem, None, basis_hint, tol, max_iter)


def _lp_solve(problem: LpProblem, basis, basis_hint, tol, max_iter) -> LpSolution:
    m, n = problem.a_eq.shape

    # split free variables: column map entry (original index, sign)
    colmap: list[tuple[int, float]] = []
    for j in range(n):
        colmap.append((j, 1.0))
    for j in range(n):
        if problem.free_mask[j]:
            colmap.append((j, -1.0))
    n_int = len(colmap)
    a = np.empty((m, n_int))
    a[:, :n] = problem.a_eq
    c_int = np.empty(n_int)
    c_int[:n] = problem.c
    extra = 0
    for j in range(n):
        if problem.free_mask[j]:
            a[:, n + extra] = -problem.a_eq[:, j]
            c_int[n + extra] = -problem.c[j]
            extra += 1

    b = problem.b_eq.copy()
    neg = b < 0
    a[neg] *= -1.0
    b[neg] *= -1.0

    iterations = 0

    def reduce_with(bas: list[int], cols: np.ndarray, rhs: np.ndarray):
        mat = cols[:, bas]
        try:
            t = np.linalg.solve(mat, np.column_stack([cols, rhs]))
        except np.linalg.LinAlgError:
            return None
        if t[:, -1].min() < -1e-9:
            return None
        return t

    t = None
    cols_basis: list[int] = []
    # warm start: previous optimal basis on the same constraint structure
    if basis is not None and len(basis) == m and max(basis, default=-1) < n_int:
        t = reduce_with(list(basis), a, b)
        if t is not None:
            cols_basis = list(basis)

    art_cols: list[int] = []
    if t is None:
        hint = basis_hint if basis_hint is not None else [None] * m
        if len(hint) != m:
            raise ValueError("basis hint length must match row count")
        need_art = [i for i, hcol in enumerate(hint) if hcol is None]
        n_art = len(need_art)
        full = np.empty((m, n_int + n_art))
        full[:, :n_int] = a
        full[:, n_int:] = 0.0
        art_of_row = {}
        for k, i in enumerate(need_art):
            full[i, n_int + k] = 1.0
            art_of_row[i] = n_int + k
        cols_basis = [hint[i] if hint[i] is not None else art_of_row[i]
                      for i in range(m)]
        t = reduce_with(cols_basis, full, b)
        if t is None:
            # cold start: all-artificial basis
            n_art = m
            full = np.empty((m, n_int + n_art))
            full[:, :n_int] = a
            full[:, n_int:] = np.eye(m)
            cols_basis = list(range(n_int, n_int + n_art))
            t = reduce_with(cols_basis, full, b)
        art_cols = list(range(n_int, full.shape[1]))

        if art_cols:
            c1 = np.zeros(full.shape[1])
            c1[n_int:] = 1.0
            # price only real columns; artificials may leave but never re-enter
            iterations += _optimize(t, cols_basis, c1, n_int, tol, max_iter)
            obj1 = c1[cols_basis] @ t[:, -1]
            if obj1 > 1e-7:
                raise LpInfeasible(f"phase-1 objective {obj1:.3e}")
            _drive_out_artificials(t, cols_basis, n_int, tol)
            keep = [i for i, col in enumerate(cols_basis) if col < n_int]
            if len(keep) != len(cols_basis):
                rows = np.array(keep, dtype=int)
                t = t[rows]
                cols_basis = [cols_basis[i] for i in keep]
        t = t[:, list(range(n_int)) + [t.shape[1] - 1]]

    iterations += _optimize(t, cols_basis, c_int, n_int, tol, max_iter - iterations)

    x = np.zeros(n)
    for col, val in zip(cols_basis, t[:, -1]):
        j, sign = colmap[col]
        x[j] += sign * val
    return LpSolution(x=x, objective=float(problem.c @ x),
                      iterations=iterations, basis=tuple(cols_basis))


def _optimize(t, cols_basis, c, n_cols, tol, max_iter) -> int:
    """Primal simplex sweep on a reduced tableau.  Mutates t, cols_basis."""
    m = t.shape[0]
    it = 0
    degenerate = 0
    basic = np.zeros(t.shape[1] - 1, dtype=bool)
    basic[cols_basis] = True
    while it < max_iter:
        cb = c[cols_basis]
        reduced = c[:n_cols] - cb @ t[:, :n_cols]
        reduced[basic[:n_cols]] = 0.0
        if degenerate < _DEGENERATE_STREAK:
            q = int(np.argmin(reduced))
            if reduced[q] >= -tol:
                return it
        else:
            candidates = np.nonzero(reduced < -tol)[0]
            if candidates.size == 0:
                return it
            q = int(candidates[0])

        col = t[:, q]
        pos = col > tol
        if not pos.any():
            raise LpUnbounded("no blocking ratio for entering column")
        ratios = np.full(m, np.inf)
        ratios[pos] = t[pos, -1] / col[pos]
        best = ratios.min()
        tie_rows = np.nonzero(ratios <= best + tol * max(1.0, best))[0]
        p = min(tie_rows, key=lambda i: cols_basis[i])
        degenerate = degenerate + 1 if best <= tol else 0

        piv = t[p, q]
        t[p] /= piv
        other = col.copy()
        other[p] = 0.0
        t -= np.outer(other, t[p])
        basic[cols_basis[p]] = False
        basic[q] = True
        cols_basis[p] = q
        it += 1
    raise LpError("simplex iteration limit reached")


def _drive_out_artificials(t, cols_basis, n_int, tol):
    for row, col in enumerate(cols_basis):
        if col < n_int:
            continue
        nz = np.nonzero(np.abs(t[row, :n_int]) > tol)[0]
        if nz.size == 0:
            continue  # redundant row, caller drops it
        q = int(nz[0])
        piv = t[row, q]
        t[row] /= piv
        other = t[:, q].copy()
        other[row] = 0.0
        t -= np.outer(other, t[row])
        cols_basis[row] = q
