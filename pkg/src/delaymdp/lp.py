"""Exact dense linear programming in standard equality form.

min c.x  s.t.  A x = b,  x >= 0, solved by two-phase primal simplex on a
full tableau.  Redundant equality rows are removed up front by a
rank-revealing elimination (the occupancy systems this solver exists for
are structurally rank-deficient by one).  Pivoting uses Dantzig's rule
with first-index ties, falling back to Bland's rule after a run of
degenerate pivots so cycling cannot occur.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

FEAS_TOL = 1e-8
PIVOT_TOL = 1e-9
CLAMP_TOL = 1e-10
DEGENERATE_LIMIT = 30


class LpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class CyclingGuardError(RuntimeError):
    """Pivot budget exhausted; distinct from infeasible/unbounded."""


@dataclass(frozen=True)
class LinearProgram:
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if A.ndim != 2 or c.shape != (A.shape[1],) or b.shape != (A.shape[0],):
            raise ValueError(f"inconsistent LP dimensions: A {A.shape}, "
                             f"c {c.shape}, b {b.shape}")
        for name, arr in (("c", c), ("A", A), ("b", b)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entry in {name}")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class LpSolution:
    x: np.ndarray
    value: float
    status: LpStatus


def _independent_rows(A: np.ndarray, b: np.ndarray) -> tuple[list[int], bool]:
    """Indices of a maximal independent subset of rows of [A|b], found by
    sequential elimination on a scratch copy (the original rows are kept
    untouched to preserve their conditioning).  Second return False means a
    dependent row was inconsistent (0 = nonzero)."""
    m, n = A.shape
    work = np.hstack([A, b[:, None]]).astype(float)
    scale = np.maximum(np.max(np.abs(work[:, :n]), axis=1), 1.0)
    work /= scale[:, None]
    keep: list[int] = []
    pivots: list[tuple[int, int]] = []  # (row index in work, pivot column)
    for i in range(m):
        row = work[i]
        for r, col in pivots:
            if row[col] != 0.0:
                row -= row[col] * work[r]
        level = float(np.max(np.abs(row[:n])))
        if level < 1e-11:
            if abs(row[n]) > 1e-9:
                return keep, False
            continue
        col = int(np.argmax(np.abs(row[:n])))
        row /= row[col]
        keep.append(i)
        pivots.append((i, col))
    return keep, True


def _simplex(T: np.ndarray, basis: list[int], cost_row: np.ndarray,
             n_cols: int, max_pivots: int) -> str:
    """Run simplex on tableau T (rows m, then the cost row appended last is
    managed by the caller through cost_row, a view of T[-1])."""
    m = T.shape[0] - 1
    degenerate_streak = 0
    for _ in range(max_pivots):
        rc = cost_row[:n_cols]
        if degenerate_streak >= DEGENERATE_LIMIT:
            candidates = np.nonzero(rc < -PIVOT_TOL)[0]
            if candidates.size == 0:
                return "optimal"
            j = int(candidates[0])  # Bland: lowest index
        else:
            j = int(np.argmin(rc))
            if rc[j] >= -PIVOT_TOL:
                return "optimal"
        col = T[:m, j]
        rows = np.nonzero(col > PIVOT_TOL)[0]
        if rows.size == 0:
            return "unbounded"
        ratios = T[rows, -1] / col[rows]
        best = float(np.min(ratios))
        ties = rows[ratios <= best + 1e-12]
        # leaving variable: smallest basis index among ratio ties (Bland-safe)
        i = int(ties[np.argmin([basis[t] for t in ties])])
        if best < 1e-12:
            degenerate_streak += 1
        else:
            degenerate_streak = 0
        piv = T[i, j]
        T[i] = T[i] / piv
        for k in range(T.shape[0]):
            if k != i and T[k, j] != 0.0:
                T[k] -= T[k, j] * T[i]
        basis[i] = j
    raise CyclingGuardError(f"pivot budget {max_pivots} exhausted")


def solve_lp(p: LinearProgram) -> LpSolution:
    """Minimize c.x subject to A x = b, x >= 0.

    Returns a basic feasible optimal solution (at most rank(A) nonzeros)
    with x clamped to zero below 1e-10; statuses infeasible and unbounded
    are returned, a cycling-guard overrun raises CyclingGuardError.
    """
    A0, b0, c0 = p.A, p.b, p.c
    keep, consistent = _independent_rows(A0, b0)
    if not consistent:
        return LpSolution(np.zeros(A0.shape[1]), np.nan, LpStatus.INFEASIBLE)
    A, b = A0[keep].copy(), b0[keep].copy()
    m, n = A.shape
    if m == 0:
        # No binding constraints: optimum at 0 unless some cost is negative.
        if np.any(c0 < -PIVOT_TOL):
            return LpSolution(np.zeros(n), np.nan, LpStatus.UNBOUNDED)
        return LpSolution(np.zeros(n), 0.0, LpStatus.OPTIMAL)
    # Equilibrate: scale rows to unit max-abs (preserves the feasible set),
    # then orient right-hand sides nonnegative for the artificial basis.
    scale = np.maximum(np.max(np.abs(A), axis=1), 1e-300)
    A /= scale[:, None]
    b /= scale
    flip = b < 0.0
    A = A * np.where(flip, -1.0, 1.0)[:, None]
    b = np.abs(b * 1.0)
    max_pivots = 10_000 + 50 * (m + n)

    # Phase 1: artificial basis, minimize sum of artificials.
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    basis = list(range(n, n + m))
    T[-1, :] = -T[:m, :].sum(axis=0)
    T[-1, n:n + m] = 0.0
    status = _simplex(T, basis, T[-1], n + m, max_pivots)
    if status != "optimal" or T[-1, -1] < -FEAS_TOL:
        return LpSolution(np.zeros(n), np.nan, LpStatus.INFEASIBLE)
    # Drive residual artificials out of the basis on the largest available
    # pivot; a row with no usable pivot is numerically redundant and dropped
    # (keeping it would let the artificial drift away from zero in phase 2).
    drop_rows = []
    for i in range(m):
        if basis[i] >= n:
            j = int(np.argmax(np.abs(T[i, :n])))
            if abs(T[i, j]) < 1e-11:
                drop_rows.append(i)
                continue
            piv = T[i, j]
            T[i] = T[i] / piv
            for k in range(T.shape[0]):
                if k != i and T[k, j] != 0.0:
                    T[k] -= T[k, j] * T[i]
            basis[i] = j
    if drop_rows:
        keep = [i for i in range(m) if i not in drop_rows]
        T = np.vstack([T[keep], T[-1:]])
        basis = [basis[i] for i in keep]
        m = len(keep)

    # Phase 2 on the original columns.
    T2 = np.zeros((m + 1, n + 1))
    T2[:m, :n] = T[:m, :n]
    T2[:m, -1] = T[:m, -1]
    T2[-1, :n] = c0
    for i, bj in enumerate(basis):
        if bj < n and c0[bj] != 0.0:
            T2[-1] -= c0[bj] * T2[i]
    status = _simplex(T2, basis, T2[-1], n, max_pivots)
    if status == "unbounded":
        return LpSolution(np.zeros(n), np.nan, LpStatus.UNBOUNDED)
    x = np.zeros(n)
    for i, bj in enumerate(basis):
        if bj < n:
            x[bj] = T2[i, -1]
    # The tableau accumulates drift over pivots; re-solve the final basic
    # system against the untouched constraint data and keep the refinement
    # only when it is feasible and at least as accurate.
    cols = sorted({bj for bj in basis if bj < n})
    if cols:
        refined, *_ = np.linalg.lstsq(A0[:, cols], b0, rcond=None)
        candidate = np.zeros(n)
        candidate[cols] = refined
        if (np.all(refined >= -CLAMP_TOL)
                and np.max(np.abs(A0 @ candidate - b0))
                <= max(float(np.max(np.abs(A0 @ x - b0))), FEAS_TOL / 10)):
            x = candidate
    if np.any(x < -CLAMP_TOL):
        raise CyclingGuardError(f"basic solution left the nonnegative orthant "
                                f"(min {x.min():.3e})")
    x = np.where(x < 0.0, 0.0, x)
    residual = float(np.max(np.abs(A0 @ x - b0)))
    if residual > FEAS_TOL:
        raise CyclingGuardError(f"optimal candidate violates Ax=b by {residual:.3e}")
    return LpSolution(x, float(c0 @ x), LpStatus.OPTIMAL)
