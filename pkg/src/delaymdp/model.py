"""Primal controlled Markov chain and delay-channel definitions.

The controlled source is a finite MDP given by per-action row-stochastic
transition matrices and a (state, action) cost table.  Delivery delays are
positive-integer random variables with explicit finite support; binary and
truncated-geometric channels are constructors over the same representation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROW_SUM_TOL = 1e-12
STATIONARY_TOL = 1e-10


class ModelError(ValueError):
    """Invalid primal MDP or delay distribution."""


class StationaryError(ValueError):
    """No unique stationary distribution within tolerance."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(a, dtype=float))
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PrimalMdp:
    """Finite controlled Markov chain <S, A, P_a, C>.

    transition has shape (num_actions, num_states, num_states); cost has
    shape (num_states, num_actions).  Instances are immutable and safe to
    share across threads.
    """

    transition: np.ndarray
    cost: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "transition", _readonly(self.transition))
        object.__setattr__(self, "cost", _readonly(self.cost))
        validate_primal(self)

    @property
    def num_states(self) -> int:
        return self.transition.shape[1]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[0]


@dataclass(frozen=True)
class DelayDistribution:
    """Finite-support distribution of the per-packet delivery delay (slots).

    support is sorted ascending, values >= 1, probabilities sum to 1.
    """

    support: tuple[int, ...]
    probabilities: np.ndarray

    def __post_init__(self):
        sup = tuple(int(y) for y in self.support)
        probs = _readonly(self.probabilities)
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "probabilities", probs)
        if len(sup) == 0:
            raise ModelError("delay support is empty")
        if len(sup) != len(set(sup)):
            raise ModelError("delay support values must be distinct")
        if any(y < 1 for y in sup):
            raise ModelError(f"delay support must be >= 1 slot, got {min(sup)}")
        if list(sup) != sorted(sup):
            raise ModelError("delay support must be sorted ascending")
        if probs.shape != (len(sup),):
            raise ModelError("support and probabilities length mismatch")
        if np.any(probs < 0.0) or np.any(probs > 1.0):
            raise ModelError("delay probabilities must lie in [0, 1]")
        if abs(float(probs.sum()) - 1.0) > ROW_SUM_TOL:
            raise ModelError(
                f"delay probabilities sum to {probs.sum()!r}, expected 1 within {ROW_SUM_TOL}"
            )

    @property
    def y_max(self) -> int:
        return self.support[-1]


@dataclass(frozen=True)
class DecisionRule:
    """Pure per-state decision policy: state index -> action index."""

    actions: tuple[int, ...]

    def __call__(self, state: int) -> int:
        return self.actions[state]

    def validate(self, m: PrimalMdp) -> None:
        if len(self.actions) != m.num_states:
            raise ModelError("decision rule does not cover every state")
        if any(not 0 <= a < m.num_actions for a in self.actions):
            raise ModelError("decision rule action index out of range")


def validate_primal(m: PrimalMdp) -> None:
    """Check row-stochasticity and finite costs; raise ModelError otherwise."""
    P, C = m.transition, m.cost
    if P.ndim != 3 or P.shape[1] != P.shape[2]:
        raise ModelError(f"transition must have shape (A, S, S), got {P.shape}")
    n_a, n_s = P.shape[0], P.shape[1]
    if n_a < 1 or n_s < 1:
        raise ModelError("need at least one state and one action")
    if C.shape != (n_s, n_a):
        raise ModelError(f"cost must have shape ({n_s}, {n_a}), got {C.shape}")
    if np.any(P < 0.0) or np.any(P > 1.0):
        a, s, _ = np.unravel_index(int(np.argmin(P)), P.shape)
        raise ModelError(f"negative transition probability in action {a}, row {s}")
    row_sums = P.sum(axis=2)
    bad = np.argwhere(np.abs(row_sums - 1.0) > ROW_SUM_TOL)
    if bad.size:
        a, s = bad[0]
        raise ModelError(
            f"transition row (action {a}, state {s}) sums to {row_sums[a, s]!r}, "
            f"expected 1 within {ROW_SUM_TOL}"
        )
    if not np.all(np.isfinite(C)):
        raise ModelError("cost table contains a non-finite entry")


def make_delay(kind: str, **kwargs) -> DelayDistribution:
    """Construct a delay distribution.

    kind "binary": Pr(Y=1) = p, Pr(Y=y_max) = 1-p (single atom when p in {0,1}).
    kind "truncated_geometric": Pr(Y=y) = q(1-q)^(y-1) / (1-(1-q)^y_max), y=1..y_max.
    kind "explicit": given support and probs.
    """
    if kind == "binary":
        p, y_max = float(kwargs["p"]), int(kwargs["y_max"])
        if not 0.0 <= p <= 1.0:
            raise ModelError(f"binary delay needs 0 <= p <= 1, got {p}")
        if y_max < 1:
            raise ModelError(f"binary delay needs y_max >= 1, got {y_max}")
        if p == 1.0 or y_max == 1:
            return DelayDistribution((1,), np.array([1.0]))
        if p == 0.0:
            return DelayDistribution((y_max,), np.array([1.0]))
        return DelayDistribution((1, y_max), np.array([p, 1.0 - p]))
    if kind == "truncated_geometric":
        q, y_max = float(kwargs["q"]), int(kwargs["y_max"])
        if not 0.0 < q < 1.0:
            raise ModelError(f"truncated geometric needs 0 < q < 1, got {q}")
        if y_max < 1:
            raise ModelError(f"truncated geometric needs y_max >= 1, got {y_max}")
        y = np.arange(1, y_max + 1)
        mass = q * (1.0 - q) ** (y - 1)
        mass /= 1.0 - (1.0 - q) ** y_max
        return DelayDistribution(tuple(int(v) for v in y), mass / mass.sum())
    if kind == "explicit":
        support = tuple(int(y) for y in kwargs["support"])
        probs = np.asarray(kwargs["probs"], dtype=float)
        return DelayDistribution(support, probs)
    raise ModelError(f"unknown delay kind {kind!r}")


def delay_moments(d: DelayDistribution) -> tuple[float, float]:
    """Exact (mean, second moment) of the delay over its support."""
    y = np.array(d.support, dtype=float)
    mean = float(y @ d.probabilities)
    second = float((y * y) @ d.probabilities)
    return mean, second


def matrix_powers(P: np.ndarray, n_max: int) -> list[np.ndarray]:
    """[P^0, P^1, ..., P^n_max] by repeated multiplication."""
    n = P.shape[0]
    powers = [np.eye(n)]
    for _ in range(n_max):
        powers.append(powers[-1] @ P)
    return powers


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    """Unique stationary distribution pi of a row-stochastic P (pi P = pi).

    Solves the balance equations with one equation replaced by the
    normalization sum(pi) = 1, then verifies the fixed point to 1e-10.
    Raises StationaryError on non-stochastic, singular, or multichain input.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise StationaryError(f"expected a square matrix, got shape {P.shape}")
    n = P.shape[0]
    if np.any(P < -ROW_SUM_TOL) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-9):
        raise StationaryError("matrix is not row-stochastic")
    A = P.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise StationaryError(f"balance system is singular: {exc}") from exc
    # A multichain P has rank(P - I) < n-1; the solve may still "succeed"
    # numerically, so check uniqueness through the singular spectrum.
    if n > 1:
        svals = np.linalg.svd(P - np.eye(n), compute_uv=False)
        if svals[-2] < 1e-10:
            raise StationaryError("no unique stationary distribution (multichain input)")
    residual = float(np.max(np.abs(pi @ P - pi)))
    if residual > STATIONARY_TOL or np.any(pi < -1e-12):
        raise StationaryError(f"stationary solve failed (residual {residual:.3e})")
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


# Two-state / two-action benchmark instance, exposed to the CLI as the
# "appendix-h" preset.
BENCHMARK_PRIMAL = PrimalMdp(
    transition=np.array(
        [
            [[0.9, 0.1], [0.1, 0.9]],
            [[0.6, 0.4], [0.01, 0.99]],
        ]
    ),
    cost=np.array([[40.0, 60.0], [0.0, 20.0]]),
)
