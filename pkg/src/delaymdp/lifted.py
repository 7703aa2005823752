"""Lifted decision process over delivery epochs.

At each delivery the controller observes (sampled state, realized delay,
previous action) and chooses (waiting time z, next held action a).  The
epoch then lasts z plus the next delay.  This module builds the finite MDP
over those sufficient statistics: transition kernel, expected epoch cost q,
epoch length f(z) = E[Y] + z, plus a unichain sufficient-condition check
and bounds on the optimal cost rate.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .model import (
    DelayDistribution,
    PrimalMdp,
    matrix_powers,
    stationary_distribution,
)

KERNEL_TOL = 1e-10


class LiftedBuildError(ValueError):
    """Lifted construction rejected (bad arguments or memory cap)."""


class BudgetExceededError(ValueError):
    """Enumeration budget of the unichain check exceeded."""


@dataclass(frozen=True)
class LiftedState:
    s: int        # sampled primal state
    y: int        # realized delivery delay (must be in the delay support)
    a_prev: int   # action held while the sample was in flight


@dataclass(frozen=True)
class EpochAction:
    z: int  # waiting time before the next sample, 0..z_max
    a: int  # action held over the coming epoch


@dataclass(frozen=True)
class UnichainCheck:
    holds: bool
    witness_state: int | None
    m: int
    eps: float


class LiftedMdp:
    """Dense lifted MDP: states, epoch actions, kernel, q and f tables.

    States are enumerated lexicographically over (s, y, a_prev) with y
    running over the sorted delay support; actions over (z, a) with z-major
    order, so np.argmin tie-breaking picks smallest z then smallest a.
    The reference state is index 0: (s=0, smallest delay, a_prev=0).
    """

    def __init__(self, primal: PrimalMdp, delay: DelayDistribution, z_max: int,
                 kernel: np.ndarray, q_table: np.ndarray, f_table: np.ndarray,
                 delay_mean: float):
        self.primal = primal
        self.delay = delay
        self.z_max = z_max
        self.kernel = kernel      # (n_states, n_actions, n_states)
        self.q_table = q_table    # (n_states, n_actions)
        self.f_table = f_table    # (n_actions,)
        self.delay_mean = delay_mean
        self.reference_state = 0
        self.states: list[LiftedState] = [
            LiftedState(s, y, a)
            for s, y, a in itertools.product(
                range(primal.num_states), delay.support, range(primal.num_actions))
        ]
        self.actions: list[EpochAction] = [
            EpochAction(z, a)
            for z, a in itertools.product(range(z_max + 1), range(primal.num_actions))
        ]
        self._state_index = {(g.s, g.y, g.a_prev): i for i, g in enumerate(self.states)}
        for arr in (kernel, q_table, f_table):
            arr.flags.writeable = False

    @property
    def num_states(self) -> int:
        return len(self.states)

    @property
    def num_actions(self) -> int:
        return len(self.actions)

    def state_index(self, s: int, y: int, a_prev: int) -> int:
        return self._state_index[(s, y, a_prev)]

    def action_index(self, z: int, a: int) -> int:
        return z * self.primal.num_actions + a

    def g_table(self, lam: float) -> np.ndarray:
        """Per-(state, action) cost q - lam * f of the Dinkelbach MDP."""
        return self.q_table - lam * self.f_table[np.newaxis, :]

    def summary(self) -> dict:
        lo, hi = cost_bounds(self.primal)
        return {
            "num_lifted_states": self.num_states,
            "num_epoch_actions": self.num_actions,
            "z_max": self.z_max,
            "delay_mean": self.delay_mean,
            "cost_rate_bounds": [lo, hi],
        }


def build_lifted(m: PrimalMdp, d: DelayDistribution, z_max: int,
                 memory_cap_bytes: int = 1 << 30) -> LiftedMdp:
    """Build the lifted MDP for waiting times 0..z_max.

    Kernel:  p((s', y', a') | (s, y, a), z, A)
               = Pr(Y = y') * [P_a^y P_A^z]_{s, s'} * 1{a' = A}
    Cost:    q((s, y, a), z, A)
               = E_Y' [ sum_{t=0}^{z+Y'-1} P_a^y P_A^t ]_{s, :} . C(:, A)
    Length:  f(z) = E[Y] + z.
    """
    if z_max < 0:
        raise LiftedBuildError(f"z_max must be >= 0, got {z_max}")
    n_s, n_a = m.num_states, m.num_actions
    n_y = len(d.support)
    y_max = d.y_max
    pow_bytes = n_a * (z_max + y_max + 1) * n_s * n_s * 8
    n_lift = n_s * n_y * n_a
    n_act = (z_max + 1) * n_a
    kern_bytes = n_lift * n_act * n_lift * 8
    if pow_bytes + kern_bytes > memory_cap_bytes:
        raise LiftedBuildError(
            f"lifted build needs ~{pow_bytes + kern_bytes} bytes "
            f"(cap {memory_cap_bytes}); lower z_max or raise the cap")

    # Matrix powers P_a^k for k = 0..z_max + y_max, reused by kernel and cost.
    powers = [matrix_powers(m.transition[a], z_max + y_max) for a in range(n_a)]
    # Partial sums S_a(n) = sum_{t=0}^{n-1} P_a^t for n = 0..z_max + y_max.
    cum = []
    for a in range(n_a):
        acc = [np.zeros((n_s, n_s))]
        for k in range(z_max + y_max):
            acc.append(acc[-1] + powers[a][k])
        cum.append(acc)

    mean = float(np.array(d.support, dtype=float) @ d.probabilities)
    # f built cumulatively so f(z+1) - f(z) == 1.0 exactly.
    f_z = np.empty(z_max + 1)
    f_z[0] = mean
    for z in range(z_max):
        f_z[z + 1] = f_z[z] + 1.0
    f_table = np.repeat(f_z, n_a)

    supp = list(d.support)
    probs = d.probabilities
    q_table = np.empty((n_lift, n_act))
    kernel = np.zeros((n_lift, n_act, n_lift))

    # u[A][z] = E_Y'[ S_A(z + Y') ] @ C(:, A): expected epoch cost seen from
    # the delivery-time state distribution.
    u = np.empty((n_a, z_max + 1, n_s))
    for A in range(n_a):
        cA = m.cost[:, A]
        for z in range(z_max + 1):
            mix = np.zeros((n_s, n_s))
            for dy, py in zip(supp, probs):
                mix += py * cum[A][z + dy]
            u[A, z] = mix @ cA

    for gi, (s, y, a_prev) in enumerate(
            itertools.product(range(n_s), supp, range(n_a))):
        prop = powers[a_prev][y][s]  # row: distribution of the state at delivery
        for z in range(z_max + 1):
            for A in range(n_a):
                ai = z * n_a + A
                q_table[gi, ai] = prop @ u[A, z]
                reach = prop @ powers[A][z]  # distribution of the next sampled state
                # Successor (s', y', a'=A): stride n_a walks a_prev within the
                # lexicographic (s, y, a_prev) enumeration.
                kernel[gi, ai, A::n_a] = np.outer(reach, probs).ravel()

    row_sums = kernel.sum(axis=2)
    worst = float(np.max(np.abs(row_sums - 1.0)))
    if worst > KERNEL_TOL:
        raise LiftedBuildError(f"kernel rows deviate from 1 by {worst:.3e}")
    return LiftedMdp(m, d, z_max, kernel, q_table, f_table, mean)


def default_z_max(d: DelayDistribution) -> int:
    return 2 * d.y_max


def cost_bounds(m: PrimalMdp) -> tuple[float, float]:
    """(min cost entry, min constant-action stationary cost): brackets the
    optimal unconstrained cost rate."""
    lo = float(np.min(m.cost))
    hi = min(
        float(stationary_distribution(m.transition[a]) @ m.cost[:, a])
        for a in range(m.num_actions)
    )
    if lo > hi + 1e-12:
        raise LiftedBuildError(f"bounds crossed: {lo} > {hi}")
    return lo, hi


def check_unichain_sufficient(L: LiftedMdp, m: int, eps: float,
                              budget: int = 1_000_000) -> UnichainCheck:
    """Sufficient condition for the lifted MDP to be unichain.

    Searches for a primal state s* that every initial (s, a) reaches with
    probability >= eps after m epochs, for every admissible sequence of
    (delay, action, wait).  One epoch contributes a factor P_a^delta P_A^z
    to the product.  Enumeration is depth-first over sequences; candidate
    witness columns are discarded as soon as a completed product falsifies
    them, and the search stops early once none remain.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    primal = L.primal
    n_s, n_a = primal.num_states, primal.num_actions
    supp = list(L.delay.support)
    per_epoch = n_a * (L.z_max + 1) * len(supp)
    if per_epoch ** m > budget:
        raise BudgetExceededError(
            f"{per_epoch}^{m} admissible sequences exceed budget {budget}")

    powers = [matrix_powers(primal.transition[a], L.z_max + L.delay.y_max)
              for a in range(n_a)]
    # Epoch factors keyed by the action that was held while the sample flew
    # (prev) and the freshly chosen action (nxt).
    factors = {
        (prev, dy, nxt, z): powers[prev][dy] @ powers[nxt][z]
        for prev in range(n_a) for dy in supp
        for nxt in range(n_a) for z in range(L.z_max + 1)
    }
    col_min = np.full(n_s, np.inf)

    class _NoCandidates(Exception):
        pass

    def walk(depth: int, prods: list[tuple[int, np.ndarray]]) -> None:
        # prods: per initial previous-action a, the product of epoch factors
        # applied so far; rows index the initial primal state.
        nonlocal col_min
        if depth == m:
            for _, R in prods:
                col_min = np.minimum(col_min, R.min(axis=0))
            if not np.any(col_min >= eps):
                raise _NoCandidates
            return
        for dy in supp:
            for nxt in range(n_a):
                for z in range(L.z_max + 1):
                    walk(depth + 1,
                         [(nxt, R @ factors[(prev, dy, nxt, z)])
                          for prev, R in prods])

    eye = np.eye(n_s)
    try:
        walk(0, [(a, eye) for a in range(n_a)])
    except _NoCandidates:
        return UnichainCheck(False, None, m, eps)
    best = int(np.argmax(col_min))
    if col_min[best] >= eps:
        return UnichainCheck(True, best, m, eps)
    return UnichainCheck(False, None, m, eps)
