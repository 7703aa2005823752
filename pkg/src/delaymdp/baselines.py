"""Benchmark sampling rules and per-state decision rules.

Sampling rules map the observed delivery delay to a waiting time: zero-wait,
constant-wait(z), and the threshold rule z(Y) = max(0, beta - Y) tuned to
minimize age.  Uniform (fixed-period) sampling is not a waiting rule under
the sample-after-delivery protocol and runs only in the queued simulator.
By default every baseline pairs its sampling rule with the long-term
optimal decision rule of the delay-free source.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lifted import LiftedMdp
from .model import DecisionRule, DelayDistribution, PrimalMdp
from .unconstrained import DeterministicPolicy, SolverError


class UniformRuleError(ValueError):
    """Uniform sampling has no per-delivery waiting time; use the queued
    simulator (sim.simulate_uniform_queue)."""


@dataclass(frozen=True)
class SamplingRule:
    kind: str            # zero_wait | constant_wait | uniform | aoi_threshold
    z: int = 0           # constant_wait parameter
    d: int = 1           # uniform sampling period
    beta: float = 0.0    # aoi_threshold parameter

    @classmethod
    def zero_wait(cls) -> "SamplingRule":
        return cls("zero_wait")

    @classmethod
    def constant_wait(cls, z: int) -> "SamplingRule":
        if z < 0:
            raise ValueError(f"constant wait must be >= 0, got {z}")
        return cls("constant_wait", z=int(z))

    @classmethod
    def uniform(cls, d: int) -> "SamplingRule":
        if d < 1:
            raise ValueError(f"uniform period must be >= 1, got {d}")
        return cls("uniform", d=int(d))

    @classmethod
    def aoi_threshold(cls, beta: float) -> "SamplingRule":
        if beta < 0.0:
            raise ValueError(f"threshold must be >= 0, got {beta}")
        return cls("aoi_threshold", beta=float(beta))


def sampling_rule_wait(rule: SamplingRule, y: int) -> int:
    """Waiting time after a delivery with realized delay y.

    The threshold rule rounds to the nearest integer slot (halves up); the
    source result is continuous-time.
    """
    if rule.kind == "zero_wait":
        return 0
    if rule.kind == "constant_wait":
        return rule.z
    if rule.kind == "aoi_threshold":
        return int(math.floor(max(0.0, rule.beta - y) + 0.5))
    if rule.kind == "uniform":
        raise UniformRuleError(
            "uniform sampling is queued, not sample-after-delivery; "
            "simulate it with simulate_uniform_queue")
    raise ValueError(f"unknown sampling rule kind {rule.kind!r}")


def aoi_optimal_beta(d: DelayDistribution, f_max: float, tol: float = 1e-10
                     ) -> float:
    """Threshold beta of the age-optimal waiting rule z(Y) = max(0, beta - Y).

    beta is the root of E[Y + z(Y)] - max(1/f_max, E[(Y+z(Y))^2] / (2 beta)),
    found by bisection after geometric bracket expansion.  The residual is
    monotone non-decreasing in beta; that is asserted on the probes.
    """
    if f_max <= 0.0:
        raise ValueError(f"f_max must be positive, got {f_max}")
    y = np.array(d.support, dtype=float)
    p = d.probabilities
    inv_rate = 0.0 if math.isinf(f_max) else 1.0 / f_max

    def residual(beta: float) -> float:
        w = y + np.maximum(0.0, beta - y)
        first = float(w @ p)
        second = float((w * w) @ p)
        return first - max(inv_rate, second / (2.0 * beta))

    lo = min(d.support) * 1e-6
    hi = float(max(d.support, default=1))
    expansions = 0
    while residual(hi) < 0.0:
        hi *= 2.0
        expansions += 1
        if expansions > 200:
            raise SolverError("threshold bracket expansion cap exceeded")
    probes: list[tuple[float, float]] = []

    def check_monotone(beta: float, r: float) -> None:
        probes.append((beta, r))
        probes.sort()
        rs = [v for _, v in probes]
        if any(b < a - 1e-9 for a, b in zip(rs, rs[1:])):
            raise SolverError("threshold residual lost monotonicity")

    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        r = residual(mid)
        check_monotone(mid, r)
        if r < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def myopic_policy(m: PrimalMdp) -> DecisionRule:
    """Per-state one-step cost argmin; ties to the smallest action index."""
    return DecisionRule(tuple(int(a) for a in np.argmin(m.cost, axis=1)))


def longterm_primal_policy(m: PrimalMdp, tol: float = 1e-10,
                           k_max: int = 100_000, tau: float = 0.5
                           ) -> DecisionRule:
    """Average-cost optimal decision rule of the delay-free source.

    Damped relative value iteration on the primal chain (the damping keeps
    the iteration convergent when the optimal chain is periodic).
    """
    n_s, n_a = m.num_states, m.num_actions
    V = np.zeros(n_s)
    converged = False
    for _ in range(k_max):
        vals = m.cost + tau * np.einsum("aij,j->ia", m.transition, V)
        mins = vals.min(axis=1)
        U = mins[0]
        V_next = (1.0 - tau) * V + mins - U
        if np.max(V_next - V) - np.min(V_next - V) < tol:
            V = V_next
            converged = True
            break
        V = V_next
    if not converged:
        raise SolverError(f"primal value iteration did not converge in {k_max}")
    vals = m.cost + np.einsum("aij,j->ia", m.transition, tau * V)
    return DecisionRule(tuple(int(a) for a in np.argmin(vals, axis=1)))


def baseline_lifted_policy(L: LiftedMdp, rule: SamplingRule,
                           decision: DecisionRule) -> DeterministicPolicy:
    """Express (sampling rule, decision rule) as a lifted policy for exact
    stationary evaluation.  Requires every prescribed wait to fit in z_max."""
    decision.validate(L.primal)
    indices = []
    for g in L.states:
        z = sampling_rule_wait(rule, g.y)
        if z > L.z_max:
            raise ValueError(
                f"rule asks to wait {z} slots but the lifted MDP was built "
                f"with z_max={L.z_max}; rebuild with a larger z_max")
        indices.append(L.action_index(z, decision(g.s)))
    return DeterministicPolicy(tuple(indices))


def aoi_rule_mean_interval(d: DelayDistribution, beta: float) -> float:
    """Mean epoch length E[Y + z(Y)] of the integer-rounded threshold rule."""
    mean = 0.0
    for y, p in zip(d.support, d.probabilities):
        rule_z = int(math.floor(max(0.0, beta - y) + 0.5))
        mean += float(p) * (y + rule_z)
    return mean
