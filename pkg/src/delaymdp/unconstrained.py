"""Solvers for the unconstrained cost-rate problem on the lifted MDP.

Two routes to the optimal cost rate rho*:

* two-layer: bisection on the Dinkelbach parameter lambda over the sign of
  U(lambda), with damped relative value iteration in the inner layer (the
  plain iteration is kept for regression: it oscillates on periodic
  instances);
* one-layer: synchronous fixed-point iterations on (rho, W) -- the plain
  version that may diverge, and a damped variant that provably converges
  without any outer search.

Values of V-like vectors are compared in the span seminorm (max - min),
since relative values are defined up to an additive constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lifted import EpochAction, LiftedMdp, cost_bounds
from .model import StationaryError, stationary_distribution

OSCILLATION_WINDOW = 100
OSCILLATION_REL_RANGE = 0.10
OVERFLOW_LIMIT = 1e100


class SolverError(RuntimeError):
    """Inner solver failed to converge where convergence is required."""


@dataclass(frozen=True)
class SolverConfig:
    """Shared solver knobs; every field is config-exposed in the CLI."""

    tau: float = 0.5
    kappa: float = 0.9
    tol: float = 1e-10
    k_max: int = 100_000
    eps: float = 1e-9        # bisection bracket width on rho*
    eps1: float = 1e-6       # constrained outer bracket width
    eps2: float = 1e-7       # constrained middle (multiplier) bracket width
    delta: float | None = None  # one-sided-limit perturbation; None -> auto


@dataclass
class IterationTrace:
    """Per-iteration scalar value and residual of a solver run."""

    values: np.ndarray
    residuals: np.ndarray
    iterations: int
    converged: bool
    oscillatory: bool = False
    overflow: bool = False

    def __post_init__(self):
        if len(self.values) != len(self.residuals):
            raise ValueError("trace lengths inconsistent")
        if len(self.residuals) and float(np.min(self.residuals)) < 0.0:
            raise ValueError("negative residual in trace")

    def to_rows(self) -> list[tuple[int, float, float]]:
        return [(k, float(v), float(r))
                for k, (v, r) in enumerate(zip(self.values, self.residuals), start=1)]


@dataclass(frozen=True)
class DeterministicPolicy:
    """Map lifted-state index -> epoch-action index (total, deterministic)."""

    action_indices: tuple[int, ...]

    def epoch_action(self, L: LiftedMdp, state: int) -> EpochAction:
        return L.actions[self.action_indices[state]]

    def action_probs(self, L: LiftedMdp) -> np.ndarray:
        probs = np.zeros((L.num_states, L.num_actions))
        probs[np.arange(L.num_states), list(self.action_indices)] = 1.0
        return probs

    def uses_max_wait(self, L: LiftedMdp) -> bool:
        return any(L.actions[ai].z == L.z_max for ai in self.action_indices)

    def validate(self, L: LiftedMdp) -> None:
        if len(self.action_indices) != L.num_states:
            raise ValueError("policy does not cover every lifted state")
        if any(not 0 <= ai < L.num_actions for ai in self.action_indices):
            raise ValueError("policy action index out of range")


@dataclass(frozen=True)
class PolicyEvaluation:
    """Stationary per-epoch cost Q, length F, and cost rate Q/F."""

    Q: float
    F: float
    cost_rate: float
    epoch_stationary: np.ndarray


def _flagged_trace(values, residuals, converged, tol, overflow=False) -> IterationTrace:
    values = np.asarray(values)
    residuals = np.asarray(residuals)
    oscillatory = False
    if not converged and not overflow and len(residuals) >= OSCILLATION_WINDOW:
        tail = residuals[-OSCILLATION_WINDOW:]
        lo, hi = float(np.min(tail)), float(np.max(tail))
        if lo > tol and hi > 0.0 and (hi - lo) / hi < OSCILLATION_REL_RANGE:
            oscillatory = True
    return IterationTrace(values, residuals, len(values), converged,
                          oscillatory=oscillatory, overflow=overflow)


def _span(v: np.ndarray) -> float:
    return float(np.max(v) - np.min(v))


def tau_rvi(L: LiftedMdp, lam: float, tau: float = 0.5, k_max: int = 100_000,
            tol: float = 1e-10, v0: np.ndarray | None = None
            ) -> tuple[float, np.ndarray, IterationTrace]:
    """Damped relative value iteration for U(lambda) on the lifted MDP.

    Updates, with reference state r and 0 < tau <= 1:

        U_{K+1}   = min_{z,a} { g(r,z,a) + tau E[V_K] }
        V_{K+1}   = (1-tau) V_K + min_{z,a} { g(.,z,a) + tau E[V_K] } - U_{K+1}

    Converges for unichain instances; the returned V approximates the ACOE
    relative value divided by tau.  Stops when both |U_{K+1}-U_K| and the
    span of V_{K+1}-V_K fall below tol.  tau = 1 is exactly plain RVI.
    """
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    n, m = L.num_states, L.num_actions
    g = L.g_table(lam)
    kernel2d = L.kernel.reshape(n * m, n)
    ref = L.reference_state
    if v0 is None:
        V = np.zeros(n)
    else:
        V = np.asarray(v0, dtype=float) - float(v0[ref])
    U_prev = 0.0
    values, residuals = [], []
    converged = False
    for _ in range(k_max):
        mins = (g + tau * (kernel2d @ V).reshape(n, m)).min(axis=1)
        U = float(mins[ref])
        V_next = (1.0 - tau) * V + mins - U
        residual = max(abs(U - U_prev), _span(V_next - V))
        values.append(U)
        residuals.append(residual)
        V, U_prev = V_next, U
        if residual < tol:
            converged = True
            break
    return U_prev, V, _flagged_trace(values, residuals, converged, tol)


def rvi(L: LiftedMdp, lam: float, k_max: int = 500, tol: float = 1e-10
        ) -> tuple[float, np.ndarray, IterationTrace]:
    """Plain relative value iteration from V_0 = 0 (tau-RVI with tau = 1).

    Kept for regression and comparison traces: on instances whose optimal
    lifted chain is periodic the iterates oscillate and never meet tol;
    that outcome is reported in the trace, not raised.
    """
    return tau_rvi(L, lam, tau=1.0, k_max=k_max, tol=tol)


def extract_policy(L: LiftedMdp, lam: float, V: np.ndarray) -> DeterministicPolicy:
    """Greedy policy of the ACOE at (lambda, V): per-state argmin of
    g(gamma,z,a;lambda) + E[V(gamma')].  Ties break to smallest z, then a."""
    n, m = L.num_states, L.num_actions
    vals = L.g_table(lam) + (L.kernel.reshape(n * m, n) @ V).reshape(n, m)
    return DeterministicPolicy(tuple(int(i) for i in np.argmin(vals, axis=1)))


def evaluate_policy(L: LiftedMdp, phi) -> PolicyEvaluation:
    """Stationary evaluation of a deterministic or randomized lifted policy.

    phi must expose action_probs(L) -> (num_states, num_actions) row
    distribution (DeterministicPolicy, MixturePolicy and OccupancyPolicy
    all do).  Raises StationaryError if the induced chain is multichain.
    """
    probs = phi.action_probs(L)
    K = np.einsum("ga,gah->gh", probs, L.kernel)
    qbar = (probs * L.q_table).sum(axis=1)
    fbar = probs @ L.f_table
    try:
        mu = stationary_distribution(K)
    except StationaryError as exc:
        raise StationaryError(f"policy-induced lifted chain: {exc}") from exc
    Q = float(mu @ qbar)
    F = float(mu @ fbar)
    return PolicyEvaluation(Q, F, Q / F, mu)


def bisec_tau_rvi(L: LiftedMdp, eps: float = 1e-9, tau: float = 0.5,
                  tol: float = 1e-10, k_max: int = 100_000
                  ) -> tuple[float, DeterministicPolicy, IterationTrace]:
    """Optimal cost rate rho* by bisection on the sign of U(lambda).

    The bracket starts at the cost-rate bounds (min cost entry, min
    constant-action stationary cost); rho* > lambda iff U(lambda) > 0.
    The returned policy is extracted from the converged inner solution at
    the final midpoint.  Inner non-convergence raises SolverError naming
    the offending lambda.
    """
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    lam_lo, lam_hi = cost_bounds(L.primal)
    values, widths = [], []
    V_warm = None

    def solve(lam: float):
        nonlocal V_warm
        U, V, trace = tau_rvi(L, lam, tau=tau, k_max=k_max, tol=tol, v0=V_warm)
        if not trace.converged:
            raise SolverError(f"inner tau-RVI did not converge at lambda={lam!r}")
        V_warm = V
        return U, V

    while lam_hi - lam_lo >= eps:
        lam = 0.5 * (lam_lo + lam_hi)
        U, _ = solve(lam)
        values.append(lam)
        widths.append(lam_hi - lam_lo)
        if U > 0.0:
            lam_lo = lam
        else:
            lam_hi = lam
    rho = 0.5 * (lam_lo + lam_hi)
    _, V = solve(rho)
    policy = extract_policy(L, rho, tau * V)
    trace = IterationTrace(np.asarray(values), np.asarray(widths),
                           len(values), converged=True)
    return rho, policy, trace


def _ratio_min(L: LiftedMdp, W: np.ndarray, state: int) -> float:
    """min over epoch actions of (q(state,.) + E[W]) / f at one state."""
    n, m = L.num_states, L.num_actions
    ew = L.kernel[state].reshape(m, n) @ W
    return float(np.min((L.q_table[state] + ew) / L.f_table))


def fixed_point_residuals(L: LiftedMdp, W: np.ndarray, rho: float
                          ) -> tuple[float, float]:
    """Residuals of the two optimality equations at (W, rho):

        W(gamma) = min { q - rho f + E[W] }       (all gamma)
        rho      = min { (q + E[W]) / f }         (reference state)
    """
    n, m = L.num_states, L.num_actions
    mins = (L.g_table(rho) + (L.kernel.reshape(n * m, n) @ W).reshape(n, m)).min(axis=1)
    res_w = float(np.max(np.abs(W - mins)))
    res_rho = abs(rho - _ratio_min(L, W, L.reference_state))
    return res_w, res_rho


def fpbi(L: LiftedMdp, k_max: int = 500, tol: float = 1e-10
         ) -> tuple[float, np.ndarray, IterationTrace]:
    """Plain fixed-point iteration on (W, rho) from W_0 = 0.

    Each step sets rho_hat from the reference-state ratio minimum, applies
    the Bellman-style operator at rho_hat, and re-reads rho.  The operator
    is only non-expansive, so divergence is a legitimate reported outcome;
    iterate overflow aborts the trace with the overflow flag set.
    """
    n, m = L.num_states, L.num_actions
    kernel2d = L.kernel.reshape(n * m, n)
    W = np.zeros(n)
    rho_prev = 0.0
    values, residuals = [], []
    converged = False
    overflow = False
    for _ in range(k_max):
        rho_hat = _ratio_min(L, W, L.reference_state)
        mins = (L.g_table(rho_hat) + (kernel2d @ W).reshape(n, m)).min(axis=1)
        W_next = mins
        if not np.all(np.isfinite(W_next)) or np.max(np.abs(W_next)) > OVERFLOW_LIMIT:
            overflow = True
            break
        rho = _ratio_min(L, W_next, L.reference_state)
        residual = max(abs(rho - rho_prev), float(np.max(np.abs(W_next - W))))
        values.append(rho)
        residuals.append(residual)
        W, rho_prev = W_next, rho
        if residual < tol:
            converged = True
            break
    return rho_prev, W, _flagged_trace(values, residuals, converged, tol,
                                       overflow=overflow)


def one_pdsi(L: LiftedMdp, kappa: float = 0.9, k_max: int = 100_000,
             tol: float = 1e-12
             ) -> tuple[float, np.ndarray, DeterministicPolicy, IterationTrace]:
    """One-layer damped synchronous iteration for rho* (no outer bisection).

    With 0 < kappa < 1, mean delay Ybar and reference state r:

        m_K(gamma,z,a) = [ q + kappa Ybar (E[Wt_K] - Wt_K(gamma)) ] / f(z)
        rho_{K+1}      = min m_K(r,.,.) + Wt_K(r)
        Wt_{K+1}       = min m_K(.,.,.) + Wt_K - rho_{K+1}

    On convergence rho_K -> rho* and kappa * Ybar * Wt equals the W of the
    optimality equations; both fixed-point residuals are verified before
    success is declared.  Returns (rho*, W, greedy policy, trace); raises
    SolverError on non-convergence within k_max.
    """
    if not 0.0 < kappa < 1.0:
        raise ValueError(f"kappa must be in (0, 1), got {kappa}")
    n, m = L.num_states, L.num_actions
    kernel2d = L.kernel.reshape(n * m, n)
    ybar = L.delay_mean
    ref = L.reference_state
    Wt = np.zeros(n)
    rho_prev = 0.0
    values, residuals = [], []
    converged = False
    for _ in range(k_max):
        ew = (kernel2d @ Wt).reshape(n, m)
        numer = L.q_table + kappa * ybar * (ew - Wt[:, np.newaxis])
        mins = (numer / L.f_table[np.newaxis, :]).min(axis=1)
        rho = float(mins[ref]) + Wt[ref]
        Wt_next = mins + Wt - rho
        residual = max(abs(rho - rho_prev), float(np.max(np.abs(Wt_next - Wt))))
        values.append(rho)
        residuals.append(residual)
        Wt, rho_prev = Wt_next, rho
        if residual < tol:
            converged = True
            break
    trace = _flagged_trace(values, residuals, converged, tol)
    if not converged:
        raise SolverError(f"one-layer iteration stalled beyond {k_max} iterations "
                          f"(last residual {residuals[-1]:.3e})")
    W = kappa * ybar * Wt
    res_w, res_rho = fixed_point_residuals(L, W, rho_prev)
    bound = max(10.0 * tol, 1e-12)
    if res_w > bound or res_rho > bound:
        raise SolverError(
            f"iterates converged but the fixed-point residuals "
            f"({res_w:.3e}, {res_rho:.3e}) exceed {bound:.3e}")
    policy = extract_policy(L, rho_prev, W)
    return rho_prev, W, policy, trace


def default_delta(lam: float, delta: float | None = None) -> float:
    if delta is not None:
        return delta
    return max(1e-6, 1e-8 * abs(lam))


def policy_at(L: LiftedMdp, lam: float, tau: float = 0.5, tol: float = 1e-10,
              k_max: int = 100_000, v0: np.ndarray | None = None
              ) -> tuple[DeterministicPolicy, PolicyEvaluation, float, np.ndarray]:
    """Solve at lambda and return (greedy policy, its evaluation, U, V).

    Raises SolverError if the inner iteration does not converge.
    """
    U, V, trace = tau_rvi(L, lam, tau=tau, k_max=k_max, tol=tol, v0=v0)
    if not trace.converged:
        raise SolverError(f"tau-RVI did not converge at lambda={lam!r}")
    phi = extract_policy(L, lam, tau * V)
    return phi, evaluate_policy(L, phi), U, V


def f_limits(L: LiftedMdp, lam: float, delta: float | None = None,
             tau: float = 0.5, tol: float = 1e-10, k_max: int = 100_000
             ) -> tuple[float, float]:
    """One-sided limits (F^{lambda-}, F^{lambda+}) of the optimal-policy epoch
    length, via solves at lambda -/+ delta (F is a step function of lambda)."""
    dl = default_delta(lam, delta)
    if dl <= 0.0:
        raise ValueError(f"delta must be positive, got {dl}")
    _, ev_minus, _, _ = policy_at(L, lam - dl, tau=tau, tol=tol, k_max=k_max)
    _, ev_plus, _, _ = policy_at(L, lam + dl, tau=tau, tol=tol, k_max=k_max)
    return ev_minus.F, ev_plus.F
