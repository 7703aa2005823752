"""Rate-constrained solves: nested Lagrangian search and a two-stage LP route.

The sampling-frequency constraint (mean epoch length >= 1/f_max) is handled
two ways.  The three-layer route bisects the Dinkelbach parameter lambda on
the sign of the dual value d(lambda; f_max), with an inner multiplier
search for theta and damped value iteration underneath.  quick_blp solves
the unconstrained root once with the one-layer iteration and, only when
the constraint binds, one occupancy-measure LP whose optimum gives the
answer directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lifted import LiftedMdp, cost_bounds
from .lp import LinearProgram, LpStatus, solve_lp
from .unconstrained import (
    DeterministicPolicy,
    PolicyEvaluation,
    SolverConfig,
    SolverError,
    default_delta,
    evaluate_policy,
    one_pdsi,
    policy_at,
)

F_MATCH_TOL = 1e-9
ZERO_MASS = 1e-12
STEP_EQUAL_TOL = 1e-9
MAX_DOUBLINGS = 60


class InfeasibleRateError(ValueError):
    """The requested sampling rate cannot be met by any admissible policy."""


@dataclass(frozen=True)
class MixturePolicy:
    """Randomize between two deterministic policies with a fresh coin at
    every delivery epoch: phi_plus with probability eta, else phi_minus."""

    phi_plus: DeterministicPolicy
    phi_minus: DeterministicPolicy
    eta: float

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")

    def action_probs(self, L: LiftedMdp) -> np.ndarray:
        return (self.eta * self.phi_plus.action_probs(L)
                + (1.0 - self.eta) * self.phi_minus.action_probs(L))


@dataclass(frozen=True)
class OccupancyPolicy:
    """Per-state action distribution recovered from an occupancy measure;
    zero-mass states fall back to a deterministic policy's action."""

    probs: np.ndarray
    fallback: DeterministicPolicy

    def action_probs(self, L: LiftedMdp) -> np.ndarray:
        return self.probs


@dataclass(frozen=True)
class ConstrainedReport:
    h_star: float
    lambda_star: float
    theta_star: float | None
    policy: object
    achieved_F: float
    binding: bool
    method: str

    def policy_kind(self) -> str:
        if isinstance(self.policy, MixturePolicy):
            return "mixture"
        if isinstance(self.policy, OccupancyPolicy):
            return "occupancy"
        return "deterministic"

    def to_json_dict(self) -> dict:
        return {
            "h_star": self.h_star,
            "lambda_star": self.lambda_star,
            "theta_star": self.theta_star,
            "achieved_F": self.achieved_F,
            "binding": self.binding,
            "method": self.method,
            "policy_kind": self.policy_kind(),
            "policy": _policy_json(self.policy),
        }

    def to_sweep_row(self, f_max: float) -> tuple:
        return (f_max, self.h_star, self.achieved_F, self.binding, self.method)


def _policy_json(policy) -> dict:
    """Compact serialization; action indices decode through LiftedMdp.actions."""
    if isinstance(policy, MixturePolicy):
        return {"eta": policy.eta,
                "plus_action_indices": list(policy.phi_plus.action_indices),
                "minus_action_indices": list(policy.phi_minus.action_indices)}
    if isinstance(policy, OccupancyPolicy):
        return {"action_probs": [[float(p) for p in row]
                                 for row in policy.probs],
                "fallback_action_indices": list(policy.fallback.action_indices)}
    return {"action_indices": list(policy.action_indices)}


def max_epoch_length(L: LiftedMdp) -> float:
    return float(L.f_table[-1])


def _require_feasible(L: LiftedMdp, f_max: float) -> float:
    if f_max <= 0.0:
        raise ValueError(f"f_max must be positive, got {f_max}")
    target = 1.0 / f_max
    if target > max_epoch_length(L) + 1e-9:
        raise InfeasibleRateError(
            f"mean epoch length cannot exceed {max_epoch_length(L)} slots "
            f"(z_max {L.z_max}); rate 1/f_max = {target} is unreachable")
    return target


class _WarmSolver:
    """tau-RVI solves that reuse the previous relative values as the next
    starting point; nearby lambdas then converge in a handful of sweeps."""

    def __init__(self, L: LiftedMdp, cfg: SolverConfig):
        self.L = L
        self.cfg = cfg
        self._v = None

    def at(self, lam: float) -> tuple[DeterministicPolicy, PolicyEvaluation, float]:
        phi, ev, U, V = policy_at(
            self.L, lam, tau=self.cfg.tau, tol=self.cfg.tol,
            k_max=self.cfg.k_max, v0=self._v)
        self._v = V
        return phi, ev, U

    def plus_side(self, lam: float) -> tuple[DeterministicPolicy, PolicyEvaluation]:
        phi, ev, _ = self.at(lam + default_delta(lam, self.cfg.delta))
        return phi, ev


def lagrangian_dual_value(L: LiftedMdp, lam: float, theta: float, f_max: float,
                          cfg: SolverConfig = SolverConfig()
                          ) -> tuple[float, float, DeterministicPolicy]:
    """Dual value Upsilon(theta, lambda) = U(lambda + theta) + theta / f_max,
    together with the minimizing policy's mean epoch length and the policy."""
    if theta < 0.0:
        raise ValueError(f"theta must be >= 0, got {theta}")
    if f_max <= 0.0:
        raise ValueError(f"f_max must be positive, got {f_max}")
    phi, ev, U = _WarmSolver(L, cfg).at(lam + theta)
    return U + theta / f_max, ev.F, phi


@dataclass(frozen=True)
class ThetaBracket:
    """Result of the multiplier search at fixed lambda."""

    theta_star: float
    phi_minus: DeterministicPolicy
    F_minus: float
    phi_plus: DeterministicPolicy
    F_plus: float


def middle_theta_search(L: LiftedMdp, lam: float, f_max: float,
                        eps2: float = 1e-7,
                        cfg: SolverConfig = SolverConfig(),
                        solver: _WarmSolver | None = None) -> ThetaBracket:
    """Smallest multiplier theta with F^{(lambda+theta)+} >= 1/f_max.

    Bisection on the monotone step function of theta, with geometric
    expansion of the upper bracket.  Returns the upper bracket endpoint as
    theta_star along with the optimal policies just left and right of the
    break point, for mixture construction.  Raises InfeasibleRateError if
    no multiplier can meet the rate.
    """
    target = _require_feasible(L, f_max)
    sv = solver or _WarmSolver(L, cfg)
    phi0, ev0 = sv.plus_side(lam)
    if ev0.F >= target:
        return ThetaBracket(0.0, phi0, ev0.F, phi0, ev0.F)
    th_lo, phi_lo, F_lo = 0.0, phi0, ev0.F
    th_hi = max(1.0, abs(lam))
    for _ in range(MAX_DOUBLINGS):
        phi_hi, ev_hi = sv.plus_side(lam + th_hi)
        if ev_hi.F >= target:
            break
        th_lo, phi_lo, F_lo = th_hi, phi_hi, ev_hi.F
        th_hi *= 2.0
    else:
        raise InfeasibleRateError(
            f"multiplier expansion cap reached at theta={th_hi}; the rate "
            f"1/f_max = {target} is unreachable")
    F_hi = ev_hi.F
    while th_hi - th_lo >= eps2:
        mid = 0.5 * (th_lo + th_hi)
        phi_m, ev_m = sv.plus_side(lam + mid)
        if ev_m.F >= target:
            th_hi, phi_hi, F_hi = mid, phi_m, ev_m.F
        else:
            th_lo, phi_lo, F_lo = mid, phi_m, ev_m.F
    return ThetaBracket(th_hi, phi_lo, F_lo, phi_hi, F_hi)


def _tune_mixture(L: LiftedMdp, bracket: ThetaBracket, target: float
                  ) -> tuple[MixturePolicy, PolicyEvaluation]:
    """Mixture weight meeting the rate with equality under per-epoch
    randomization.  The closed-form interpolation weight seeds a bisection
    on the evaluated epoch length, which is what the per-epoch coin
    actually produces."""
    span = bracket.F_plus - bracket.F_minus
    eta = float(np.clip((target - bracket.F_minus) / span, 0.0, 1.0))
    lo, hi = 0.0, 1.0
    mix = MixturePolicy(bracket.phi_plus, bracket.phi_minus, eta)
    ev = evaluate_policy(L, mix)
    for _ in range(200):
        if abs(ev.F - target) <= F_MATCH_TOL:
            break
        if ev.F < target:
            lo = eta
        else:
            hi = eta
        eta = 0.5 * (lo + hi)
        mix = MixturePolicy(bracket.phi_plus, bracket.phi_minus, eta)
        ev = evaluate_policy(L, mix)
    return mix, ev


def _report_at(L: LiftedMdp, lam: float, f_max: float, cfg: SolverConfig,
               sv: _WarmSolver, method: str) -> ConstrainedReport:
    """Case analysis of the optimal-policy structure at the converged root."""
    target = 1.0 / f_max
    phi_plus, ev_plus = sv.plus_side(lam)
    if ev_plus.F >= target:
        return ConstrainedReport(lam, lam, 0.0, phi_plus, ev_plus.F,
                                 binding=False, method=method)
    bracket = middle_theta_search(L, lam, f_max, cfg.eps2, cfg, solver=sv)
    if bracket.F_plus - bracket.F_minus < STEP_EQUAL_TOL:
        # Degenerate step: the right-side policy already meets the rate.
        return ConstrainedReport(lam, lam, bracket.theta_star, bracket.phi_plus,
                                 bracket.F_plus, binding=True, method=method)
    mix, ev = _tune_mixture(L, bracket, target)
    return ConstrainedReport(lam, lam, bracket.theta_star, mix, ev.F,
                             binding=True, method=method)


def three_layer_solve(L: LiftedMdp, f_max: float, eps1: float = 1e-6,
                      eps2: float = 1e-7, cfg: SolverConfig = SolverConfig()
                      ) -> ConstrainedReport:
    """Constrained optimum h* by nested bisection.

    Outer layer bisects lambda on the sign of the dual value d(lambda);
    the middle layer finds the multiplier break point; the inner layer is
    tau-RVI.  The returned policy follows the three structural cases
    (unconstrained / rate-matching deterministic / two-policy mixture).
    """
    target = _require_feasible(L, f_max)
    sv = _WarmSolver(L, cfg)

    def dual(lam: float) -> float:
        _, ev_plus = sv.plus_side(lam)
        if ev_plus.F >= target:
            _, _, U = sv.at(lam)
            return U
        bracket = middle_theta_search(L, lam, f_max, eps2, cfg, solver=sv)
        _, _, U = sv.at(lam + bracket.theta_star)
        return U + bracket.theta_star / f_max

    lam_lo = float(np.min(L.primal.cost))
    _, lam_hi = cost_bounds(L.primal)
    if lam_hi <= lam_lo:
        lam_hi = lam_lo + 1.0
    for _ in range(MAX_DOUBLINGS):
        if dual(lam_hi) < 0.0:
            break
        lam_hi = lam_lo + 2.0 * (lam_hi - lam_lo)
    else:
        raise SolverError("could not bracket the constrained root from above")
    while lam_hi - lam_lo >= eps1:
        mid = 0.5 * (lam_lo + lam_hi)
        if dual(mid) > 0.0:
            lam_lo = mid
        else:
            lam_hi = mid
    return _report_at(L, 0.5 * (lam_lo + lam_hi), f_max, cfg, sv,
                      method="three-layer")


def quick_blp(L: LiftedMdp, f_max: float, kappa: float = 0.9,
              cfg: SolverConfig = SolverConfig()) -> ConstrainedReport:
    """Two-stage constrained solve.

    Stage 1 finds the unconstrained root rho* by the one-layer iteration;
    if the optimal
    policy just left of rho* already satisfies the rate, h* = rho*.
    Otherwise stage 2 assembles the occupancy LP (rate equality, balance,
    normalization, nonnegativity) and reads off h* = f_max * Q*.
    """
    target = _require_feasible(L, f_max)
    rho, _, _, _ = one_pdsi(L, kappa=kappa, k_max=cfg.k_max, tol=min(cfg.tol, 1e-11))
    dl = default_delta(rho, cfg.delta)
    phi_minus, ev_minus, _, _ = policy_at(L, rho - dl, tau=cfg.tau,
                                          tol=cfg.tol, k_max=cfg.k_max)
    if ev_minus.F >= target:
        return ConstrainedReport(rho, rho, None, phi_minus, ev_minus.F,
                                 binding=False, method="quickblp")
    x, value = _solve_occupancy_lp(L, target)
    policy = occupancy_to_policy(L, x, phi_minus)
    ev = evaluate_policy(L, policy)
    return ConstrainedReport(f_max * value, f_max * value, None, policy, ev.F,
                             binding=True, method="quickblp")


def _solve_occupancy_lp(L: LiftedMdp, target: float) -> tuple[np.ndarray, float]:
    """min q.x subject to the rate equality sum f(z) x = target, stationary
    balance for every lifted state but the reference one (the full system
    plus normalization is rank-deficient by exactly one), sum x = 1, x >= 0."""
    n, m = L.num_states, L.num_actions
    cols = n * m
    rows: list[np.ndarray] = []
    rhs: list[float] = []
    rows.append(np.tile(L.f_table, n))
    rhs.append(target)
    for gj in range(n):
        if gj == L.reference_state:
            continue
        row = -L.kernel[:, :, gj].ravel()
        row[gj * m:(gj + 1) * m] += 1.0
        rows.append(row)
        rhs.append(0.0)
    rows.append(np.ones(cols))
    rhs.append(1.0)
    sol = solve_lp(LinearProgram(L.q_table.ravel(), np.vstack(rows), np.array(rhs)))
    if sol.status == LpStatus.INFEASIBLE:
        raise InfeasibleRateError(
            f"occupancy LP infeasible: no stationary policy attains mean "
            f"epoch length {target}")
    if sol.status != LpStatus.OPTIMAL:
        raise SolverError(f"occupancy LP ended with status {sol.status}")
    return sol.x.reshape(n, m), sol.value


def occupancy_to_policy(L: LiftedMdp, x: np.ndarray,
                        fallback: DeterministicPolicy) -> OccupancyPolicy:
    """Normalize an occupancy measure into a per-state action distribution;
    states carrying mass below 1e-12 take the fallback action."""
    x = np.asarray(x, dtype=float).reshape(L.num_states, L.num_actions)
    if np.any(x < -1e-10):
        raise ValueError(f"occupancy has a negative entry ({x.min():.3e})")
    total = float(x.sum())
    if abs(total - 1.0) > 1e-8:
        raise ValueError(f"occupancy sums to {total!r}, expected 1")
    probs = np.zeros_like(x)
    mass = x.sum(axis=1)
    for g in range(L.num_states):
        if mass[g] >= ZERO_MASS:
            probs[g] = x[g] / mass[g]
        else:
            probs[g, fallback.action_indices[g]] = 1.0
    return OccupancyPolicy(probs, fallback)


def sampling_threshold(L: LiftedMdp, kappa: float = 0.9,
                       cfg: SolverConfig = SolverConfig()) -> float:
    """Sampling frequency beyond which the constraint never binds:
    1 / F^{(rho*)-}."""
    rho, _, _, _ = one_pdsi(L, kappa=kappa, k_max=cfg.k_max, tol=min(cfg.tol, 1e-11))
    dl = default_delta(rho, cfg.delta)
    _, ev_minus, _, _ = policy_at(L, rho - dl, tau=cfg.tau, tol=cfg.tol,
                                  k_max=cfg.k_max)
    return 1.0 / ev_minus.F


def sensitivity_derivative(L: LiftedMdp, f_max: float,
                           cfg: SolverConfig = SolverConfig()) -> float:
    """dh*/df_max below the sampling threshold: U(lambda*) at the maximizer
    of lambda + f_max U(lambda); zero at or above the threshold.

    lambda + f_max U(lambda) is concave piecewise linear, so golden-section
    over an expanded bracket converges to the break point."""
    _require_feasible(L, f_max)
    if f_max >= sampling_threshold(L, cfg.kappa, cfg):
        return 0.0
    rho, _, _, _ = one_pdsi(L, kappa=cfg.kappa, k_max=cfg.k_max,
                            tol=min(cfg.tol, 1e-11))
    sv = _WarmSolver(L, cfg)
    target = 1.0 / f_max

    lam_hi = rho + 1.0
    for _ in range(MAX_DOUBLINGS):
        _, ev = sv.plus_side(lam_hi)
        if ev.F >= target:
            break
        lam_hi = rho + 2.0 * (lam_hi - rho)
    else:
        raise SolverError("could not bracket the sensitivity maximizer")

    def G(lam: float) -> float:
        _, _, U = sv.at(lam)
        return lam + f_max * U

    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = rho, lam_hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    gc, gd = G(c), G(d)
    while b - a > 1e-7:
        if gc >= gd:
            b, d, gd = d, c, gc
            c = b - inv_phi * (b - a)
            gc = G(c)
        else:
            a, c, gc = c, d, gd
            d = a + inv_phi * (b - a)
            gd = G(d)
    lam_star = 0.5 * (a + b)
    _, _, U = sv.at(lam_star)
    return U
