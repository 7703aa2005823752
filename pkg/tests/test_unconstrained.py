import numpy as np
import pytest

from delaymdp.lifted import build_lifted, check_unichain_sufficient, cost_bounds
from delaymdp.model import BENCHMARK_PRIMAL, PrimalMdp, make_delay
from delaymdp.unconstrained import (
    DeterministicPolicy,
    SolverError,
    bisec_tau_rvi,
    evaluate_policy,
    extract_policy,
    f_limits,
    fixed_point_residuals,
    fpbi,
    one_pdsi,
    rvi,
    tau_rvi,
)

from conftest import random_delay, random_primal


@pytest.fixture(scope="module")
def example1():
    """Benchmark primal with deterministic delay 10 (the periodic instance)."""
    d = make_delay("binary", p=0.0, y_max=10)
    return build_lifted(BENCHMARK_PRIMAL, d, z_max=20)


@pytest.fixture(scope="module")
def binary_lifted():
    d = make_delay("binary", p=0.3, y_max=11)
    return build_lifted(BENCHMARK_PRIMAL, d, z_max=22)


def single_choice_lifted(cost=5.0, y=3, z_max=0):
    m = PrimalMdp(np.array([[[1.0]]]), np.array([[cost]]))
    return build_lifted(m, make_delay("binary", p=0.0, y_max=y), z_max=z_max)


def tail_is_geometric(residuals, floor=1e-13, max_dev_frac=0.10):
    r = np.asarray(residuals)
    r = r[r > floor]
    tail = np.log10(r[len(r) // 2:])
    if len(tail) < 5 or tail.max() - tail.min() < 1e-9:
        return True
    k = np.arange(len(tail))
    slope, intercept = np.polyfit(k, tail, 1)
    fit = slope * k + intercept
    dev = np.max(np.abs(fit - tail))
    return slope < 0 and dev <= max_dev_frac * (tail.max() - tail.min())


class TestRvi:
    def test_oscillates_on_periodic_instance(self, example1):
        _, _, trace = rvi(example1, 10.0, k_max=500, tol=1e-8)
        assert not trace.converged
        assert trace.oscillatory
        assert float(np.min(trace.residuals)) > 1e-3

    def test_single_choice_instance_converges_immediately(self):
        L = single_choice_lifted(cost=5.0, y=3)
        U, V, trace = rvi(L, lam=2.0, k_max=10, tol=1e-12)
        expected = float(np.min(L.q_table[0] - 2.0 * L.f_table))
        assert U == pytest.approx(expected, abs=1e-12)
        assert trace.converged and trace.iterations <= 2

    def test_equals_tau_one(self, binary_lifted):
        U1, V1, t1 = rvi(binary_lifted, 5.0, k_max=300, tol=1e-9)
        U2, V2, t2 = tau_rvi(binary_lifted, 5.0, tau=1.0, k_max=300, tol=1e-9)
        assert U1 == U2
        assert np.array_equal(V1, V2)
        assert np.array_equal(t1.values, t2.values)
        assert np.array_equal(t1.residuals, t2.residuals)


class TestTauRvi:
    def test_converges_on_periodic_instance(self, example1):
        U, V, trace = tau_rvi(example1, 10.0, tau=0.5, k_max=500, tol=1e-8)
        assert trace.converged
        assert trace.residuals[-1] < 1e-8
        assert V[example1.reference_state] == 0.0

    def test_rejects_bad_tau(self, example1):
        for tau in (0.0, -0.5, 1.5):
            with pytest.raises(ValueError):
                tau_rvi(example1, 1.0, tau=tau)

    def test_sign_of_u_at_cost_bounds(self, binary_lifted):
        lo, hi = cost_bounds(binary_lifted.primal)
        U_lo, _, _ = tau_rvi(binary_lifted, lo, tau=0.5, tol=1e-10)
        U_hi, _, _ = tau_rvi(binary_lifted, hi, tau=0.5, tol=1e-10)
        assert U_lo >= 0.0
        assert U_hi <= 0.0

    def test_u_non_increasing_in_lambda(self, binary_lifted):
        lams = np.linspace(0.0, 20.0, 9)
        us = [tau_rvi(binary_lifted, lam, tau=0.5, tol=1e-10)[0] for lam in lams]
        assert all(b <= a + 1e-9 for a, b in zip(us, us[1:]))

    def test_warm_start_reaches_same_value(self, binary_lifted):
        U_cold, V, _ = tau_rvi(binary_lifted, 7.0, tau=0.5, tol=1e-11)
        U_warm, _, trace = tau_rvi(binary_lifted, 7.2, tau=0.5, tol=1e-11, v0=V)
        U_ref, _, _ = tau_rvi(binary_lifted, 7.2, tau=0.5, tol=1e-11)
        assert trace.converged
        assert U_warm == pytest.approx(U_ref, abs=1e-9)

    def test_residual_tail_geometric(self, binary_lifted):
        _, _, trace = tau_rvi(binary_lifted, 10.0, tau=0.5, tol=1e-12)
        assert trace.converged
        assert tail_is_geometric(trace.residuals)


class TestExtractPolicy:
    def test_matches_published_policy(self, example1):
        _, V, _ = tau_rvi(example1, 10.0, tau=0.5, k_max=1000, tol=1e-11)
        phi = extract_policy(example1, 10.0, 0.5 * V)
        expected = {(0, 10, 0): (0, 1), (1, 10, 0): (0, 1),
                    (0, 10, 1): (0, 0), (1, 10, 1): (0, 0)}
        for (s, y, ap), (z, a) in expected.items():
            ea = phi.epoch_action(example1, example1.state_index(s, y, ap))
            assert (ea.z, ea.a) == (z, a)

    def test_single_action_everywhere(self):
        L = single_choice_lifted(z_max=2)
        phi = extract_policy(L, 1.0, np.zeros(L.num_states))
        assert all(L.actions[ai].a == 0 for ai in phi.action_indices)

    def test_constant_shift_invariance(self, binary_lifted, rng):
        V = rng.normal(size=binary_lifted.num_states) * 5.0
        phi1 = extract_policy(binary_lifted, 3.0, V)
        phi2 = extract_policy(binary_lifted, 3.0, V + 8.0)
        assert phi1 == phi2


class TestEvaluatePolicy:
    def test_constant_cost_rate(self):
        L = single_choice_lifted(cost=4.5, z_max=1)
        ev = evaluate_policy(L, DeterministicPolicy((0, )))
        assert ev.cost_rate == pytest.approx(4.5, abs=1e-12)
        assert ev.F == pytest.approx(L.delay_mean, abs=1e-12)

    def test_self_consistency_at_root(self, binary_lifted):
        rho, _, phi, _ = one_pdsi(binary_lifted, tol=1e-12)
        ev = evaluate_policy(binary_lifted, phi)
        assert abs(ev.Q - rho * ev.F) < 1e-8
        assert abs(ev.cost_rate - rho) < 1e-8

    def test_zero_wait_constant_action_benchmark(self, binary_lifted):
        # Constant action a0 with zero waiting: uniform stationary law on the
        # source, mean slot cost 0.5*40 + 0.5*0 = 20.
        L = binary_lifted
        idx = tuple(L.action_index(0, 0) for _ in range(L.num_states))
        ev = evaluate_policy(L, DeterministicPolicy(idx))
        assert ev.cost_rate == pytest.approx(20.0, abs=1e-10)
        assert abs(float(np.sum(ev.epoch_stationary)) - 1.0) < 1e-12
        assert ev.F >= L.delay_mean - 1e-12


class TestFpbi:
    def test_diverges_on_periodic_instance(self, example1):
        rho, W, trace = fpbi(example1, k_max=500, tol=1e-10)
        assert not trace.converged
        assert float(np.min(trace.residuals[-100:])) > 1e-10

    def test_single_choice_converges_to_cost_rate(self):
        L = single_choice_lifted(cost=3.0, y=2, z_max=1)
        rho, W, trace = fpbi(L, k_max=2000, tol=1e-11)
        assert trace.converged
        assert rho == pytest.approx(3.0, abs=1e-9)

    def test_converged_run_satisfies_fixed_point(self, rng):
        m = random_primal(rng, 2, 2)
        d = make_delay("binary", p=0.6, y_max=2)
        L = build_lifted(m, d, z_max=2)
        rho, W, trace = fpbi(L, k_max=20_000, tol=1e-11)
        if trace.converged:
            res_w, res_rho = fixed_point_residuals(L, W, rho)
            assert res_w < 1e-9 and res_rho < 1e-9


class TestOnePdsi:
    def test_matches_bisection_on_periodic_instance(self, example1):
        rho_p, _, _, trace = one_pdsi(example1, kappa=0.9, tol=1e-12)
        rho_b, _, _ = bisec_tau_rvi(example1, eps=1e-9, tau=0.5, tol=1e-11)
        assert trace.converged
        assert abs(rho_p - rho_b) < 1e-6

    def test_constant_cost(self):
        L = single_choice_lifted(cost=2.5, z_max=2)
        rho, _, _, _ = one_pdsi(L, tol=1e-12)
        assert rho == pytest.approx(2.5, abs=1e-10)

    def test_fixed_point_residuals_within_bound(self, binary_lifted):
        tol = 1e-11
        rho, W, _, _ = one_pdsi(binary_lifted, tol=tol)
        res_w, res_rho = fixed_point_residuals(binary_lifted, W, rho)
        assert res_w <= 10 * tol and res_rho <= 10 * tol

    def test_residual_decay_slope_negative(self, binary_lifted):
        _, _, _, trace = one_pdsi(binary_lifted, tol=1e-12)
        r = np.asarray(trace.residuals)
        r = r[r > 1e-14]
        slope = np.polyfit(np.arange(len(r)), np.log(r), 1)[0]
        assert slope < 0.0

    def test_residual_tail_geometric(self, binary_lifted):
        _, _, _, trace = one_pdsi(binary_lifted, tol=1e-12)
        assert tail_is_geometric(trace.residuals)

    def test_rejects_bad_kappa(self, binary_lifted):
        for kappa in (0.0, 1.0, -0.2):
            with pytest.raises(ValueError):
                one_pdsi(binary_lifted, kappa=kappa)

    def test_non_convergence_raises(self, binary_lifted):
        with pytest.raises(SolverError):
            one_pdsi(binary_lifted, k_max=3, tol=1e-14)


class TestBisecTauRvi:
    def test_constant_cost_needs_no_bisection(self):
        L = single_choice_lifted(cost=6.0, z_max=1)
        rho, phi, trace = bisec_tau_rvi(L, eps=1e-9)
        assert rho == pytest.approx(6.0, abs=1e-9)
        assert trace.iterations == 0

    def test_benchmark_bracket(self, binary_lifted):
        eps = 1e-8
        rho, _, _ = bisec_tau_rvi(binary_lifted, eps=eps)
        assert 0.0 <= rho <= 20.0
        # at the returned root, |U| is at most ~eps times the largest epoch
        U, _, _ = tau_rvi(binary_lifted, rho, tau=0.5, tol=1e-11)
        assert abs(U) <= 2.0 * eps * float(binary_lifted.f_table[-1])

    def test_agreement_with_one_layer_on_random_instances(self, rng):
        agreements = 0
        while agreements < 6:
            m = random_primal(rng, int(rng.integers(2, 4)), int(rng.integers(1, 3)))
            d = random_delay(rng, y_cap=4)
            L = build_lifted(m, d, z_max=int(rng.integers(0, 4)))
            assert check_unichain_sufficient(L, m=1, eps=1e-9).holds
            rho_b, _, _ = bisec_tau_rvi(L, eps=1e-9, tol=1e-11)
            rho_p, _, _, _ = one_pdsi(L, tol=1e-12)
            assert abs(rho_b - rho_p) < 1e-6
            lo, hi = cost_bounds(m)
            assert lo - 1e-8 <= rho_p <= hi + 1e-8
            agreements += 1


class TestFLimits:
    def test_single_action_zero_wait(self):
        L = single_choice_lifted(cost=2.0, y=4, z_max=0)
        for lam in (0.0, 1.0, 5.0):
            fm, fp = f_limits(L, lam)
            assert fm == pytest.approx(4.0, abs=1e-12)
            assert fp == pytest.approx(4.0, abs=1e-12)

    def test_interior_point_has_equal_limits(self, binary_lifted):
        # far from the root, well inside a step
        fm, fp = f_limits(binary_lifted, 2.0)
        assert fm == pytest.approx(fp, abs=1e-12)

    def test_plus_limit_monotone_on_grid(self, binary_lifted):
        lams = np.linspace(14.0, 20.0, 7)
        fps = [f_limits(binary_lifted, lam)[1] for lam in lams]
        assert all(b >= a - 1e-9 for a, b in zip(fps, fps[1:]))

    def test_rejects_bad_delta(self, binary_lifted):
        with pytest.raises(ValueError):
            f_limits(binary_lifted, 1.0, delta=-1e-3)
