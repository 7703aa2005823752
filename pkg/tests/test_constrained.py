import numpy as np
import pytest

from delaymdp.constrained import (
    InfeasibleRateError,
    MixturePolicy,
    lagrangian_dual_value,
    middle_theta_search,
    occupancy_to_policy,
    quick_blp,
    sampling_threshold,
    sensitivity_derivative,
    three_layer_solve,
    _solve_occupancy_lp,
)
from delaymdp.lifted import build_lifted
from delaymdp.model import BENCHMARK_PRIMAL, PrimalMdp, make_delay
from delaymdp.unconstrained import (
    DeterministicPolicy,
    SolverConfig,
    evaluate_policy,
    one_pdsi,
    tau_rvi,
)

from conftest import random_delay, random_primal


@pytest.fixture(scope="module")
def binary_lifted():
    d = make_delay("binary", p=0.3, y_max=11)
    return build_lifted(BENCHMARK_PRIMAL, d, z_max=28)


def single_choice_lifted(cost=5.0, y=3):
    m = PrimalMdp(np.array([[[1.0]]]), np.array([[cost]]))
    return build_lifted(m, make_delay("binary", p=0.0, y_max=y), z_max=0)


class TestLagrangianDualValue:
    def test_zero_multiplier_is_u(self, binary_lifted):
        lam = 5.0
        upsilon, F, _ = lagrangian_dual_value(binary_lifted, lam, 0.0, 0.1)
        U, _, _ = tau_rvi(binary_lifted, lam, tau=0.5, tol=1e-10)
        assert upsilon == pytest.approx(U, abs=1e-8)

    def test_single_choice_linear_in_theta(self):
        # One policy only: U(lam+theta) = Q - (lam+theta) E[Y], so Upsilon is
        # exactly linear with slope 1/f_max - E[Y].
        L = single_choice_lifted(cost=2.0, y=3)
        lam, f_max = 1.0, 0.2
        base, _, _ = lagrangian_dual_value(L, lam, 0.0, f_max)
        for theta in (0.5, 1.0, 2.0, 4.0):
            upsilon, F, _ = lagrangian_dual_value(L, lam, theta, f_max)
            assert F == pytest.approx(3.0, abs=1e-12)
            expected = base + theta * (1.0 / f_max - 3.0)
            assert upsilon == pytest.approx(expected, abs=1e-7)

    def test_monotone_when_rate_met(self, binary_lifted):
        # F >= 1/f_max on this grid, so the dual value must not increase.
        lam, f_max = 10.0, 0.5
        vals = []
        for theta in np.linspace(0.0, 4.0, 9):
            upsilon, F, _ = lagrangian_dual_value(binary_lifted, lam, theta, f_max)
            assert F >= 1.0 / f_max
            vals.append(upsilon)
        assert all(b <= a + 1e-8 for a, b in zip(vals, vals[1:]))

    def test_rejects_negative_theta(self, binary_lifted):
        with pytest.raises(ValueError):
            lagrangian_dual_value(binary_lifted, 1.0, -0.1, 0.1)


class TestMiddleThetaSearch:
    def test_skipped_when_rate_already_met(self, binary_lifted):
        bracket = middle_theta_search(binary_lifted, 10.0, f_max=0.5)
        assert bracket.theta_star == 0.0

    def test_infeasible_rate_detected(self):
        L = single_choice_lifted(cost=1.0, y=3)
        with pytest.raises(InfeasibleRateError):
            middle_theta_search(L, 0.0, f_max=0.25)  # needs F >= 4 > 3

    def test_break_point_sandwich(self, binary_lifted):
        lam, f_max, eps2 = 10.0, 0.05, 1e-7
        cfg = SolverConfig()
        bracket = middle_theta_search(binary_lifted, lam, f_max, eps2, cfg)
        assert bracket.theta_star > 0.0
        assert bracket.F_minus < 1.0 / f_max <= bracket.F_plus
        # predicate flips across theta_star +- eps2
        lo = middle_theta_search(binary_lifted, lam + bracket.theta_star - eps2,
                                 f_max, eps2, cfg)
        hi = middle_theta_search(binary_lifted, lam + bracket.theta_star + eps2,
                                 f_max, eps2, cfg)
        assert lo.theta_star > 0.0      # still short of the break point
        assert hi.theta_star == 0.0     # past it: rate already met


class TestThreeLayerVsQuickBlp:
    def test_unconstrained_regime_returns_rho(self, binary_lifted):
        fT = sampling_threshold(binary_lifted)
        rho, _, _, _ = one_pdsi(binary_lifted, tol=1e-12)
        for f_max in (fT * 1.05, fT * 2.0):
            rep = three_layer_solve(binary_lifted, f_max)
            assert rep.h_star == pytest.approx(rho, abs=1e-5)
            assert not rep.binding
            rep2 = quick_blp(binary_lifted, f_max)
            assert rep2.h_star == pytest.approx(rho, abs=1e-9)

    def test_agreement_below_threshold(self, binary_lifted):
        for f_max in (0.05, 0.09):
            r3 = three_layer_solve(binary_lifted, f_max)
            rq = quick_blp(binary_lifted, f_max)
            assert abs(r3.h_star - rq.h_star) < 1e-4
            for rep in (r3, rq):
                assert rep.achieved_F >= 1.0 / f_max - 1e-6
                assert rep.binding

    def test_constant_cost_is_flat(self):
        m = PrimalMdp(BENCHMARK_PRIMAL.transition, np.full((2, 2), 5.0))
        L = build_lifted(m, make_delay("binary", p=0.5, y_max=4), z_max=8)
        for f_max in (0.3, 0.12):
            rep = three_layer_solve(L, f_max)
            assert rep.h_star == pytest.approx(5.0, abs=1e-5)
            rep2 = quick_blp(L, f_max)
            assert rep2.h_star == pytest.approx(5.0, abs=1e-7)

    def test_agreement_on_random_instances(self, rng):
        done = 0
        while done < 10:
            m = random_primal(rng, int(rng.integers(2, 4)), int(rng.integers(1, 3)))
            d = random_delay(rng, max_atoms=2, y_cap=4)
            L = build_lifted(m, d, z_max=4)
            # a small grid per instance, straddling binding and slack rates
            grid = [1.0 / float(rng.uniform(L.delay_mean * 0.9,
                                            L.delay_mean + 1.0)),
                    1.0 / float(rng.uniform(L.delay_mean + 1.0,
                                            L.delay_mean + L.z_max * 0.9))]
            solved_any = False
            for f_max in grid:
                try:
                    rq = quick_blp(L, f_max)
                    r3 = three_layer_solve(L, f_max)
                except InfeasibleRateError:
                    continue
                assert abs(rq.h_star - r3.h_star) < 1e-4
                assert rq.achieved_F >= 1.0 / f_max - 1e-6
                assert r3.achieved_F >= 1.0 / f_max - 1e-6
                if r3.theta_star is not None:
                    slack = r3.theta_star * (r3.achieved_F - 1.0 / f_max)
                    assert abs(slack) < 1e-5
                solved_any = True
            done += 1 if solved_any else 0

    def test_infeasible_rate_raises(self, binary_lifted):
        with pytest.raises(InfeasibleRateError):
            three_layer_solve(binary_lifted, 1.0 / (binary_lifted.f_table[-1] + 5))
        with pytest.raises(InfeasibleRateError):
            quick_blp(binary_lifted, 1.0 / (binary_lifted.f_table[-1] + 5))


class TestMixturePolicy:
    def test_mixture_meets_rate_exactly(self, binary_lifted):
        f_max = 0.05
        rep = three_layer_solve(binary_lifted, f_max)
        assert isinstance(rep.policy, MixturePolicy)
        ev = evaluate_policy(binary_lifted, rep.policy)
        assert abs(ev.F - 1.0 / f_max) < 1e-6
        assert abs(rep.theta_star * (ev.F - 1.0 / f_max)) < 1e-5

    def test_eta_bounds_enforced(self, binary_lifted):
        phi = DeterministicPolicy(tuple([0] * binary_lifted.num_states))
        with pytest.raises(ValueError):
            MixturePolicy(phi, phi, 1.2)


class TestOccupancyPolicy:
    def test_concentrated_occupancy_recovers_deterministic(self):
        L = single_choice_lifted()
        x = np.array([[1.0]])
        pol = occupancy_to_policy(L, x, DeterministicPolicy((0,)))
        assert np.allclose(pol.action_probs(L), [[1.0]])

    def test_rate_identity_from_lp(self, binary_lifted):
        target = 20.0
        x, value = _solve_occupancy_lp(binary_lifted, target)
        # balance residual of the occupancy measure itself
        marg = x.sum(axis=1)
        inflow = np.einsum("ga,gah->h", x, binary_lifted.kernel)
        assert np.max(np.abs(marg - inflow)) < 1e-8
        # epoch length of the occupancy: both as sum f x and through the
        # induced stationary chain
        assert float(np.tile(binary_lifted.f_table, binary_lifted.num_states)
                     @ x.ravel()) == pytest.approx(target, abs=1e-8)
        fallback, _, _, _ = one_pdsi(binary_lifted, tol=1e-11)[2], None, None, None
        pol = occupancy_to_policy(binary_lifted, x,
                                  one_pdsi(binary_lifted, tol=1e-11)[2])
        ev = evaluate_policy(binary_lifted, pol)
        assert ev.F == pytest.approx(target, abs=1e-8)
        assert ev.Q == pytest.approx(value, abs=1e-8)

    def test_zero_mass_state_uses_fallback(self, binary_lifted):
        # A constant-action policy leaves every state with the other held
        # action transient; its stationary occupancy has zero mass there.
        L = binary_lifted
        always_a0 = DeterministicPolicy(
            tuple([L.action_index(0, 0)] * L.num_states))
        ev = evaluate_policy(L, always_a0)
        x = ev.epoch_stationary[:, None] * always_a0.action_probs(L)
        fallback = DeterministicPolicy(
            tuple([L.action_index(1, 1)] * L.num_states))
        pol = occupancy_to_policy(L, x, fallback)
        zero_states = [gi for gi, g in enumerate(L.states) if g.a_prev == 1]
        assert zero_states
        for g in zero_states:
            assert x[g].sum() < 1e-12
            assert pol.probs[g, L.action_index(1, 1)] == 1.0

    def test_rejects_bad_occupancy(self, binary_lifted):
        n, m = binary_lifted.num_states, binary_lifted.num_actions
        fb = DeterministicPolicy(tuple([0] * n))
        with pytest.raises(ValueError):
            occupancy_to_policy(binary_lifted, np.full((n, m), 1.0), fb)


class TestSamplingThreshold:
    def test_single_choice_threshold(self):
        L = single_choice_lifted(cost=1.0, y=4)
        assert sampling_threshold(L) == pytest.approx(0.25, abs=1e-12)

    def test_flat_above_threshold(self, binary_lifted):
        fT = sampling_threshold(binary_lifted)
        rho, _, _, _ = one_pdsi(binary_lifted, tol=1e-12)
        for f_max in np.linspace(fT, 2 * fT, 5):
            rep = quick_blp(binary_lifted, float(f_max))
            assert rep.h_star == pytest.approx(rho, abs=1e-6)

    def test_benchmark_threshold_regression(self, binary_lifted):
        # Golden value pinned after cross-checking the flatness point of
        # h*(f_max) between the two constrained solvers.
        assert sampling_threshold(binary_lifted) == pytest.approx(
            0.11589824375711077, abs=1e-9)


class TestSensitivityDerivative:
    def test_zero_at_or_above_threshold(self, binary_lifted):
        fT = sampling_threshold(binary_lifted)
        assert sensitivity_derivative(binary_lifted, fT * 1.2) == 0.0

    def test_negative_below_threshold(self, binary_lifted):
        dh = sensitivity_derivative(binary_lifted, 0.05)
        assert dh <= 0.0

    def test_matches_finite_difference(self, binary_lifted):
        f0 = 0.05
        dh = sensitivity_derivative(binary_lifted, f0)
        h = {s: quick_blp(binary_lifted, f0 * (1 + s)).h_star
             for s in (-0.01, 0.01)}
        fd = (h[0.01] - h[-0.01]) / (0.02 * f0)
        assert abs(fd - dh) < max(0.1 * abs(fd), 1e-3)


class TestReportSerialization:
    def test_json_and_sweep_row(self, binary_lifted):
        import json
        rep = quick_blp(binary_lifted, 0.05)
        blob = rep.to_json_dict()
        assert blob["policy_kind"] == "occupancy"
        assert blob["binding"] is True
        assert len(blob["policy"]["action_probs"]) == binary_lifted.num_states
        json.dumps(blob)  # JSON-serializable end to end
        row = rep.to_sweep_row(0.05)
        assert row[0] == 0.05 and row[1] == rep.h_star

    def test_mixture_report_serializes_both_legs(self, binary_lifted):
        import json
        rep = three_layer_solve(binary_lifted, 0.05)
        blob = rep.to_json_dict()
        assert blob["policy_kind"] == "mixture"
        assert 0.0 <= blob["policy"]["eta"] <= 1.0
        json.dumps(blob)
