"""Slot-level Monte Carlo simulation of the sampling / decision protocol.

simulate_epochs runs the sample-after-delivery protocol: at each delivery
the policy picks a waiting time and an action to hold, the source keeps
evolving every slot under the held action, and the age resets to the
realized delay at each delivery and drifts +1 per slot in between.
simulate_uniform_queue runs fixed-period sampling through an unbounded
FCFS single-server queue instead (the uniform baseline).

Three random streams (source, delay, policy randomization) are derived
from the master seed, so runs with the same seed are bit-identical and
policies can be compared on common random numbers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .baselines import SamplingRule, sampling_rule_wait
from .constrained import MixturePolicy, OccupancyPolicy
from .lifted import LiftedMdp
from .model import DecisionRule, DelayDistribution, PrimalMdp
from .unconstrained import DeterministicPolicy

BATCH_COUNT = 100


@dataclass(frozen=True)
class SimConfig:
    horizon: int
    burn_in: int = 0
    seed: int = 0
    initial_state: int = 0
    initial_age: int | None = None  # None -> smallest delay-support value

    def __post_init__(self):
        if not self.horizon > self.burn_in >= 0:
            raise ValueError(
                f"need horizon > burn_in >= 0, got {self.horizon}, {self.burn_in}")


@dataclass(frozen=True)
class SimStats:
    avg_cost_per_slot: float
    avg_cost_se: float
    avg_epoch_length: float
    avg_sampling_interval: float
    aoi_mean: float
    epochs_completed: int
    epoch_state_freq: tuple[float, ...] | None = None


class _Stream:
    """Block-buffered uniform variates from one spawned generator."""

    def __init__(self, seed_seq, block: int = 1 << 15):
        self._gen = np.random.Generator(np.random.PCG64(seed_seq))
        self._block = block
        self._buf = self._gen.random(block)
        self._i = 0

    def next(self) -> float:
        if self._i == self._block:
            self._buf = self._gen.random(self._block)
            self._i = 0
        u = self._buf[self._i]
        self._i += 1
        return float(u)


def _streams(seed: int) -> tuple[_Stream, _Stream, _Stream]:
    source, delay, policy = np.random.SeedSequence(seed).spawn(3)
    return _Stream(source), _Stream(delay), _Stream(policy)


def _cum_rows(P: np.ndarray) -> list[list[float]]:
    return [list(np.cumsum(row)) for row in P]


def _pick(cum_row: list[float], u: float) -> int:
    for i, c in enumerate(cum_row):
        if u < c:
            return i
    return len(cum_row) - 1


class _Batches:
    """Non-overlapping epoch batches for regenerative standard errors."""

    def __init__(self):
        self.cost: list[float] = []
        self.slots: list[int] = []

    def add(self, cost: float, slots: int) -> None:
        self.cost.append(cost)
        self.slots.append(slots)

    def rate_and_se(self) -> tuple[float, float]:
        total_cost = float(np.sum(self.cost))
        total_slots = float(np.sum(self.slots))
        rate = total_cost / total_slots
        n = len(self.cost)
        k = min(BATCH_COUNT, n)
        if k < 2:
            return rate, 0.0
        size = n // k
        cost = np.asarray(self.cost[: k * size]).reshape(k, size).sum(axis=1)
        slots = np.asarray(self.slots[: k * size]).reshape(k, size).sum(axis=1)
        means = cost / slots
        return rate, float(np.std(means, ddof=1) / np.sqrt(k))


def _policy_query(policy, L: LiftedMdp | None, decision_pair, state_idx,
                  s_obs, y, a_prev, policy_stream):
    if decision_pair is not None:
        rule, decision = decision_pair
        return sampling_rule_wait(rule, y), decision(s_obs)
    if isinstance(policy, DeterministicPolicy):
        ea = policy.epoch_action(L, state_idx)
        return ea.z, ea.a
    if isinstance(policy, MixturePolicy):
        chosen = (policy.phi_plus if policy_stream.next() < policy.eta
                  else policy.phi_minus)
        ea = chosen.epoch_action(L, state_idx)
        return ea.z, ea.a
    if isinstance(policy, OccupancyPolicy):
        ai = _pick(list(np.cumsum(policy.probs[state_idx])), policy_stream.next())
        ea = L.actions[ai]
        return ea.z, ea.a
    raise TypeError(f"unsupported policy type {type(policy).__name__}")


def simulate_epochs(m: PrimalMdp, d: DelayDistribution, policy, cfg: SimConfig,
                    lifted: LiftedMdp | None = None,
                    trajectory_path: str | None = None,
                    check_invariants: bool = False) -> SimStats:
    """Simulate the protocol under a lifted policy or a
    (SamplingRule, DecisionRule) pair.

    Statistics cover whole epochs between the first delivery at or after
    burn_in and the first delivery at or after the horizon; standard
    errors come from non-overlapping epoch batches.  A lifted policy needs
    the lifted MDP for state/action indexing.
    """
    decision_pair = None
    if isinstance(policy, tuple):
        rule, decision = policy
        if not isinstance(rule, SamplingRule) or not isinstance(decision, DecisionRule):
            raise TypeError("expected (SamplingRule, DecisionRule)")
        if rule.kind == "uniform":
            sampling_rule_wait(rule, d.support[0])  # raises UniformRuleError
        decision.validate(m)
        decision_pair = (rule, decision)
    elif lifted is None:
        raise ValueError("a lifted policy needs lifted=<LiftedMdp>")

    src, dly, pol = _streams(cfg.seed)
    cum_p = [_cum_rows(m.transition[a]) for a in range(m.num_actions)]
    cum_d = list(np.cumsum(d.probabilities))
    supp = list(d.support)
    cost = m.cost

    traj = None
    if trajectory_path is not None:
        traj = open(trajectory_path, "w", newline="")
        traj_writer = csv.writer(traj, lineterminator="\n")
        traj_writer.writerow(["t", "x", "a", "age", "event"])

    x = cfg.initial_state
    age = cfg.initial_age if cfg.initial_age is not None else supp[0]
    a_prev = 0
    t = 0
    # First sample is taken at slot 0.
    s_obs = x
    y = supp[_pick(cum_d, dly.next())]
    deliver_at = t + y
    if traj is not None:
        traj_writer.writerow([t, x, a_prev, age, "sample"])
    while t < deliver_at:  # pre-first-delivery segment under the initial action
        if traj is not None and t > 0:
            traj_writer.writerow([t, x, a_prev, age, "none"])
        x = _pick(cum_p[a_prev][x], src.next())
        age += 1
        t += 1

    batches = _Batches()
    recording = False
    epochs = 0
    total_slots = 0
    aoi_total = 0.0
    interval_total = 0.0
    state_counts = (np.zeros(lifted.num_states) if lifted is not None else None)

    prev_delivery = None
    prev_age_reset = None
    prev_sample = 0
    while True:
        # Delivery: observe (sampled state, realized delay, previous action).
        if check_invariants:
            # Age drifts +1 per slot since its reset at the previous delivery,
            # and the delay equals delivery minus sampling slot.
            if prev_delivery is not None and age != prev_age_reset + (t - prev_delivery):
                raise AssertionError(f"age recursion broken at slot {t}")
            if t - prev_sample != y:
                raise AssertionError(f"delay identity broken at slot {t}")
        if t >= cfg.horizon and epochs > 0:
            break
        if not recording and t >= cfg.burn_in:
            recording = True
        age = y
        gi = lifted.state_index(s_obs, y, a_prev) if lifted is not None else -1
        z, a_hold = _policy_query(policy, lifted, decision_pair, gi,
                                  s_obs, y, a_prev, pol)
        y_next = supp[_pick(cum_d, dly.next())]
        n_slots = z + y_next
        epoch_cost = 0.0
        epoch_aoi = 0.0
        delivery_slot = t
        next_sample = t + z
        s_obs_next = x if z == 0 else None
        for k in range(n_slots):
            if traj is not None:
                # Coincident delivery and sampling (z = 0) produce two rows
                # for the same slot so neither event is lost.
                if k == 0:
                    traj_writer.writerow([t, x, a_hold, age, "delivery"])
                    if t == next_sample:
                        traj_writer.writerow([t, x, a_hold, age, "sample"])
                elif t == next_sample:
                    traj_writer.writerow([t, x, a_hold, age, "sample"])
                else:
                    traj_writer.writerow([t, x, a_hold, age, "none"])
            epoch_cost += cost[x, a_hold]
            epoch_aoi += age
            x = _pick(cum_p[a_hold][x], src.next())
            age += 1
            t += 1
            if s_obs_next is None and t == next_sample:
                s_obs_next = x
        if check_invariants and t - delivery_slot != z + y_next:
            raise AssertionError("epoch identity D_{i+1} - D_i != Z_i + Y_{i+1}")
        prev_delivery, prev_age_reset, prev_sample = delivery_slot, y, next_sample
        if recording:
            epochs += 1
            total_slots += n_slots
            aoi_total += epoch_aoi
            interval_total += y + z  # S_{i+1} - S_i
            batches.add(epoch_cost, n_slots)
            if state_counts is not None:
                state_counts[gi] += 1
        a_prev = a_hold
        s_obs = s_obs_next
        y = y_next

    if traj is not None:
        traj.close()
    rate, se = batches.rate_and_se()
    freq = (tuple(state_counts / max(epochs, 1)) if state_counts is not None
            else None)
    return SimStats(
        avg_cost_per_slot=rate,
        avg_cost_se=se,
        avg_epoch_length=total_slots / epochs,
        avg_sampling_interval=interval_total / epochs,
        aoi_mean=aoi_total / total_slots,
        epochs_completed=epochs,
        epoch_state_freq=freq,
    )


def simulate_uniform_queue(m: PrimalMdp, d: DelayDistribution, d_u: int,
                           decision: DecisionRule, cfg: SimConfig) -> SimStats:
    """Fixed-period sampling every d_u slots through an unbounded FCFS
    single-server queue with service times drawn from the delay law.

    The decision rule is applied to each delivered (possibly stale) state
    and held until the next delivery.  An unstable queue (mean service
    time >= d_u) completes normally and simply reports the large measured
    delay through the age statistics.
    """
    if d_u < 1:
        raise ValueError(f"uniform period must be >= 1, got {d_u}")
    decision.validate(m)
    src, dly, _ = _streams(cfg.seed)
    cum_p = [_cum_rows(m.transition[a]) for a in range(m.num_actions)]
    cum_d = list(np.cumsum(d.probabilities))
    supp = list(d.support)
    cost = m.cost

    x = cfg.initial_state
    age = cfg.initial_age if cfg.initial_age is not None else supp[0]
    a_cur = 0
    queue: list[tuple[int, int]] = []  # (sampled state, generation slot)
    in_service: tuple[int, int, int] | None = None  # (state, gen, completion)

    batches = _Batches()
    recording = False
    epochs = 0
    total_slots = 0
    aoi_total = 0.0
    interval_total = 0.0
    last_delivery = None
    last_gen_delivered = None
    epoch_cost = 0.0
    epoch_slots = 0

    for t in range(cfg.horizon):
        if in_service is not None and in_service[2] == t:
            s_obs, gen, _ = in_service
            in_service = None
            a_cur = decision(s_obs)
            age = t - gen
            if recording and last_delivery is not None:
                epochs += 1
                batches.add(epoch_cost, epoch_slots)
                total_slots += epoch_slots
                interval_total += gen - last_gen_delivered
            if not recording and t >= cfg.burn_in:
                recording = True
            epoch_cost, epoch_slots = 0.0, 0
            last_delivery, last_gen_delivered = t, gen
        if t % d_u == 0:
            queue.append((x, t))
        if in_service is None and queue:
            s_q, gen_q = queue.pop(0)
            service = supp[_pick(cum_d, dly.next())]
            in_service = (s_q, gen_q, t + service)
        if recording and last_delivery is not None:
            epoch_cost += cost[x, a_cur]
            epoch_slots += 1
            aoi_total += age
        x = _pick(cum_p[a_cur][x], src.next())
        age += 1

    rate, se = batches.rate_and_se()
    if epochs == 0:
        raise RuntimeError("no complete epochs recorded; extend the horizon")
    return SimStats(
        avg_cost_per_slot=rate,
        avg_cost_se=se,
        avg_epoch_length=total_slots / epochs,
        avg_sampling_interval=interval_total / epochs,
        aoi_mean=aoi_total / total_slots,
        epochs_completed=epochs,
        epoch_state_freq=None,
    )
