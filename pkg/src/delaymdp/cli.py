"""Experiment harness: JSON configs in, CSV + JSON (+ PNG) out.

Subcommands
    solve        unconstrained optimal cost rate, with iteration trace
    solve-rate   rate-constrained optimum by the nested Lagrangian search
                 and/or the two-stage LP route
    sweep-delay  cost vs mean delay per policy
    sweep-rate   cost vs maximum sampling frequency per policy
    simulate     Monte Carlo run for each named policy
    trace        residual traces: plain vs damped value iteration and the
                 two one-layer iterations
    table6       relative cost reductions of the co-designed policy

Every run writes its CSVs plus a run.json sidecar echoing the fully
resolved config; re-running from the sidecar reproduces the CSVs byte for
byte.  Exit codes: 0 ok, 1 config error, 2 solver failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import (
    SamplingRule,
    aoi_optimal_beta,
    baseline_lifted_policy,
    longterm_primal_policy,
    myopic_policy,
)
from .constrained import (
    ConstrainedReport,
    InfeasibleRateError,
    quick_blp,
    three_layer_solve,
)
from .lifted import LiftedMdp, build_lifted, default_z_max
from .model import (
    BENCHMARK_PRIMAL,
    DelayDistribution,
    ModelError,
    PrimalMdp,
    StationaryError,
    make_delay,
)
from .sim import SimConfig, simulate_epochs, simulate_uniform_queue
from .unconstrained import (
    DeterministicPolicy,
    SolverConfig,
    SolverError,
    bisec_tau_rvi,
    evaluate_policy,
    fpbi,
    one_pdsi,
    rvi,
    tau_rvi,
)

EXIT_CONFIG = 1
EXIT_SOLVER = 2

# Mean-delay targets of the published reduction table, reproduced by the
# binary channel with p = 0.3 and these cutoffs (inferred pairing; the
# parameters are carried into the output rather than applied silently).
TABLE6_P = 0.3
TABLE6_YMAX = (2, 8, 11, 20)
TABLE6_BASELINES = ("zero-wait", "aoi-optimal", "constant-wait:2")

DEFAULT_SWEEP_POLICIES = ["goal-oriented", "zero-wait", "constant-wait:2",
                          "aoi-optimal"]


class ConfigError(ValueError):
    """Bad or missing configuration; the message names the field."""


class SweepPointError(RuntimeError):
    """A sweep point's solve failed; the message names the point."""


# ---------------------------------------------------------------------------
# config handling


def _preset_config() -> dict:
    return {
        "primal": "appendix-h",
        "delay": {"kind": "binary", "p": 0.3, "y_max": 11},
        "sim": {"horizon": 1_000_000, "burn_in": 10_000, "seed": 20240811},
    }


def load_config(path: str | None, preset: str | None, seed: int | None) -> dict:
    cfg: dict = {}
    if preset is not None:
        if preset != "appendix-h":
            raise ConfigError(f"preset: unknown preset {preset!r}")
        cfg = _preset_config()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"config: cannot read {path}: {exc}") from exc
        try:
            user = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"config: {path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config: top level must be a JSON object")
        cfg.update(user)
    if not cfg:
        raise ConfigError("config: provide --config or --preset appendix-h")
    if seed is not None:
        cfg.setdefault("sim", {})
        cfg["sim"]["seed"] = int(seed)
    return cfg


def _primal_from(cfg: dict) -> PrimalMdp:
    spec = cfg.get("primal")
    if spec is None:
        raise ConfigError("primal: missing field")
    if spec == "appendix-h":
        return BENCHMARK_PRIMAL
    if not isinstance(spec, dict) or "transition" not in spec or "cost" not in spec:
        raise ConfigError("primal: expected 'appendix-h' or "
                          "{'transition': ..., 'cost': ...}")
    try:
        return PrimalMdp(np.asarray(spec["transition"], dtype=float),
                         np.asarray(spec["cost"], dtype=float))
    except (ModelError, ValueError) as exc:
        raise ConfigError(f"primal: {exc}") from exc


def _delay_from(spec: dict) -> DelayDistribution:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("delay: expected an object with a 'kind' field")
    kind = spec["kind"]
    try:
        if kind == "binary":
            return make_delay("binary", p=spec["p"], y_max=spec["y_max"])
        if kind == "truncated_geometric":
            return make_delay("truncated_geometric", q=spec["q"], y_max=spec["y_max"])
        if kind == "explicit":
            return make_delay("explicit", support=spec["support"], probs=spec["probs"])
    except KeyError as exc:
        raise ConfigError(f"delay: missing parameter {exc.args[0]!r}") from exc
    except ModelError as exc:
        raise ConfigError(f"delay: {exc}") from exc
    raise ConfigError(f"delay: unknown kind {kind!r}")


def _solver_from(cfg: dict) -> SolverConfig:
    raw = cfg.get("solver", {})
    if not isinstance(raw, dict):
        raise ConfigError("solver: expected an object")
    allowed = {"tau", "kappa", "tol", "k_max", "eps", "eps1", "eps2", "delta"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"solver: unknown field {sorted(unknown)[0]!r}")
    return SolverConfig(**raw)


def _sim_from(cfg: dict) -> SimConfig:
    raw = dict(cfg.get("sim", {}))
    raw.setdefault("horizon", 1_000_000)
    raw.setdefault("burn_in", 10_000)
    raw.setdefault("seed", 20240811)
    allowed = {"horizon", "burn_in", "seed", "initial_state", "initial_age"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"sim: unknown field {sorted(unknown)[0]!r}")
    try:
        return SimConfig(**raw)
    except ValueError as exc:
        raise ConfigError(f"sim: {exc}") from exc


def _policies_from(cfg: dict, default: list[str] | None) -> list[str]:
    if "policies" not in cfg:
        if default is None:
            raise ConfigError("policies: missing field")
        return list(default)
    pols = cfg["policies"]
    if not isinstance(pols, list) or not pols:
        raise ConfigError("policies: must be a non-empty list of policy names")
    return [str(p) for p in pols]


def parse_policy_name(name: str) -> tuple[str, float | None, str]:
    """'kind[:param][@decision]' -> (kind, param, decision)."""
    decision = "longterm"
    body = name
    if "@" in name:
        body, decision = name.split("@", 1)
        if decision not in ("longterm", "myopic"):
            raise ConfigError(f"policies: unknown decision rule {decision!r} in {name!r}")
    param: float | None = None
    kind = body
    if ":" in body:
        kind, raw = body.split(":", 1)
        if raw == "auto":
            param = math.nan  # resolved per sweep point
        else:
            try:
                param = float(raw)
            except ValueError as exc:
                raise ConfigError(f"policies: bad parameter in {name!r}") from exc
    if kind not in ("goal-oriented", "zero-wait", "constant-wait", "aoi-optimal",
                    "uniform"):
        raise ConfigError(f"policies: unknown policy {name!r}")
    if kind in ("constant-wait", "uniform") and param is None:
        raise ConfigError(f"policies: {kind} needs a parameter, e.g. '{kind}:2'")
    return kind, param, decision


# ---------------------------------------------------------------------------
# output helpers


def emit_csv(path: Path, header: list[str], rows: list[tuple]) -> Path:
    """RFC-4180 CSV: header row, 17 significant digits for reals, LF line
    endings.  NaN anywhere is a write error."""

    def cell(v) -> str:
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        if isinstance(v, (float, np.floating)):
            if math.isnan(v):
                raise ValueError(f"NaN forbidden in CSV output ({path.name})")
            return format(float(v), ".17g")
        s = str(v)
        if any(ch in s for ch in (",", '"', "\n", "\r")):
            s = '"' + s.replace('"', '""') + '"'
        return s

    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row width {len(row)} != header width {len(header)}")
    lines = [",".join(cell(h) for h in header)]
    lines += [",".join(cell(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", newline="\n")
    return path


class RunWriter:
    def __init__(self, outdir: str, command: str, cfg: dict):
        self.dir = Path(outdir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.cfg = cfg
        self.outputs: list[str] = []
        self.meta: dict = {}
        self.t0 = time.time()

    def csv(self, name: str, header: list[str], rows: list[tuple]) -> Path:
        path = emit_csv(self.dir / name, header, rows)
        self.outputs.append(name)
        return path

    def note(self, **kv) -> None:
        self.meta.update(kv)

    def figure(self, name: str) -> Path:
        self.outputs.append(name)
        return self.dir / name

    def finish(self) -> Path:
        sidecar = {
            "command": self.command,
            "config": self.cfg,
            "seed": self.cfg.get("sim", {}).get("seed"),
            "versions": {"delaymdp": __version__, "numpy": np.__version__},
            "wall_time_s": time.time() - self.t0,
            "outputs": self.outputs,
            **self.meta,
        }
        path = self.dir / "run.json"
        path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
        return path


# ---------------------------------------------------------------------------
# shared experiment pieces


class Workspace:
    """Primal + delay + lifted build resolved from a config."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.primal = _primal_from(cfg)
        if "delay" not in cfg:
            raise ConfigError("delay: missing field")
        self.delay = _delay_from(cfg["delay"])
        self.z_max = int(cfg.get("z_max", default_z_max(self.delay)))
        self.solver = _solver_from(cfg)
        self.sim = _sim_from(cfg)
        self.lifted = build_lifted(self.primal, self.delay, self.z_max)

    def warn_if_binding(self, policy, writer: RunWriter) -> None:
        if _policy_hits_zmax(self.lifted, policy):
            print(f"warning: an optimal policy waits z = z_max = {self.z_max}; "
                  f"the waiting bound may be binding", file=sys.stderr)
            writer.note(z_max_binding_warning=True)

    def decision_rule(self, name: str):
        return _decision_rule(self.primal, name)


def _decision_rule(primal: PrimalMdp, name: str):
    if name == "myopic":
        return myopic_policy(primal)
    return longterm_primal_policy(primal)


def _policy_hits_zmax(L: LiftedMdp, policy) -> bool:
    """True when a returned optimal policy puts weight on the waiting bound."""
    if isinstance(policy, DeterministicPolicy):
        return policy.uses_max_wait(L)
    if hasattr(policy, "action_probs"):
        probs = policy.action_probs(L)
        zs = np.array([a.z for a in L.actions])
        return bool(np.any(probs[:, zs == L.z_max] > 1e-12))
    return False


def _make_rule(delay: DelayDistribution, kind: str, param,
               f_max: float) -> SamplingRule:
    if kind == "zero-wait":
        return SamplingRule.zero_wait()
    if kind == "constant-wait":
        return SamplingRule.constant_wait(int(param))
    if kind == "aoi-optimal":
        return SamplingRule.aoi_threshold(aoi_optimal_beta(delay, f_max))
    raise ConfigError(f"policies: {kind} has no stationary lifted form")


def _baseline_cost(primal: PrimalMdp, L: LiftedMdp, kind: str, param,
                   decision: str, f_max: float) -> float:
    """Exact stationary cost rate of a baseline on the lifted chain."""
    rule = _make_rule(L.delay, kind, param, f_max)
    phi = baseline_lifted_policy(L, rule, _decision_rule(primal, decision))
    return evaluate_policy(L, phi).cost_rate


def _solve_goal_policy(ws: Workspace, L: LiftedMdp, f_max: float):
    """Co-designed policy: unconstrained root, or the constrained solve when
    the rate bound can bind."""
    if math.isinf(f_max):
        rho, _, policy, _ = one_pdsi(L, kappa=ws.solver.kappa,
                                     k_max=ws.solver.k_max, tol=ws.solver.tol)
        return rho, policy
    report = quick_blp(L, f_max, kappa=ws.solver.kappa, cfg=ws.solver)
    return report.h_star, report.policy


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve(cfg: dict, outdir: str) -> int:
    ws = Workspace(cfg)
    writer = RunWriter(outdir, "solve", cfg)
    algorithm = cfg.get("algorithm", "bisec-tau-rvi")
    sol = ws.solver
    if algorithm == "bisec-tau-rvi":
        rho, policy, trace = bisec_tau_rvi(ws.lifted, eps=sol.eps, tau=sol.tau,
                                           tol=sol.tol, k_max=sol.k_max)
    elif algorithm == "onepdsi":
        rho, _, policy, trace = one_pdsi(ws.lifted, kappa=sol.kappa,
                                         k_max=sol.k_max, tol=sol.tol)
    else:
        raise ConfigError(f"algorithm: unknown algorithm {algorithm!r}")
    ws.warn_if_binding(policy, writer)
    ev = evaluate_policy(ws.lifted, policy)
    writer.csv("solve.csv",
               ["algorithm", "rho_star", "policy_cost_rate", "epoch_length",
                "iterations", "converged"],
               [(algorithm, rho, ev.cost_rate, ev.F, trace.iterations,
                 trace.converged)])
    writer.csv("solve_trace.csv", ["k", "value", "residual"], trace.to_rows())
    writer.note(lifted_summary=ws.lifted.summary())
    writer.finish()
    return 0


def cmd_solve_rate(cfg: dict, outdir: str) -> int:
    ws = Workspace(cfg)
    writer = RunWriter(outdir, "solve-rate", cfg)
    f_max = cfg.get("f_max")
    if not isinstance(f_max, (int, float)):
        raise ConfigError("f_max: solve-rate needs a scalar f_max")
    method = cfg.get("method", "both")
    if method not in ("both", "three-layer", "quickblp"):
        raise ConfigError(f"method: unknown method {method!r}")
    reports: list[ConstrainedReport] = []
    if method in ("both", "quickblp"):
        reports.append(quick_blp(ws.lifted, float(f_max), kappa=ws.solver.kappa,
                                 cfg=ws.solver))
    if method in ("both", "three-layer"):
        reports.append(three_layer_solve(ws.lifted, float(f_max),
                                         eps1=ws.solver.eps1,
                                         eps2=ws.solver.eps2, cfg=ws.solver))
    for rep in reports:
        ws.warn_if_binding(rep.policy, writer)
    rows = [r.to_sweep_row(float(f_max)) for r in reports]
    writer.csv("solve_rate.csv",
               ["f_max", "h_star", "achieved_F", "binding", "method"], rows)
    writer.note(lifted_summary=ws.lifted.summary(),
                reports=[r.to_json_dict() for r in reports])
    writer.finish()
    return 0


def _delay_grid(cfg: dict) -> list[tuple[str, float, DelayDistribution]]:
    if isinstance(cfg.get("delay"), list):
        # explicit sweep list of delay specs, labeled by their index
        delays = [_delay_from(spec) for spec in cfg["delay"]]
        return [("delay_index", float(i), d) for i, d in enumerate(delays)]
    sweep = cfg.get("sweep", {"mode": "binary-p",
                              "p_grid": [0.05, 0.2, 0.35, 0.5, 0.65, 0.8, 0.95],
                              "y_max": 11})
    mode = sweep.get("mode")
    try:
        if mode == "binary-p":
            return [("p", float(p),
                     make_delay("binary", p=float(p), y_max=int(sweep["y_max"])))
                    for p in sweep["p_grid"]]
        if mode == "binary-ymax":
            return [("y_max", int(ym),
                     make_delay("binary", p=float(sweep["p"]), y_max=int(ym)))
                    for ym in sweep["y_max_grid"]]
        if mode == "geometric-ymax":
            return [("y_max", int(ym),
                     make_delay("truncated_geometric", q=float(sweep["q"]),
                                y_max=int(ym)))
                    for ym in sweep["y_max_grid"]]
    except KeyError as exc:
        raise ConfigError(f"sweep: missing field {exc.args[0]!r}") from exc
    raise ConfigError(f"sweep: unknown mode {mode!r}")


def cmd_sweep_delay(cfg: dict, outdir: str) -> int:
    writer = RunWriter(outdir, "sweep-delay", cfg)
    policies = _policies_from(cfg, DEFAULT_SWEEP_POLICIES)
    for name in policies:
        kind, param, _ = parse_policy_name(name)
        if kind == "uniform" and math.isnan(param):
            raise ConfigError("policies: uniform:auto is only meaningful in "
                              "sweep-rate; give a period")
    grid = _delay_grid(cfg)
    sim_cfg = _sim_from(cfg)
    solver = _solver_from(cfg)
    primal = _primal_from(cfg)

    def run_point(idx_point):
        idx, (pname, pval, delay) = idx_point
        z_max = int(cfg.get("z_max", default_z_max(delay)))
        L = build_lifted(primal, delay, z_max)
        e_y = L.delay_mean
        out = []
        for name in policies:
            kind, param, decision = parse_policy_name(name)
            if kind == "goal-oriented":
                rho, _, _, _ = one_pdsi(L, kappa=solver.kappa,
                                        k_max=solver.k_max, tol=solver.tol)
                out.append((idx, e_y, pname, pval, name, rho, 0.0, "analytic"))
            elif kind == "uniform":
                stats = simulate_uniform_queue(
                    primal, delay, int(param), _decision_rule(primal, decision),
                    _spawned(sim_cfg, idx))
                out.append((idx, e_y, pname, pval, name,
                            stats.avg_cost_per_slot, stats.avg_cost_se,
                            "simulated"))
            else:
                cost = _baseline_cost(primal, L, kind, param, decision, math.inf)
                out.append((idx, e_y, pname, pval, name, cost, 0.0, "analytic"))
        return out

    rows = _pooled(run_point, list(enumerate(grid)))
    writer.csv("sweep_delay.csv",
               ["index", "mean_delay", "param_name", "param_value", "policy",
                "cost", "cost_se", "source"], rows)
    series: dict[str, tuple[list[float], list[float]]] = {}
    for r in rows:
        series.setdefault(r[4], ([], []))
        series[r[4]][0].append(r[1])
        series[r[4]][1].append(r[5])
    from .plots import render_sweep_figure
    render_sweep_figure(writer.figure("sweep_delay.png"), "mean delay (slots)",
                        series, "average cost vs mean delay")
    writer.finish()
    return 0


def _spawned(sim_cfg: SimConfig, idx: int) -> SimConfig:
    return SimConfig(horizon=sim_cfg.horizon, burn_in=sim_cfg.burn_in,
                     seed=sim_cfg.seed + 1000 * (idx + 1),
                     initial_state=sim_cfg.initial_state,
                     initial_age=sim_cfg.initial_age)


def _pooled(fn, points: list, workers: int = 4) -> list:
    """Run sweep points on a bounded worker pool; rows come back ordered by
    sweep index and a failure is re-raised naming the point that caused it."""

    def guarded(idx_point):
        try:
            return idx_point[0], fn(idx_point)
        except Exception as exc:
            raise SweepPointError(f"sweep point {idx_point[0]} "
                                  f"({idx_point[1]!r}): {exc}") from exc

    results: dict[int, list] = {}
    with ThreadPoolExecutor(max_workers=min(workers, max(len(points), 1))) as pool:
        for idx, chunk in pool.map(guarded, points):
            results[idx] = chunk
    rows: list = []
    for idx in sorted(results):
        rows.extend(results[idx])
    return rows


def cmd_sweep_rate(cfg: dict, outdir: str) -> int:
    ws = Workspace(cfg)
    writer = RunWriter(outdir, "sweep-rate", cfg)
    f_grid = cfg.get("f_max")
    if not isinstance(f_grid, list) or not f_grid:
        raise ConfigError("f_max: sweep-rate needs a non-empty list of rates")
    policies = _policies_from(cfg, DEFAULT_SWEEP_POLICIES)
    L = ws.lifted
    e_y = L.delay_mean

    def run_point(idx_f):
        idx, f_max = idx_f
        f_max = float(f_max)
        out = []
        for name in policies:
            kind, param, decision = parse_policy_name(name)
            if kind == "goal-oriented":
                # optimizer infeasibility is a genuine failure, not a row
                report = quick_blp(L, f_max, kappa=ws.solver.kappa,
                                   cfg=ws.solver)
                out.append((idx, f_max, name, report.h_star, 0.0,
                            "analytic", True))
                continue
            try:
                if kind == "uniform":
                    d_u = (max(1, round(1.0 / f_max))
                           if (param is None or math.isnan(param)) else int(param))
                    stats = simulate_uniform_queue(
                        ws.primal, ws.delay, d_u, ws.decision_rule(decision),
                        _spawned(ws.sim, idx))
                    out.append((idx, f_max, name, stats.avg_cost_per_slot,
                                stats.avg_cost_se, "simulated", True))
                else:
                    if kind == "zero-wait" and 1.0 / f_max > e_y + 1e-12:
                        raise InfeasibleRateError("zero-wait rate exceeds bound")
                    if kind == "constant-wait" and 1.0 / f_max > e_y + param + 1e-12:
                        raise InfeasibleRateError("constant-wait rate exceeds bound")
                    cost = _baseline_cost(ws.primal, L, kind, param, decision,
                                          f_max)
                    out.append((idx, f_max, name, cost, 0.0, "analytic", True))
            except InfeasibleRateError:
                out.append((idx, f_max, name, -1.0, 0.0, "infeasible", False))
        return out

    rows = _pooled(run_point, list(enumerate(f_grid)))
    writer.csv("sweep_rate.csv",
               ["index", "f_max", "policy", "cost", "cost_se", "source",
                "feasible"], rows)
    series: dict[str, tuple[list[float], list[float]]] = {}
    for r in rows:
        if r[6]:
            series.setdefault(r[2], ([], []))
            series[r[2]][0].append(r[1])
            series[r[2]][1].append(r[3])
    from .plots import render_sweep_figure
    render_sweep_figure(writer.figure("sweep_rate.png"),
                        "maximum sampling frequency", series,
                        "average cost vs sampling budget")
    writer.note(lifted_summary=L.summary())
    writer.finish()
    return 0


def cmd_simulate(cfg: dict, outdir: str) -> int:
    ws = Workspace(cfg)
    writer = RunWriter(outdir, "simulate", cfg)
    policies = _policies_from(cfg, None)
    f_max = float(cfg.get("f_max", math.inf))
    rows = []
    for i, name in enumerate(policies):
        kind, param, decision = parse_policy_name(name)
        cfg_i = _spawned(ws.sim, i)
        if kind == "goal-oriented":
            _, policy = _solve_goal_policy(ws, ws.lifted, f_max)
            ws.warn_if_binding(policy, writer)
            stats = simulate_epochs(ws.primal, ws.delay, policy, cfg_i,
                                    lifted=ws.lifted)
        elif kind == "uniform":
            if math.isnan(param):
                raise ConfigError("policies: uniform:auto is only meaningful "
                                  "in sweep-rate; give a period")
            stats = simulate_uniform_queue(ws.primal, ws.delay, int(param),
                                           ws.decision_rule(decision), cfg_i)
        else:
            rule = _make_rule(ws.delay, kind, param, f_max)
            stats = simulate_epochs(ws.primal, ws.delay,
                                    (rule, ws.decision_rule(decision)), cfg_i)
        rows.append((name, stats.avg_cost_per_slot, stats.avg_cost_se,
                     stats.avg_epoch_length, stats.avg_sampling_interval,
                     stats.aoi_mean, stats.epochs_completed))
    writer.csv("simulate.csv",
               ["policy", "avg_cost_per_slot", "cost_se", "avg_epoch_length",
                "avg_sampling_interval", "aoi_mean", "epochs"], rows)
    writer.note(lifted_summary=ws.lifted.summary())
    writer.finish()
    return 0


def cmd_trace(cfg: dict, outdir: str) -> int:
    ws = Workspace(cfg)
    writer = RunWriter(outdir, "trace", cfg)
    if "lambda" not in cfg:
        raise ConfigError("lambda: missing field (trace needs the Dinkelbach "
                          "parameter for the value-iteration pair)")
    lam = float(cfg["lambda"])
    k_max = int(cfg.get("trace_k_max", 500))
    tol = ws.solver.tol
    _, _, tr_rvi = rvi(ws.lifted, lam, k_max=k_max, tol=tol)
    _, _, tr_tau = tau_rvi(ws.lifted, lam, tau=ws.solver.tau, k_max=k_max, tol=tol)
    _, _, tr_fpbi = fpbi(ws.lifted, k_max=k_max, tol=tol)
    try:
        _, _, _, tr_pdsi = one_pdsi(ws.lifted, kappa=ws.solver.kappa,
                                    k_max=max(k_max, 10_000), tol=tol)
        pdsi_rows = tr_pdsi.to_rows()
    except SolverError:
        pdsi_rows = []
    writer.csv("trace_rvi.csv", ["k", "value", "residual"], tr_rvi.to_rows())
    writer.csv("trace_tau_rvi.csv", ["k", "value", "residual"], tr_tau.to_rows())
    writer.csv("trace_fpbi.csv", ["k", "value", "residual"], tr_fpbi.to_rows())
    writer.csv("trace_onepdsi.csv", ["k", "value", "residual"], pdsi_rows)
    from .plots import render_trace_figure
    render_trace_figure(writer.figure("trace_value_iteration.png"),
                        {"plain": tr_rvi.to_rows(),
                         f"damped (tau={ws.solver.tau})": tr_tau.to_rows()},
                        f"value-iteration residuals at lambda={lam}")
    render_trace_figure(writer.figure("trace_one_layer.png"),
                        {"plain fixed point": tr_fpbi.to_rows(),
                         f"damped (kappa={ws.solver.kappa})": pdsi_rows},
                        "one-layer iteration residuals")
    writer.note(rvi_oscillatory=tr_rvi.oscillatory,
                rvi_converged=tr_rvi.converged,
                tau_rvi_converged=tr_tau.converged,
                fpbi_converged=tr_fpbi.converged)
    writer.finish()
    return 0


def cmd_table6(cfg: dict, outdir: str) -> int:
    writer = RunWriter(outdir, "table6", cfg)
    primal = _primal_from(cfg)
    solver = _solver_from(cfg)
    rows = []
    groups: dict[str, list[float]] = {b: [] for b in TABLE6_BASELINES}
    labels = []
    for ym in TABLE6_YMAX:
        delay = make_delay("binary", p=TABLE6_P, y_max=ym)
        L = build_lifted(primal, delay, default_z_max(delay))
        rho, _, _, _ = one_pdsi(L, kappa=solver.kappa, k_max=solver.k_max,
                                tol=solver.tol)
        e_y = L.delay_mean
        labels.append(f"{e_y:g}")
        for base in TABLE6_BASELINES:
            kind, param, decision = parse_policy_name(base)
            cost = _baseline_cost(primal, L, kind, param, decision, math.inf)
            reduction = (cost - rho) / cost * 100.0
            rows.append((e_y, TABLE6_P, ym, base, cost, rho, reduction))
            groups[base].append(reduction)
    writer.csv("table6.csv",
               ["mean_delay", "p", "y_max", "baseline", "baseline_cost",
                "goal_cost", "reduction_pct"], rows)
    from .plots import render_reduction_figure
    render_reduction_figure(writer.figure("table6.png"), labels, groups,
                            "cost reduction of co-designed sampling")
    writer.note(inferred_parameters={"p": TABLE6_P, "y_max_grid": list(TABLE6_YMAX)})
    writer.finish()
    return 0


# ---------------------------------------------------------------------------


COMMANDS = {
    "solve": cmd_solve,
    "solve-rate": cmd_solve_rate,
    "sweep-delay": cmd_sweep_delay,
    "sweep-rate": cmd_sweep_rate,
    "simulate": cmd_simulate,
    "trace": cmd_trace,
    "table6": cmd_table6,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="delaymdp",
        description="Goal-oriented sampling and remote decision-making "
                    "under random delay")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON experiment config")
    parser.add_argument("--preset", help="named preset (appendix-h)")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--seed", type=int, help="override the simulation seed")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.preset, args.seed)
        return COMMANDS[args.command](cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, InfeasibleRateError, StationaryError, ModelError,
            SweepPointError, ValueError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
