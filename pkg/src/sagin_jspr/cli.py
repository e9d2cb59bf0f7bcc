"""Command-line front end: ``sagin-jspr build | solve | sweep | validate``.

Exit codes: 0 ok, 2 config/input error, 3 infeasible, 4 solver limit
without incumbent, 5 internal validation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from collections import Counter
from dataclasses import asdict, replace
from pathlib import Path

from .evaluation import FLIGHT_CLASSES, cost_breakdown, sweep
from .formulations import (
    PlacementPlan,
    RolloutError,
    build_majspr,
    build_sjspr,
    decode_plan,
    rollout_static,
)
from .milp import BACKENDS, SolveParams, Status, solve_milp, validate_solution
from .network import ConnectivityError, NodeKind
from .scenario import DEFAULT_CONFIG, ConfigError, Scenario, ScenarioConfig, build_scenario

log = logging.getLogger("sagin_jspr")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_LIMIT = 4
EXIT_VALIDATION = 5

MODES = ("static", "ma", "rollout", "sweep")


class CliFailure(Exception):
    def __init__(self, code: int, kind: str, message: str, **extra):
        super().__init__(message)
        self.code = code
        self.kind = kind
        self.extra = extra


def parse_deltas(text: str) -> list[float]:
    """``A:B:STEP`` (inclusive) or a comma list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"--deltas expects A:B:STEP, got {text!r}")
        a, b, step = (float(p) for p in parts)
        if step <= 0 or b < a:
            raise ConfigError(f"bad delta range {text!r}")
        n = int(math.floor((b - a) / step + 1e-9)) + 1
        return [round(a + i * step, 10) for i in range(n)]
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad delta list {text!r}") from exc


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1, default=_json_default) + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    raise TypeError(f"not serializable: {type(o)}")


def _finite(v: float):
    return v if math.isfinite(v) else str(v)


def load_config(args) -> ScenarioConfig:
    overrides = {"seed": args.seed, "delta": getattr(args, "delta", None)}
    return ScenarioConfig.from_file(args.config, overrides)


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {out} not writable: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} not writable")
    return out


def _build(cfg: ScenarioConfig) -> Scenario:
    try:
        return build_scenario(cfg)
    except ConnectivityError as exc:
        raise CliFailure(EXIT_INFEASIBLE, "connectivity", str(exc)) from exc


def scenario_summary(sc: Scenario) -> str:
    snap = sc.snapshots[0]
    by_kind: dict[NodeKind, list[str]] = {}
    for n in snap.nodes.values():
        by_kind.setdefault(n.kind, []).append(n.id)
    lines = [f"horizon: {sc.horizon} slot(s) of {sc.slot_minutes:g} min, delta {sc.delta:g}, seed {sc.seed}"]
    for kind, label in (
        (NodeKind.DATACENTER, "datacenters"),
        (NodeKind.SATELLITE_GATEWAY, "satellite gateways"),
        (NodeKind.SATELLITE_RELAY, "satellite relays"),
        (NodeKind.DA2G_STATION, "DA2G stations"),
    ):
        ids = sorted(by_kind.get(kind, []))
        shown = ", ".join(ids) if len(ids) <= 10 else f"{', '.join(ids[:5])}, ..."
        lines.append(f"{label}: {len(ids)} ({shown})")
    n_ground = sum(1 for n in snap.nodes.values() if n.kind in (NodeKind.GROUND, NodeKind.DATACENTER, NodeKind.SATELLITE_GATEWAY))
    lines.append(f"ground nodes: {n_ground}")
    for tr in sc.tracks:
        lines.append(
            f"flight {tr.id}: slots {tr.first_slot}..{tr.last_slot} (tau {tr.tau}), "
            f"duration {tr.duration_minutes(sc.slot_minutes):g} min"
        )
    for k in sorted(sc.services):
        s = sc.services[k]
        lines.append(
            f"service {k}: {s.bandwidth_mbps:g} Mbps, max delay {s.max_delay_ms:g} ms, "
            f"instance cost {s.instance_cost:g}, migration cost {s.migration_cost:g}"
        )
    for t, (sn, reqs) in enumerate(zip(sc.snapshots, sc.requests)):
        links = Counter("da2g" if sn.nodes[u].kind is NodeKind.FLIGHT_POSITION and sn.nodes[v].kind is NodeKind.DA2G_STATION else None
                        for u, v in sn.arcs)
        lines.append(f"slot {t}: {len(sn.nodes)} nodes, {len(sn.arcs)} arcs, {len(reqs)} request(s), "
                     f"{links['da2g']} DA2G uplink(s)")
    return "\n".join(lines)


def cmd_build(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args)
    sc = _build(cfg)
    (out / "scenario.json").write_text(sc.to_json() + "\n", encoding="utf-8")
    text = scenario_summary(sc)
    (out / "summary.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def _params(args) -> SolveParams:
    return SolveParams(rel_gap=args.gap, time_limit_s=args.time_limit)


def _solution_record(model, sol, slot) -> dict:
    vals = {}
    if sol.values is not None:
        for v in model.variables:
            x = sol.values[v.id]
            if abs(x) > 1e-9:
                vals[v.name] = round(x, 9)
    return {"model": model.name, "slot": slot, "status": sol.status.value, "objective": _finite(sol.objective),
            "best_bound": _finite(sol.best_bound), "values": dict(sorted(vals.items()))}


def _status_failure(status: Status, where: str) -> CliFailure:
    if status is Status.INFEASIBLE:
        return CliFailure(EXIT_INFEASIBLE, "infeasible", f"{where} is infeasible")
    if status is Status.LIMIT_HIT:
        return CliFailure(EXIT_LIMIT, "limit_without_incumbent", f"{where}: solver limit reached before any incumbent")
    return CliFailure(EXIT_VALIDATION, status.value, f"{where}: solver returned {status.value}")


def run_solve(sc: Scenario, mode: str, params: SolveParams, backend: str, slot: int = 0, models_dir: Path | None = None):
    """Solve one scenario in ``mode``; returns (scenario_used, plan, solution records)."""
    records = []
    if mode == "static":
        if not 0 <= slot < sc.horizon:
            raise ConfigError(f"slot {slot} outside horizon 0..{sc.horizon - 1}")
        sc = sc.slice(slot)
        model, vm = build_sjspr(sc.snapshots[0], sc.requests[0], sc.services)
        _export(model, models_dir)
        sol = solve_milp(model, params, backend)
        records.append(_solution_record(model, sol, sc.snapshots[0].slot))
        if sol.values is None:
            raise _status_failure(sol.status, f"static slot {slot}")
        plan = decode_plan(model, vm, sol, sc, mode="static")
        plan.violations = [str(v) for v in sol.violations]
    elif mode == "ma":
        model, vm = build_majspr(sc)
        _export(model, models_dir)
        sol = solve_milp(model, params, backend)
        records.append(_solution_record(model, sol, None))
        if sol.values is None:
            raise _status_failure(sol.status, "mobility-aware model")
        plan = decode_plan(model, vm, sol, sc, mode="ma")
        plan.violations = [str(v) for v in sol.violations]
    elif mode == "rollout":
        trace: list = []
        try:
            plan = rollout_static(sc, params, backend, trace=trace)
        except RolloutError as exc:
            raise _status_failure(exc.status, f"rollout slot {exc.slot}") from exc
        finally:
            for (model, sol), snap in zip(trace, sc.snapshots):
                _export(model, models_dir)
                records.append(_solution_record(model, sol, snap.slot))
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    return sc, plan, records


def _export(model, models_dir: Path | None) -> None:
    if models_dir is not None:
        models_dir.mkdir(parents=True, exist_ok=True)
        (models_dir / f"{model.name}.lp").write_text(model.to_lp_text(), encoding="utf-8")


def _report_dict(rep) -> dict:
    d = asdict(rep)
    d.pop("wall_time_s")
    d.pop("build_time_s")
    d["migrations"] = {k: {str(t): m for t, m in sorted(v.items())} for k, v in sorted(rep.migrations.items())}
    d["gap"] = _finite(d["gap"])
    return d


def cmd_solve(args) -> int:
    if args.mode == "sweep":
        return cmd_sweep(args)
    cfg = load_config(args)
    out = _out_dir(args)
    sc = _build(cfg)
    (out / "scenario.json").write_text(sc.to_json() + "\n", encoding="utf-8")
    models_dir = out / "models" if args.export_models else None
    sc_used, plan, records = run_solve(sc, args.mode, _params(args), args.backend, args.slot, models_dir)
    _dump(out / "solution.json", {"mode": args.mode, "models": records})
    problems = list(plan.violations) + plan.check(sc_used)
    plan.violations = problems
    rep = cost_breakdown(plan, sc_used)
    _dump(out / "plan.json", plan.to_dict())
    _dump(out / "report.json", _report_dict(rep))
    _dump(out / "timings.json", {"wall_time_s": plan.wall_time_s, "build_time_s": plan.build_time_s,
                                 "slot_wall_times_s": plan.slot_wall_times_s})
    print(f"mode {plan.mode}: status {plan.status}, total {rep.total_cost:.6f} (deployment {rep.deployment_cost:.6f}, "
          f"routing {rep.routing_cost:.6f}, migration {rep.migration_cost:.6f}), gap {rep.gap:.4f}, "
          f"migrations {rep.migrations_total:g}")
    if problems:
        raise CliFailure(EXIT_VALIDATION, "validation", f"{len(problems)} problem(s); first: {problems[0]}",
                         problems=problems[:50])
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args)
    if args.deltas:
        deltas = parse_deltas(args.deltas)
    elif args.delta is not None:
        deltas = [args.delta]
    else:
        deltas = parse_deltas("0.1:1.0:0.1")
    if any(not 0 <= d <= 1 for d in deltas):
        raise ConfigError("deltas must lie in [0, 1]")
    modes = [m for m in args.modes.split(",") if m]
    classes = [c for c in args.classes.split(",") if c]
    for m in modes:
        if m not in ("ma", "rollout"):
            raise ConfigError(f"sweep mode {m!r} not in ma, rollout")
    for c in classes:
        if c not in FLIGHT_CLASSES:
            raise ConfigError(f"flight class {c!r} not in {sorted(FLIGHT_CLASSES)}")
    base_seed = cfg.seed

    def factory(cls: str, tau: int, seed: int) -> Scenario:
        return build_scenario(replace(cfg, flights=None, tau=tau, seed=seed))

    seeds = [base_seed + i for i in range(args.repetitions)]
    res = sweep(factory, deltas, modes, classes, args.repetitions, seeds, _params(args), args.backend)
    rpath, spath = res.write(out)
    print(f"wrote {rpath} ({len(res.rows)} runs) and {spath} ({len(res.summary)} rows)")
    return EXIT_OK


def cmd_validate(args) -> int:
    """Re-check a solve directory: solver values against rebuilt models, decoded paths and cost totals."""
    run = Path(args.run_dir)
    try:
        sc = Scenario.from_json((run / "scenario.json").read_text(encoding="utf-8"))
        plan = PlacementPlan.from_dict(json.loads((run / "plan.json").read_text(encoding="utf-8")))
        sol_doc = json.loads((run / "solution.json").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"missing run artifact: {exc.filename}") from exc
    problems = []
    if plan.mode == "static":
        sc = sc.slice(sc.snapshots.index(next(s for s in sc.snapshots if s.slot == plan.slots[0].slot)))
    for rec in sol_doc["models"]:
        if rec["slot"] is None:
            model, _ = build_majspr(sc)
        else:
            idx = [s.slot for s in sc.snapshots].index(rec["slot"])
            model, _ = build_sjspr(sc.snapshots[idx], sc.requests[idx], sc.services)
        vals = [rec["values"].get(v.name, 0.0) for v in model.variables]
        problems += [f"{model.name}: {v}" for v in validate_solution(model, vals, tol=1e-6)]
    problems += plan.check(sc)
    rep = cost_breakdown(plan, sc)
    if plan.mode in ("ma", "static"):
        # the solver's migration variables may only overstate the counted migrations
        tol = 1e-6 * max(1.0, abs(plan.objective))
        slack = max(plan.gap, 0.0) * abs(plan.objective)
        if not plan.objective - tol - slack <= rep.total_cost <= plan.objective + tol:
            problems.append(f"report total {rep.total_cost} inconsistent with objective {plan.objective}")
    if problems:
        raise CliFailure(EXIT_VALIDATION, "validation", f"{len(problems)} problem(s); first: {problems[0]}",
                         problems=problems[:50])
    print(f"{run}: plan valid ({len(plan.slots)} slot(s), total {rep.total_cost:.6f})")
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser, out_default: str) -> None:
    p.add_argument("--config", default=str(DEFAULT_CONFIG), help="scenario YAML (default: bundled European scenario)")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--delta", type=float, default=None, help="migration cost weight in [0, 1]")
    p.add_argument("--out", default=out_default, help="output directory")


def _add_solver(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gap", type=float, default=0.05, help="relative optimality gap (default 0.05)")
    p.add_argument("--time-limit", type=float, default=None, help="solver time limit in seconds, per model")
    p.add_argument("--backend", choices=sorted(BACKENDS), default="bnb")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sagin-jspr", description="Joint service placement and routing for in-flight services")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="build and serialize a scenario")
    _add_common(p, "out")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("solve", help="solve one scenario")
    _add_common(p, "out")
    _add_solver(p)
    p.add_argument("--mode", choices=MODES, default="ma")
    p.add_argument("--slot", type=int, default=0, help="slot for --mode static")
    p.add_argument("--export-models", action="store_true", help="write models/*.lp")
    _add_sweep_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="delta sweep over modes and flight classes")
    _add_common(p, "sweep_out")
    _add_solver(p)
    _add_sweep_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="re-check the artifacts of a solve run")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_validate)
    return ap


def _add_sweep_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--deltas", default=None, help="A:B:STEP (inclusive) or comma list")
    p.add_argument("--modes", default="ma,rollout")
    p.add_argument("--classes", default="short,long")
    p.add_argument("--repetitions", type=int, default=1)


def _setup_logging() -> None:
    name = os.environ.get("SAGIN_JSPR_LOG", "WARNING").upper()
    level = getattr(logging, name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(level)


def _error_record(out: Path | None, code: int, kind: str, message: str, extra: dict) -> None:
    rec = {"exit_code": code, "error": kind, "message": message, **extra}
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)
    if out is not None:
        try:
            _dump(out / "error.json", rec)
        except OSError:
            pass


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    out = Path(args.out) if getattr(args, "out", None) else None
    if out is not None and (out / "error.json").exists():
        (out / "error.json").unlink()
    try:
        return args.func(args)
    except CliFailure as exc:
        _error_record(out, exc.code, exc.kind, str(exc), exc.extra)
        return exc.code
    except ConfigError as exc:
        _error_record(out, EXIT_CONFIG, "config", str(exc), {})
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
