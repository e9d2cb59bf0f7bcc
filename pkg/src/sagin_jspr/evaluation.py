"""Migration counting, cost/delay reports and delta sweeps with CSV output."""

from __future__ import annotations

import csv
import logging
import math
import statistics
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Iterable, Mapping, Sequence

if TYPE_CHECKING:
    from .formulations import PlacementPlan
    from .scenario import Scenario

log = logging.getLogger(__name__)


def migration_count(n_prev: Mapping[tuple, int], n_curr: Mapping[tuple, int]) -> dict:
    """Migrations per service between two instance layouts.

    Keys are ``(dc, service)``. Per service: the sum of per-DC increases
    minus the positive part of the net change in total instances.
    """
    if set(n_prev) != set(n_curr):
        raise ValueError("instance layouts must share the same (dc, service) keys")
    inc: dict = defaultdict(int)
    net: dict = defaultdict(int)
    for key in n_curr:
        a, b = n_prev[key], n_curr[key]
        if a < 0 or b < 0:
            raise ValueError(f"negative instance count at {key}")
        k = key[1]
        inc[k] += max(0, b - a)
        net[k] += b - a
    return {k: inc[k] - max(0, net[k]) for k in sorted(inc)}


@dataclass
class CostReport:
    mode: str
    deployment_cost: float
    routing_cost: float
    migration_cost: float
    total_cost: float
    migrations_total: float
    migrations: dict[str, dict[int, float]]
    avg_delay_ms: dict[str, float]
    max_delay_ms: dict[str, float]
    wall_time_s: float
    gap: float
    build_time_s: float = 0.0

    def row(self) -> dict:
        d = asdict(self)
        d.pop("migrations")
        d.pop("avg_delay_ms")
        d.pop("max_delay_ms")
        for k, v in sorted(self.avg_delay_ms.items()):
            d[f"avg_delay_{k}_ms"] = v
        d["max_delay_ms"] = max(self.max_delay_ms.values(), default=0.0)
        return d


def delay_stats(plan: "PlacementPlan") -> dict[str, tuple[float, float]]:
    """Average and maximum end-to-end delay per service over all (request, slot) pairs."""
    per: dict[str, list[float]] = defaultdict(list)
    for sp in plan.slots:
        for r in sp.requests:
            per[r.service].append(sp.delays[r.id])
    if not per:
        raise ValueError("plan holds no routed requests")
    return {k: (sum(v) / len(v), max(v)) for k, v in sorted(per.items())}


def cost_breakdown(plan: "PlacementPlan", scenario: "Scenario") -> CostReport:
    if len(plan.slots) != scenario.horizon:
        raise ValueError(f"plan covers {len(plan.slots)} slots, scenario has {scenario.horizon}")
    deployment = routing = migration = 0.0
    migs: dict[str, dict[int, float]] = defaultdict(dict)
    for sp, snap in zip(plan.slots, scenario.snapshots):
        if sp.slot != snap.slot:
            raise ValueError(f"plan slot {sp.slot} does not match scenario slot {snap.slot}")
        for (j, k), cnt in sp.instances.items():
            if j not in snap.nodes:
                raise ValueError(f"unknown DC {j} in plan")
            deployment += scenario.services[k].instance_cost * cnt
        for arc in sp.active_links:
            routing += snap.arcs[arc].cost
        for k, m in sp.migrations.items():
            migration += scenario.services[k].migration_cost * m
            migs[k][sp.slot] = m
    try:
        stats = delay_stats(plan)
    except ValueError:
        stats = {}
    return CostReport(
        mode=plan.mode,
        deployment_cost=deployment,
        routing_cost=routing,
        migration_cost=migration,
        total_cost=deployment + routing + migration,
        migrations_total=sum(sum(v.values()) for v in migs.values()),
        migrations=dict(migs),
        avg_delay_ms={k: v[0] for k, v in stats.items()},
        max_delay_ms={k: v[1] for k, v in stats.items()},
        wall_time_s=plan.wall_time_s,
        gap=plan.gap,
        build_time_s=plan.build_time_s,
    )


FLIGHT_CLASSES = {"short": 3, "long": 7}

RESULT_FIELDS = [
    "delta", "mode", "class", "seed", "deployment", "routing", "migration", "total", "migrations",
    "avg_delay_video_ms", "avg_delay_voip_ms", "max_delay_ms", "wall_time_s", "gap", "status",
]
SUMMARY_METRICS = ["deployment", "routing", "migration", "total", "migrations",
                   "avg_delay_video_ms", "avg_delay_voip_ms", "max_delay_ms", "wall_time_s", "gap"]


@dataclass
class SweepResult:
    rows: list[dict]
    summary: list[dict]
    deltas: list[float]
    repetitions: int

    def write(self, out_dir: str | Path) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rpath, spath = out / "results.csv", out / "summary.csv"
        _write_csv(rpath, RESULT_FIELDS, self.rows)
        sfields = ["delta", "mode", "class", "runs", "failed"] + [
            f"{m}_{s}" for m in SUMMARY_METRICS for s in ("mean", "std")
        ]
        _write_csv(spath, sfields, self.summary)
        return rpath, spath


def _fmt(v):
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return f"{v:.6f}"
    return v


def _write_csv(path: Path, fields: list[str], rows: Iterable[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in fields})


def report_row(report: CostReport, delta: float, mode: str, cls: str, seed: int, status: str) -> dict:
    return {
        "delta": delta,
        "mode": mode,
        "class": cls,
        "seed": seed,
        "deployment": report.deployment_cost,
        "routing": report.routing_cost,
        "migration": report.migration_cost,
        "total": report.total_cost,
        "migrations": report.migrations_total,
        "avg_delay_video_ms": report.avg_delay_ms.get("video", math.nan),
        "avg_delay_voip_ms": report.avg_delay_ms.get("voip", math.nan),
        "max_delay_ms": max(report.max_delay_ms.values(), default=math.nan),
        "wall_time_s": report.wall_time_s,
        "gap": report.gap,
        "status": status,
    }


def aggregate(rows: Sequence[dict], deltas: Sequence[float], modes: Sequence[str], classes: Sequence[str]) -> list[dict]:
    """Mean/stddev per (delta, mode, class) over successful runs, in grid order."""
    groups: dict[tuple, list[dict]] = defaultdict(list)
    for r in rows:
        groups[(r["delta"], r["mode"], r["class"])].append(r)
    out = []
    for d in deltas:
        for mode in modes:
            for cls in classes:
                runs = groups.get((d, mode, cls), [])
                ok = [r for r in runs if r["status"] in ("optimal", "gap_reached")]
                rec = {"delta": d, "mode": mode, "class": cls, "runs": len(ok), "failed": len(runs) - len(ok)}
                for m in SUMMARY_METRICS:
                    vals = [float(r[m]) for r in ok if not math.isnan(float(r[m]))]
                    rec[f"{m}_mean"] = statistics.fmean(vals) if vals else math.nan
                    rec[f"{m}_std"] = statistics.pstdev(vals) if len(vals) > 1 else (0.0 if vals else math.nan)
                out.append(rec)
    return out


def sweep(
    scenario_factory: Callable[[str, int, int], "Scenario"],
    deltas: Sequence[float],
    modes: Sequence[str] = ("ma", "rollout"),
    classes: Sequence[str] = ("short", "long"),
    repetitions: int = 1,
    seeds: Sequence[int] | None = None,
    params=None,
    backend=None,
) -> SweepResult:
    """Run every (delta, mode, class, repetition) and aggregate.

    ``scenario_factory(class_name, tau, seed)`` builds the network and
    demand once per (class, seed); delta only rescales migration costs so
    the same draw is reused across the grid.
    """
    from .formulations import rollout_static, solve_majspr
    from .milp import SolveParams

    if not deltas or not modes or not classes or repetitions < 1:
        raise ValueError("sweep grids must be non-empty")
    deltas = sorted(float(d) for d in deltas)
    seeds = list(seeds) if seeds is not None else list(range(repetitions))
    if len(seeds) != repetitions:
        raise ValueError("need one seed per repetition")
    params = params or SolveParams()
    rows: list[dict] = []
    for cls in classes:
        tau = FLIGHT_CLASSES[cls]
        for seed in seeds:
            try:
                base = scenario_factory(cls, tau, seed)
            except Exception as exc:  # a failed build flags every row of this draw
                log.warning("scenario build failed for %s/%s: %s", cls, seed, exc)
                for d in deltas:
                    for mode in modes:
                        rows.append(_failed_row(d, mode, cls, seed, f"build_error"))
                continue
            for d in deltas:
                sc = base.with_delta(d)
                for mode in modes:
                    try:
                        if mode == "ma":
                            _, _, sol, plan = solve_majspr(sc, params, backend)
                            if plan is None:
                                rows.append(_failed_row(d, mode, cls, seed, sol.status.value))
                                continue
                        elif mode == "rollout":
                            plan = rollout_static(sc, params, backend)
                        else:
                            raise ValueError(f"unknown mode {mode!r}")
                        rep = cost_breakdown(plan, sc)
                        rows.append(report_row(rep, d, mode, cls, seed, plan.status))
                    except ValueError:
                        raise
                    except Exception as exc:
                        log.warning("run %s/%s/%s/%s failed: %s", d, mode, cls, seed, exc)
                        rows.append(_failed_row(d, mode, cls, seed, "error"))
    rows.sort(key=lambda r: (r["delta"], list(modes).index(r["mode"]), list(classes).index(r["class"]), seeds.index(r["seed"])))
    return SweepResult(rows, aggregate(rows, deltas, modes, classes), deltas, repetitions)


def _failed_row(d, mode, cls, seed, status) -> dict:
    row = {k: math.nan for k in RESULT_FIELDS}
    row.update({"delta": d, "mode": mode, "class": cls, "seed": seed, "status": status})
    return row
