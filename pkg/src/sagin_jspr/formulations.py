"""S-JSPR and MA-JSPR model builders, plan decoding and the per-slot
static rollout baseline."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .evaluation import migration_count
from .milp import MilpModel, Sense, Solution, SolveParams, Status, Variable, VarKind, solve_milp
from .network import NodeKind, SaginSnapshot
from .scenario import Scenario, ServiceRequest, ServiceType

log = logging.getLogger(__name__)

Arc = tuple[str, str]

SJSPR_FAMILIES = (
    "assign", "open", "dc_cap", "inst_cap", "link_cap", "delay",
    "source", "flow", "route_to_dc", "act_lo", "act_hi",
)
MIGRATION_FAMILIES = ("mig.p", "mig.c_lo", "mig.c_hi", "mig.c_sel", "mig.m")
_DELAY_EPS = 1e-9


class DecodeError(RuntimeError):
    """A decoded routing does not reach its assigned datacenter."""


@dataclass
class VarMap:
    """Index between model variables and their (slot, ...) roles."""

    x: dict[tuple[int, str, str], Variable] = field(default_factory=dict)  # (t, a, j)
    l: dict[tuple[int, str, str, Arc], Variable] = field(default_factory=dict)  # (t, a, j, arc)
    n: dict[tuple[int, str, str], Variable] = field(default_factory=dict)  # (t, j, k)
    y: dict[tuple[int, Arc], Variable] = field(default_factory=dict)  # (t, arc)
    m: dict[tuple[int, str], Variable] = field(default_factory=dict)  # (t, k)
    p: dict[tuple[int, str, str], Variable] = field(default_factory=dict)  # (t, j, k)
    c: dict[tuple[int, str], Variable] = field(default_factory=dict)  # (t, k)
    w: dict[tuple[int, str], Variable] = field(default_factory=dict)  # (t, k)
    roles: dict[int, tuple] = field(default_factory=dict)
    slots: list[int] = field(default_factory=list)
    rho: dict[int, float] = field(default_factory=dict)
    big_m: dict[str, float] = field(default_factory=dict)
    pruned_l: int = 0

    def _add(self, table: str, key: tuple, var: Variable) -> Variable:
        getattr(self, table)[key] = var
        self.roles[var.id] = (table,) + key
        return var

    def role_of(self, var: Variable | int) -> tuple:
        return self.roles[var.id if isinstance(var, Variable) else var]

    def census(self) -> dict[str, int]:
        return {k: len(getattr(self, k)) for k in ("x", "l", "n", "y", "m", "p", "c", "w")}


@dataclass
class SlotPlan:
    slot: int
    instances: dict[tuple[str, str], int]  # (dc, service) -> count
    assignment: dict[str, str]  # request id -> dc
    paths: dict[str, list[Arc]]
    delays: dict[str, float]
    active_links: list[Arc]
    migrations: dict[str, float]
    requests: list[ServiceRequest] = field(default_factory=list)


@dataclass
class PlacementPlan:
    mode: str
    slots: list[SlotPlan]
    objective: float = math.nan
    gap: float = 0.0
    status: str = ""
    wall_time_s: float = 0.0
    build_time_s: float = 0.0
    slot_wall_times_s: list[float] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)

    @property
    def migrations_total(self) -> float:
        return sum(sum(sp.migrations.values()) for sp in self.slots)

    def to_dict(self, timings: bool = False) -> dict:
        """JSON-ready form; wall-clock fields only when ``timings`` is set."""
        d = {
            "mode": self.mode,
            "objective": self.objective,
            "gap": self.gap,
            "status": self.status,
            "warnings": list(self.warnings),
            "violations": list(self.violations),
            "slots": [
                {
                    "slot": sp.slot,
                    "instances": [[j, k, n] for (j, k), n in sorted(sp.instances.items())],
                    "assignment": dict(sorted(sp.assignment.items())),
                    "paths": {r: [list(a) for a in p] for r, p in sorted(sp.paths.items())},
                    "delays": dict(sorted(sp.delays.items())),
                    "active_links": [list(a) for a in sp.active_links],
                    "migrations": dict(sorted(sp.migrations.items())),
                    "requests": [asdict(r) for r in sp.requests],
                }
                for sp in self.slots
            ],
        }
        if timings:
            d["wall_time_s"] = self.wall_time_s
            d["build_time_s"] = self.build_time_s
            d["slot_wall_times_s"] = list(self.slot_wall_times_s)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PlacementPlan":
        slots = [
            SlotPlan(
                slot=s["slot"],
                instances={(j, k): int(n) for j, k, n in s["instances"]},
                assignment=dict(s["assignment"]),
                paths={r: [tuple(a) for a in p] for r, p in s["paths"].items()},
                delays=dict(s["delays"]),
                active_links=[tuple(a) for a in s["active_links"]],
                migrations=dict(s["migrations"]),
                requests=[ServiceRequest(**r) for r in s["requests"]],
            )
            for s in d["slots"]
        ]
        return cls(
            mode=d["mode"], slots=slots, objective=d["objective"], gap=d["gap"], status=d["status"],
            wall_time_s=d.get("wall_time_s", 0.0), build_time_s=d.get("build_time_s", 0.0),
            slot_wall_times_s=list(d.get("slot_wall_times_s", [])),
            warnings=list(d.get("warnings", [])), violations=list(d.get("violations", [])),
        )

    def check(self, scenario: Scenario, tol: float = 1e-6) -> list[str]:
        """Re-validate decoded paths against delay, link, core and instance limits."""
        problems = []
        for sp, snap in zip(self.slots, scenario.snapshots):
            load: dict[Arc, float] = defaultdict(float)
            inst_load: dict[tuple[str, str], float] = defaultdict(float)
            for r in sp.requests:
                j = sp.assignment.get(r.id)
                path = sp.paths.get(r.id)
                if j is None or path is None:
                    problems.append(f"slot {sp.slot}: request {r.id} unassigned")
                    continue
                if not path or path[0][0] != r.src or path[-1][1] != j:
                    problems.append(f"slot {sp.slot}: path of {r.id} does not join {r.src} to {j}")
                visited = [path[0][0]] + [v for _, v in path] if path else []
                if len(set(visited)) != len(visited):
                    problems.append(f"slot {sp.slot}: path of {r.id} repeats a node")
                for (u, v), (u2, _) in zip(path, path[1:]):
                    if v != u2:
                        problems.append(f"slot {sp.slot}: path of {r.id} is not a walk")
                        break
                delay = sum(snap.arcs[a].delay_ms for a in path)
                if delay > r.max_delay_ms + tol:
                    problems.append(f"slot {sp.slot}: {r.id} delay {delay:.3f} > {r.max_delay_ms}")
                for a in path:
                    load[a] += r.bandwidth_mbps
                inst_load[(j, r.service)] += r.bandwidth_mbps
            for a, bw in load.items():
                if bw > snap.arcs[a].bandwidth_mbps + tol:
                    problems.append(f"slot {sp.slot}: arc {a} load {bw:.3f} > {snap.arcs[a].bandwidth_mbps}")
            cores: dict[str, float] = defaultdict(float)
            for (j, k), cnt in sp.instances.items():
                cores[j] += cnt * scenario.services[k].instance_size_cores
            for j, used in cores.items():
                cap = snap.nodes[j].dc_capacity
                if used > cap + tol:
                    problems.append(f"slot {sp.slot}: DC {j} uses {used} cores > {cap}")
            for (j, k), bw in inst_load.items():
                cap = scenario.services[k].instance_capacity_mbps * sp.instances.get((j, k), 0)
                if bw > cap + tol:
                    problems.append(f"slot {sp.slot}: instances of {k} at {j} overloaded ({bw:.3f} > {cap})")
        return problems


def default_rho(n_requests: int, n_dcs: int | None = None) -> float:
    """Link activation constant. Only the assigned DC carries a request's
    routing, so no arc sees more than |A| unit flows."""
    return float(max(1, n_requests))


def loose_rho(n_requests: int, n_dcs: int) -> float:
    """Bound that ignores the single-DC argument (much weaker LP relaxation)."""
    return float(n_requests * n_dcs + 1)


def _dc_limits(snapshot: SaginSnapshot, services: dict[str, ServiceType]) -> dict[tuple[str, str], int]:
    return {
        (j, k): int(math.floor(snapshot.nodes[j].dc_capacity / s.instance_size_cores + 1e-9))
        for j in snapshot.dcs
        for k, s in services.items()
    }


def _add_slot(
    model: MilpModel,
    vm: VarMap,
    snapshot: SaginSnapshot,
    requests: Sequence[ServiceRequest],
    services: dict[str, ServiceType],
    t: int,
    rho: float | None,
    prune: bool,
) -> list[tuple[int, float]]:
    """Declare one slot's variables and constraint families; return objective terms."""
    dcs = snapshot.dcs
    arcs = snapshot.arc_list
    if not dcs:
        raise ValueError(f"slot {t}: no datacenter in snapshot")
    for r in requests:
        if r.service not in services:
            raise KeyError(f"request {r.id}: service {r.service!r} not in catalog")
        if r.src not in snapshot.nodes:
            raise KeyError(f"request {r.id}: source {r.src!r} not in slot {t}")
    rho = default_rho(len(requests), len(dcs)) if rho is None else float(rho)
    vm.rho[t] = rho
    vm.slots.append(t)
    limits = _dc_limits(snapshot, services)
    obj: list[tuple[int, float]] = []
    tag = f"t{t}"

    for j in dcs:
        for k in sorted(services):
            v = model.add_var(f"n[{tag},{j},{k}]", VarKind.INTEGER, 0, limits[(j, k)])
            vm._add("n", (t, j, k), v)
            obj.append((v.id, services[k].instance_cost))
    for arc in arcs:
        v = model.add_var(f"y[{tag},{arc[0]}>{arc[1]}]", VarKind.BINARY)
        vm._add("y", (t, arc), v)
        obj.append((v.id, snapshot.arcs[arc].cost))

    to_dc = {j: snapshot.shortest_delays(j, reverse=True) for j in dcs} if prune else {}
    for r in requests:
        a = r.id
        from_src = snapshot.shortest_delays(r.src)
        reachable = [j for j in dcs if from_src.get(j, math.inf) <= r.max_delay_ms + _DELAY_EPS]
        if not reachable:
            log.warning("slot %d: request %s cannot reach any DC within %.1f ms; model will be infeasible",
                        t, a, r.max_delay_ms)
        for j in dcs:
            vm._add("x", (t, a, j), model.add_var(f"x[{tag},{a},{j}]", VarKind.BINARY))
            for arc in arcs:
                ub = 1.0
                if prune:
                    u, w = arc
                    through = from_src.get(u, math.inf) + snapshot.arcs[arc].delay_ms + to_dc[j].get(w, math.inf)
                    # a simple src->j path never re-enters src nor leaves j
                    if w == r.src or u == j or through > r.max_delay_ms + _DELAY_EPS:
                        ub = 0.0
                        vm.pruned_l += 1
                lv = model.add_var(f"l[{tag},{a},{j},{arc[0]}>{arc[1]}]", VarKind.BINARY, 0, ub)
                vm._add("l", (t, a, j, arc), lv)

    X = lambda a, j: vm.x[(t, a, j)].id  # noqa: E731
    L = lambda a, j, arc: vm.l[(t, a, j, arc)].id  # noqa: E731
    N = lambda j, k: vm.n[(t, j, k)].id  # noqa: E731

    for r in requests:
        model.add_row({X(r.id, j): 1.0 for j in dcs}, Sense.EQ, 1.0, f"assign[{tag},{r.id}]", "assign")
    for r in requests:
        for j in dcs:
            model.add_row({X(r.id, j): 1.0, N(j, r.service): -1.0}, Sense.LE, 0.0, f"open[{tag},{r.id},{j}]", "open")
    for j in dcs:
        model.add_row(
            {N(j, k): services[k].instance_size_cores for k in sorted(services)},
            Sense.LE,
            snapshot.nodes[j].dc_capacity,
            f"dccap[{tag},{j}]",
            "dc_cap",
        )
    for j in dcs:
        for k in sorted(services):
            terms = [(X(r.id, j), r.bandwidth_mbps) for r in requests if r.service == k]
            terms.append((N(j, k), -services[k].instance_capacity_mbps))
            model.add_row(terms, Sense.LE, 0.0, f"instcap[{tag},{j},{k}]", "inst_cap")
    for arc in arcs:
        terms = [(L(r.id, j, arc), r.bandwidth_mbps) for r in requests for j in dcs]
        model.add_row(terms, Sense.LE, snapshot.arcs[arc].bandwidth_mbps, f"bw[{tag},{arc[0]}>{arc[1]}]", "link_cap")
    for r in requests:
        terms = [(L(r.id, j, arc), snapshot.arcs[arc].delay_ms) for arc in arcs for j in dcs]
        model.add_row(terms, Sense.LE, r.max_delay_ms, f"delay[{tag},{r.id}]", "delay")
    for r in requests:
        terms = [(L(r.id, j, arc), 1.0) for arc in snapshot.out_arcs(r.src) for j in dcs]
        model.add_row(terms, Sense.EQ, 1.0, f"source[{tag},{r.id}]", "source")
    dc_set = set(dcs)
    for r in requests:
        for u in sorted(snapshot.nodes):
            if u == r.src:
                continue
            acc: dict[int, float] = {}
            for arc in snapshot.in_arcs(u):
                for j in dcs:
                    vid = L(r.id, j, arc)
                    acc[vid] = acc.get(vid, 0.0) + 1.0
            for arc in snapshot.out_arcs(u):
                for j in dcs:
                    vid = L(r.id, j, arc)
                    acc[vid] = acc.get(vid, 0.0) - 1.0
            if u in dc_set:
                acc[X(r.id, u)] = acc.get(X(r.id, u), 0.0) - 1.0
            model.add_row(acc, Sense.EQ, 0.0, f"flow[{tag},{r.id},{u}]", "flow")
    for r in requests:
        for j in dcs:
            xj = X(r.id, j)
            for arc in arcs:
                model.add_row({L(r.id, j, arc): 1.0, xj: -1.0}, Sense.LE, 0.0, f"route[{tag},{r.id},{j},{arc[0]}>{arc[1]}]", "route_to_dc")
    for arc in arcs:
        terms = [(vm.y[(t, arc)].id, 1.0)] + [(L(r.id, j, arc), -1.0) for r in requests for j in dcs]
        model.add_row(terms, Sense.LE, 0.0, f"act_lo[{tag},{arc[0]}>{arc[1]}]", "act_lo")
    for arc in arcs:
        terms = [(vm.y[(t, arc)].id, rho)] + [(L(r.id, j, arc), -1.0) for r in requests for j in dcs]
        model.add_row(terms, Sense.GE, 0.0, f"act_hi[{tag},{arc[0]}>{arc[1]}]", "act_hi")
    return obj


def build_sjspr(
    snapshot: SaginSnapshot,
    requests: Sequence[ServiceRequest],
    services: dict[str, ServiceType] | Sequence[ServiceType],
    rho: float | None = None,
    *,
    prune: bool = True,
) -> tuple[MilpModel, VarMap]:
    """Single-slot joint placement and routing model.

    With ``prune`` the routing variables that cannot lie on a simple
    delay-feasible source-to-DC path get an upper bound of zero; they stay
    declared so the variable census is unchanged.
    """
    if not isinstance(services, dict):
        services = {s.id: s for s in services}
    model = MilpModel(name=f"sjspr_t{snapshot.slot}")
    vm = VarMap()
    obj = _add_slot(model, vm, snapshot, requests, services, snapshot.slot, rho, prune)
    model.set_objective(_expr(obj))
    return model, vm


def _expr(terms: list[tuple[int, float]]):
    from .milp import LinearExpr

    acc: dict[int, float] = {}
    for vid, c in terms:
        acc[vid] = acc.get(vid, 0.0) + c
    return LinearExpr(acc)


def build_majspr(
    scenario: Scenario,
    rho: float | None = None,
    big_m: float | dict[str, float] | None = None,
    *,
    prune: bool = True,
    integer_migrations: bool = False,
) -> tuple[MilpModel, VarMap]:
    """Full-horizon model with the exact linearization of the migration count.

    For each service ``k`` and slot ``t >= 1``::

        p[j,k,t] >= n[j,k,t] - n[j,k,t-1]
        c[k,t]   >= dN,  c[k,t] <= dN + M w[k,t],  c[k,t] <= M (1 - w[k,t])
        m[k,t]   >= sum_j p[j,k,t] - c[k,t]

    where ``dN`` is the change in total instances of ``k``.  ``c`` equals
    ``max(0, dN)`` at every feasible point, so ``m`` is exact whenever
    migrations carry a positive cost.
    """
    services = scenario.services
    model = MilpModel(name="majspr")
    vm = VarMap()
    obj: list[tuple[int, float]] = []
    for t, (snap, reqs) in enumerate(zip(scenario.snapshots, scenario.requests)):
        obj.extend(_add_slot(model, vm, snap, reqs, services, t, rho, prune))

    dcs = scenario.dcs
    limits = _dc_limits(scenario.snapshots[0], services) if scenario.snapshots else {}
    mkind = VarKind.INTEGER if integer_migrations else VarKind.CONTINUOUS
    for k in sorted(services):
        if isinstance(big_m, dict):
            bm = float(big_m[k])
        elif big_m is not None:
            bm = float(big_m)
        else:
            bm = float(sum(limits[(j, k)] for j in dcs))
        vm.big_m[k] = bm
        mig_ub = bm if integer_migrations else math.inf
        for t in range(scenario.horizon):
            mv = model.add_var(f"m[t{t},{k}]", mkind, 0.0, 0.0 if t == 0 else mig_ub)
            vm._add("m", (t, k), mv)
            obj.append((mv.id, services[k].migration_cost))
            if t == 0:
                continue
            tag = f"t{t},{k}"
            for j in dcs:
                vm._add("p", (t, j, k), model.add_var(f"p[t{t},{j},{k}]", VarKind.CONTINUOUS, 0.0))
            cv = vm._add("c", (t, k), model.add_var(f"c[{tag}]", VarKind.CONTINUOUS, 0.0))
            wv = vm._add("w", (t, k), model.add_var(f"w[{tag}]", VarKind.BINARY))
            now = [(vm.n[(t, j, k)].id, 1.0) for j in dcs]
            before = [(vm.n[(t - 1, j, k)].id, -1.0) for j in dcs]
            for j in dcs:
                model.add_row(
                    {vm.p[(t, j, k)].id: 1.0, vm.n[(t, j, k)].id: -1.0, vm.n[(t - 1, j, k)].id: 1.0},
                    Sense.GE, 0.0, f"inc[{tag},{j}]", "mig.p",
                )
            neg_delta = [(vid, -c) for vid, c in now + before]
            model.add_row([(cv.id, 1.0)] + neg_delta, Sense.GE, 0.0, f"create_lo[{tag}]", "mig.c_lo")
            model.add_row([(cv.id, 1.0), (wv.id, -bm)] + neg_delta, Sense.LE, 0.0, f"create_hi[{tag}]", "mig.c_hi")
            model.add_row({cv.id: 1.0, wv.id: bm}, Sense.LE, bm, f"create_sel[{tag}]", "mig.c_sel")
            model.add_row(
                [(mv.id, 1.0), (cv.id, 1.0)] + [(vm.p[(t, j, k)].id, -1.0) for j in dcs],
                Sense.GE, 0.0, f"migr[{tag}]", "mig.m",
            )
    model.set_objective(_expr(obj))
    return model, vm


def _walk(src: str, dc: str, used: set[Arc]) -> list[Arc] | None:
    """Shortest-hop path over ``used`` arcs from src to dc (deterministic)."""
    out: dict[str, list[str]] = defaultdict(list)
    for u, v in sorted(used):
        out[u].append(v)
    prev: dict[str, str] = {src: src}
    frontier = [src]
    while frontier:
        nxt = []
        for u in frontier:
            if u == dc:
                path = []
                while u != src:
                    path.append((prev[u], u))
                    u = prev[u]
                return path[::-1]
            for v in out[u]:
                if v not in prev:
                    prev[v] = u
                    nxt.append(v)
        frontier = nxt
    return None


def decode_plan(
    model: MilpModel,
    varmap: VarMap,
    solution: Solution,
    scenario: Scenario,
    mode: str = "ma",
    slots: Sequence[int] | None = None,
) -> PlacementPlan:
    """Turn solver values into per-slot instances, assignments and paths.

    Routing arcs not on the walked path (zero-flow cycles) are dropped with
    a warning; delays are recomputed from the walked path only.
    """
    if solution.values is None:
        raise ValueError(f"cannot decode a solution with status {solution.status.value}")
    vals = solution.values
    slots = list(varmap.slots) if slots is None else list(slots)
    plan = PlacementPlan(mode=mode, slots=[], objective=solution.objective, gap=solution.gap,
                         status=solution.status.value, wall_time_s=solution.wall_time_s)
    for t in slots:
        snap = next((s for s in scenario.snapshots if s.slot == t), None)
        if snap is None:
            raise ValueError(f"slot {t} not in scenario")
        idx = scenario.snapshots.index(snap)
        reqs = scenario.requests[idx]
        dcs = snap.dcs
        instances = {
            (j, k): int(round(vals[v.id])) for (tt, j, k), v in varmap.n.items() if tt == t and round(vals[v.id]) > 0
        }
        assignment, paths, delays = {}, {}, {}
        for r in reqs:
            chosen = [j for j in dcs if vals[varmap.x[(t, r.id, j)].id] > 0.5]
            if len(chosen) != 1:
                raise DecodeError(f"slot {t}: request {r.id} assigned to {chosen}")
            j = chosen[0]
            used = {
                arc
                for arc in snap.arc_list
                if sum(vals[varmap.l[(t, r.id, jj, arc)].id] for jj in dcs) > 0.5
            }
            path = _walk(r.src, j, used)
            if path is None:
                raise DecodeError(f"slot {t}: routing of {r.id} never reaches {j}")
            extra = used - set(path)
            if extra:
                plan.warnings.append(f"slot {t}: discarded {len(extra)} cycle arc(s) of {r.id}")
            assignment[r.id] = j
            paths[r.id] = path
            delays[r.id] = sum(snap.arcs[a].delay_ms for a in path)
        active = sorted(arc for (tt, arc), v in varmap.y.items() if tt == t and vals[v.id] > 0.5)
        plan.slots.append(SlotPlan(t, instances, assignment, paths, delays, active, {}, list(reqs)))
    if varmap.m:
        # counted from the integer layouts: with a zero migration cost the
        # solver's m is only bounded below
        ks = sorted(scenario.services)
        counts = _instances_by_slot(plan, ks, scenario.dcs)
        for i, sp in enumerate(plan.slots):
            sp.migrations = {k: 0.0 for k in ks}
            if i > 0:
                sp.migrations.update({k: float(v) for k, v in migration_count(counts[i - 1], counts[i]).items()})
    return plan


def _instances_by_slot(plan: PlacementPlan, services: Sequence[str], dcs: Sequence[str]) -> list[dict]:
    return [{(j, k): sp.instances.get((j, k), 0) for j in dcs for k in services} for sp in plan.slots]


def solve_sjspr(snapshot, requests, services, params: SolveParams | None = None, backend=None, rho=None, prune=True):
    model, vm = build_sjspr(snapshot, requests, services, rho, prune=prune)
    return model, vm, solve_milp(model, params, backend)


def solve_majspr(scenario: Scenario, params: SolveParams | None = None, backend=None, rho=None, big_m=None,
                 prune: bool = True) -> tuple[MilpModel, VarMap, Solution, PlacementPlan | None]:
    import time

    t0 = time.perf_counter()
    model, vm = build_majspr(scenario, rho, big_m, prune=prune)
    build = time.perf_counter() - t0
    sol = solve_milp(model, params, backend)
    plan = None
    if sol.values is not None:
        plan = decode_plan(model, vm, sol, scenario, mode="ma")
        plan.build_time_s = build
        plan.violations = [str(v) for v in sol.violations]
    return model, vm, sol, plan


class RolloutError(RuntimeError):
    def __init__(self, slot: int, status: Status):
        super().__init__(f"static rollout failed at slot {slot}: {status.value}")
        self.slot = slot
        self.status = status


def rollout_static(
    scenario: Scenario,
    params: SolveParams | None = None,
    backend=None,
    rho: float | None = None,
    prune: bool = True,
    trace: list | None = None,
) -> PlacementPlan:
    """Solve each slot on its own and charge migrations afterwards.

    When ``trace`` is given, each slot's ``(model, solution)`` is appended.
    """
    import time

    params = params or SolveParams()
    plan = PlacementPlan(mode="rollout", slots=[], objective=0.0, status=Status.OPTIMAL.value)
    worst_gap = 0.0
    for t, (snap, reqs) in enumerate(zip(scenario.snapshots, scenario.requests)):
        t0 = time.perf_counter()
        model, vm = build_sjspr(snap, reqs, scenario.services, rho, prune=prune)
        plan.build_time_s += time.perf_counter() - t0
        sol = solve_milp(model, params, backend)
        if trace is not None:
            trace.append((model, sol))
        if sol.values is None:
            raise RolloutError(t, sol.status)
        sub = decode_plan(model, vm, sol, scenario, mode="rollout", slots=[snap.slot])
        plan.slots.extend(sub.slots)
        plan.warnings.extend(sub.warnings)
        plan.violations.extend(str(v) for v in sol.violations)
        plan.slot_wall_times_s.append(sol.wall_time_s)
        plan.wall_time_s += sol.wall_time_s
        plan.objective += sol.objective
        worst_gap = max(worst_gap, sol.gap)
        if sol.status is Status.LIMIT_HIT or (sol.status is Status.GAP_REACHED and plan.status == Status.OPTIMAL.value):
            plan.status = sol.status.value
    ks = sorted(scenario.services)
    counts = _instances_by_slot(plan, ks, scenario.dcs)
    for i, sp in enumerate(plan.slots):
        if i == 0:
            sp.migrations = {k: 0.0 for k in ks}
        else:
            sp.migrations = {k: float(v) for k, v in migration_count(counts[i - 1], counts[i]).items()}
            for k in ks:
                sp.migrations.setdefault(k, 0.0)
        plan.objective += sum(scenario.services[k].migration_cost * sp.migrations[k] for k in ks)
    plan.gap = worst_gap
    return plan
