"""Toy scenario builders and an exhaustive reference solver for tests.

The reference solver never touches the MILP code: it enumerates every
(datacenter, simple delay-feasible path) choice per request, sizes the
instances directly and scores the plan by hand.
"""

from __future__ import annotations

import itertools
import math
import random
from collections import defaultdict

import networkx as nx

from sagin_jspr.network import LinkAttrs, Node, NodeKind, SaginSnapshot
from sagin_jspr.scenario import Scenario, ServiceRequest, ServiceType


def service(k="video", bw=22.5, delay=300.0, cost=229.0, size=8.0, cap=100.0, mig=0.0) -> ServiceType:
    return ServiceType(k, bw, delay, cost, size, cap, mig)


def both_ways(arcs: dict, u: str, v: str, attrs: LinkAttrs) -> None:
    arcs[(u, v)] = attrs
    arcs[(v, u)] = attrs


def one_hop_scenario(link_cost=60.0, instance_cost=229.0, delay=5.0, max_delay=300.0) -> Scenario:
    """A flight one hop from a single datacenter."""
    nodes = {"F": Node("F", NodeKind.FLIGHT_POSITION), "DC": Node("DC", NodeKind.DATACENTER, dc_capacity=64)}
    arcs: dict = {}
    both_ways(arcs, "F", "DC", LinkAttrs(link_cost, delay, 100.0))
    snap = SaginSnapshot(0, nodes, arcs, {"f": "F"})
    svc = service(cost=instance_cost, delay=max_delay)
    req = ServiceRequest("r0", "F", "video", svc.bandwidth_mbps, max_delay, 0, "f")
    return Scenario(30.0, [snap], [[req]], {"video": svc}, 0.0, 0)


def chain_scenario(
    positions: list[str],
    dcs: dict[str, float],
    ground: list[tuple[str, str, float, float, float]],
    services: list[ServiceType],
    attach_cost: float = 10.0,
    attach_delay: float = 5.0,
    delta: float = 0.5,
) -> Scenario:
    """One flight that attaches to ``positions[t]`` in slot t over a fixed ground graph.

    ``ground`` holds (u, v, cost, delay, bandwidth) undirected links.
    """
    snaps, reqs = [], []
    names = {u for e in ground for u in e[:2]} | set(dcs)
    for t, at in enumerate(positions):
        nodes = {
            n: Node(n, NodeKind.DATACENTER, dc_capacity=dcs[n]) if n in dcs else Node(n, NodeKind.GROUND)
            for n in sorted(names)
        }
        fid = f"F@{t}"
        nodes[fid] = Node(fid, NodeKind.FLIGHT_POSITION)
        arcs: dict = {}
        for u, v, c, d, b in ground:
            both_ways(arcs, u, v, LinkAttrs(c, d, b))
        both_ways(arcs, fid, at, LinkAttrs(attach_cost, attach_delay, 500.0))
        snaps.append(SaginSnapshot(t, nodes, arcs, {"f": fid}))
        reqs.append([ServiceRequest(f"f@{t}:{s.id}", fid, s.id, s.bandwidth_mbps, s.max_delay_ms, t, "f") for s in services])
    return Scenario(30.0, snaps, reqs, {s.id: s for s in services}, delta, 0)


def random_tiny_scenario(seed: int, max_requests: int = 4, slots: tuple[int, int] = (1, 2)) -> Scenario:
    """Random SAGIN-shaped toy: <= 6 ground nodes, <= 3 DCs, <= 2 flights, <= 2 services.

    The slot count is drawn from ``slots`` (inclusive).
    """
    rng = random.Random(seed)
    while True:
        n_slots = rng.randint(*slots)
        n_flights = rng.randint(1, 2)
        n_services = rng.randint(1, 2)
        if n_slots * n_flights * n_services <= max_requests:
            break
    n_ground = rng.randint(3, 6)
    ground = [f"G{i}" for i in range(n_ground)]
    n_dc = rng.randint(1, min(3, n_ground - 1))
    dc_ids = rng.sample(ground, n_dc)
    non_dc = [g for g in ground if g not in dc_ids]
    gateway = rng.choice(non_dc)
    links = []
    for i in range(1, n_ground):
        links.append((ground[rng.randrange(i)], ground[i]))
    if n_ground > 3 and rng.random() < 0.7:
        u, v = rng.sample(ground, 2)
        if (u, v) not in links and (v, u) not in links:
            links.append((u, v))
    ground_attrs = {e: LinkAttrs(rng.randint(10, 80), rng.randint(2, 30), rng.choice([30.0, 60.0, 200.0])) for e in links}
    dc_caps = {j: rng.choice([8.0, 16.0, 24.0]) for j in dc_ids}
    stations = {"S0": rng.choice(ground), "S1": rng.choice(ground)}

    services = []
    for k in ["video", "voip"][:n_services]:
        services.append(
            ServiceType(
                k,
                bandwidth_mbps=float(rng.choice([10, 20, 35])),
                max_delay_ms=float(rng.randint(90, 200)),
                instance_cost=float(rng.randint(100, 250)),
                instance_size_cores=8.0,
                instance_capacity_mbps=40.0,
                migration_cost=float(rng.randint(0, 300)),
            )
        )
    sat_cost = float(rng.randint(40, 130))
    da2g_cost = float(rng.randint(20, 83))

    snaps, reqs = [], []
    for t in range(n_slots):
        nodes = {}
        for g in ground:
            if g in dc_caps:
                nodes[g] = Node(g, NodeKind.DATACENTER, dc_capacity=dc_caps[g])
            elif g == gateway:
                nodes[g] = Node(g, NodeKind.SATELLITE_GATEWAY)
            else:
                nodes[g] = Node(g, NodeKind.GROUND)
        nodes["LEO"] = Node("LEO", NodeKind.SATELLITE_RELAY)
        arcs: dict = {}
        for (u, v), a in ground_attrs.items():
            both_ways(arcs, u, v, a)
        both_ways(arcs, "LEO", gateway, LinkAttrs(0.0, 0.0, 100.0))
        for s, g in stations.items():
            nodes[s] = Node(s, NodeKind.DA2G_STATION)
            both_ways(arcs, s, g, LinkAttrs(0.0, 0.0, 1000.0))
        flights, attach, slot_reqs = {}, {}, []
        for f in range(n_flights):
            fid = f"F{f}@{t}"
            nodes[fid] = Node(fid, NodeKind.FLIGHT_POSITION)
            flights[f"F{f}"] = fid
            both_ways(arcs, fid, "LEO", LinkAttrs(sat_cost, 50.0, 50.0))
            st = rng.choice(["S0", "S1", None])
            attach[f"F{f}"] = st
            if st is not None:
                both_ways(arcs, fid, st, LinkAttrs(da2g_cost, 10.0, 75.0))
            for s in services:
                slot_reqs.append(ServiceRequest(f"F{f}@{t}:{s.id}", fid, s.id, s.bandwidth_mbps, s.max_delay_ms, t, f"F{f}"))
        snaps.append(SaginSnapshot(t, nodes, arcs, flights, attach))
        reqs.append(slot_reqs)
    return Scenario(30.0, snaps, reqs, {s.id: s for s in services}, 0.5, seed)


# ---------------------------------------------------------------------------
# exhaustive reference solver


def _routes(snap: SaginSnapshot, req: ServiceRequest) -> list[tuple[str, tuple]]:
    g = nx.DiGraph()
    g.add_nodes_from(snap.nodes)
    g.add_edges_from(snap.arcs)
    out = []
    for j in snap.dcs:
        for path in nx.all_simple_paths(g, req.src, j):
            arcs = tuple(zip(path, path[1:]))
            if sum(snap.arcs[a].delay_ms for a in arcs) <= req.max_delay_ms + 1e-9:
                out.append((j, arcs))
    return out


def _slot_options(snap: SaginSnapshot, reqs: list[ServiceRequest], services: dict) -> dict[tuple, float]:
    """Minimal routing cost for every reachable vector of required instance counts."""
    keys = [(j, k) for j in snap.dcs for k in sorted(services)]
    per_req = [_routes(snap, r) for r in reqs]
    best: dict[tuple, float] = {}
    for combo in itertools.product(*per_req):
        load = defaultdict(float)
        inst = defaultdict(float)
        for r, (j, arcs) in zip(reqs, combo):
            for a in arcs:
                load[a] += r.bandwidth_mbps
            inst[(j, r.service)] += r.bandwidth_mbps
        if any(b > snap.arcs[a].bandwidth_mbps + 1e-9 for a, b in load.items()):
            continue
        need = tuple(math.ceil(inst[key] / services[key[1]].instance_capacity_mbps - 1e-9) for key in keys)
        cores = defaultdict(float)
        for (j, k), n in zip(keys, need):
            cores[j] += n * services[k].instance_size_cores
        if any(c > snap.nodes[j].dc_capacity + 1e-9 for j, c in cores.items()):
            continue
        cost = sum(snap.arcs[a].cost for a in {a for _, arcs in combo for a in arcs})
        if cost < best.get(need, math.inf):
            best[need] = cost
    return best


def _migrations(prev: dict, curr: dict, kinds) -> dict:
    """Migrations as min(total per-DC increase, total per-DC decrease)."""
    out = {}
    for k in kinds:
        inc = sum(max(0, curr[key] - prev[key]) for key in curr if key[1] == k)
        dec = sum(max(0, prev[key] - curr[key]) for key in curr if key[1] == k)
        out[k] = min(inc, dec)
    return out


def brute_force(scenario: Scenario) -> float:
    """Optimal total cost over the horizon, or ``math.inf`` when infeasible.

    Extra instances beyond a slot's need only ever help by avoiding
    migrations, and never beyond the largest need of that (DC, type) over
    the horizon, so counts are enumerated in ``[need_t, max_s need_s]``.
    """
    services = scenario.services
    snaps = scenario.snapshots
    keys = [(j, k) for j in snaps[0].dcs for k in sorted(services)]
    options = [_slot_options(s, r, services) for s, r in zip(snaps, scenario.requests)]
    if any(not o for o in options):
        return math.inf
    caps = {j: snaps[0].nodes[j].dc_capacity for j in snaps[0].dcs}
    best = math.inf
    for needs in itertools.product(*[list(o.items()) for o in options]):
        routing = sum(c for _, c in needs)
        top = [max(n[0][i] for n in needs) for i in range(len(keys))]
        ranges = []
        for need, _ in needs:
            slot_choices = []
            for counts in itertools.product(*[range(need[i], top[i] + 1) for i in range(len(keys))]):
                cores = defaultdict(float)
                for (j, k), n in zip(keys, counts):
                    cores[j] += n * services[k].instance_size_cores
                if all(c <= caps[j] + 1e-9 for j, c in cores.items()):
                    slot_choices.append(counts)
            ranges.append(slot_choices)
        for traj in itertools.product(*ranges):
            cost = routing
            for counts in traj:
                cost += sum(services[k].instance_cost * n for (j, k), n in zip(keys, counts))
            for a, b in zip(traj, traj[1:]):
                migs = _migrations(dict(zip(keys, a)), dict(zip(keys, b)), sorted(services))
                cost += sum(services[k].migration_cost * m for k, m in migs.items())
            best = min(best, cost)
    return best
