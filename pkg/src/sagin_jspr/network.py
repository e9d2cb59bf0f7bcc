"""SAGIN graph: ground topology, DA2G stations, one abstract LEO relay and
per-slot flight nodes, realized as directed arc snapshots."""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import yaml

from .geo import GeoPoint, fiber_delay_ms, great_circle_km


class TopologyError(ValueError):
    pass


class ConnectivityError(ValueError):
    """A flight cannot reach any datacenter in some slot."""


class NodeKind(str, Enum):
    GROUND = "ground"
    DATACENTER = "datacenter"
    DA2G_STATION = "da2g_station"
    SATELLITE_RELAY = "satellite_relay"
    SATELLITE_GATEWAY = "satellite_gateway"
    FLIGHT_POSITION = "flight_position"


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind
    position: GeoPoint | None = None
    dc_capacity: float | None = None

    def __post_init__(self):
        if (self.kind is NodeKind.DATACENTER) != (self.dc_capacity is not None):
            raise ValueError(f"node {self.id}: dc_capacity is required for datacenters and only for them")
        if self.dc_capacity is not None and self.dc_capacity < 0:
            raise ValueError(f"node {self.id}: negative DC capacity")


@dataclass(frozen=True)
class LinkAttrs:
    cost: float
    delay_ms: float
    bandwidth_mbps: float

    def __post_init__(self):
        for name in ("cost", "delay_ms", "bandwidth_mbps"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"link {name} must be finite")
        if self.cost < 0 or self.delay_ms < 0:
            raise ValueError("link cost and delay must be >= 0")
        if self.bandwidth_mbps <= 0:
            raise ValueError("link bandwidth must be > 0")


@dataclass(frozen=True)
class GroundNodeRecord:
    id: str
    position: GeoPoint
    is_dc: bool = False
    dc_capacity_cores: float | None = None
    is_gateway: bool = False


@dataclass(frozen=True)
class GroundLinkRecord:
    u: str
    v: str
    bandwidth_mbps: float
    cost: float
    delay_ms: float | None = None


@dataclass
class GroundTopology:
    nodes: list[GroundNodeRecord]
    links: list[GroundLinkRecord]

    def __post_init__(self):
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise TopologyError("duplicate ground node ids")
        known = set(ids)
        for link in self.links:
            if link.u not in known or link.v not in known:
                raise TopologyError(f"link {link.u}-{link.v} references an unknown node")
            if link.u == link.v:
                raise TopologyError(f"self-loop at {link.u}")

    @property
    def node_map(self) -> dict[str, GroundNodeRecord]:
        return {n.id: n for n in self.nodes}

    @property
    def dcs(self) -> list[str]:
        return sorted(n.id for n in self.nodes if n.is_dc)

    @property
    def gateways(self) -> list[str]:
        return sorted(n.id for n in self.nodes if n.is_gateway)

    def link_attrs(self, link: GroundLinkRecord, fiber_speed_km_per_ms: float = 200.0) -> LinkAttrs:
        delay = link.delay_ms
        if delay is None:
            nm = self.node_map
            delay = fiber_delay_ms(great_circle_km(nm[link.u].position, nm[link.v].position), fiber_speed_km_per_ms)
        return LinkAttrs(link.cost, delay, link.bandwidth_mbps)

    def is_connected(self) -> bool:
        if not self.nodes:
            return False
        adj: dict[str, set[str]] = {n.id: set() for n in self.nodes}
        for link in self.links:
            adj[link.u].add(link.v)
            adj[link.v].add(link.u)
        seen = {self.nodes[0].id}
        stack = [self.nodes[0].id]
        while stack:
            for v in adj[stack.pop()]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == len(self.nodes)


@dataclass(frozen=True)
class Station:
    id: str
    position: GeoPoint


@dataclass(frozen=True)
class SatelliteConfig:
    """Single abstract LEO relay. The end-to-end figures sit on the
    flight-relay arcs by default; relay-gateway arcs carry the remainder."""

    relay_id: str = "LEO"
    uplink: LinkAttrs = LinkAttrs(cost=130.0, delay_ms=50.0, bandwidth_mbps=50.0)
    downlink: LinkAttrs = LinkAttrs(cost=0.0, delay_ms=0.0, bandwidth_mbps=50.0)


@dataclass(frozen=True)
class Da2gConfig:
    link: LinkAttrs = LinkAttrs(cost=83.0, delay_ms=10.0, bandwidth_mbps=75.0)
    visibility_km: float = 350.0


def load_topology(path: str | Path) -> GroundTopology:
    """Read a YAML/JSON ground topology with ``nodes`` and ``links`` lists."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except yaml.YAMLError as exc:
        raise TopologyError(f"{path}: {exc}") from exc
    return topology_from_dict(raw, source=str(path))


def topology_from_dict(raw: Mapping, source: str = "<dict>") -> GroundTopology:
    if not isinstance(raw, Mapping):
        raise TopologyError(f"{source}: expected a mapping with 'nodes' and 'links'")
    nodes = []
    for rec in raw.get("nodes") or []:
        try:
            is_dc = bool(rec.get("is_dc", False))
            cap = rec.get("dc_capacity_cores")
            nodes.append(
                GroundNodeRecord(
                    id=str(rec["id"]),
                    position=GeoPoint(float(rec["lat"]), float(rec["lon"])),
                    is_dc=is_dc,
                    dc_capacity_cores=float(cap) if (is_dc and cap is not None) else None,
                    is_gateway=bool(rec.get("is_gateway", False)),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise TopologyError(f"{source}: bad node record {rec!r}: {exc}") from exc
    links = []
    for rec in raw.get("links") or []:
        try:
            delay = rec.get("delay_ms")
            links.append(
                GroundLinkRecord(
                    u=str(rec["u"]),
                    v=str(rec["v"]),
                    bandwidth_mbps=float(rec["bandwidth_mbps"]),
                    cost=float(rec["cost"]),
                    delay_ms=None if delay is None else float(delay),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise TopologyError(f"{source}: bad link record {rec!r}: {exc}") from exc
    return GroundTopology(nodes, links)


def load_stations(path: str | Path) -> list[Station]:
    """CSV with header ``id,lat,lon``."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(Station(row["id"].strip(), GeoPoint(float(row["lat"]), float(row["lon"]))))
            except (KeyError, TypeError, ValueError, AttributeError) as exc:
                raise TopologyError(f"{path}:{lineno}: bad station row {row!r}") from exc
    ids = [s.id for s in out]
    if len(set(ids)) != len(ids):
        raise TopologyError(f"{path}: duplicate station ids")
    return out


def flight_node_id(flight_id: str, slot: int) -> str:
    return f"F:{flight_id}@{slot}"


@dataclass(frozen=True)
class SaginSnapshot:
    slot: int
    nodes: Mapping[str, Node]
    arcs: Mapping[tuple[str, str], LinkAttrs]
    flights: Mapping[str, str] = field(default_factory=dict)  # flight id -> node id
    da2g_attachment: Mapping[str, str | None] = field(default_factory=dict)  # flight id -> station
    _out: Mapping[str, tuple] = field(default_factory=dict, repr=False, compare=False)
    _in: Mapping[str, tuple] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        out: dict[str, list] = {u: [] for u in self.nodes}
        inn: dict[str, list] = {u: [] for u in self.nodes}
        for (u, v) in self.arcs:
            if u not in self.nodes or v not in self.nodes:
                raise ValueError(f"arc {(u, v)} references an unknown node")
            out[u].append((u, v))
            inn[v].append((u, v))
        object.__setattr__(self, "_out", {u: tuple(sorted(a)) for u, a in out.items()})
        object.__setattr__(self, "_in", {u: tuple(sorted(a)) for u, a in inn.items()})

    @property
    def dcs(self) -> list[str]:
        return sorted(n.id for n in self.nodes.values() if n.kind is NodeKind.DATACENTER)

    @property
    def arc_list(self) -> list[tuple[str, str]]:
        return sorted(self.arcs)

    def out_arcs(self, u: str) -> list[tuple[str, str]]:
        if u not in self._out:
            raise KeyError(f"unknown node {u!r}")
        return list(self._out[u])

    def in_arcs(self, u: str) -> list[tuple[str, str]]:
        if u not in self._in:
            raise KeyError(f"unknown node {u!r}")
        return list(self._in[u])

    def shortest_delays(self, source: str, reverse: bool = False) -> dict[str, float]:
        """Dijkstra on arc delays; with ``reverse`` the distances are *to* source."""
        if source not in self.nodes:
            raise KeyError(f"unknown node {source!r}")
        dist = {source: 0.0}
        heap = [(0.0, source)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist.get(u, math.inf):
                continue
            arcs = self._in[u] if reverse else self._out[u]
            for a in arcs:
                w = a[0] if reverse else a[1]
                nd = d + self.arcs[a].delay_ms
                if nd < dist.get(w, math.inf):
                    dist[w] = nd
                    heapq.heappush(heap, (nd, w))
        return dist


def nearest(point: GeoPoint, candidates: Iterable[tuple[str, GeoPoint]]) -> tuple[str, float] | None:
    best = None
    for cid, pos in candidates:
        d = great_circle_km(point, pos)
        # ties broken by id so the choice is reproducible
        if best is None or d < best[1] or (d == best[1] and cid < best[0]):
            best = (cid, d)
    return best


def build_snapshot(
    topology: GroundTopology,
    stations: Sequence[Station],
    satellite: SatelliteConfig,
    flights_at_t: Sequence[tuple[str, GeoPoint]],
    congestion_mask: Mapping[str, bool] | None = None,
    *,
    slot: int = 0,
    da2g: Da2gConfig = Da2gConfig(),
    attach_bandwidth_mbps: float = 1000.0,
    fiber_speed_km_per_ms: float = 200.0,
) -> SaginSnapshot:
    """Realize the SAGIN for one slot.

    Every link becomes two arcs with identical attributes. Stations attach
    to their nearest ground node over free, zero-delay arcs.
    """
    if not topology.nodes:
        raise TopologyError("empty ground topology")
    if not topology.gateways:
        raise TopologyError("no satellite gateway defined")
    if not topology.dcs:
        raise TopologyError("no datacenter defined")
    congestion_mask = congestion_mask or {}

    nodes: dict[str, Node] = {}
    for rec in topology.nodes:
        if rec.is_dc:
            nodes[rec.id] = Node(rec.id, NodeKind.DATACENTER, rec.position, float(rec.dc_capacity_cores or 0.0))
        elif rec.is_gateway:
            nodes[rec.id] = Node(rec.id, NodeKind.SATELLITE_GATEWAY, rec.position)
        else:
            nodes[rec.id] = Node(rec.id, NodeKind.GROUND, rec.position)
    arcs: dict[tuple[str, str], LinkAttrs] = {}

    def link(u: str, v: str, attrs: LinkAttrs) -> None:
        arcs[(u, v)] = attrs
        arcs[(v, u)] = attrs

    for rec in topology.links:
        link(rec.u, rec.v, topology.link_attrs(rec, fiber_speed_km_per_ms))

    ground_pos = [(n.id, n.position) for n in topology.nodes]
    attach = LinkAttrs(0.0, 0.0, attach_bandwidth_mbps)
    for st in stations:
        if st.id in nodes:
            raise TopologyError(f"station id {st.id!r} collides with another node")
        nodes[st.id] = Node(st.id, NodeKind.DA2G_STATION, st.position)
        gid, _ = nearest(st.position, ground_pos)
        link(st.id, gid, attach)

    relay = satellite.relay_id
    if relay in nodes:
        raise TopologyError(f"relay id {relay!r} collides with another node")
    nodes[relay] = Node(relay, NodeKind.SATELLITE_RELAY)
    for gw in topology.gateways:
        link(relay, gw, satellite.downlink)

    flights: dict[str, str] = {}
    attachment: dict[str, str | None] = {}
    for fid, pos in sorted(flights_at_t, key=lambda fp: fp[0]):
        nid = flight_node_id(fid, slot)
        if nid in nodes:
            raise TopologyError(f"duplicate flight {fid!r} in slot {slot}")
        nodes[nid] = Node(nid, NodeKind.FLIGHT_POSITION, pos)
        flights[fid] = nid
        link(nid, relay, satellite.uplink)
        open_stations = [(s.id, s.position) for s in stations if not congestion_mask.get(s.id, False)]
        best = nearest(pos, open_stations)
        if best is not None and best[1] <= da2g.visibility_km:
            link(nid, best[0], da2g.link)
            attachment[fid] = best[0]
        else:
            attachment[fid] = None

    snap = SaginSnapshot(slot, nodes, arcs, flights, attachment)
    dcs = set(snap.dcs)
    for fid, nid in flights.items():
        reach = snap.shortest_delays(nid)
        if not dcs.intersection(reach):
            raise ConnectivityError(f"flight {fid} cannot reach any datacenter in slot {slot}")
    return snap
