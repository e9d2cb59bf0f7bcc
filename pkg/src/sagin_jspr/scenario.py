"""Flights, service catalog, request aggregation, DA2G congestion and the
assembled multi-slot scenario."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from .geo import GeoPoint, destination_point
from .network import (
    ConnectivityError,
    Da2gConfig,
    GroundTopology,
    LinkAttrs,
    SaginSnapshot,
    SatelliteConfig,
    Station,
    TopologyError,
    build_snapshot,
    load_stations,
    load_topology,
)

log = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data"
DEFAULT_CONFIG = DATA_DIR / "europe.yaml"

DEFAULT_CONGESTION_P = 0.19714
STATION_FLIGHT_CAPACITY = 9


class ConfigError(ValueError):
    """Bad or missing scenario input."""


@dataclass(frozen=True)
class ServiceType:
    id: str
    bandwidth_mbps: float
    max_delay_ms: float
    instance_cost: float
    instance_size_cores: float
    instance_capacity_mbps: float
    migration_cost: float

    def __post_init__(self):
        for name in ("bandwidth_mbps", "max_delay_ms", "instance_cost", "instance_size_cores", "instance_capacity_mbps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"service {self.id}: {name} must be positive")
        if self.migration_cost < 0:
            raise ValueError(f"service {self.id}: negative migration cost")
        if self.instance_capacity_mbps < self.bandwidth_mbps:
            raise ValueError(f"service {self.id}: an instance cannot serve one aggregated request")


@dataclass(frozen=True)
class ServiceSpec:
    """Per-user service profile before aggregation."""

    id: str
    per_user_mbps: float
    max_delay_ms: float
    instance_capacity_mbps: float = 100.0
    instance_size_cores: float = 8.0


@dataclass(frozen=True)
class FlightTrack:
    id: str
    positions: tuple[GeoPoint, ...]
    first_slot: int = 0

    def __post_init__(self):
        if len(self.positions) < 2:
            raise ValueError(f"flight {self.id}: needs at least two positions")
        if self.first_slot < 0:
            raise ValueError(f"flight {self.id}: negative first slot")

    @property
    def tau(self) -> int:
        return len(self.positions) - 1

    @property
    def last_slot(self) -> int:
        return self.first_slot + self.tau

    def duration_minutes(self, slot_minutes: float) -> float:
        return self.tau * slot_minutes

    def position_at(self, slot: int) -> GeoPoint | None:
        i = slot - self.first_slot
        if 0 <= i < len(self.positions):
            return self.positions[i]
        return None


@dataclass(frozen=True)
class ServiceRequest:
    id: str
    src: str
    service: str
    bandwidth_mbps: float
    max_delay_ms: float
    slot: int = 0
    flight: str = ""


def load_flights(path: str | Path) -> list[FlightTrack]:
    """Read ``flight_id,slot,lat,lon`` rows into per-flight tracks."""
    rows: dict[str, dict[int, GeoPoint]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        missing = {"flight_id", "slot", "lat", "lon"} - set(reader.fieldnames)
        if missing:
            raise ConfigError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                fid = row["flight_id"].strip()
                slot = int(row["slot"])
                pos = GeoPoint(float(row["lat"]), float(row["lon"]))
            except (TypeError, ValueError, AttributeError) as exc:
                raise ConfigError(f"{path}:{lineno}: malformed row {row!r}: {exc}") from exc
            if not fid:
                raise ConfigError(f"{path}:{lineno}: empty flight_id")
            if not -180.0 <= float(row["lon"]) <= 180.0:
                raise ConfigError(f"{path}:{lineno}: longitude out of range")
            track = rows.setdefault(fid, {})
            if slot in track:
                raise ConfigError(f"{path}:{lineno}: duplicate slot {slot} for flight {fid}")
            track[slot] = pos
    tracks = []
    for fid in sorted(rows):
        slots = sorted(rows[fid])
        if slots != list(range(slots[0], slots[0] + len(slots))):
            raise ConfigError(f"{path}: flight {fid} has non-contiguous slots {slots}")
        try:
            tracks.append(FlightTrack(fid, tuple(rows[fid][s] for s in slots), slots[0]))
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return tracks


def write_flights(tracks: Sequence[FlightTrack], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["flight_id", "slot", "lat", "lon"])
        for tr in tracks:
            for i, p in enumerate(tr.positions):
                w.writerow([tr.id, tr.first_slot + i, f"{p.lat:.6f}", f"{p.lon:.6f}"])


def aggregate_users(passengers: int, usage_fraction: float, n_services: int) -> int:
    if passengers <= 0:
        raise ValueError("passengers must be positive")
    if not 0 < usage_fraction <= 1:
        raise ValueError("usage_fraction must be in (0, 1]")
    if n_services <= 0:
        raise ValueError("empty service catalog")
    users = math.ceil(passengers * usage_fraction / n_services)
    if users <= 0:
        raise ValueError("workload has no active users")
    return users


def generate_requests(
    track: FlightTrack,
    services: Sequence[ServiceType],
    passengers: int = 150,
    usage_fraction: float = 0.2,
    node_ids: Mapping[int, str] | None = None,
) -> dict[int, list[ServiceRequest]]:
    """One aggregated request per service type per active slot.

    ``services`` carry their aggregated bandwidth already (see
    :func:`build_services`); ``passengers``/``usage_fraction`` are
    validated here so a degenerate workload fails early.
    """
    if not services:
        raise ValueError("empty service catalog")
    aggregate_users(passengers, usage_fraction, len(services))
    from .network import flight_node_id

    out: dict[int, list[ServiceRequest]] = {}
    for i in range(len(track.positions)):
        t = track.first_slot + i
        src = node_ids[t] if node_ids else flight_node_id(track.id, t)
        out[t] = [
            ServiceRequest(
                id=f"{track.id}@{t}:{s.id}",
                src=src,
                service=s.id,
                bandwidth_mbps=s.bandwidth_mbps,
                max_delay_ms=s.max_delay_ms,
                slot=t,
                flight=track.id,
            )
            for s in services
        ]
    return out


def migration_cost_of(delta: float, ground_link_cost: float, instance_cost: float) -> float:
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delta {delta} outside [0, 1]")
    return delta * (ground_link_cost + instance_cost)


def build_services(
    specs: Sequence[ServiceSpec],
    passengers: int,
    usage_fraction: float,
    instance_cost: float,
    ground_link_cost: float,
    delta: float,
) -> list[ServiceType]:
    users = aggregate_users(passengers, usage_fraction, len(specs))
    mig = migration_cost_of(delta, ground_link_cost, instance_cost)
    return [
        ServiceType(
            id=s.id,
            bandwidth_mbps=round(users * s.per_user_mbps, 9),
            max_delay_ms=s.max_delay_ms,
            instance_cost=instance_cost,
            instance_size_cores=s.instance_size_cores,
            instance_capacity_mbps=s.instance_capacity_mbps,
            migration_cost=mig,
        )
        for s in specs
    ]


def sample_congestion(stations: Sequence[Station] | Sequence[str], horizon: int, probability: float, seed: int) -> np.ndarray:
    """Boolean mask of shape (horizon, len(stations)); True = congested."""
    if not 0.0 <= probability <= 1.0:
        raise ValueError("probability must be in [0, 1]")
    rng = np.random.default_rng(seed)
    return rng.random((horizon, len(stations))) < probability


def congestion_probability_from_counts(flight_counts: Sequence[int], capacity_threshold: int = STATION_FLIGHT_CAPACITY) -> float:
    """Share of observations where a station sees more flights than it can serve."""
    counts = np.asarray(flight_counts)
    if counts.size == 0:
        raise ValueError("empty histogram")
    if capacity_threshold < 1:
        raise ValueError("capacity threshold must be >= 1")
    return float(np.count_nonzero(counts > capacity_threshold)) / counts.size


EUROPE_BBOX = (37.0, 60.0, -8.0, 28.0)  # lat_min, lat_max, lon_min, lon_max


def _inside(p: GeoPoint, bbox) -> bool:
    return bbox[0] <= p.lat <= bbox[1] and bbox[2] <= p.lon <= bbox[3]


def generate_tracks(
    n_flights: int,
    tau: int,
    seed: int,
    *,
    speed_kmh: float = 800.0,
    slot_minutes: float = 30.0,
    bbox=EUROPE_BBOX,
    first_slot: int = 0,
    prefix: str = "FL",
) -> list[FlightTrack]:
    """Straight great-circle cruises that stay inside ``bbox``."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    rng = np.random.default_rng(seed)
    step = speed_kmh * slot_minutes / 60.0
    tracks = []
    while len(tracks) < n_flights:
        start = GeoPoint(rng.uniform(bbox[0], bbox[1]), rng.uniform(bbox[2], bbox[3]))
        bearing = rng.uniform(0.0, 360.0)
        pts = [start]
        for _ in range(tau):
            pts.append(destination_point(pts[-1], bearing, step))
        if all(_inside(p, bbox) for p in pts):
            tracks.append(FlightTrack(f"{prefix}{len(tracks):03d}", tuple(pts), first_slot))
    return tracks


def synthetic_stations(anchors: Sequence[GeoPoint], n: int, seed: int, max_offset_km: float = 300.0) -> list[Station]:
    """Scatter DA2G stations around anchor points (round-robin)."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        a = anchors[i % len(anchors)]
        p = destination_point(a, rng.uniform(0, 360), max_offset_km * math.sqrt(rng.uniform()))
        out.append(Station(f"S{i:03d}", GeoPoint(round(p.lat, 5), round(p.lon, 5))))
    return out


@dataclass
class ScenarioConfig:
    topology: str = "europe_topology.yaml"
    stations: str = "da2g_stations.csv"
    flights: str | None = "flights.csv"
    n_flights: int = 1
    tau: int = 3
    horizon_slots: int | None = None
    slot_minutes: float = 30.0
    seed: int = 1
    delta: float = 0.5
    visibility_km: float = 350.0
    congestion_probability: float = DEFAULT_CONGESTION_P
    passengers: int = 150
    usage_fraction: float = 0.2
    instance_cost: float = 229.0
    ground_link_cost: float = 60.0
    da2g_link_cost: float = 83.0
    da2g_bandwidth_mbps: float = 75.0
    da2g_delay_ms: float = 10.0
    satellite_uplink_cost: float = 130.0
    satellite_downlink_cost: float = 0.0
    satellite_uplink_delay_ms: float = 50.0
    satellite_downlink_delay_ms: float = 0.0
    satellite_bandwidth_mbps: float = 50.0
    fiber_speed_km_per_ms: float = 200.0
    services: list[dict] = field(
        default_factory=lambda: [
            {"id": "video", "per_user_mbps": 1.5, "max_delay_ms": 300.0},
            {"id": "voip", "per_user_mbps": 0.064, "max_delay_ms": 100.0},
        ]
    )
    base_dir: str = "."

    @classmethod
    def from_file(cls, path: str | Path, overrides: Mapping[str, Any] | None = None) -> "ScenarioConfig":
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a mapping")
        raw.setdefault("base_dir", str(path.parent))
        return cls.from_dict(raw, overrides)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], overrides: Mapping[str, Any] | None = None) -> "ScenarioConfig":
        merged = dict(raw)
        for k, v in (overrides or {}).items():
            if v is not None:
                merged[k] = v
        known = set(cls.__dataclass_fields__)
        unknown = set(merged) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**merged)
        cfg.check()
        return cfg

    def check(self) -> None:
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigError(f"delta {self.delta} outside [0, 1]")
        if not 0.0 <= self.congestion_probability <= 1.0:
            raise ConfigError("congestion_probability outside [0, 1]")
        if self.slot_minutes <= 0:
            raise ConfigError("slot_minutes must be positive")
        if not self.services:
            raise ConfigError("empty service catalog")

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Scenario:
    slot_minutes: float
    snapshots: list[SaginSnapshot]
    requests: list[list[ServiceRequest]]
    services: dict[str, ServiceType]
    delta: float
    seed: int
    tracks: list[FlightTrack] = field(default_factory=list)
    congestion: np.ndarray | None = None
    ground_link_cost: float = 60.0
    station_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta outside [0, 1]")
        if len(self.snapshots) != len(self.requests):
            raise ValueError("one request list per snapshot is required")
        for t, (snap, reqs) in enumerate(zip(self.snapshots, self.requests)):
            for r in reqs:
                if r.src not in snap.nodes:
                    raise ValueError(f"request {r.id}: source {r.src} missing from slot {t}")
                if r.service not in self.services:
                    raise ValueError(f"request {r.id}: unknown service {r.service}")

    @property
    def horizon(self) -> int:
        return len(self.snapshots)

    @property
    def dcs(self) -> list[str]:
        return self.snapshots[0].dcs if self.snapshots else []

    def with_delta(self, delta: float) -> "Scenario":
        """Same network and demand, different migration weighting."""
        services = {
            k: replace(s, migration_cost=migration_cost_of(delta, self.ground_link_cost, s.instance_cost))
            for k, s in self.services.items()
        }
        return replace(self, services=services, delta=delta)

    def slice(self, t: int) -> "Scenario":
        """Single-slot scenario for slot ``t``."""
        return replace(
            self,
            snapshots=[self.snapshots[t]],
            requests=[self.requests[t]],
            congestion=None if self.congestion is None else self.congestion[t : t + 1],
        )

    def to_dict(self) -> dict:
        def node_dict(n):
            d = {"id": n.id, "kind": n.kind.value}
            if n.position is not None:
                d["lat"], d["lon"] = n.position.lat, n.position.lon
            if n.dc_capacity is not None:
                d["dc_capacity"] = n.dc_capacity
            return d

        return {
            "slot_minutes": self.slot_minutes,
            "delta": self.delta,
            "seed": self.seed,
            "ground_link_cost": self.ground_link_cost,
            "services": [asdict(self.services[k]) for k in sorted(self.services)],
            "tracks": [
                {"id": tr.id, "first_slot": tr.first_slot, "positions": [[p.lat, p.lon] for p in tr.positions]}
                for tr in self.tracks
            ],
            "station_ids": list(self.station_ids),
            "congestion": None if self.congestion is None else self.congestion.astype(int).tolist(),
            "snapshots": [
                {
                    "slot": s.slot,
                    "nodes": [node_dict(s.nodes[k]) for k in sorted(s.nodes)],
                    "arcs": [[u, v, a.cost, a.delay_ms, a.bandwidth_mbps] for (u, v), a in sorted(s.arcs.items())],
                    "flights": dict(sorted(s.flights.items())),
                    "da2g_attachment": dict(sorted(s.da2g_attachment.items())),
                }
                for s in self.snapshots
            ],
            "requests": [[asdict(r) for r in reqs] for reqs in self.requests],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scenario":
        from .network import Node, NodeKind

        snaps = []
        for s in d["snapshots"]:
            nodes = {}
            for n in s["nodes"]:
                pos = GeoPoint(n["lat"], n["lon"]) if "lat" in n else None
                nodes[n["id"]] = Node(n["id"], NodeKind(n["kind"]), pos, n.get("dc_capacity"))
            arcs = {(u, v): LinkAttrs(c, dl, bw) for u, v, c, dl, bw in s["arcs"]}
            snaps.append(SaginSnapshot(s["slot"], nodes, arcs, dict(s["flights"]), dict(s["da2g_attachment"])))
        cong = d.get("congestion")
        return cls(
            slot_minutes=d["slot_minutes"],
            snapshots=snaps,
            requests=[[ServiceRequest(**r) for r in reqs] for reqs in d["requests"]],
            services={s["id"]: ServiceType(**s) for s in d["services"]},
            delta=d["delta"],
            seed=d["seed"],
            tracks=[
                FlightTrack(t["id"], tuple(GeoPoint(a, b) for a, b in t["positions"]), t["first_slot"]) for t in d["tracks"]
            ],
            congestion=None if cong is None else np.asarray(cong, dtype=bool),
            ground_link_cost=d.get("ground_link_cost", 60.0),
            station_ids=list(d.get("station_ids", [])),
        )

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        return cls.from_dict(json.loads(text))


def assemble_scenario(
    topology: GroundTopology,
    stations: Sequence[Station],
    tracks: Sequence[FlightTrack],
    services: Sequence[ServiceType],
    *,
    horizon: int | None = None,
    slot_minutes: float = 30.0,
    delta: float = 0.5,
    seed: int = 0,
    congestion: np.ndarray | None = None,
    congestion_probability: float = DEFAULT_CONGESTION_P,
    satellite: SatelliteConfig = SatelliteConfig(),
    da2g: Da2gConfig = Da2gConfig(),
    ground_link_cost: float = 60.0,
    passengers: int = 150,
    usage_fraction: float = 0.2,
    fiber_speed_km_per_ms: float = 200.0,
) -> Scenario:
    """Build per-slot snapshots and attach the aggregated requests."""
    if not topology.is_connected():
        raise TopologyError("ground topology is empty or disconnected")
    span = max((tr.last_slot + 1 for tr in tracks), default=1)
    if horizon is None:
        horizon = span
    elif horizon < span:
        raise ConfigError(f"horizon of {horizon} slots is shorter than the flight tracks ({span})")
    per_flight = sum(s.bandwidth_mbps for s in services)
    if per_flight > satellite.uplink.bandwidth_mbps:
        raise ConfigError(
            f"aggregated demand per flight {per_flight:.3f} Mbps exceeds satellite uplink "
            f"{satellite.uplink.bandwidth_mbps} Mbps"
        )
    if congestion is None:
        congestion = sample_congestion(stations, horizon, congestion_probability, seed)
    if congestion.shape != (horizon, len(stations)):
        raise ConfigError(f"congestion mask shape {congestion.shape} != {(horizon, len(stations))}")

    snaps: list[SaginSnapshot] = []
    reqs: list[list[ServiceRequest]] = [[] for _ in range(horizon)]
    by_track = {tr.id: generate_requests(tr, services, passengers, usage_fraction) for tr in tracks}
    max_slot_demand = max(
        (sum(per_flight for tr in tracks if tr.position_at(t) is not None) for t in range(horizon)), default=0.0
    )
    attach_bw = max(10.0 * max_slot_demand, 1.0)
    for t in range(horizon):
        active = [(tr.id, tr.position_at(t)) for tr in tracks if tr.position_at(t) is not None]
        mask = {st.id: bool(congestion[t, i]) for i, st in enumerate(stations)}
        snaps.append(
            build_snapshot(
                topology,
                stations,
                satellite,
                active,
                mask,
                slot=t,
                da2g=da2g,
                attach_bandwidth_mbps=attach_bw,
                fiber_speed_km_per_ms=fiber_speed_km_per_ms,
            )
        )
        for tr in sorted(tracks, key=lambda tr: tr.id):
            reqs[t].extend(by_track[tr.id].get(t, []))
    return Scenario(
        slot_minutes=slot_minutes,
        snapshots=snaps,
        requests=reqs,
        services={s.id: s for s in services},
        delta=delta,
        seed=seed,
        tracks=sorted(tracks, key=lambda tr: tr.id),
        congestion=congestion,
        ground_link_cost=ground_link_cost,
        station_ids=[s.id for s in stations],
    )


def build_scenario(config: ScenarioConfig) -> Scenario:
    """Load inputs named by ``config`` and assemble the scenario.

    Raises ConfigError for unreadable inputs and ConnectivityError when a
    flight cannot reach any datacenter.
    """
    config.check()
    try:
        topology = load_topology(config.resolve(config.topology))
        stations = load_stations(config.resolve(config.stations))
    except FileNotFoundError as exc:
        raise ConfigError(f"input file not found: {exc.filename}") from exc
    except TopologyError as exc:
        raise ConfigError(str(exc)) from exc
    if config.flights:
        fpath = config.resolve(config.flights)
        if not fpath.exists():
            raise ConfigError(f"flights file not found: {fpath}")
        tracks = load_flights(fpath)
    else:
        tracks = generate_tracks(config.n_flights, config.tau, config.seed, slot_minutes=config.slot_minutes)
    try:
        specs = [ServiceSpec(**s) for s in config.services]
    except TypeError as exc:
        raise ConfigError(f"bad service entry: {exc}") from exc
    try:
        services = build_services(
            specs, config.passengers, config.usage_fraction, config.instance_cost, config.ground_link_cost, config.delta
        )
        satellite = SatelliteConfig(
            uplink=LinkAttrs(config.satellite_uplink_cost, config.satellite_uplink_delay_ms, config.satellite_bandwidth_mbps),
            downlink=LinkAttrs(
                config.satellite_downlink_cost, config.satellite_downlink_delay_ms, config.satellite_bandwidth_mbps
            ),
        )
        da2g = Da2gConfig(
            LinkAttrs(config.da2g_link_cost, config.da2g_delay_ms, config.da2g_bandwidth_mbps), config.visibility_km
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        return assemble_scenario(
            topology,
            stations,
            tracks,
            services,
            horizon=config.horizon_slots,
            slot_minutes=config.slot_minutes,
            delta=config.delta,
            seed=config.seed,
            congestion_probability=config.congestion_probability,
            satellite=satellite,
            da2g=da2g,
            ground_link_cost=config.ground_link_cost,
            passengers=config.passengers,
            usage_fraction=config.usage_fraction,
            fiber_speed_km_per_ms=config.fiber_speed_km_per_ms,
        )
    except TopologyError as exc:
        raise ConfigError(str(exc)) from exc
