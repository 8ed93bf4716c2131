"""Domain types shared by all modules, plus scenario validation.

Everything here is immutable after validation, so a validated scenario can
be shared read-only across any number of replication workers.
"""

import math
from dataclasses import dataclass, field
from importlib import resources

HEADER_BYTES = 40
PSNR_CAP_DB = 99.0


class ScenarioError(ValueError):
    """Validation failed; ``violations`` lists every broken invariant."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def link_id(a: int, b: int) -> str:
    return f"{a}-{b}" if a < b else f"{b}-{a}"


@dataclass(frozen=True)
class Link:
    a: int
    b: int
    capacity: float          # bits/s
    delay: float             # propagation, seconds
    queue_capacity: int      # packets

    @property
    def id(self) -> str:
        return link_id(self.a, self.b)


@dataclass(frozen=True)
class Topology:
    nodes: tuple[int, ...]
    links: tuple[Link, ...]
    hosts: dict[str, int]    # role -> node id

    def neighbors(self, node: int) -> list[int]:
        out = []
        for l in self.links:
            if l.a == node:
                out.append(l.b)
            elif l.b == node:
                out.append(l.a)
        return out

    def link_between(self, a: int, b: int) -> Link | None:
        want = link_id(a, b)
        for l in self.links:
            if l.id == want:
                return l
        return None


@dataclass(frozen=True)
class BandwidthSchedule:
    link: str                               # link id
    events: tuple[tuple[float, float], ...]  # (time s, new capacity bits/s)


@dataclass(frozen=True)
class Representation:
    rep_id: str
    bitrate: float       # bits/s
    quality_id: str


@dataclass(frozen=True)
class Layer:
    layer_id: int
    cumulative_bitrate: float  # bits/s, including all lower layers
    quality_id: str


@dataclass(frozen=True)
class SingleRateAsset:
    frame_count: int
    frame_rate: float
    resolution: tuple[int, int]
    bitrate: float
    quality_id: str

    variant = "single-rate"


@dataclass(frozen=True)
class SegmentedAsset:
    frame_count: int
    frame_rate: float
    resolution: tuple[int, int]
    representations: tuple[Representation, ...]  # sorted by bitrate
    segment_duration: float
    segment_count: int

    variant = "segmented"

    @property
    def frames_per_segment(self) -> int:
        return self.frame_count // self.segment_count


@dataclass(frozen=True)
class LayeredAsset:
    frame_count: int
    frame_rate: float
    resolution: tuple[int, int]
    layers: tuple[Layer, ...]  # layer 0 = base, cumulative bitrates increasing

    variant = "layered"


VideoAsset = SingleRateAsset | SegmentedAsset | LayeredAsset


def segment_bytes(bitrate: float, segment_duration: float) -> int:
    """Whole-byte segment size: bitrate x duration / 8, rounded up."""
    return math.ceil(bitrate * segment_duration / 8)


@dataclass(frozen=True)
class Manifest:
    asset_id: str
    representations: tuple[Representation, ...]
    sizes: dict[tuple[str, int], int]  # (rep id, segment index) -> bytes

    @staticmethod
    def from_asset(asset: SegmentedAsset, asset_id: str = "segmented") -> "Manifest":
        sizes = {}
        for rep in asset.representations:
            size = segment_bytes(rep.bitrate, asset.segment_duration)
            for s in range(asset.segment_count):
                sizes[(rep.rep_id, s)] = size
        return Manifest(asset_id, asset.representations, sizes)


class Packet:
    """Forwarding-plane unit: 40-byte header plus payload, tagged per flow."""

    __slots__ = ("packet_id", "flow_id", "size", "send_time_ns", "tags",
                 "retransmission")

    def __init__(self, packet_id, flow_id, size, send_time_ns, tags=None,
                 retransmission=False):
        if size <= HEADER_BYTES:
            raise ValueError(f"packet size {size} must exceed header {HEADER_BYTES}")
        self.packet_id = packet_id
        self.flow_id = flow_id
        self.size = size
        self.send_time_ns = send_time_ns
        self.tags = tags or {}
        self.retransmission = retransmission

    @property
    def payload(self) -> int:
        return self.size - HEADER_BYTES

    def __repr__(self):
        return f"Packet(id={self.packet_id}, flow={self.flow_id}, size={self.size})"


@dataclass(frozen=True)
class FlowRule:
    switch: int
    flow_id: int
    egress: str  # link id


@dataclass(frozen=True)
class RateDistortionTable:
    nominal: dict[str, float]  # quality id -> PSNR dB for on-time frames
    floor: float               # PSNR dB for late or missing frames

    def psnr_for(self, quality_id: str) -> float:
        if quality_id not in self.nominal:
            raise KeyError(f"unknown quality id {quality_id!r}")
        return self.nominal[quality_id]


@dataclass(frozen=True)
class TransportOptions:
    mtu: int = 1500               # bytes, header included
    rto: float = 1.0              # reliable-flow retransmission timeout, s
    startup_buffer: float = 2.0   # playout start threshold, s
    dash_window: int = 8          # in-flight packet window for reliable transfers

    @property
    def mtu_payload(self) -> int:
        return self.mtu - HEADER_BYTES


@dataclass(frozen=True)
class AbrOptions:
    ewma_alpha: float = 0.8
    safety_factor: float = 0.9
    svc_feedback_interval: float = 1.0


@dataclass(frozen=True)
class ScenarioConfig:
    topology: Topology
    schedules: tuple[BandwidthSchedule, ...]
    assets: dict[str, VideoAsset]   # method name -> asset
    transport: TransportOptions
    abr: AbrOptions
    rd_table: RateDistortionTable
    duration: float
    replications: int
    seed: int
    start_offset: float = 0.2       # nominal flow start, s
    start_jitter: float = 0.1       # uniform +/- jitter around start_offset, s

    validated: bool = field(default=False, compare=False)


METHODS = ("h265", "dash", "svc")
_VARIANT_FOR_METHOD = {
    "h265": SingleRateAsset,
    "dash": SegmentedAsset,
    "svc": LayeredAsset,
}


def nsfnet14() -> tuple[tuple[int, ...], tuple[tuple[int, int], ...]]:
    """Node ids and edge list of the bundled 14-node/21-link NSFNET backbone."""
    text = resources.files("svsim.assets").joinpath("nsfnet14.topo").read_text()
    return parse_topo_text(text)


def parse_topo_text(text: str):
    nodes: tuple[int, ...] = ()
    edges = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "nodes":
            nodes = tuple(int(p) for p in parts[1:])
        elif parts[0] == "link":
            if len(parts) != 3:
                raise ScenarioError([f"topo line {ln}: expected 'link A B'"])
            edges.append((int(parts[1]), int(parts[2])))
        else:
            raise ScenarioError([f"topo line {ln}: unknown directive {parts[0]!r}"])
    return nodes, tuple(edges)


def _connected(nodes, links) -> bool:
    if not nodes:
        return False
    adj = {n: [] for n in nodes}
    for l in links:
        if l.a in adj and l.b in adj:
            adj[l.a].append(l.b)
            adj[l.b].append(l.a)
    seen = {nodes[0]}
    stack = [nodes[0]]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == len(nodes)


def _check_topology(topo: Topology, bad: list):
    node_set = set(topo.nodes)
    if len(node_set) != len(topo.nodes):
        bad.append("duplicate node ids")
    seen_links = set()
    for l in topo.links:
        if l.a == l.b:
            bad.append(f"link {l.id}: endpoints must be distinct")
        if l.a not in node_set or l.b not in node_set:
            bad.append(f"link {l.id}: unknown endpoint node")
        if l.capacity <= 0:
            bad.append(f"link {l.id}: capacity must be positive")
        if l.queue_capacity < 1:
            bad.append(f"link {l.id}: queue capacity must be >= 1")
        if l.delay < 0:
            bad.append(f"link {l.id}: propagation delay must be >= 0")
        if l.id in seen_links:
            bad.append(f"duplicate link id {l.id}")
        seen_links.add(l.id)
    for role in ("client", "server"):
        if role not in topo.hosts:
            bad.append(f"missing host role {role!r}")
        elif topo.hosts[role] not in node_set:
            bad.append(f"host {role!r} assigned to unknown node {topo.hosts[role]}")
    if topo.hosts.get("client") is not None and \
            topo.hosts.get("client") == topo.hosts.get("server"):
        bad.append("client and server must be distinct nodes")
    if not bad and not _connected(topo.nodes, topo.links):
        bad.append("graph is not connected")


def _check_schedules(schedules, topo: Topology, bad: list):
    known = {l.id for l in topo.links}
    for sch in schedules:
        if sch.link not in known:
            bad.append(f"schedule references unknown link {sch.link!r}")
        prev = None
        for t, cap in sch.events:
            if cap <= 0:
                bad.append(f"schedule {sch.link}: capacity must be positive")
            if prev is not None and t <= prev:
                bad.append(f"schedule {sch.link}: event times must be strictly increasing")
            prev = t


def _check_asset(method: str, asset, bad: list):
    want = _VARIANT_FOR_METHOD.get(method)
    if want is None:
        bad.append(f"unknown method {method!r} (expected one of {METHODS})")
        return
    if not isinstance(asset, want):
        bad.append(f"asset for {method!r} must be {want.variant}")
        return
    if asset.frame_count <= 0:
        bad.append(f"{method}: frame count must be positive")
    if asset.frame_rate <= 0:
        bad.append(f"{method}: frame rate must be positive")
    if isinstance(asset, SingleRateAsset):
        if asset.bitrate <= 0:
            bad.append(f"{method}: bitrate must be positive")
    elif isinstance(asset, SegmentedAsset):
        if not asset.representations:
            bad.append(f"{method}: representations must be non-empty")
        rates = [r.bitrate for r in asset.representations]
        if len(set(rates)) != len(rates):
            bad.append(f"{method}: representation bitrates must be pairwise distinct")
        if rates != sorted(rates):
            bad.append(f"{method}: representations must be sorted by bitrate")
        expected = asset.segment_count * asset.segment_duration * asset.frame_rate
        if abs(expected - asset.frame_count) > 1e-9:
            bad.append(
                f"{method}: segment arithmetic mismatch "
                f"({asset.segment_count} x {asset.segment_duration}s x "
                f"{asset.frame_rate}fps != {asset.frame_count} frames)")
    elif isinstance(asset, LayeredAsset):
        if not asset.layers:
            bad.append(f"{method}: layers must be non-empty")
        rates = [l.cumulative_bitrate for l in asset.layers]
        if any(b <= a for a, b in zip(rates, rates[1:])):
            bad.append(f"{method}: cumulative layer bitrates must be strictly increasing")
        if rates and rates[0] <= 0:
            bad.append(f"{method}: base layer bitrate must be positive")


def _check_rd_table(rd: RateDistortionTable, assets, bad: list):
    if rd.floor <= 0:
        bad.append("rd table: floor PSNR must be positive")
    for q, v in rd.nominal.items():
        if v <= rd.floor:
            bad.append(f"rd table: nominal PSNR for {q!r} must exceed the floor")
    needed = set()
    for asset in assets.values():
        if isinstance(asset, SingleRateAsset):
            needed.add(asset.quality_id)
        elif isinstance(asset, SegmentedAsset):
            needed.update(r.quality_id for r in asset.representations)
        elif isinstance(asset, LayeredAsset):
            needed.update(l.quality_id for l in asset.layers)
    for q in sorted(needed):
        if q not in rd.nominal:
            bad.append(f"rd table: missing quality id {q!r}")


def validate_scenario(config: ScenarioConfig) -> ScenarioConfig:
    """Check every invariant; returns the validated config or raises ScenarioError.

    Idempotent: validating an already-validated scenario returns an equal one.
    """
    bad: list[str] = []
    _check_topology(config.topology, bad)
    _check_schedules(config.schedules, config.topology, bad)
    for method, asset in config.assets.items():
        _check_asset(method, asset, bad)
    _check_rd_table(config.rd_table, config.assets, bad)
    if config.transport.mtu <= HEADER_BYTES:
        bad.append(f"transport: MTU must exceed the {HEADER_BYTES}-byte header")
    if config.transport.rto <= 0:
        bad.append("transport: retransmission timeout must be positive")
    if config.transport.startup_buffer < 0:
        bad.append("transport: startup buffer must be >= 0")
    if config.transport.dash_window < 1:
        bad.append("transport: dash window must be >= 1")
    if not 0.0 <= config.abr.ewma_alpha <= 1.0:
        bad.append("abr: ewma alpha must be in [0, 1]")
    if config.abr.safety_factor <= 0:
        bad.append("abr: safety factor must be positive")
    if config.abr.svc_feedback_interval <= 0:
        bad.append("abr: feedback interval must be positive")
    if config.duration <= 0:
        bad.append("run: duration must be positive")
    last_event = max((t for s in config.schedules for t, _ in s.events), default=0.0)
    if config.duration < last_event:
        bad.append(f"run: duration {config.duration}s does not cover the "
                   f"last schedule event at {last_event}s")
    if config.replications < 1:
        bad.append("run: replications must be >= 1")
    if config.start_jitter < 0:
        bad.append("run: start jitter must be >= 0")
    if bad:
        raise ScenarioError(bad)
    return ScenarioConfig(
        topology=config.topology,
        schedules=config.schedules,
        assets=dict(config.assets),
        transport=config.transport,
        abr=config.abr,
        rd_table=config.rd_table,
        duration=config.duration,
        replications=config.replications,
        seed=config.seed,
        start_offset=config.start_offset,
        start_jitter=config.start_jitter,
        validated=True,
    )
