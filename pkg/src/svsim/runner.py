"""Scenario loading, replication running and report emission."""

import hashlib
import json
import statistics
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .model import (AbrOptions, BandwidthSchedule, Layer, LayeredAsset, Link,
                    RateDistortionTable, Representation, ScenarioConfig,
                    SegmentedAsset, SingleRateAsset, ScenarioError, Topology,
                    TransportOptions, nsfnet14, parse_topo_text, validate_scenario)
from .simulation import MethodRunResult, run_all_methods

REQUIRED_SECTIONS = ("topology", "asset", "rd_table", "run")


def bundled_scenario_path(name: str = "paper_nsfnet14") -> Path:
    return Path(str(resources.files("svsim.assets").joinpath(f"{name}.toml")))


def load_scenario(path) -> ScenarioConfig:
    """Parse a scenario file and hand it to validation."""
    text = Path(path).read_text()
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError([f"parse error in {path}: {exc}"]) from exc
    for section in REQUIRED_SECTIONS:
        if section not in raw:
            raise ScenarioError([f"missing required section [{section}]"])
    return validate_scenario(build_scenario(raw))


def build_scenario(raw: dict) -> ScenarioConfig:
    """Turn the parsed key/value document into an unvalidated ScenarioConfig."""
    topo = _build_topology(raw["topology"])
    schedules = tuple(
        BandwidthSchedule(s["link"], tuple((float(t), float(c)) for t, c in s["events"]))
        for s in raw.get("schedule", []))
    assets = {}
    for method, spec in raw["asset"].items():
        assets[method] = _build_asset(method, spec)
    t = raw.get("transport", {})
    transport = TransportOptions(
        mtu=int(t.get("mtu", 1500)),
        rto=float(t.get("rto", 1.0)),
        startup_buffer=float(t.get("startup_buffer", 2.0)),
        dash_window=int(t.get("dash_window", 8)),
    )
    a = raw.get("abr", {})
    abr = AbrOptions(
        ewma_alpha=float(a.get("ewma_alpha", 0.8)),
        safety_factor=float(a.get("safety_factor", 0.9)),
        svc_feedback_interval=float(a.get("svc_feedback_interval", 1.0)),
    )
    rd_raw = raw["rd_table"]
    rd = RateDistortionTable(
        nominal={k: float(v) for k, v in rd_raw.get("nominal", {}).items()},
        floor=float(rd_raw.get("floor", 10.0)),
    )
    run = raw["run"]
    return ScenarioConfig(
        topology=topo,
        schedules=schedules,
        assets=assets,
        transport=transport,
        abr=abr,
        rd_table=rd,
        duration=float(run.get("duration", 0.0)),
        replications=int(run.get("replications", 1)),
        seed=int(run.get("seed", 1)),
        start_offset=float(run.get("start_offset", 0.2)),
        start_jitter=float(run.get("start_jitter", 0.1)),
    )


def _build_topology(spec: dict) -> Topology:
    cap = float(spec.get("backbone_capacity", 100e6))
    delay = float(spec.get("backbone_delay", 0.001))
    queue = int(spec.get("backbone_queue", 100))
    links: list[Link] = []
    if "backbone" in spec:
        name = spec["backbone"]
        if name == "nsfnet14":
            nodes, edges = nsfnet14()
        else:
            nodes, edges = parse_topo_text(Path(name).read_text())
        node_list = list(nodes)
        for a, b in edges:
            links.append(Link(a, b, cap, delay, queue))
    else:
        node_list = [int(n) for n in spec.get("nodes", [])]
        for entry in spec.get("links", []):
            a, b = int(entry[0]), int(entry[1])
            lcap = float(entry[2]) if len(entry) > 2 else cap
            ldelay = float(entry[3]) if len(entry) > 3 else delay
            lqueue = int(entry[4]) if len(entry) > 4 else queue
            links.append(Link(a, b, lcap, ldelay, lqueue))
    for acc in spec.get("access", []):
        node = int(acc["node"])
        node_list.append(node)
        links.append(Link(int(acc["attach"]), node,
                          float(acc.get("capacity", cap)),
                          float(acc.get("delay", delay)),
                          int(acc.get("queue", queue))))
    hosts = {role: int(n) for role, n in spec.get("hosts", {}).items()}
    return Topology(tuple(node_list), tuple(links), hosts)


def _build_asset(method: str, spec: dict):
    common = dict(
        frame_count=int(spec.get("frames", 0)),
        frame_rate=float(spec.get("fps", 15)),
        resolution=(int(spec.get("width", 352)), int(spec.get("height", 288))),
    )
    if method == "h265":
        return SingleRateAsset(bitrate=float(spec.get("bitrate", 0)),
                               quality_id=str(spec.get("quality", "")), **common)
    if method == "dash":
        reps = tuple(Representation(str(q), float(b), str(q))
                     for q, b in spec.get("representations", []))
        return SegmentedAsset(representations=reps,
                              segment_duration=float(spec.get("segment_duration", 0)),
                              segment_count=int(spec.get("segments", 0)), **common)
    if method == "svc":
        layers = tuple(Layer(i, float(b), str(q))
                       for i, (q, b) in enumerate(spec.get("layers", [])))
        return LayeredAsset(layers=layers, **common)
    # Unknown methods flow through so validation can name them.
    return SingleRateAsset(bitrate=0.0, quality_id="", **common)


# -- replications ---------------------------------------------------------------


@dataclass
class MethodAggregate:
    method: str
    mean_psnr_db: float
    std_psnr_db: float
    mean_delay_s: float
    std_delay_s: float
    mean_throughput_bps: float
    sent: float
    received: float
    lost: float
    loss_pct: float
    psnr_per_frame: list[float]
    throughput_bins: list[float]


@dataclass
class RunReport:
    fingerprint: str
    base_seed: int
    replications: int
    duration: float
    runs: list[dict[str, MethodRunResult]]
    aggregates: dict[str, MethodAggregate] = field(default_factory=dict)

    def aggregate(self):
        methods = list(self.runs[0].keys()) if self.runs else []
        for method in methods:
            results = [run[method] for run in self.runs]
            psnrs = [r.mean_psnr_db for r in results]
            delays = [r.mean_delay_s for r in results]
            frames = len(results[0].ledger)
            per_frame = [statistics.fmean(r.ledger[i] for r in results)
                         for i in range(frames)]
            bins = len(results[0].throughput_bins)
            tput = [statistics.fmean(r.throughput_bins[i] for r in results)
                    for i in range(bins)]
            self.aggregates[method] = MethodAggregate(
                method=method,
                mean_psnr_db=statistics.fmean(psnrs),
                std_psnr_db=statistics.pstdev(psnrs),
                mean_delay_s=statistics.fmean(delays),
                std_delay_s=statistics.pstdev(delays),
                mean_throughput_bps=statistics.fmean(
                    r.mean_throughput_bps for r in results),
                sent=statistics.fmean(r.sent for r in results),
                received=statistics.fmean(r.received for r in results),
                lost=statistics.fmean(r.lost for r in results),
                loss_pct=statistics.fmean(r.loss_pct for r in results),
                psnr_per_frame=per_frame,
                throughput_bins=tput,
            )


def scenario_fingerprint(config: ScenarioConfig, base_seed: int) -> str:
    blob = repr((config, base_seed)).encode()
    return hashlib.sha256(blob).hexdigest()


def run_replications(config: ScenarioConfig, n: int | None = None,
                     base_seed: int | None = None, trace: bool = False) -> RunReport:
    """Run n independent replications with seeds base, base+1, ..."""
    if not config.validated:
        config = validate_scenario(config)
    n = config.replications if n is None else n
    base_seed = config.seed if base_seed is None else base_seed
    if n < 1:
        raise ValueError("replication count must be >= 1")
    runs = []
    for i in range(n):
        try:
            runs.append(run_all_methods(config, base_seed + i, trace))
        except Exception as exc:
            raise RuntimeError(f"replication {i} (seed {base_seed + i}) failed") from exc
    report = RunReport(
        fingerprint=scenario_fingerprint(config, base_seed),
        base_seed=base_seed,
        replications=n,
        duration=config.duration,
        runs=runs,
    )
    report.aggregate()
    return report


# -- report emission --------------------------------------------------------------

SUMMARY_FIELDS = ("method", "mean_psnr_db", "mean_throughput_bps", "mean_delay_s",
                  "sent", "received", "lost", "loss_pct")


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _summary_rows(report: RunReport) -> list[dict]:
    rows = []
    for method, agg in report.aggregates.items():
        rows.append({
            "method": method,
            "mean_psnr_db": agg.mean_psnr_db,
            "mean_throughput_bps": agg.mean_throughput_bps,
            "mean_delay_s": agg.mean_delay_s,
            "sent": agg.sent,
            "received": agg.received,
            "lost": agg.lost,
            "loss_pct": agg.loss_pct,
        })
    return rows


def emit_report(report: RunReport, out_dir, fmt: str = "csv") -> list[Path]:
    """Write summary, per-frame PSNR, throughput, packet and event files."""
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"unknown format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    methods = list(report.aggregates)
    written = []

    def emit(name: str, header: list[str], rows):
        if fmt == "csv":
            path = out / f"{name}.csv"
            with path.open("w", encoding="utf-8", newline="") as fh:
                fh.write(",".join(header) + "\n")
                for row in rows:
                    fh.write(",".join(_fmt(v) for v in row) + "\n")
        else:
            path = out / f"{name}.jsonl"
            with path.open("w", encoding="utf-8") as fh:
                for row in rows:
                    fh.write(json.dumps(dict(zip(header, row)), sort_keys=True) + "\n")
        written.append(path)

    emit("summary", list(SUMMARY_FIELDS),
         [[r[k] for k in SUMMARY_FIELDS] for r in _summary_rows(report)])

    frame_count = (len(report.aggregates[methods[0]].psnr_per_frame)
                   if methods else 0)
    emit("psnr_per_frame", ["frame"] + methods,
         [[i] + [report.aggregates[m].psnr_per_frame[i] for m in methods]
          for i in range(frame_count)])

    tput_rows = []
    for method in methods:
        for i, bps in enumerate(report.aggregates[method].throughput_bins):
            tput_rows.append([float(i), method, bps])
    emit("throughput", ["bin_start", "method", "bps"], tput_rows)

    packet_rows = []
    for run_idx, run in enumerate(report.runs):
        for method, res in run.items():
            for pid, fid, size, send_s, recv_s, drop_site in res.packet_rows:
                flow = f"{method}.r{run_idx}.{'media' if fid == 1 else 'ctrl'}"
                packet_rows.append([pid, flow, size, send_s,
                                    "" if recv_s is None else recv_s,
                                    1 if drop_site else 0, drop_site or ""])
    emit("packets", ["packet_id", "flow_id", "size", "send_time", "recv_time",
                     "dropped", "drop_link"], packet_rows)

    event_rows = []
    for run_idx, run in enumerate(report.runs):
        for method, res in run.items():
            for t, flow, event, detail in res.events:
                event_rows.append([t, f"{flow}.r{run_idx}", event, detail])
    emit("events", ["time", "flow", "event", "detail"], event_rows)

    if trace_texts := [(m, i, r.trace_text) for i, run in enumerate(report.runs)
                       for m, r in run.items() if r.trace_text]:
        for method, run_idx, text in trace_texts:
            path = out / f"trace_{method}_r{run_idx}.csv"
            path.write_text("time_ns,seq,target,action\n" + text + "\n",
                            encoding="utf-8")
            written.append(path)
    return written
