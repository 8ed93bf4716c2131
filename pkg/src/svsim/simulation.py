"""Wires one delivery method into one kernel run and collects its metrics.

The three methods never share a run: each gets a fresh kernel, network
plane and controller state over the same scenario, mirroring independent
transmissions of the same video.
"""

import random
from dataclasses import dataclass, field

from .controller import RouteTable, compute_route
from .kernel import Kernel, NS_PER_S, s_to_ns
from .metrics import build_quality_ledger, mean_delay, sequence_average_psnr, throughput_series
from .model import Manifest, ScenarioConfig
from .network import FlowSpec, NetworkPlane
from .streaming import (CbrSender, DashClient, DashServer, DatagramReceiver,
                        FlowEventLog, PacketFactory, PlayoutBuffer, SvcReceiver,
                        SvcSender)

MEDIA_FLOW = 1
CONTROL_FLOW = 2


@dataclass
class MethodRunResult:
    method: str
    seed: int
    start_s: float
    path: list[int]
    outcomes: list = field(default_factory=list)
    playout_start_s: float | None = None
    stalls: list = field(default_factory=list)
    ledger: list[float] = field(default_factory=list)
    mean_psnr_db: float = 0.0
    throughput_bins: list[float] = field(default_factory=list)
    offered_bins: list[float] = field(default_factory=list)
    mean_delay_s: float = 0.0
    sent: int = 0
    received: int = 0
    lost: int = 0
    loss_pct: float = 0.0
    mean_throughput_bps: float = 0.0
    conservation: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    request_log: list = field(default_factory=list)
    layers_per_frame: list[int] = field(default_factory=list)
    packet_rows: list = field(default_factory=list)
    events_fired: int = 0
    trace_text: str | None = None


def flow_start_seconds(config: ScenarioConfig, method: str, seed: int) -> float:
    """Per-flow jittered start time; the only randomness in a run."""
    rng = random.Random(f"{seed}:{method}")
    jitter = rng.uniform(-config.start_jitter, config.start_jitter)
    return max(0.0, config.start_offset + jitter)


def run_method(config: ScenarioConfig, method: str, seed: int,
               trace: bool = False) -> MethodRunResult:
    asset = config.assets[method]
    topo = config.topology
    client = topo.hosts["client"]
    server = topo.hosts["server"]

    kernel = Kernel(trace=trace)
    route_table = RouteTable(topo)
    path = compute_route(topo, server, client)
    route_table.install_bidirectional_rules(path, MEDIA_FLOW, CONTROL_FLOW)
    plane = NetworkPlane(kernel, topo, route_table, mtu=config.transport.mtu)
    plane.schedule_bandwidth_events(config.schedules)

    factory = PacketFactory(config.transport.mtu)
    start_s = flow_start_seconds(config, method, seed)
    start_ns = s_to_ns(start_s)
    end_ns = s_to_ns(config.duration)
    events = FlowEventLog(method)
    playout = PlayoutBuffer(asset.frame_count, asset.frame_rate,
                            config.transport.startup_buffer)

    result = MethodRunResult(method=method, seed=seed, start_s=start_s, path=path)

    if method == "h265":
        receiver = DatagramReceiver(playout)
        plane.register_flow(FlowSpec(MEDIA_FLOW, server, client, receiver.on_deliver))
        CbrSender(kernel, plane, factory, events, server, MEDIA_FLOW, asset, start_ns)
    elif method == "dash":
        manifest = Manifest.from_asset(asset)
        dash_server = DashServer(kernel, plane, factory, events, server, MEDIA_FLOW,
                                 manifest, asset, config.transport.dash_window)
        dash_client = DashClient(kernel, plane, factory, events, client, MEDIA_FLOW,
                                 CONTROL_FLOW, manifest, asset, config.abr,
                                 config.transport, playout, start_ns)
        plane.register_flow(FlowSpec(MEDIA_FLOW, server, client,
                                     dash_client.on_deliver))
        plane.register_flow(FlowSpec(CONTROL_FLOW, client, server,
                                     dash_server.on_packet))
    elif method == "svc":
        sender = SvcSender(kernel, plane, factory, events, server, MEDIA_FLOW,
                           asset, config.abr, start_ns)
        helper = sender  # endpoint used by the receiver to send feedback
        receiver = SvcReceiver(playout, helper, client, CONTROL_FLOW,
                               config.abr.svc_feedback_interval, start_ns, end_ns,
                               layer_count=len(asset.layers))
        plane.register_flow(FlowSpec(MEDIA_FLOW, server, client, receiver.on_deliver))
        plane.register_flow(FlowSpec(CONTROL_FLOW, client, server,
                                     sender.on_feedback))
        result.layers_per_frame = sender.sent_layers_per_frame
    else:
        raise ValueError(f"unknown method {method!r}")

    stats = kernel.run_until(end_ns)
    result.events_fired = stats.events_fired
    if trace:
        result.trace_text = kernel.dump_trace()

    playout_result = playout.finalize(end_ns)
    result.outcomes = playout_result.outcomes
    result.playout_start_s = (None if playout_result.start_ns is None
                              else playout_result.start_ns / NS_PER_S)
    result.stalls = [(t / NS_PER_S, idx) for t, idx in playout_result.stalls]
    if result.playout_start_s is not None:
        events.log(playout_result.start_ns, "playback_start", "")
    for t, idx in playout_result.stalls:
        events.log(t, "stall", f"frame={idx}")
    events.rows.sort(key=lambda r: r[0])

    result.ledger = build_quality_ledger(result.outcomes, config.rd_table)
    result.mean_psnr_db = sequence_average_psnr(result.ledger)

    media_recv = []
    media_delays = []
    for row in plane.delivery_log:
        pkt, recv_ns, drop_site = row
        send_s = pkt.send_time_ns / NS_PER_S
        recv_s = recv_ns / NS_PER_S if recv_ns is not None else None
        result.packet_rows.append((pkt.packet_id, pkt.flow_id, pkt.size, send_s,
                                   recv_s, drop_site))
        if pkt.flow_id == MEDIA_FLOW and recv_s is not None:
            media_recv.append((pkt.size, recv_s))
            media_delays.append(recv_s - send_s)

    media_sent = [(pkt.size, pkt.send_time_ns / NS_PER_S)
                  for row in plane.delivery_log
                  if (pkt := row[0]).flow_id == MEDIA_FLOW]

    result.throughput_bins = throughput_series(media_recv, 1.0, config.duration)
    result.offered_bins = throughput_series(media_sent, 1.0, config.duration)
    result.mean_delay_s = mean_delay(media_delays) if media_delays else 0.0
    result.sent = plane.sent_per_flow.get(MEDIA_FLOW, 0)
    result.received = plane.received_per_flow.get(MEDIA_FLOW, 0)
    result.lost = plane.dropped_per_flow.get(MEDIA_FLOW, 0)
    result.loss_pct = round(100.0 * result.lost / result.sent, 2) if result.sent else 0.0
    total_bits = sum(size * 8 for size, _ in media_recv)
    result.mean_throughput_bps = total_bits / config.duration
    for fid in plane.flows:
        result.conservation[fid] = plane.conservation_counts(fid)
    result.events = events.rows
    if method == "dash":
        result.request_log = [(t / NS_PER_S, seg, rep)
                              for t, seg, rep in dash_client.request_log]
    return result


def run_all_methods(config: ScenarioConfig, seed: int,
                    trace: bool = False) -> dict[str, MethodRunResult]:
    return {method: run_method(config, method, seed, trace)
            for method in config.assets}
