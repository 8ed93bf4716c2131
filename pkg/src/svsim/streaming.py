"""Server and client state machines for the three delivery methods.

Pure decision logic (packetize, EWMA, representation / layer selection) is
kept free of simulator state so it can be property-tested directly. The
endpoint classes bind that logic to a kernel + network plane:

  * cbr: fixed-rate sender, unreliable datagrams, no feedback.
  * dash: client-driven segment requests over a reliable, window-limited
    transfer (per-packet acks plus idle-timeout re-requests).
  * svc: frame-paced layered sender; the receiver estimates the access-link
    bandwidth from packet-pair dispersion inside each frame burst and
    reports it on the reverse route once per feedback interval.
"""

import math
from dataclasses import dataclass

from .kernel import Kernel, NS_PER_S, s_to_ns
from .model import (HEADER_BYTES, LayeredAsset, Manifest, Packet, Representation,
                    SegmentedAsset, SingleRateAsset)
from .network import NetworkPlane


# -- pure operations ---------------------------------------------------------

def packetize(byte_length: int, mtu_payload: int) -> list[int]:
    """Split a byte count into MTU-sized payloads; the last may be short."""
    if byte_length < 0:
        raise ValueError("byte length must be >= 0")
    if mtu_payload <= 0:
        raise ValueError("mtu payload must be positive")
    full, rest = divmod(byte_length, mtu_payload)
    return [mtu_payload] * full + ([rest] if rest else [])


def ewma_update(prev: float, sample: float, alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if prev < 0 or sample < 0:
        raise ValueError("rates must be >= 0")
    return alpha * sample + (1.0 - alpha) * prev


def select_representation(estimate: float, representations, safety_factor: float):
    """Highest-bitrate representation fitting under safety x estimate.

    Falls back to the lowest representation when nothing qualifies.
    """
    if not representations:
        raise ValueError("representation list is empty")
    budget = safety_factor * estimate
    chosen = None
    for rep in representations:  # sorted by bitrate
        if rep.bitrate <= budget:
            chosen = rep
    return chosen if chosen is not None else representations[0]


def select_layers(estimate: float, cumulative_rates) -> int:
    """Largest layer count whose cumulative rate fits; base always sent."""
    if not cumulative_rates:
        raise ValueError("layer list is empty")
    count = 1
    for k in range(len(cumulative_rates), 0, -1):
        if cumulative_rates[k - 1] <= estimate:
            count = k
            break
    return count


class ThroughputEstimator:
    """EWMA over throughput samples; primes on the first sample."""

    def __init__(self, alpha: float):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {alpha}")
        self.alpha = alpha
        self.estimate = 0.0
        self.last_sample = 0.0
        self._primed = False

    def update(self, sample: float) -> float:
        if self._primed:
            self.estimate = ewma_update(self.estimate, sample, self.alpha)
        else:
            self.estimate = sample
            self._primed = True
        self.last_sample = sample
        return self.estimate

    @property
    def primed(self) -> bool:
        return self._primed


def media_time_ns(frame_index: int, frame_rate: float) -> int:
    return round(frame_index * NS_PER_S / frame_rate)


def frame_bytes(bitrate: float, frame_rate: float, index: int) -> int:
    """Byte budget of one frame under cumulative pacing (total error < 1 B)."""
    per = bitrate / (8 * frame_rate)
    return math.floor(per * (index + 1)) - math.floor(per * index)


# -- frame bookkeeping ---------------------------------------------------------

@dataclass(frozen=True)
class FrameOutcome:
    frame_index: int
    quality_id: str | None   # None when the frame missed its deadline
    timing: str              # on-time | late | lost


@dataclass(frozen=True)
class PlayoutResult:
    outcomes: list[FrameOutcome]
    start_ns: int | None     # playback start; None if it never started
    stalls: list[tuple[int, int]]  # (time_ns, frame index at which playback froze)


class PlayoutBuffer:
    """Progressive-download playout with freeze-and-resume stalls.

    Frames become available as their media units complete; playback starts
    once ``startup_threshold`` seconds are buffered, after which every frame
    deadline is fixed. A frame missing its deadline is recorded late/lost,
    the display freezes, and later frames keep their original deadlines.
    """

    def __init__(self, frame_count: int, frame_rate: float, startup_threshold: float):
        self.frame_count = frame_count
        self.frame_rate = frame_rate
        self.startup_threshold = startup_threshold
        self.completions: list[list[tuple[int, str]]] = [[] for _ in range(frame_count)]
        self.playhead = 0
        self.start_ns: int | None = None
        self._state = "filling"
        self._stalls: list[tuple[int, int]] = []
        self._outcomes: list[FrameOutcome] = []

    def on_frames_available(self, first: int, last: int, time_ns: int, quality_id: str):
        """Record that frames [first, last] completed at ``time_ns``.

        Call again with a higher quality (e.g. an enhancement layer) to add
        an upgrade completion; the playout step picks the best one that met
        the deadline.
        """
        for idx in range(first, min(last + 1, self.frame_count)):
            self.completions[idx].append((time_ns, quality_id))

    def buffered_seconds(self, time_ns: int) -> float:
        have = sum(1 for idx in range(self.playhead, self.frame_count)
                   if self.completions[idx] and self.completions[idx][0][0] <= time_ns)
        return have / self.frame_rate

    def _compute_start(self, end_ns: int) -> int | None:
        threshold = max(1, math.ceil(self.startup_threshold * self.frame_rate))
        first_avail = sorted(c[0][0] for c in self.completions if c)
        if len(first_avail) < threshold:
            return None
        t = first_avail[threshold - 1]
        return t if t <= end_ns else None

    def step(self, now_ns: int) -> str:
        """Advance past the next frame deadline: 'advance', 'stall' or 'finish'."""
        if self.playhead >= self.frame_count:
            return "finish"
        idx = self.playhead
        deadline = self.start_ns + media_time_ns(idx, self.frame_rate)
        on_time = [q for t, q in self.completions[idx] if t <= deadline]
        self.playhead += 1
        if on_time:
            self._outcomes.append(FrameOutcome(idx, on_time[-1], "on-time"))
            self._state = "playing"
            return "advance"
        arrived_late = any(t <= now_ns for t, _ in self.completions[idx])
        self._outcomes.append(
            FrameOutcome(idx, None, "late" if arrived_late else "lost"))
        if self._state == "playing":
            self._stalls.append((deadline, idx))
        self._state = "stalled"
        return "stall"

    def finalize(self, end_ns: int) -> PlayoutResult:
        """Replay all deadlines up to the end of the run."""
        self.start_ns = self._compute_start(end_ns)
        if self.start_ns is None:
            outcomes = []
            for idx in range(self.frame_count):
                arrived = any(t <= end_ns for t, _ in self.completions[idx])
                outcomes.append(FrameOutcome(idx, None, "late" if arrived else "lost"))
            return PlayoutResult(outcomes, None, [])
        self._state = "playing"
        while self.step(end_ns) != "finish":
            pass
        return PlayoutResult(self._outcomes, self.start_ns, self._stalls)


class UnitAssembler:
    """Reassembles tagged media units from packets (datagram receivers)."""

    def __init__(self):
        self._got: dict[tuple, int] = {}
        self.completed: dict[tuple, int] = {}  # unit key -> completion time ns

    def add(self, packet: Packet, now_ns: int) -> tuple | None:
        unit = packet.tags["unit"]
        if unit in self.completed:
            return None
        have = self._got.get(unit, 0) + packet.payload
        self._got[unit] = have
        if have >= packet.tags["unit_bytes"]:
            self.completed[unit] = now_ns
            return unit
        return None


# -- shared endpoint plumbing --------------------------------------------------

class PacketFactory:
    def __init__(self, mtu: int):
        self.mtu = mtu
        self._next = 0

    def make(self, flow_id: int, payload: int, send_time_ns: int, tags=None,
             retransmission=False) -> Packet:
        self._next += 1
        return Packet(self._next, flow_id, payload + HEADER_BYTES, send_time_ns,
                      tags, retransmission)


class FlowEventLog:
    def __init__(self, flow_label: str):
        self.flow_label = flow_label
        self.rows: list[tuple[float, str, str, str]] = []

    def log(self, time_ns: int, event: str, detail: str = ""):
        self.rows.append((time_ns / NS_PER_S, self.flow_label, event, detail))


CONTROL_PAYLOAD = 60


class _Endpoint:
    def __init__(self, kernel: Kernel, plane: NetworkPlane, factory: PacketFactory,
                 events: FlowEventLog):
        self.kernel = kernel
        self.plane = plane
        self.factory = factory
        self.events = events

    def send(self, node: int, flow_id: int, payload: int, tags=None,
             retransmission=False) -> Packet:
        pkt = self.factory.make(flow_id, payload, self.kernel.now_ns, tags,
                                retransmission)
        self.plane.inject(node, pkt)
        return pkt


# -- constant-bitrate sender (non-adaptive H.265) ------------------------------

class CbrSender(_Endpoint):
    """Paces packetized frames at the configured bitrate, network be damned."""

    def __init__(self, kernel, plane, factory, events, node: int, flow_id: int,
                 asset: SingleRateAsset, start_ns: int):
        super().__init__(kernel, plane, factory, events)
        self.node = node
        self.flow_id = flow_id
        self.asset = asset
        self.start_ns = start_ns
        self.frames_sent = 0
        kernel.schedule(start_ns, self._send_frame, target="cbr", action="frame")

    def _send_frame(self):
        k = self.frames_sent
        asset = self.asset
        size = frame_bytes(asset.bitrate, asset.frame_rate, k)
        unit = ("frame", k, 0)
        payloads = packetize(size, self.factory.mtu - HEADER_BYTES)
        for seq, payload in enumerate(payloads):
            self.send(self.node, self.flow_id, payload,
                      tags={"kind": "data", "unit": unit, "seq": seq,
                            "unit_bytes": size, "quality": asset.quality_id})
        self.frames_sent += 1
        if self.frames_sent < asset.frame_count:
            t = self.start_ns + media_time_ns(self.frames_sent, asset.frame_rate)
            self.kernel.schedule(t, self._send_frame, target="cbr", action="frame")


class DatagramReceiver:
    """Client side for the unreliable flows: reassemble frames into the buffer.

    A layer only counts once every lower layer of its frame is complete, so
    an enhancement layer arriving ahead of a lost base contributes nothing.
    """

    def __init__(self, playout: PlayoutBuffer, layer_count: int = 1):
        self.playout = playout
        self.layer_count = layer_count
        self.assembler = UnitAssembler()
        self._quality: dict[tuple, str] = {}
        self._registered: dict[int, int] = {}  # frame -> decodable layer count

    def on_deliver(self, packet: Packet, now_ns: int):
        unit = self.assembler.add(packet, now_ns)
        if unit is None:
            return
        self._quality[unit] = packet.tags["quality"]
        _, frame, _ = unit
        done = self._registered.get(frame, 0)
        while (done < self.layer_count
               and ("frame", frame, done) in self.assembler.completed):
            quality = self._quality[("frame", frame, done)]
            self.playout.on_frames_available(frame, frame, now_ns, quality)
            done += 1
        self._registered[frame] = done


# -- scalable (layered) sender and receiver ------------------------------------

class SvcSender(_Endpoint):
    """Frame-paced layered sender; layer count follows receiver feedback."""

    def __init__(self, kernel, plane, factory, events, node: int, flow_id: int,
                 asset: LayeredAsset, abr, start_ns: int):
        super().__init__(kernel, plane, factory, events)
        self.node = node
        self.flow_id = flow_id
        self.asset = asset
        self.cumulative = [l.cumulative_bitrate for l in asset.layers]
        self.estimator = ThroughputEstimator(abr.ewma_alpha)
        self.layer_count = 1  # cold start: base only until feedback arrives
        self.frames_sent = 0
        self.start_ns = start_ns
        self.sent_layers_per_frame: list[int] = []
        kernel.schedule(start_ns, self._send_frame, target="svc", action="frame")

    def _layer_rate(self, layer: int) -> float:
        below = self.cumulative[layer - 1] if layer > 0 else 0.0
        return self.cumulative[layer] - below

    def _send_frame(self):
        k = self.frames_sent
        asset = self.asset
        for layer_idx in range(self.layer_count):
            layer = asset.layers[layer_idx]
            size = frame_bytes(self._layer_rate(layer_idx), asset.frame_rate, k)
            if size <= 0:
                continue
            unit = ("frame", k, layer_idx)
            payloads = packetize(size, self.factory.mtu - HEADER_BYTES)
            if len(payloads) == 1 and payloads[0] >= 2:
                # Keep at least two packets per frame so the receiver's
                # packet-pair dispersion always has a sample to work with.
                half = payloads[0] // 2
                payloads = [payloads[0] - half, half]
            for seq, payload in enumerate(payloads):
                self.send(self.node, self.flow_id, payload,
                          tags={"kind": "data", "unit": unit, "seq": seq,
                                "unit_bytes": size, "quality": layer.quality_id,
                                "frame": k})
        self.sent_layers_per_frame.append(self.layer_count)
        self.frames_sent += 1
        if self.frames_sent < asset.frame_count:
            t = self.start_ns + media_time_ns(self.frames_sent, asset.frame_rate)
            self.kernel.schedule(t, self._send_frame, target="svc", action="frame")

    def on_feedback(self, packet: Packet, now_ns: int):
        estimate = self.estimator.update(packet.tags["report"])
        new_count = select_layers(estimate, self.cumulative)
        if new_count != self.layer_count:
            self.events.log(now_ns, "layer_change",
                            f"{self.layer_count}->{new_count} estimate={estimate:.0f}")
            self.layer_count = new_count


class SvcReceiver(DatagramReceiver):
    """Reassembles layers and reports a dispersion-based bandwidth estimate.

    Consecutive packets of one frame burst leave the bottleneck back to
    back, so their arrival spacing reveals the access-link capacity even
    while only the base layer is being sent.
    """

    def __init__(self, playout, endpoint: _Endpoint, node: int, reverse_flow: int,
                 feedback_interval: float, start_ns: int, end_ns: int,
                 layer_count: int = 2):
        super().__init__(playout, layer_count)
        self.endpoint = endpoint
        self.node = node
        self.reverse_flow = reverse_flow
        self.samples: list[float] = []
        self._prev: tuple[int, int] | None = None  # (frame, arrival ns)
        interval_ns = s_to_ns(feedback_interval)
        t = start_ns + interval_ns
        while t <= end_ns:
            endpoint.kernel.schedule(t, self._report, target="svc", action="feedback")
            t += interval_ns

    def on_deliver(self, packet: Packet, now_ns: int):
        frame = packet.tags["frame"]
        if self._prev is not None and self._prev[0] == frame:
            gap = now_ns - self._prev[1]
            if gap > 0:
                self.samples.append(packet.size * 8 * NS_PER_S / gap)
        self._prev = (frame, now_ns)
        super().on_deliver(packet, now_ns)

    def _report(self):
        if not self.samples:
            return
        report = sum(self.samples) / len(self.samples)
        self.samples.clear()
        self.endpoint.send(self.node, self.reverse_flow, CONTROL_PAYLOAD,
                           tags={"kind": "feedback", "report": report})


# -- DASH server and client ------------------------------------------------------

class _SegmentTransfer:
    __slots__ = ("segment", "rep", "payloads", "next_unsent", "unacked")

    def __init__(self, segment: int, rep: Representation, payloads: list[int]):
        self.segment = segment
        self.rep = rep
        self.payloads = payloads
        self.next_unsent = 0
        self.unacked: set[int] = set()


class DashServer(_Endpoint):
    """Serves the manifest and window-paced reliable segment transfers."""

    MANIFEST_PAYLOAD = 256

    def __init__(self, kernel, plane, factory, events, node: int, flow_id: int,
                 manifest: Manifest, asset: SegmentedAsset, window: int):
        super().__init__(kernel, plane, factory, events)
        self.node = node
        self.flow_id = flow_id
        self.manifest = manifest
        self.asset = asset
        self.window = window
        self.transfers: dict[int, _SegmentTransfer] = {}

    def on_packet(self, packet: Packet, now_ns: int):
        kind = packet.tags["kind"]
        if kind == "manifest_req":
            self.send(self.node, self.flow_id, self.MANIFEST_PAYLOAD,
                      tags={"kind": "manifest"})
        elif kind == "segment_req":
            self._start_transfer(packet.tags["segment"], packet.tags["rep"])
        elif kind == "ack":
            self._on_ack(packet.tags["segment"], packet.tags["seq"])
        elif kind == "rerequest":
            self._resend(packet.tags["segment"], packet.tags["missing"])

    def _start_transfer(self, segment: int, rep_id: str):
        if segment >= self.asset.segment_count:
            raise ValueError(f"segment index {segment} out of range "
                             f"(asset has {self.asset.segment_count})")
        rep = next(r for r in self.manifest.representations if r.rep_id == rep_id)
        size = self.manifest.sizes[(rep_id, segment)]
        payloads = packetize(size, self.factory.mtu - HEADER_BYTES)
        transfer = _SegmentTransfer(segment, rep, payloads)
        self.transfers[segment] = transfer
        self._fill_window(transfer)

    def _fill_window(self, transfer: _SegmentTransfer):
        size = self.manifest.sizes[(transfer.rep.rep_id, transfer.segment)]
        while (transfer.next_unsent < len(transfer.payloads)
               and len(transfer.unacked) < self.window):
            seq = transfer.next_unsent
            transfer.next_unsent += 1
            transfer.unacked.add(seq)
            self.send(self.node, self.flow_id, transfer.payloads[seq],
                      tags={"kind": "data", "segment": transfer.segment, "seq": seq,
                            "unit_bytes": size, "rep": transfer.rep.rep_id,
                            "quality": transfer.rep.quality_id})

    def _on_ack(self, segment: int, seq: int):
        transfer = self.transfers.get(segment)
        if transfer is None:
            return
        transfer.unacked.discard(seq)
        self._fill_window(transfer)

    def _resend(self, segment: int, missing):
        transfer = self.transfers.get(segment)
        if transfer is None:
            return
        size = self.manifest.sizes[(transfer.rep.rep_id, transfer.segment)]
        for seq in missing[:self.window]:
            self.send(self.node, self.flow_id, transfer.payloads[seq],
                      tags={"kind": "data", "segment": segment, "seq": seq,
                            "unit_bytes": size, "rep": transfer.rep.rep_id,
                            "quality": transfer.rep.quality_id},
                      retransmission=True)


class DashClient(_Endpoint):
    """Requests segments sequentially, measuring throughput per transfer."""

    def __init__(self, kernel, plane, factory, events, node: int, media_flow: int,
                 control_flow: int, manifest: Manifest, asset: SegmentedAsset,
                 abr, transport, playout: PlayoutBuffer, start_ns: int):
        super().__init__(kernel, plane, factory, events)
        self.node = node
        self.media_flow = media_flow
        self.control_flow = control_flow
        self.manifest = manifest
        self.asset = asset
        self.abr = abr
        self.rto_ns = s_to_ns(transport.rto)
        self.mtu_payload = transport.mtu_payload
        self.playout = playout
        self.estimator = ThroughputEstimator(abr.ewma_alpha)
        self.state = "await_manifest"
        self.segment = -1
        self.current_rep: Representation | None = None
        self.request_ns = 0
        self.last_activity_ns = 0
        self.expected_seqs = 0
        self.received_seqs: set[int] = set()
        self.request_log: list[tuple[int, int, str]] = []  # (time ns, segment, rep)
        self._rto_armed = False
        kernel.schedule(start_ns, self._request_manifest, target="dash", action="manifest")

    # -- client-side protocol steps ------------------------------------------

    def _request_manifest(self):
        now = self.kernel.now_ns
        self.events.log(now, "manifest_request", "")
        self.send(self.node, self.control_flow, CONTROL_PAYLOAD,
                  tags={"kind": "manifest_req"})
        self.request_ns = now
        self.last_activity_ns = now
        self._arm_rto()

    def _arm_rto(self):
        if not self._rto_armed:
            self._rto_armed = True
            self.kernel.schedule(self.kernel.now_ns + self.rto_ns, self._check_timeout,
                                 target="dash", action="rto")

    def on_deliver(self, packet: Packet, now_ns: int):
        kind = packet.tags["kind"]
        if kind == "manifest":
            if self.state == "await_manifest":
                self.state = "transferring"
                self._request_next_segment()
        elif kind == "data":
            self._on_data(packet, now_ns)

    def _request_next_segment(self):
        now = self.kernel.now_ns
        self.segment += 1
        if self.segment >= self.asset.segment_count:
            self.state = "done"
            self.events.log(now, "done", f"segments={self.asset.segment_count}")
            return
        if self.estimator.primed:
            rep = select_representation(self.estimator.estimate,
                                        self.manifest.representations,
                                        self.abr.safety_factor)
        else:
            rep = self.manifest.representations[0]  # cold start: lowest quality
        if self.current_rep is not None and rep.rep_id != self.current_rep.rep_id:
            self.events.log(now, "representation_switch",
                            f"{self.current_rep.rep_id}->{rep.rep_id}")
        self.current_rep = rep
        size = self.manifest.sizes[(rep.rep_id, self.segment)]
        self.expected_seqs = len(packetize(size, self.mtu_payload))
        self.received_seqs = set()
        self.request_ns = now
        self.last_activity_ns = now
        self.request_log.append((now, self.segment, rep.rep_id))
        self.events.log(now, "segment_request", f"segment={self.segment} rep={rep.rep_id}")
        self.send(self.node, self.control_flow, CONTROL_PAYLOAD,
                  tags={"kind": "segment_req", "segment": self.segment,
                        "rep": rep.rep_id})
        self._arm_rto()

    def _on_data(self, packet: Packet, now_ns: int):
        segment = packet.tags["segment"]
        seq = packet.tags["seq"]
        self.send(self.node, self.control_flow, CONTROL_PAYLOAD,
                  tags={"kind": "ack", "segment": segment, "seq": seq})
        if segment != self.segment or seq in self.received_seqs:
            return
        self.received_seqs.add(seq)
        self.last_activity_ns = now_ns
        if len(self.received_seqs) == self.expected_seqs:
            self._segment_complete(now_ns)

    def _segment_complete(self, now_ns: int):
        rep = self.current_rep
        size = self.manifest.sizes[(rep.rep_id, self.segment)]
        elapsed = (now_ns - self.request_ns) / NS_PER_S
        sample = size * 8 / elapsed
        estimate = self.estimator.update(sample)
        self.events.log(now_ns, "segment_complete",
                        f"segment={self.segment} sample={sample:.0f} "
                        f"estimate={estimate:.0f}")
        per_segment = self.asset.frames_per_segment
        first = self.segment * per_segment
        self.playout.on_frames_available(first, first + per_segment - 1, now_ns,
                                         rep.quality_id)
        self._request_next_segment()

    def _check_timeout(self):
        self._rto_armed = False
        if self.state == "done":
            return
        if (self.state == "transferring" and self.segment >= 0
                and len(self.received_seqs) == self.expected_seqs):
            return
        now = self.kernel.now_ns
        if now - self.last_activity_ns >= self.rto_ns:
            if self.state == "await_manifest" or self.segment < 0:
                self.events.log(now, "re_request", "manifest")
                self.send(self.node, self.control_flow, CONTROL_PAYLOAD,
                          tags={"kind": "manifest_req"})
            else:
                missing = sorted(set(range(self.expected_seqs)) - self.received_seqs)
                self.events.log(now, "re_request",
                                f"segment={self.segment} missing={len(missing)}")
                self.send(self.node, self.control_flow, CONTROL_PAYLOAD,
                          tags={"kind": "rerequest", "segment": self.segment,
                                "missing": tuple(missing)})
            self.last_activity_ns = now
        self._arm_rto()
