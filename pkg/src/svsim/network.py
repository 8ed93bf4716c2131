"""Packet forwarding plane.

Each topology link is full duplex: two directed channels share one capacity
value. A channel serializes one packet at a time from a bounded drop-tail
FIFO, then propagates it. Capacity changes never preempt the in-service
packet; only later packets see the new rate.
"""

import math
from collections import deque

from .kernel import Kernel, NS_PER_S
from .model import Link, Packet, Topology
from .controller import RouteTable


def transmission_time(size_bytes: int, capacity_bps: float) -> float:
    """Serialization delay in seconds: size x 8 / capacity."""
    if capacity_bps <= 0:
        raise ValueError(f"capacity must be positive, got {capacity_bps}")
    return size_bytes * 8 / capacity_bps


def _tx_ns(size_bytes: int, capacity_bps: float) -> int:
    return math.ceil(size_bytes * 8 * NS_PER_S / capacity_bps)


class LinkState:
    """Shared state of one undirected link: capacity plus two channels."""

    __slots__ = ("link", "capacity", "channels")

    def __init__(self, link: Link):
        self.link = link
        self.capacity = link.capacity
        self.channels = {}  # (src, dst) -> _Channel


class _Channel:
    __slots__ = ("state", "src", "dst", "queue", "in_service", "propagating",
                 "enqueued", "dropped", "delivered")

    def __init__(self, state: LinkState, src: int, dst: int):
        self.state = state
        self.src = src
        self.dst = dst
        self.queue: deque[Packet] = deque()
        self.in_service: Packet | None = None
        self.propagating: list[Packet] = []
        self.enqueued = 0
        self.dropped = 0
        self.delivered = 0

    @property
    def occupancy(self) -> int:
        return len(self.queue) + (1 if self.in_service else 0) + len(self.propagating)


class FlowSpec:
    __slots__ = ("flow_id", "src", "dst", "on_deliver")

    def __init__(self, flow_id: int, src: int, dst: int, on_deliver):
        self.flow_id = flow_id
        self.src = src
        self.dst = dst
        self.on_deliver = on_deliver  # called with (packet, now_ns) at dst


class NetworkPlane:
    """Forwarding fabric bound to one kernel instance."""

    def __init__(self, kernel: Kernel, topology: Topology, route_table: RouteTable,
                 mtu: int = 1500):
        self.kernel = kernel
        self.topology = topology
        self.route_table = route_table
        self.mtu = mtu
        self.links: dict[str, LinkState] = {}
        for link in topology.links:
            state = LinkState(link)
            state.channels[(link.a, link.b)] = _Channel(state, link.a, link.b)
            state.channels[(link.b, link.a)] = _Channel(state, link.b, link.a)
            self.links[link.id] = state
        self.flows: dict[int, FlowSpec] = {}
        # Delivery log rows: [packet, recv_ns | None, drop_site | None]
        self.delivery_log: list[list] = []
        self._log_index: dict[int, list] = {}
        self.table_misses: list[tuple[int, int, int]] = []  # (time_ns, node, packet_id)
        self.sent_per_flow: dict[int, int] = {}
        self.received_per_flow: dict[int, int] = {}
        self.dropped_per_flow: dict[int, int] = {}

    def register_flow(self, flow: FlowSpec):
        self.flows[flow.flow_id] = flow
        self.sent_per_flow.setdefault(flow.flow_id, 0)
        self.received_per_flow.setdefault(flow.flow_id, 0)
        self.dropped_per_flow.setdefault(flow.flow_id, 0)

    def schedule_bandwidth_events(self, schedules):
        for sch in schedules:
            for t, cap in sch.events:
                self.kernel.schedule_s(
                    t, lambda l=sch.link, c=cap: self.apply_bandwidth_event(l, c),
                    target="net", action=f"bw:{sch.link}")

    def apply_bandwidth_event(self, link_id: str, new_capacity: float):
        if link_id not in self.links:
            raise KeyError(f"unknown link {link_id!r}")
        if new_capacity <= 0:
            raise ValueError("capacity must be positive")
        self.links[link_id].capacity = new_capacity

    def forward(self, switch: int, packet: Packet) -> str | None:
        """Flow-rule lookup; None means table miss (caller drops)."""
        rule = self.route_table.lookup(switch, packet.flow_id)
        return rule.egress if rule else None

    def inject(self, node: int, packet: Packet):
        """Hand a freshly created packet to the forwarding plane at ``node``."""
        if packet.size > self.mtu:
            raise ValueError(f"packet size {packet.size} exceeds MTU {self.mtu}")
        row = [packet, None, None]
        self.delivery_log.append(row)
        self._log_index[packet.packet_id] = row
        self.sent_per_flow[packet.flow_id] = self.sent_per_flow.get(packet.flow_id, 0) + 1
        self._hop(node, packet)

    def _hop(self, node: int, packet: Packet):
        flow = self.flows.get(packet.flow_id)
        if flow is not None and node == flow.dst:
            now = self.kernel.now_ns
            self._log_index[packet.packet_id][1] = now
            self.received_per_flow[packet.flow_id] += 1
            flow.on_deliver(packet, now)
            return
        egress = self.forward(node, packet)
        if egress is None:
            self.table_misses.append((self.kernel.now_ns, node, packet.packet_id))
            self._drop(packet, f"miss:{node}")
            return
        state = self.links[egress]
        other = state.link.b if state.link.a == node else state.link.a
        self.enqueue_packet(state.channels[(node, other)], packet)

    def enqueue_packet(self, channel: _Channel, packet: Packet) -> str:
        """Drop-tail FIFO admission; returns 'accepted' or 'dropped'."""
        channel.enqueued += 1
        if len(channel.queue) >= channel.state.link.queue_capacity:
            channel.dropped += 1
            self._drop(packet, channel.state.link.id)
            return "dropped"
        channel.queue.append(packet)
        if channel.in_service is None:
            self._start_service(channel)
        return "accepted"

    def _drop(self, packet: Packet, site: str):
        row = self._log_index.get(packet.packet_id)
        if row is not None:
            row[2] = site
        self.dropped_per_flow[packet.flow_id] = \
            self.dropped_per_flow.get(packet.flow_id, 0) + 1

    def _start_service(self, channel: _Channel):
        packet = channel.queue.popleft()
        channel.in_service = packet
        tx = _tx_ns(packet.size, channel.state.capacity)
        self.kernel.schedule(self.kernel.now_ns + tx,
                             lambda: self._departure(channel),
                             target="net",
                             action=f"tx:{channel.state.link.id}")

    def _departure(self, channel: _Channel):
        packet = channel.in_service
        channel.in_service = None
        channel.propagating.append(packet)
        prop = round(channel.state.link.delay * NS_PER_S)
        self.kernel.schedule(self.kernel.now_ns + prop,
                             lambda: self._arrival(channel, packet),
                             target="net",
                             action=f"rx:{channel.state.link.id}")
        if channel.queue:
            self._start_service(channel)

    def _arrival(self, channel: _Channel, packet: Packet):
        channel.propagating.remove(packet)
        channel.delivered += 1
        self._hop(channel.dst, packet)

    # -- end-of-run accounting ------------------------------------------------

    def in_network_per_flow(self) -> dict[int, tuple[int, int]]:
        """(queued, in_flight) per flow at the instant of the call."""
        out: dict[int, tuple[int, int]] = {}
        for fid in self.flows:
            out[fid] = (0, 0)
        for state in self.links.values():
            for channel in state.channels.values():
                for pkt in channel.queue:
                    q, f = out.get(pkt.flow_id, (0, 0))
                    out[pkt.flow_id] = (q + 1, f)
                flying = list(channel.propagating)
                if channel.in_service is not None:
                    flying.append(channel.in_service)
                for pkt in flying:
                    q, f = out.get(pkt.flow_id, (0, 0))
                    out[pkt.flow_id] = (q, f + 1)
        return out

    def conservation_counts(self, flow_id: int) -> dict[str, int]:
        queued, flying = self.in_network_per_flow().get(flow_id, (0, 0))
        return {
            "sent": self.sent_per_flow.get(flow_id, 0),
            "received": self.received_per_flow.get(flow_id, 0),
            "dropped": self.dropped_per_flow.get(flow_id, 0),
            "queued": queued,
            "in_flight": flying,
        }

    def delivered_rows(self):
        """(packet, recv_ns) for every packet that reached its endpoint."""
        return [(row[0], row[1]) for row in self.delivery_log if row[1] is not None]
