"""Centralized control plane.

Routes are computed once at scenario start (minimum hop count, ties broken
by the lexicographically smallest node sequence) and installed as static
bidirectional flow rules on every switch along the path. There is no
reactive table-miss handling: a miss drops the packet and logs it.
"""

from collections import deque

from .model import FlowRule, Topology, link_id


class RoutingError(ValueError):
    pass


def bfs_distances(topology: Topology, origin: int) -> dict[int, int]:
    """Hop counts from origin to every reachable node (plain BFS)."""
    dist = {origin: 0}
    q = deque([origin])
    adj = _adjacency(topology)
    while q:
        u = q.popleft()
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def _adjacency(topology: Topology) -> dict[int, list[int]]:
    adj: dict[int, list[int]] = {n: [] for n in topology.nodes}
    for l in topology.links:
        adj[l.a].append(l.b)
        adj[l.b].append(l.a)
    for n in adj:
        adj[n].sort()
    return adj


def compute_route(topology: Topology, src: int, dst: int) -> list[int]:
    """Minimum-hop path from src to dst; deterministic tie-break.

    Among all shortest paths the lexicographically smallest node sequence is
    returned, obtained by walking greedily toward dst over a BFS distance
    field, always picking the smallest qualifying neighbor.
    """
    if src not in topology.nodes:
        raise RoutingError(f"unknown source node {src}")
    if dst not in topology.nodes:
        raise RoutingError(f"unknown destination node {dst}")
    if src == dst:
        return [src]
    dist_to_dst = bfs_distances(topology, dst)
    if src not in dist_to_dst:
        raise RoutingError(f"no path between {src} and {dst}")
    adj = _adjacency(topology)
    path = [src]
    node = src
    while node != dst:
        remaining = dist_to_dst[node]
        # Neighbors are sorted, so the first one strictly closer to dst wins.
        for nb in adj[node]:
            if dist_to_dst.get(nb, -1) == remaining - 1:
                node = nb
                break
        path.append(node)
    return path


class RouteTable:
    """Installed paths and the per-switch flow rules realizing them."""

    def __init__(self, topology: Topology):
        self.topology = topology
        self.paths: dict[tuple[int, int], list[int]] = {}
        self.rules: dict[tuple[int, int], FlowRule] = {}  # (switch, flow) -> rule

    def lookup(self, switch: int, flow_id: int) -> FlowRule | None:
        return self.rules.get((switch, flow_id))

    def install_bidirectional_rules(self, path: list[int], flow_id_forward: int,
                                    flow_id_reverse: int) -> list[FlowRule]:
        """One rule per direction at each switch that has a next hop.

        Re-installation replaces identical keys, so installing the same path
        twice leaves the rule count unchanged.
        """
        installed = []
        for i in range(len(path) - 1):
            a, b = path[i], path[i + 1]
            if self.topology.link_between(a, b) is None:
                raise RoutingError(f"path references nonexistent link {link_id(a, b)}")
            egress = link_id(a, b)
            installed.append(FlowRule(a, flow_id_forward, egress))
            installed.append(FlowRule(b, flow_id_reverse, egress))
        for rule in installed:
            self.rules[(rule.switch, rule.flow_id)] = rule
        if len(path) >= 2:
            self.paths[(path[0], path[-1])] = list(path)
        return installed

    def dump_rules(self) -> str:
        """CSV rule dump: ``switch,flow_id,egress_link``."""
        lines = ["switch,flow_id,egress_link"]
        for (switch, flow_id), rule in sorted(self.rules.items()):
            lines.append(f"{switch},{flow_id},{rule.egress}")
        return "\n".join(lines)
