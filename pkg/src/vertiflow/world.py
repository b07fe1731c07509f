"""Ground network: unit-grid road lattice, shortest paths, and the speed-density law."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Set, Tuple

Node = Tuple[int, int]


@dataclass(frozen=True)
class Point:
    """A location on the map, in km."""

    x: float
    y: float


def euclidean_km(a: Point, b: Point) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


@dataclass
class GroundNetwork:
    """4-neighbor lattice over [0, extent_km]^2 with cell_km spacing.

    Nodes are integer (i, j) pairs; node (i, j) sits at (i * cell_km, j * cell_km).
    """

    extent_km: float
    cell_km: float
    side: int
    blocked: Set[Node] = field(default_factory=set)

    def in_bounds(self, node: Node) -> bool:
        i, j = node
        return 0 <= i <= self.side and 0 <= j <= self.side

    def passable(self, node: Node) -> bool:
        return self.in_bounds(node) and node not in self.blocked

    def neighbors(self, node: Node) -> List[Node]:
        i, j = node
        out = []
        for ni, nj in ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)):
            if self.passable((ni, nj)):
                out.append((ni, nj))
        return out

    def node_point(self, node: Node) -> Point:
        return Point(node[0] * self.cell_km, node[1] * self.cell_km)

    def nodes(self) -> Iterable[Node]:
        for i in range(self.side + 1):
            for j in range(self.side + 1):
                node = (i, j)
                if node not in self.blocked:
                    yield node


def build_grid_network(extent_km: float, cell_km: float,
                       blocked: Optional[Iterable[Node]] = None) -> GroundNetwork:
    """Build the road lattice, validating geometry and connectivity."""
    if cell_km <= 0:
        raise ValueError(f"cell_km must be positive, got {cell_km}")
    if extent_km <= 0:
        raise ValueError(f"extent_km must be positive, got {extent_km}")
    side = round(extent_km / cell_km)
    if abs(side * cell_km - extent_km) > 1e-9:
        raise ValueError(f"extent_km {extent_km} is not a multiple of cell_km {cell_km}")
    blocked_set: Set[Node] = set(tuple(b) for b in blocked) if blocked else set()
    net = GroundNetwork(extent_km=extent_km, cell_km=cell_km, side=side, blocked=blocked_set)
    for node in blocked_set:
        if not net.in_bounds(node):
            raise ValueError(f"blocked cell {node} is outside the grid")
    _check_connected(net)
    return net


def _check_connected(net: GroundNetwork) -> None:
    start = next(iter(net.nodes()), None)
    if start is None:
        raise ValueError("grid has no passable nodes")
    seen = {start}
    stack = [start]
    while stack:
        for nb in net.neighbors(stack.pop()):
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    total = (net.side + 1) ** 2 - len(net.blocked)
    if len(seen) != total:
        raise ValueError("blocked cells disconnect the grid")


def snap_to_node(net: GroundNetwork, p: Point) -> Node:
    """Nearest passable node; ties broken lexicographically."""
    if not net.blocked:
        # ceil(x - 0.5) rounds halves down, matching the lexicographic tie rule.
        i = min(max(math.ceil(p.x / net.cell_km - 0.5), 0), net.side)
        j = min(max(math.ceil(p.y / net.cell_km - 0.5), 0), net.side)
        return (i, j)
    best: Optional[Node] = None
    best_d = float("inf")
    # Search outward from the rounded cell rather than scanning the whole lattice.
    ci = min(max(round(p.x / net.cell_km), 0), net.side)
    cj = min(max(round(p.y / net.cell_km), 0), net.side)
    for radius in range(net.side + 2):
        lo_i, hi_i = ci - radius, ci + radius
        lo_j, hi_j = cj - radius, cj + radius
        ring = []
        for i in range(lo_i, hi_i + 1):
            for j in range(lo_j, hi_j + 1):
                if max(abs(i - ci), abs(j - cj)) == radius:
                    ring.append((i, j))
        for node in sorted(ring):
            if not net.passable(node):
                continue
            d = euclidean_km(net.node_point(node), p)
            if d < best_d - 1e-12:
                best_d = d
                best = node
        if best is not None and best_d <= radius * net.cell_km:
            return best
    if best is None:
        raise ValueError("no passable node to snap to")
    return best


def shortest_ground_path(net: GroundNetwork, a: Node, b: Node) -> Tuple[float, List[Node]]:
    """A* with a euclidean heuristic. Returns (length_km, node path)."""
    for node in (a, b):
        if not net.passable(node):
            raise ValueError(f"node {node} is blocked or outside the grid")
    if a == b:
        return 0.0, [a]
    pb = net.node_point(b)

    def h(n: Node) -> float:
        return euclidean_km(net.node_point(n), pb)

    dist: Dict[Node, float] = {a: 0.0}
    parent: Dict[Node, Node] = {}
    # Heap entries carry the node id so equal f-scores pop in lexicographic order.
    frontier: List[Tuple[float, Node]] = [(h(a), a)]
    done: Set[Node] = set()
    while frontier:
        _, node = heapq.heappop(frontier)
        if node in done:
            continue
        if node == b:
            path = [node]
            while path[-1] != a:
                path.append(parent[path[-1]])
            path.reverse()
            return dist[b], path
        done.add(node)
        base = dist[node]
        for nb in net.neighbors(node):
            nd = base + net.cell_km
            if nd < dist.get(nb, float("inf")) - 1e-12:
                dist[nb] = nd
                parent[nb] = node
                heapq.heappush(frontier, (nd + h(nb), nb))
    raise ValueError(f"no path between {a} and {b}")


def distance_field(net: GroundNetwork, source: Node) -> Dict[Node, float]:
    """Shortest-path length from source to every passable node (uniform Dijkstra)."""
    if not net.passable(source):
        raise ValueError(f"node {source} is blocked or outside the grid")
    dist = {source: 0.0}
    frontier: List[Tuple[float, Node]] = [(0.0, source)]
    while frontier:
        d, node = heapq.heappop(frontier)
        if d > dist.get(node, float("inf")) + 1e-12:
            continue
        for nb in net.neighbors(node):
            nd = d + net.cell_km
            if nd < dist.get(nb, float("inf")) - 1e-12:
                dist[nb] = nd
                heapq.heappush(frontier, (nd, nb))
    return dist


def greenberg_speed(v_max_kmh: float, jam_density: float, density: float) -> float:
    """Greenberg speed-density law, clamped to [0, v_max]."""
    if density <= 0:
        raise ValueError(f"density must be positive, got {density}")
    if v_max_kmh <= 0 or jam_density <= 0:
        raise ValueError("v_max_kmh and jam_density must be positive")
    v = v_max_kmh * math.log(jam_density / density)
    return min(max(v, 0.0), v_max_kmh)


def corridor_density(base_density: float, load_per_passenger: float,
                     en_route: int, jam_density: float) -> float:
    """Traffic density on a corridor carrying `en_route` passengers, capped at jam."""
    if en_route < 0:
        raise ValueError(f"en_route must be non-negative, got {en_route}")
    return min(base_density + load_per_passenger * en_route, jam_density)


def ground_travel_time_min(length_km: float, speed_kmh: float) -> float:
    """Minutes to cover length_km at a frozen average speed."""
    if speed_kmh <= 0:
        raise ValueError("gridlock: ground speed is zero")
    if length_km < 0:
        raise ValueError(f"length_km must be non-negative, got {length_km}")
    return 60.0 * length_km / speed_kmh
