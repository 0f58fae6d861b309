"""Floor-plan graphs: metric location coordinates, adjacency, the 4-view graph,
model-side normalization constants, seen/unseen splitting, and error distances.

File formats (line-oriented text, '#' comments):
  floor plan:  header `floorplan v1 <k> <num_edges>`, then `node <id> <x> <y>`
               lines (meters) and `edge <a> <b>` lines.
  split:       `seen <id>` / `unseen <id>`, one line per location.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np


class FloorPlanError(ValueError):
    """Malformed plan or split input."""


@dataclass(frozen=True)
class FloorPlan:
    """Location graph: dense ids 0..k-1, coordinates in meters, undirected edges.

    `id_map` records original-file id -> dense id when the input was sparse.
    """

    coords: np.ndarray                      # (k, 2) float64
    edges: tuple                            # sorted (a, b) pairs with a < b
    id_map: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.coords.shape[0]

    @property
    def neighbors(self):
        adj = [[] for _ in range(self.k)]
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        return [sorted(n) for n in adj]

    def degree(self, i: int) -> int:
        return len(self.neighbors[i])

    def has_edge(self, i: int, j: int) -> bool:
        a, b = min(i, j), max(i, j)
        return (a, b) in set(self.edges)

    def is_connected(self) -> bool:
        if self.k == 0:
            return True
        seen = {0}
        queue = deque([0])
        adj = self.neighbors
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return len(seen) == self.k


@dataclass(frozen=True)
class ViewGraph:
    """The quadrilateral graph over the four view directions.

    Nodes 0..3 are front, behind, right, left; edges form the 4-cycle, each
    undirected edge realized as two directed ones. With `self_loops` every
    node additionally neighbors itself.
    """

    self_loops: bool = True

    n_nodes = 4
    cycle = ((0, 1), (1, 2), (2, 3), (3, 0))

    def neighbors_of(self, i: int):
        nbrs = [(i - 1) % 4, (i + 1) % 4]
        if self.self_loops:
            nbrs.append(i)
        return sorted(nbrs)

    def degree(self, i: int) -> int:
        return 3 if self.self_loops else 2

    def has_edge(self, i: int, j: int) -> bool:
        return j in self.neighbors_of(i)

    def normalized_adjacency(self) -> np.ndarray:
        """Dense 4x4 matrix with entries 1/sqrt(|N(i)||N(j)|) on edges."""
        a = np.zeros((4, 4))
        for i in range(4):
            for j in self.neighbors_of(i):
                a[i, j] = 1.0 / gcn_norm(self, i, j)
        return a


def gcn_norm(graph, i: int, j: int) -> float:
    """Normalization constant sqrt(|N(i)| * |N(j)|) for edge (i, j).

    Works on FloorPlan and ViewGraph alike; neighbor counts honor the view
    graph's self-loop flag.
    """
    if not graph.has_edge(i, j):
        raise FloorPlanError(f"({i}, {j}) is not an edge")
    return math.sqrt(graph.degree(i) * graph.degree(j))


def plan_normalized_adjacency(plan: FloorPlan, self_loops: bool = True) -> np.ndarray:
    """Dense k x k symmetric-normalized adjacency for plan-level message passing."""
    k = plan.k
    a = np.zeros((k, k))
    for i, j in plan.edges:
        a[i, j] = 1.0
        a[j, i] = 1.0
    if self_loops:
        a += np.eye(k)
    deg = a.sum(axis=1)
    deg[deg == 0] = 1.0
    inv_sqrt = 1.0 / np.sqrt(deg)
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


@dataclass(frozen=True)
class Split:
    """Disjoint seen/unseen location partition."""

    seen: frozenset
    unseen: frozenset

    def __post_init__(self):
        if self.seen & self.unseen:
            raise FloorPlanError("seen and unseen overlap")

    def validate_for(self, plan: FloorPlan) -> None:
        if self.seen | self.unseen != set(range(plan.k)):
            raise FloorPlanError("split does not cover all plan locations")


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _content_lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line


def load_floorplan(path) -> FloorPlan:
    """Parse and validate a floor-plan file.

    Sparse ids are remapped (ascending) to the dense range 0..k-1; the
    original-to-dense mapping is kept on the returned plan.
    """
    lines = list(_content_lines(path))
    if not lines:
        raise FloorPlanError(f"{path}: empty plan file")
    lineno, header = lines[0]
    parts = header.split()
    if len(parts) != 4 or parts[0] != "floorplan" or parts[1] != "v1":
        raise FloorPlanError(f"{path}:{lineno}: bad header {header!r}")
    try:
        k_decl, m_decl = int(parts[2]), int(parts[3])
    except ValueError:
        raise FloorPlanError(f"{path}:{lineno}: non-integer counts in header") from None

    nodes: dict[int, tuple[float, float]] = {}
    raw_edges: list[tuple[int, int, int]] = []
    for lineno, line in lines[1:]:
        parts = line.split()
        if parts[0] == "node":
            if len(parts) != 4:
                raise FloorPlanError(f"{path}:{lineno}: malformed node line")
            try:
                nid, x, y = int(parts[1]), float(parts[2]), float(parts[3])
            except ValueError:
                raise FloorPlanError(f"{path}:{lineno}: bad node values") from None
            if nid < 0:
                raise FloorPlanError(f"{path}:{lineno}: negative node id")
            if nid in nodes:
                raise FloorPlanError(f"{path}:{lineno}: duplicate node id {nid}")
            nodes[nid] = (x, y)
        elif parts[0] == "edge":
            if len(parts) != 3:
                raise FloorPlanError(f"{path}:{lineno}: malformed edge line")
            try:
                a, b = int(parts[1]), int(parts[2])
            except ValueError:
                raise FloorPlanError(f"{path}:{lineno}: bad edge values") from None
            raw_edges.append((lineno, a, b))
        else:
            raise FloorPlanError(f"{path}:{lineno}: unknown directive {parts[0]!r}")

    if len(nodes) != k_decl:
        raise FloorPlanError(f"{path}: header declares {k_decl} nodes, found {len(nodes)}")
    if len(raw_edges) != m_decl:
        raise FloorPlanError(f"{path}: header declares {m_decl} edges, found {len(raw_edges)}")

    id_map = {orig: dense for dense, orig in enumerate(sorted(nodes))}
    coords = np.zeros((len(nodes), 2))
    for orig, (x, y) in nodes.items():
        coords[id_map[orig]] = (x, y)

    edges = set()
    for lineno, a, b in raw_edges:
        for nid in (a, b):
            if nid not in id_map:
                raise FloorPlanError(f"{path}:{lineno}: edge references unknown id {nid}")
        da, db = id_map[a], id_map[b]
        if da == db:
            raise FloorPlanError(f"{path}:{lineno}: self-edge on id {a}")
        key = (min(da, db), max(da, db))
        if key in edges:
            raise FloorPlanError(f"{path}:{lineno}: duplicate edge ({a}, {b})")
        edges.add(key)

    plan = FloorPlan(coords=coords, edges=tuple(sorted(edges)), id_map=id_map)
    if not plan.is_connected():
        warnings.warn(f"{path}: floor plan is not connected", stacklevel=2)
    return plan


def save_floorplan(path, plan: FloorPlan) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"floorplan v1 {plan.k} {len(plan.edges)}\n")
        for i in range(plan.k):
            fh.write(f"node {i} {float(plan.coords[i, 0])!r} {float(plan.coords[i, 1])!r}\n")
        for a, b in plan.edges:
            fh.write(f"edge {a} {b}\n")


def load_split(path, plan: FloorPlan | None = None) -> Split:
    seen, unseen = set(), set()
    for lineno, line in _content_lines(path):
        parts = line.split()
        if len(parts) != 2 or parts[0] not in ("seen", "unseen"):
            raise FloorPlanError(f"{path}:{lineno}: expected 'seen <id>' or 'unseen <id>'")
        try:
            nid = int(parts[1])
        except ValueError:
            raise FloorPlanError(f"{path}:{lineno}: bad id") from None
        (seen if parts[0] == "seen" else unseen).add(nid)
    split = Split(frozenset(seen), frozenset(unseen))
    if plan is not None:
        split.validate_for(plan)
    return split


def save_split(path, split: Split) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for nid in sorted(split.seen | split.unseen):
            side = "seen" if nid in split.seen else "unseen"
            fh.write(f"{side} {nid}\n")


# ---------------------------------------------------------------------------
# splitting and distances
# ---------------------------------------------------------------------------


def alternating_split(plan: FloorPlan, by_index: bool = False) -> Split:
    """Alternate seen/unseen across the map.

    Default: BFS from the lowest id, even depth -> seen, odd -> unseen; on
    parity conflicts (odd cycles) the first-visit depth wins. `by_index`
    falls back to plain id parity instead.
    """
    if by_index:
        seen = frozenset(i for i in range(plan.k) if i % 2 == 0)
        return Split(seen, frozenset(range(plan.k)) - seen)
    depth = [-1] * plan.k
    adj = plan.neighbors
    for root in range(plan.k):
        if depth[root] >= 0:
            continue
        depth[root] = 0
        queue = deque([root])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if depth[v] < 0:
                    depth[v] = depth[u] + 1
                    queue.append(v)
    seen = frozenset(i for i in range(plan.k) if depth[i] % 2 == 0)
    return Split(seen, frozenset(range(plan.k)) - seen)


def error_distance(plan: FloorPlan, predicted: int, actual: int) -> float:
    """Euclidean distance in meters between two locations' coordinates."""
    if not (0 <= predicted < plan.k and 0 <= actual < plan.k):
        raise IndexError(f"location id out of range (k={plan.k})")
    return float(np.linalg.norm(plan.coords[predicted] - plan.coords[actual]))


def geodesic_distance_matrix(plan: FloorPlan) -> np.ndarray:
    """All-pairs shortest-path distances along plan edges (edge weight =
    Euclidean length). Config alternative to straight-line error distance."""
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import shortest_path

    k = plan.k
    w = np.zeros((k, k))
    for a, b in plan.edges:
        d = float(np.linalg.norm(plan.coords[a] - plan.coords[b]))
        w[a, b] = w[b, a] = d
    return shortest_path(csr_matrix(w), method="D", directed=False)


def distance_matrix(plan: FloorPlan, kind: str = "euclidean") -> np.ndarray:
    if kind == "euclidean":
        diff = plan.coords[:, None, :] - plan.coords[None, :, :]
        return np.sqrt((diff ** 2).sum(axis=2))
    if kind == "geodesic":
        return geodesic_distance_matrix(plan)
    raise ValueError(f"unknown distance kind {kind!r}")
