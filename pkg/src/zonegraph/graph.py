"""Offline knowledge-graph construction.

A scene graph is built in three stages: sweep every reachable position
through all 24 views and average the detected goal-object embeddings,
cluster the position features into zones with k-means, then compute zone
nodes (member means) and zone-adjacency edge probabilities. Graphs from
different rooms of one category are aligned with an optimal assignment on
node cosine similarity and merged by averaging.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .embedding import EmbeddingProvider
from .errors import FormatError, UsageError
from .sim import CELL, PITCHES, YAWS, Pose, Scene, visible_objects
from .categories import GOAL_SET

log = logging.getLogger(__name__)

DEFAULT_ZONES = 8
DEFAULT_EPS = 0.5  # meters; Manhattan adjacency threshold (one grid step)
_ADJ_TOL = 1e-9
_KMEANS_MAX_ITER = 100
_KMEANS_TOL = 1e-6
_SEED_MASK = (1 << 64) - 1


@dataclass
class PositionFeatureMap:
    """Per-position mean detection embedding from the exhaustive sweep."""

    positions: tuple[tuple[float, float], ...]  # sorted (x, z)
    features: np.ndarray  # (S, D)
    counts: np.ndarray  # (S,) detection counts

    def index_of(self, pos: tuple[float, float]) -> int:
        return self.positions.index(pos)


@dataclass
class ZoneAssignment:
    assignment: dict[tuple[float, float], int]  # position -> zone id
    centers: np.ndarray  # (M, D) member means
    zone_count: int
    requested: int


@dataclass
class KnowledgeGraph:
    nodes: np.ndarray  # (M, N)
    edges: np.ndarray  # (M, M), symmetric, diagonal 1, entries in [0, 1]
    room_category: str

    @property
    def zone_count(self) -> int:
        return self.nodes.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.nodes.shape[1]


def sweep_position_features(scene: Scene, provider: EmbeddingProvider) -> PositionFeatureMap:
    """Enumerate all 8 yaw x 3 pitch views at every reachable position and
    average the embeddings of the goal-category detections."""
    positions = sorted((ix * CELL, iz * CELL) for ix, iz in scene.reachable_cells())
    features = np.zeros((len(positions), provider.dim))
    counts = np.zeros(len(positions), dtype=int)
    for i, (x, z) in enumerate(positions):
        total = np.zeros(provider.dim)
        n = 0
        for yaw in YAWS:
            for pitch in PITCHES:
                obs = visible_objects(scene, Pose(x, z, yaw, pitch))
                for s in obs.visible:
                    if s.category in GOAL_SET:
                        total += provider.object_embedding(s.category)
                        n += 1
        if n:
            features[i] = total / n
        counts[i] = n
    return PositionFeatureMap(tuple(positions), features, counts)


def _kmeans_pp_init(x: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding. Stops early when every point coincides with a
    chosen center, so the center count never exceeds the number of distinct
    feature values."""
    centers = [x[int(rng.integers(len(x)))]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    while len(centers) < m:
        total = d2.sum()
        if total <= 0:
            break
        idx = int(rng.choice(len(x), p=d2 / total))
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - centers[-1]) ** 2, axis=1))
    return np.array(centers)


def _nearest(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # argmin returns the first (lowest id) center on exact ties
    d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return np.argmin(d2, axis=1)


def cluster_zones(feature_map: PositionFeatureMap, zones: int, seed: int) -> ZoneAssignment:
    """Deterministic k-means with k-means++ seeding. Clusters that lose all
    members are dropped, shrinking the effective zone count."""
    if len(feature_map.positions) == 0:
        raise UsageError("cannot cluster an empty feature map")
    if zones < 1:
        raise UsageError("zone count must be >= 1")
    x = feature_map.features
    rng = np.random.default_rng(seed & _SEED_MASK)
    centers = _kmeans_pp_init(x, zones, rng)
    if len(centers) < zones:
        log.info("k-means++ produced %d centers for requested %d (duplicate features)",
                 len(centers), zones)

    labels = _nearest(x, centers)
    for _ in range(_KMEANS_MAX_ITER):
        labels = _nearest(x, centers)
        keep = [k for k in range(len(centers)) if np.any(labels == k)]
        if len(keep) < len(centers):
            log.info("dropping %d empty cluster(s)", len(centers) - len(keep))
            new_centers = np.array([x[labels == k].mean(axis=0) for k in keep])
            relabel = {old: new for new, old in enumerate(keep)}
            labels = np.array([relabel[int(l)] for l in labels])
            centers = new_centers
            continue
        new_centers = np.array([x[labels == k].mean(axis=0) for k in range(len(centers))])
        movement = float(np.max(np.linalg.norm(new_centers - centers, axis=1)))
        centers = new_centers
        if movement < _KMEANS_TOL:
            break
    # centers are exactly the member means of `labels` at this point
    assignment = {pos: int(labels[i]) for i, pos in enumerate(feature_map.positions)}
    return ZoneAssignment(assignment, centers, len(centers), zones)


def build_room_graph(assignment: ZoneAssignment, feature_map: PositionFeatureMap,
                     eps: float = DEFAULT_EPS, room_category: str = "") -> KnowledgeGraph:
    """Zone node = mean member feature; edge (m, n) = fraction of cross-zone
    position pairs within Manhattan distance eps; diagonal fixed at 1."""
    m = assignment.zone_count
    members: list[list[int]] = [[] for _ in range(m)]
    for i, pos in enumerate(feature_map.positions):
        members[assignment.assignment[pos]].append(i)
    if any(not mem for mem in members):
        raise UsageError("assignment has empty zones")
    nodes = np.array([feature_map.features[mem].mean(axis=0) for mem in members])
    edges = np.eye(m)
    pos = feature_map.positions
    for a in range(m):
        for b in range(a + 1, m):
            hits = 0
            for i in members[a]:
                for j in members[b]:
                    d = abs(pos[i][0] - pos[j][0]) + abs(pos[i][1] - pos[j][1])
                    if d <= eps + _ADJ_TOL:
                        hits += 1
            e = hits / (len(members[a]) * len(members[b]))
            edges[a, b] = edges[b, a] = e
    return KnowledgeGraph(nodes=nodes, edges=edges, room_category=room_category)


def build_scene_graph(scene: Scene, provider: EmbeddingProvider, zones: int = DEFAULT_ZONES,
                      eps: float = DEFAULT_EPS, seed: int = 0) -> KnowledgeGraph:
    """Full sweep -> cluster -> graph pipeline for one scene."""
    fmap = sweep_position_features(scene, provider)
    za = cluster_zones(fmap, zones, seed)
    return build_room_graph(za, fmap, eps=eps, room_category=scene.room_category)


def _cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = np.outer(na, nb)
    sim = a @ b.T
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(denom > 1e-12, sim / np.where(denom > 1e-12, denom, 1.0), 0.0)
    return sim


def match_graphs(ga: KnowledgeGraph, gb: KnowledgeGraph) -> np.ndarray:
    """Permutation pi maximizing sum_m cos(nodes_a[m], nodes_b[pi[m]]).
    Exact ties against the identity resolve to the identity."""
    if ga.zone_count != gb.zone_count:
        raise UsageError(f"zone counts differ: {ga.zone_count} vs {gb.zone_count}")
    sim = _cosine_matrix(ga.nodes, gb.nodes)
    rows, cols = linear_sum_assignment(sim, maximize=True)
    perm = np.empty(ga.zone_count, dtype=int)
    perm[rows] = cols
    best = float(sum(sim[m, perm[m]] for m in range(ga.zone_count)))
    ident = float(sum(sim[m, m] for m in range(ga.zone_count)))
    if ident >= best - 1e-12:
        return np.arange(ga.zone_count)
    return perm


def matching_objective(ga: KnowledgeGraph, gb: KnowledgeGraph, perm: np.ndarray) -> float:
    sim = _cosine_matrix(ga.nodes, gb.nodes)
    return float(sum(sim[m, perm[m]] for m in range(ga.zone_count)))


def merge_graphs(graphs: list[KnowledgeGraph]) -> KnowledgeGraph:
    """Align every graph to the first and average nodes and edges."""
    if not graphs:
        raise UsageError("merge_graphs needs at least one graph")
    rooms = {g.room_category for g in graphs}
    if len(rooms) > 1:
        raise UsageError(f"cannot merge graphs of mixed room categories: {sorted(rooms)}")
    base = graphs[0]
    nodes = base.nodes.copy()
    edges = base.edges.copy()
    for g in graphs[1:]:
        perm = match_graphs(base, g)
        nodes += g.nodes[perm]
        edges += g.edges[np.ix_(perm, perm)]
    n = len(graphs)
    return KnowledgeGraph(nodes / n, edges / n, base.room_category)


# ---------------------------------------------------------------------------
# Graph file format (kg-v1)


def graph_to_text(graph: KnowledgeGraph) -> str:
    m, n = graph.nodes.shape
    lines = [f"kg-v1 M={m} N={n} room={graph.room_category}"]
    for row in graph.nodes:
        lines.append(" ".join(repr(float(v)) for v in row))
    for row in graph.edges:
        lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def graph_from_text(text: str) -> KnowledgeGraph:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("kg-v1 "):
        raise FormatError("line 1: not a kg-v1 file")
    fields = dict(part.split("=", 1) for part in lines[0].split()[1:] if "=" in part)
    try:
        m, n = int(fields["M"]), int(fields["N"])
        room = fields["room"]
    except (KeyError, ValueError):
        raise FormatError("line 1: header must carry M=<int> N=<int> room=<cat>") from None
    if len(lines) < 1 + 2 * m:
        raise FormatError(f"expected {2 * m} matrix rows, file has {len(lines) - 1}")

    def parse_row(i: int, width: int) -> np.ndarray:
        parts = lines[i].split()
        if len(parts) != width:
            raise FormatError(f"line {i + 1}: expected {width} floats, got {len(parts)}")
        try:
            return np.array([float(p) for p in parts])
        except ValueError:
            raise FormatError(f"line {i + 1}: unparsable float") from None

    nodes = np.array([parse_row(1 + i, n) for i in range(m)]) if m else np.zeros((0, n))
    edges = np.array([parse_row(1 + m + i, m) for i in range(m)]) if m else np.zeros((0, 0))
    if m and (not np.allclose(edges, edges.T) or not np.allclose(np.diag(edges), 1.0)
              or edges.min() < -1e-12 or edges.max() > 1.0 + 1e-12):
        raise FormatError("edge matrix violates symmetry / diagonal / [0,1] bounds")
    if not np.all(np.isfinite(nodes)):
        raise FormatError("node matrix has non-finite entries")
    return KnowledgeGraph(nodes, edges, room)


def save_graph(graph: KnowledgeGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(graph_to_text(graph))


def load_graph(path) -> KnowledgeGraph:
    with open(path, "r", encoding="utf-8") as fh:
        return graph_from_text(fh.read())
