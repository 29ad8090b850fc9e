"""Hierarchical navigable small-world graph for approximate k-NN.

A layered proximity graph over unit vectors with cosine distance
(1 - cosine similarity). Node levels are drawn as floor(-ln(u) * mL)
with mL = 1/ln(M) from a seeded RNG, so index construction is
reproducible. Neighbor selection uses the simple nearest-M heuristic;
the diversity-aware selection of the original algorithm is a documented
extension point. Deletion tombstones id_map entries instead of repairing
the graph.
"""

from __future__ import annotations

import heapq
import json
import math
import random
from dataclasses import dataclass

import numpy as np

INDEX_FORMAT_VERSION = 1

DEFAULT_M = 16
DEFAULT_EF_CONSTRUCTION = 200
DEFAULT_EF_SEARCH = 50


class HnswError(Exception):
    pass


class EmptyIndexError(HnswError):
    pass


class CorruptIndexError(HnswError):
    """Unreadable index file; ``offset`` is the failing byte position."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


@dataclass(frozen=True)
class NnHit:
    chunk_ref: str
    distance: float  # cosine distance in [0, 2]


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - cosine similarity, clamped to [0, 2]; similarity with a zero
    vector is 0."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 1.0
    return min(2.0, max(0.0, 1.0 - float(np.dot(a, b) / (na * nb))))


def brute_force_knn(vectors: dict[str, np.ndarray], query: np.ndarray,
                    k: int) -> list[NnHit]:
    """Exact k-NN by full scan: the reference semantics for HNSW search."""
    hits = [NnHit(chunk_ref=ref, distance=cosine_distance(query, vec))
            for ref, vec in vectors.items()]
    hits.sort(key=lambda h: (h.distance, h.chunk_ref))
    return hits[:k]


class HnswIndex:
    """Layered proximity graph with per-node degree caps.

    layers[l] maps node id -> neighbor id list; every node with level >= l
    appears in layers[l]. Neighbor lists are capped at M per layer (M0 at
    layer 0) and all edges reference live nodes. entry_point sits at the
    highest occupied layer.
    """

    def __init__(self, dim: int, M: int = DEFAULT_M,
                 ef_construction: int = DEFAULT_EF_CONSTRUCTION,
                 ef_search: int = DEFAULT_EF_SEARCH, seed: int = 0):
        if M < 2:
            raise ValueError("M must be at least 2")
        self.dim = dim
        self.M = M
        self.M0 = 2 * M
        self.ef_construction = ef_construction
        self.ef_search = ef_search
        self.mL = 1.0 / math.log(M)
        self.seed = seed
        self.layers: list[dict[int, list[int]]] = []
        self.entry_point: int | None = None
        self.vectors: dict[int, np.ndarray] = {}
        self.id_map: dict[int, str | None] = {}  # None marks a tombstone
        self._rng = random.Random(seed)

    def __len__(self) -> int:
        return len(self.vectors)

    @property
    def max_level(self) -> int:
        return len(self.layers) - 1

    def _distance(self, a: np.ndarray, b: np.ndarray) -> float:
        return cosine_distance(a, b)

    def _draw_level(self) -> int:
        u = 1.0 - self._rng.random()  # (0, 1]: avoids log(0)
        return int(math.floor(-math.log(u) * self.mL))

    def _search_layer(self, query: np.ndarray, entry_points: list[int],
                      layer: int, ef: int) -> list[tuple[float, int]]:
        """ef-bounded best-first search; returns (distance, id) ascending."""
        graph = self.layers[layer]
        visited = set(entry_points)
        candidates: list[tuple[float, int]] = []       # min-heap
        best: list[tuple[float, int]] = []             # max-heap via negation
        for ep in entry_points:
            d = self._distance(query, self.vectors[ep])
            heapq.heappush(candidates, (d, ep))
            heapq.heappush(best, (-d, ep))
        while candidates:
            dist, node = heapq.heappop(candidates)
            if dist > -best[0][0]:
                break  # nearest unexplored is farther than the worst kept
            for neighbor in graph[node]:
                if neighbor in visited:
                    continue
                visited.add(neighbor)
                d = self._distance(query, self.vectors[neighbor])
                if len(best) < ef or d < -best[0][0]:
                    heapq.heappush(candidates, (d, neighbor))
                    heapq.heappush(best, (-d, neighbor))
                    if len(best) > ef:
                        heapq.heappop(best)
        return sorted((-d, node) for d, node in best)

    def _cap(self, layer: int) -> int:
        return self.M0 if layer == 0 else self.M

    def insert(self, node_id: int, vector: np.ndarray,
               chunk_ref: str | None = None) -> None:
        """Insert a vector under a fresh id, wiring it into every layer up
        to its drawn level and pruning overfull neighbors back to the cap."""
        if node_id in self.vectors:
            raise HnswError(f"duplicate id: {node_id}")
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dim,):
            raise HnswError(
                f"dimension mismatch: got {vector.shape}, expected ({self.dim},)")

        level = self._draw_level()
        self.vectors[node_id] = vector
        self.id_map[node_id] = chunk_ref if chunk_ref is not None else str(node_id)

        if self.entry_point is None:
            for l in range(level + 1):
                self.layers.append({})
                self.layers[l][node_id] = []
            self.entry_point = node_id
            return

        # greedy descent through layers above the node's level
        current = [self.entry_point]
        for l in range(self.max_level, level, -1):
            current = [node for _, node in
                       self._search_layer(vector, current, l, ef=1)]

        # connect at each layer from min(level, max_level) down to 0
        for l in range(min(level, self.max_level), -1, -1):
            found = self._search_layer(vector, current, l,
                                       ef=self.ef_construction)
            neighbors = [node for _, node in found[:self._cap(l)]]
            self.layers[l][node_id] = list(neighbors)
            for neighbor in neighbors:
                nbrs = self.layers[l][neighbor]
                nbrs.append(node_id)
                if len(nbrs) > self._cap(l):
                    self._prune(neighbor, l)
            current = [node for _, node in found]

        # extend the hierarchy if the new node exceeds the top layer
        if level > self.max_level:
            for l in range(self.max_level + 1, level + 1):
                self.layers.append({node_id: []})
            self.entry_point = node_id

    def _prune(self, node_id: int, layer: int) -> None:
        """Keep only the nearest-cap neighbors of a node (simple heuristic)."""
        vec = self.vectors[node_id]
        nbrs = self.layers[layer][node_id]
        ranked = sorted((self._distance(vec, self.vectors[n]), n) for n in nbrs)
        self.layers[layer][node_id] = [n for _, n in ranked[:self._cap(layer)]]

    def search(self, query: np.ndarray, k: int,
               ef: int | None = None) -> list[NnHit]:
        """Approximate k nearest neighbors, sorted by (distance, chunk_ref).

        Tombstoned entries are filtered out; raise on an empty index.
        """
        if len(self) == 0:
            raise EmptyIndexError("cannot search an empty index")
        if k < 1:
            raise ValueError("k must be at least 1")
        ef = ef if ef is not None else self.ef_search
        if ef < k:
            raise ValueError(f"ef={ef} must be at least k={k}")
        query = np.asarray(query, dtype=np.float64)
        if query.shape != (self.dim,):
            raise HnswError(
                f"dimension mismatch: got {query.shape}, expected ({self.dim},)")

        current = [self.entry_point]
        for l in range(self.max_level, 0, -1):
            current = [node for _, node in
                       self._search_layer(query, current, l, ef=1)]
        found = self._search_layer(query, current, 0, ef=ef)
        hits = [NnHit(chunk_ref=self.id_map[node], distance=d)
                for d, node in found if self.id_map[node] is not None]
        hits.sort(key=lambda h: (h.distance, h.chunk_ref))
        return hits[:k]

    def tombstone(self, chunk_ref: str) -> int:
        """Mark every node mapped to chunk_ref as deleted; returns count."""
        count = 0
        for node_id, ref in self.id_map.items():
            if ref == chunk_ref:
                self.id_map[node_id] = None
                count += 1
        return count

    def live_chunk_refs(self) -> set[str]:
        return {ref for ref in self.id_map.values() if ref is not None}

    # --- structural checks (used by tests and desk-scale audits) -----------

    def check_invariants(self, node_ids=None) -> None:
        """Assert degree caps, live edges, and entry-point placement."""
        for l, graph in enumerate(self.layers):
            cap = self._cap(l)
            nodes = graph.keys() if node_ids is None else \
                [n for n in node_ids if n in graph]
            for node in nodes:
                nbrs = graph[node]
                if len(nbrs) > cap:
                    raise AssertionError(
                        f"node {node} exceeds degree cap at layer {l}: "
                        f"{len(nbrs)} > {cap}")
                if len(set(nbrs)) != len(nbrs):
                    raise AssertionError(f"duplicate edges at node {node}, layer {l}")
                for n in nbrs:
                    if n not in graph:
                        raise AssertionError(
                            f"edge {node}->{n} at layer {l} references a node "
                            f"not present at that layer")
                    if n == node:
                        raise AssertionError(f"self-edge at node {node}, layer {l}")
        if self.entry_point is not None:
            if self.entry_point not in self.layers[self.max_level]:
                raise AssertionError("entry point missing from the top layer")
            if node_ids is None and not self.layers[self.max_level]:
                raise AssertionError("empty top layer")

    def is_connected_at_base(self) -> bool:
        """BFS connectivity of layer 0 (desk-scale check)."""
        if not self.layers or not self.layers[0]:
            return True
        graph = self.layers[0]
        start = next(iter(graph))
        seen = {start}
        frontier = [start]
        while frontier:
            node = frontier.pop()
            for n in graph[node]:
                if n not in seen:
                    seen.add(n)
                    frontier.append(n)
        return len(seen) == len(graph)

    # --- persistence ----------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "version": INDEX_FORMAT_VERSION,
            "params": {
                "dim": self.dim, "M": self.M, "M0": self.M0,
                "ef_construction": self.ef_construction,
                "ef_search": self.ef_search, "seed": self.seed,
            },
            "entry_point": self.entry_point,
            "layers": [{str(node): nbrs for node, nbrs in graph.items()}
                       for graph in self.layers],
            "vectors": {str(node): vec.tolist()
                        for node, vec in self.vectors.items()},
            "id_map": {str(node): ref for node, ref in self.id_map.items()},
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def from_json(cls, obj: dict) -> "HnswIndex":
        version = obj.get("version")
        if version != INDEX_FORMAT_VERSION:
            raise HnswError(f"unsupported index version: {version!r}")
        p = obj["params"]
        index = cls(dim=p["dim"], M=p["M"], ef_construction=p["ef_construction"],
                    ef_search=p["ef_search"], seed=p["seed"])
        index.entry_point = obj["entry_point"]
        index.layers = [{int(node): list(nbrs) for node, nbrs in graph.items()}
                        for graph in obj["layers"]]
        index.vectors = {int(node): np.asarray(vec, dtype=np.float64)
                         for node, vec in obj["vectors"].items()}
        index.id_map = {int(node): ref for node, ref in obj["id_map"].items()}
        return index

    @classmethod
    def load(cls, path) -> "HnswIndex":
        with open(path, "r", encoding="utf-8") as fh:
            raw = fh.read()
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise CorruptIndexError(
                f"corrupt index file {path}: {exc.msg} at offset {exc.pos}",
                offset=exc.pos) from exc
        if not isinstance(obj, dict):
            raise CorruptIndexError(f"corrupt index file {path}: not an object")
        return cls.from_json(obj)
