"""Friendship-graph storage and the classical graph algorithms on top of it.

The global graph lives in compressed sparse (CSR-style) form; small induced
subgraphs (ego networks, active-friend circles) are materialized dense.
All graphs are undirected, simple, with node ids dense in [0, n).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

REGION_BUCKETS = 10

__all__ = [
    "SocialGraph",
    "UserAttributes",
    "Subgraph",
    "region_onehot",
    "connected_components",
    "k_core",
    "articulation_points",
    "pagerank",
    "mark_social_roles",
    "local_clustering_coefficient",
    "induce_subgraph",
    "load_edge_list",
    "save_edge_list",
    "load_attributes_csv",
    "save_attributes_csv",
]


def region_onehot(region_code: int) -> np.ndarray:
    """Stable 10-dim hash-bucket one-hot for a raw region code."""
    # Knuth multiplicative hash; independent of PYTHONHASHSEED
    bucket = ((int(region_code) * 2654435761) & 0xFFFFFFFF) % REGION_BUCKETS
    v = np.zeros(REGION_BUCKETS)
    v[bucket] = 1.0
    return v


@dataclass
class UserAttributes:
    """Per-user view over the graph's attribute arrays."""

    gender: int  # 0 unknown, 1 male, 2 female
    age: int
    region_code: int
    pagerank_score: float | None = None
    is_cut_point: bool | None = None
    is_opinion_leader: bool | None = None

    @property
    def region(self) -> np.ndarray:
        return region_onehot(self.region_code)


@dataclass
class SocialGraph:
    """Undirected friendship graph in CSR form plus per-node attributes.

    Read-only after construction except for :func:`mark_social_roles`,
    which fills the role arrays in place (single writer).
    """

    node_count: int
    indptr: np.ndarray  # (n+1,) int64
    indices: np.ndarray  # (2E,) int64, sorted within each row
    gender: np.ndarray  # (n,) int8
    age: np.ndarray  # (n,) int16
    region_code: np.ndarray  # (n,) int64
    pagerank_score: np.ndarray | None = None
    is_cut_point: np.ndarray | None = None
    is_opinion_leader: np.ndarray | None = None

    @classmethod
    def from_edges(cls, node_count: int, edges, gender=None, age=None,
                   region_code=None) -> "SocialGraph":
        """Build from an iterable of (u, v) pairs; dedupes and symmetrizes."""
        edges = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        if len(edges):
            if edges.min() < 0 or edges.max() >= node_count:
                raise ValueError("edge endpoint out of range")
            keep = edges[:, 0] != edges[:, 1]  # drop self-loops
            edges = edges[keep]
            both = np.concatenate([edges, edges[:, ::-1]], axis=0)
            both = np.unique(both, axis=0)
            src, dst = both[:, 0], both[:, 1]
        else:
            src = dst = np.zeros(0, dtype=np.int64)
        counts = np.bincount(src, minlength=node_count)
        indptr = np.zeros(node_count + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        # np.unique sorts lexicographically, so rows are already sorted
        zeros = np.zeros(node_count)
        return cls(
            node_count=node_count,
            indptr=indptr,
            indices=dst.copy(),
            gender=np.asarray(gender if gender is not None else zeros, dtype=np.int8),
            age=np.asarray(age if age is not None else zeros, dtype=np.int16),
            region_code=np.asarray(region_code if region_code is not None else zeros,
                                   dtype=np.int64),
        )

    def neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def degree(self, u: int) -> int:
        return int(self.indptr[u + 1] - self.indptr[u])

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def edge_count(self) -> int:
        return len(self.indices) // 2

    def has_edge(self, u: int, v: int) -> bool:
        nbrs = self.neighbors(u)
        i = np.searchsorted(nbrs, v)
        return i < len(nbrs) and nbrs[i] == v

    def user(self, u: int) -> UserAttributes:
        return UserAttributes(
            gender=int(self.gender[u]),
            age=int(self.age[u]),
            region_code=int(self.region_code[u]),
            pagerank_score=None if self.pagerank_score is None else float(self.pagerank_score[u]),
            is_cut_point=None if self.is_cut_point is None else bool(self.is_cut_point[u]),
            is_opinion_leader=None if self.is_opinion_leader is None else bool(self.is_opinion_leader[u]),
        )

    def validate(self):
        """Check the structural invariants (symmetry, sortedness, no loops)."""
        for u in range(self.node_count):
            nbrs = self.neighbors(u)
            if len(nbrs) == 0:
                continue
            if (np.diff(nbrs) <= 0).any():
                raise ValueError(f"neighbor list of {u} not sorted/duplicate-free")
            if (nbrs == u).any():
                raise ValueError(f"self-loop at {u}")
            for v in nbrs:
                if not self.has_edge(int(v), u):
                    raise ValueError(f"asymmetric edge ({u}, {v})")


@dataclass
class Subgraph:
    """Dense induced subgraph over an ordered list of original node ids."""

    node_ids: list
    adjacency: np.ndarray  # (k, k) 0/1, symmetric, zero diagonal

    def __post_init__(self):
        self.node_ids = [int(i) for i in self.node_ids]
        self.adjacency = np.asarray(self.adjacency)
        k = len(self.node_ids)
        if self.adjacency.shape != (k, k):
            raise ValueError("adjacency shape does not match node_ids")
        if k and ((self.adjacency != self.adjacency.T).any() or np.diag(self.adjacency).any()):
            raise ValueError("adjacency must be symmetric with zero diagonal")

    @property
    def size(self) -> int:
        return len(self.node_ids)


def induce_subgraph(g: SocialGraph, nodes) -> Subgraph:
    """Dense induced subgraph of the global graph over ``nodes`` (kept order)."""
    nodes = [int(u) for u in nodes]
    pos = {u: i for i, u in enumerate(nodes)}
    adj = np.zeros((len(nodes), len(nodes)), dtype=np.uint8)
    for i, u in enumerate(nodes):
        for v in g.neighbors(u):
            j = pos.get(int(v))
            if j is not None:
                adj[i, j] = 1
    return Subgraph(nodes, adj)


# --------------------------------------------------------------------------
# classical algorithms
# --------------------------------------------------------------------------

def _components_from_adjacency(adj: np.ndarray) -> list[list[int]]:
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    comps = []
    for s in range(n):
        if seen[s]:
            continue
        stack = [s]
        seen[s] = True
        comp = []
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in np.flatnonzero(adj[u]):
                if not seen[v]:
                    seen[v] = True
                    stack.append(int(v))
        comps.append(comp)
    return comps


def connected_components(g: Subgraph) -> list[set]:
    """Partition of the subgraph's nodes into connected components."""
    return [set(g.node_ids[i] for i in comp)
            for comp in _components_from_adjacency(g.adjacency)]


def k_core(g: Subgraph, k: int) -> Subgraph:
    """Maximal induced subgraph in which every node has degree >= k."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if k == 0 or g.size == 0:
        return Subgraph(list(g.node_ids), g.adjacency.copy())
    adj = g.adjacency.astype(np.int64)
    alive = np.ones(g.size, dtype=bool)
    deg = adj.sum(axis=1)
    changed = True
    while changed:
        drop = alive & (deg < k)
        changed = bool(drop.any())
        if changed:
            alive &= ~drop
            deg = (adj * alive[None, :]).sum(axis=1)
    keep = np.flatnonzero(alive)
    sub = g.adjacency[np.ix_(keep, keep)].copy()
    return Subgraph([g.node_ids[i] for i in keep], sub)


def _articulation_csr(n: int, neighbors) -> set:
    """Iterative single-pass DFS (Tarjan low-link) over an adjacency accessor."""
    disc = [-1] * n
    low = [0] * n
    cut = set()
    timer = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        root_children = 0
        # stack entries: (node, parent, iterator over neighbors)
        stack = [(root, -1, iter(neighbors(root)))]
        disc[root] = low[root] = timer
        timer += 1
        while stack:
            u, parent, it = stack[-1]
            advanced = False
            for v in it:
                v = int(v)
                if disc[v] == -1:
                    if u == root:
                        root_children += 1
                    disc[v] = low[v] = timer
                    timer += 1
                    stack.append((v, u, iter(neighbors(v))))
                    advanced = True
                    break
                elif v != parent:
                    low[u] = min(low[u], disc[v])
            if not advanced:
                stack.pop()
                if stack:
                    pu = stack[-1][0]
                    low[pu] = min(low[pu], low[u])
                    if pu != root and low[u] >= disc[pu]:
                        cut.add(pu)
        if root_children >= 2:
            cut.add(root)
    return cut


def articulation_points(g: Subgraph) -> set:
    """Nodes whose removal increases the number of connected components."""
    adj = g.adjacency
    local = _articulation_csr(g.size, lambda u: np.flatnonzero(adj[u]))
    return {g.node_ids[i] for i in local}


def pagerank(g: SocialGraph, damping: float = 0.85, iters: int = 100,
             tol: float = 1e-10) -> np.ndarray:
    """Power-iteration PageRank treating each friendship as two directed edges.

    Dangling (degree-0) mass is redistributed uniformly; stops when the L1
    change drops below ``tol`` or after ``iters`` sweeps. Scores sum to 1.
    """
    if not (0.0 < damping < 1.0):
        raise ValueError("damping must be in (0,1)")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    n = g.node_count
    deg = g.degrees.astype(np.float64)
    dangling = deg == 0
    src = np.repeat(np.arange(n, dtype=np.int64), np.diff(g.indptr))
    r = np.full(n, 1.0 / n)
    for _ in range(iters):
        outflow = np.where(dangling, 0.0, r / np.maximum(deg, 1.0))
        pushed = np.bincount(g.indices, weights=outflow[src], minlength=n)
        dangling_mass = r[dangling].sum() / n
        r_new = (1.0 - damping) / n + damping * (pushed + dangling_mass)
        delta = np.abs(r_new - r).sum()
        r = r_new
        if delta < tol:
            break
    return r / r.sum()


def mark_social_roles(g: SocialGraph, ol_quantile: float = 0.01) -> None:
    """Fill is_opinion_leader (top PageRank quantile) and is_cut_point in place.

    The opinion-leader count is ceil(n * ol_quantile); ties at the score
    boundary go to the lower node id.
    """
    if g.pagerank_score is None:
        raise ValueError("pagerank must be computed before marking roles")
    if not (0.0 < ol_quantile < 1.0):
        raise ValueError("ol_quantile must be in (0,1)")
    n = g.node_count
    count = math.ceil(n * ol_quantile)
    order = sorted(range(n), key=lambda u: (-g.pagerank_score[u], u))
    ol = np.zeros(n, dtype=bool)
    ol[order[:count]] = True
    g.is_opinion_leader = ol
    cut = _articulation_csr(n, g.neighbors)
    flags = np.zeros(n, dtype=bool)
    flags[list(cut)] = True
    g.is_cut_point = flags


def local_clustering_coefficient(g: Subgraph, node) -> float:
    """Fraction of realized edges among a node's neighbors; 0 when deg < 2."""
    try:
        i = g.node_ids.index(int(node))
    except ValueError:
        raise KeyError(f"node {node} not in subgraph") from None
    nbrs = np.flatnonzero(g.adjacency[i])
    d = len(nbrs)
    if d < 2:
        return 0.0
    triangles = int(g.adjacency[np.ix_(nbrs, nbrs)].sum()) // 2
    return 2.0 * triangles / (d * (d - 1))


# --------------------------------------------------------------------------
# file formats
# --------------------------------------------------------------------------

def save_edge_list(g: SocialGraph, path):
    """Write one "u v" pair per undirected edge (u < v), 0-based ids."""
    with open(path, "w") as f:
        for u in range(g.node_count):
            for v in g.neighbors(u):
                if u < v:
                    f.write(f"{u} {int(v)}\n")


def load_edge_list(path, node_count: int | None = None) -> SocialGraph:
    edges = []
    hi = -1
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            u, v = line.split()
            u, v = int(u), int(v)
            edges.append((u, v))
            hi = max(hi, u, v)
    if node_count is None:
        node_count = hi + 1
    return SocialGraph.from_edges(node_count, edges)


def save_attributes_csv(g: SocialGraph, path):
    with open(path, "w") as f:
        f.write("node_id,gender,age,region_code\n")
        for u in range(g.node_count):
            f.write(f"{u},{int(g.gender[u])},{int(g.age[u])},{int(g.region_code[u])}\n")


def load_attributes_csv(path, g: SocialGraph) -> None:
    """Fill the graph's attribute arrays from a node_id,gender,age,region_code CSV."""
    import csv

    with open(path) as f:
        reader = csv.DictReader(f)
        for row in reader:
            u = int(row["node_id"])
            g.gender[u] = int(row["gender"])
            g.age[u] = int(row["age"])
            g.region_code[u] = int(row["region_code"])
