"""Fixed-size ego-network instances from (user, item, timestamp) exposures.

Sampling is a pure function of (graph, record, parameters): BFS follows the
locality of the WeChat-style feed, random walk with restart mirrors the
Weibo-style preprocessing. Instances are padded to exactly ``m`` slots with
isolated sentinel nodes (mask false, all flags false, zero adjacency rows).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .graph_core import SocialGraph

PAD_ID = -1

__all__ = [
    "InteractionRecord",
    "EgoInstance",
    "sample_bfs",
    "sample_rwr",
    "filter_interactions",
    "filter_min_user_interactions",
    "time_split",
    "load_log_jsonl",
    "save_log_jsonl",
    "save_instance_cache",
    "load_instance_cache",
]


@dataclass
class InteractionRecord:
    """One exposure of ``user`` to ``item`` at ``ts`` with its labels.

    ``active_friends`` lists (friend id, wow timestamp) pairs, all strictly
    before ``ts``, sorted ascending by wow timestamp.
    """

    user: int
    item: int
    ts: float
    is_wow: bool
    is_click: bool
    active_friends: list = field(default_factory=list)

    def __post_init__(self):
        self.active_friends = [(int(v), float(t)) for v, t in self.active_friends]
        for _, t in self.active_friends:
            if t >= self.ts:
                raise ValueError("active friend timestamp not before exposure ts")
        times = [t for _, t in self.active_friends]
        if times != sorted(times):
            raise ValueError("active friends must be sorted by wow timestamp")

    def label(self, behavior: str) -> int:
        if behavior == "wow":
            return int(self.is_wow)
        if behavior == "click":
            return int(self.is_click)
        raise ValueError(f"unknown behavior {behavior!r}")


@dataclass
class EgoInstance:
    """A sampled ego network padded to m slots; slot 0 is always the ego."""

    adjacency: np.ndarray  # (m, m) 0/1, symmetric, zero diagonal
    node_ids: np.ndarray  # (m,) original ids, PAD_ID in padded slots
    mask: np.ndarray  # (m,) bool, true where the slot holds a real node
    active_flags: np.ndarray  # (m,) bool, wow status at sampling time
    ego_flags: np.ndarray  # (m,) bool, true exactly at slot 0
    label: int

    def __post_init__(self):
        self.adjacency = np.ascontiguousarray(self.adjacency, dtype=np.uint8)
        self.node_ids = np.asarray(self.node_ids, dtype=np.int64)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.active_flags = np.asarray(self.active_flags, dtype=bool)
        self.ego_flags = np.asarray(self.ego_flags, dtype=bool)
        self.label = int(self.label)
        m = len(self.node_ids)
        if self.adjacency.shape != (m, m):
            raise ValueError("adjacency shape mismatch")
        if (self.adjacency != self.adjacency.T).any() or np.diag(self.adjacency).any():
            raise ValueError("adjacency must be symmetric with zero diagonal")
        if self.ego_flags.sum() != 1 or not self.ego_flags[0]:
            raise ValueError("exactly slot 0 must carry the ego flag")
        if self.active_flags[0]:
            raise ValueError("ego cannot be active at sampling time")
        pad = ~self.mask
        if (self.node_ids[pad] != PAD_ID).any() or self.active_flags[pad].any() \
                or self.ego_flags[pad].any():
            raise ValueError("padded slots must be inert")
        if self.adjacency[pad].any() or self.adjacency[:, pad].any():
            raise ValueError("padded slots must have zero adjacency")

    @property
    def m(self) -> int:
        return len(self.node_ids)

    @property
    def real_count(self) -> int:
        return int(self.mask.sum())


def _finish_instance(g: SocialGraph, members: list[int], active: set, m: int,
                     label: int) -> EgoInstance:
    """Induce the dense adjacency over ``members`` and pad out to m slots."""
    k = len(members)
    pos = {u: i for i, u in enumerate(members)}
    adj = np.zeros((m, m), dtype=np.uint8)
    for i, u in enumerate(members):
        for v in g.neighbors(u):
            j = pos.get(int(v))
            if j is not None:
                adj[i, j] = 1
    node_ids = np.full(m, PAD_ID, dtype=np.int64)
    node_ids[:k] = members
    mask = np.zeros(m, dtype=bool)
    mask[:k] = True
    active_flags = np.zeros(m, dtype=bool)
    for i, u in enumerate(members):
        if u in active:
            active_flags[i] = True
    ego_flags = np.zeros(m, dtype=bool)
    ego_flags[0] = True
    return EgoInstance(adj, node_ids, mask, active_flags, ego_flags, label)


def _seed_members(g: SocialGraph, rec: InteractionRecord, m: int) -> tuple[list, set]:
    if rec.user < 0 or rec.user >= g.node_count:
        raise ValueError(f"user {rec.user} not in graph")
    if not rec.active_friends:
        raise ValueError("record has no active friends (filter upstream)")
    # earliest wows first; when they alone exceed m-1 keep the earliest m-1
    actives = [v for v, _ in rec.active_friends][: m - 1]
    return [rec.user] + actives, set(v for v, _ in rec.active_friends)


def sample_bfs(g: SocialGraph, rec: InteractionRecord, m: int = 32,
               tau: int = 2, label: int = 0) -> EgoInstance:
    """Breadth-first fixed-size sampling within the tau-ego network.

    The queue starts with the ego, then active friends ordered by wow
    timestamp; expansion enqueues unvisited neighbors in ascending-id order
    and never expands nodes at depth tau. Deterministic.
    """
    if m < 2:
        raise ValueError("m must be >= 2")
    if tau < 1:
        raise ValueError("tau must be >= 1")
    seeds, active = _seed_members(g, rec, m)
    depth = {seeds[0]: 0}
    for v in seeds[1:]:
        depth[v] = 1
    members = list(seeds)
    queue = list(seeds)
    qi = 0
    while qi < len(queue) and len(members) < m:
        u = queue[qi]
        qi += 1
        if depth[u] >= tau:
            continue
        for v in g.neighbors(u):
            v = int(v)
            if v in depth:
                continue
            depth[v] = depth[u] + 1
            members.append(v)
            queue.append(v)
            if len(members) == m:
                break
    return _finish_instance(g, members, active, m, label)


def sample_rwr(g: SocialGraph, rec: InteractionRecord, m: int = 32,
               restart_prob: float = 0.4, seed: int = 0, label: int = 0,
               max_steps_factor: int = 256) -> EgoInstance:
    """Random walk with restart; the first m distinct visited nodes form the instance.

    Each step restarts (to a uniform choice among ego and active friends)
    with probability ``restart_prob``, otherwise moves to a uniform random
    neighbor. Fully determined by ``seed``. A step budget of
    ``max_steps_factor * m`` guards against walks trapped in small components.
    """
    if not (0.0 < restart_prob <= 1.0):
        raise ValueError("restart_prob must be in (0,1]")
    seeds, active = _seed_members(g, rec, m)
    rng = np.random.default_rng(seed)
    visited = dict.fromkeys(seeds)  # insertion-ordered distinct set
    current = seeds[0]
    budget = max_steps_factor * m
    while len(visited) < m and budget > 0:
        budget -= 1
        if rng.random() < restart_prob:
            current = seeds[int(rng.integers(len(seeds)))]
        else:
            nbrs = g.neighbors(current)
            if len(nbrs) == 0:
                current = seeds[int(rng.integers(len(seeds)))]
            else:
                current = int(nbrs[int(rng.integers(len(nbrs)))])
        if current not in visited:
            visited[current] = None
    members = list(visited)[:m]
    return _finish_instance(g, members, active, m, label)


def filter_interactions(log: list, min_active: int = 5) -> list:
    """Keep records with at least ``min_active`` active friends, stable order."""
    if min_active < 0:
        raise ValueError("min_active must be >= 0")
    return [r for r in log if len(r.active_friends) >= min_active]


def filter_min_user_interactions(log: list, min_interactions: int) -> list:
    """Keep records of users appearing at least ``min_interactions`` times."""
    counts: dict[int, int] = {}
    for r in log:
        counts[r.user] = counts.get(r.user, 0) + 1
    return [r for r in log if counts[r.user] >= min_interactions]


def time_split(log: list, train_frac: float, val_frac: float):
    """Chronological contiguous split: earlier records train, latest test.

    Boundary sizes floor; the remainder goes to test. Ties in ts keep the
    stable input order.
    """
    if not log:
        raise ValueError("cannot split an empty log")
    if train_frac <= 0 or val_frac <= 0 or train_frac + val_frac >= 1:
        raise ValueError("fractions must be positive and sum below 1")
    order = sorted(range(len(log)), key=lambda i: (log[i].ts, i))
    records = [log[i] for i in order]
    n = len(records)
    n_train = int(n * train_frac)
    n_val = int(n * val_frac)
    return (records[:n_train], records[n_train:n_train + n_val],
            records[n_train + n_val:])


# --------------------------------------------------------------------------
# log / instance-cache file formats
# --------------------------------------------------------------------------

def save_log_jsonl(log: list, path):
    """JSON-lines: {"user", "item", "ts", "is_wow", "is_click", "active": [[id, ts], ...]}."""
    with open(path, "w") as f:
        for r in log:
            f.write(json.dumps({
                "user": r.user, "item": r.item, "ts": r.ts,
                "is_wow": bool(r.is_wow), "is_click": bool(r.is_click),
                "active": [[v, t] for v, t in r.active_friends],
            }) + "\n")


def load_log_jsonl(path) -> list:
    log = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            log.append(InteractionRecord(
                user=int(d["user"]), item=int(d["item"]), ts=float(d["ts"]),
                is_wow=bool(d["is_wow"]), is_click=bool(d["is_click"]),
                active_friends=[(int(v), float(t)) for v, t in d["active"]],
            ))
    return log


_CACHE_MAGIC = b"EGO1"


def save_instance_cache(instances: list, path):
    """Fixed-size binary records.

    Header: magic "EGO1", uint32 m, uint32 count. Per instance: node ids
    (m x int32), packed mask / active / ego bitmasks (ceil(m/8) bytes each),
    packed upper-triangle adjacency bits (row-major, ceil(m(m-1)/2 / 8)
    bytes), label byte.
    """
    if not instances:
        raise ValueError("nothing to save")
    m = instances[0].m
    iu, ju = np.triu_indices(m, k=1)
    with open(path, "wb") as f:
        f.write(_CACHE_MAGIC)
        f.write(struct.pack("<II", m, len(instances)))
        for inst in instances:
            if inst.m != m:
                raise ValueError("mixed instance sizes in one cache")
            f.write(inst.node_ids.astype(np.int32).tobytes())
            f.write(np.packbits(inst.mask).tobytes())
            f.write(np.packbits(inst.active_flags).tobytes())
            f.write(np.packbits(inst.ego_flags).tobytes())
            f.write(np.packbits(inst.adjacency[iu, ju]).tobytes())
            f.write(struct.pack("<B", inst.label))


def load_instance_cache(path) -> list:
    with open(path, "rb") as f:
        if f.read(4) != _CACHE_MAGIC:
            raise ValueError("not an instance cache file")
        m, count = struct.unpack("<II", f.read(8))
        iu, ju = np.triu_indices(m, k=1)
        nbits = (m + 7) // 8
        abits = (len(iu) + 7) // 8
        out = []
        for _ in range(count):
            node_ids = np.frombuffer(f.read(4 * m), dtype=np.int32).astype(np.int64)
            mask = np.unpackbits(np.frombuffer(f.read(nbits), dtype=np.uint8))[:m].astype(bool)
            active = np.unpackbits(np.frombuffer(f.read(nbits), dtype=np.uint8))[:m].astype(bool)
            ego = np.unpackbits(np.frombuffer(f.read(nbits), dtype=np.uint8))[:m].astype(bool)
            tri = np.unpackbits(np.frombuffer(f.read(abits), dtype=np.uint8))[:len(iu)]
            adj = np.zeros((m, m), dtype=np.uint8)
            adj[iu, ju] = tri
            adj |= adj.T
            (label,) = struct.unpack("<B", f.read(1))
            out.append(EgoInstance(adj, node_ids, mask, active, ego, int(label)))
        return out
