"""Ego-network sampling, splits, and the cache/log file formats."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffusegnn.ego_sampler import (EgoInstance, InteractionRecord, PAD_ID,
                                    filter_interactions, load_instance_cache,
                                    load_log_jsonl, sample_bfs, sample_rwr,
                                    save_instance_cache, save_log_jsonl,
                                    time_split)
from diffusegnn.graph_core import SocialGraph
from conftest import random_instance, random_social_graph


def make_record(user=0, actives=((1, 10.0), (2, 20.0)), ts=100.0, wow=True):
    return InteractionRecord(user=user, item=0, ts=ts, is_wow=wow,
                             is_click=False, active_friends=list(actives))


def star_graph(n):
    return SocialGraph.from_edges(n, [(0, i) for i in range(1, n)])


# --------------------------------------------------------------------------
# record / instance invariants
# --------------------------------------------------------------------------

def test_record_rejects_late_active_friend():
    with pytest.raises(ValueError):
        make_record(actives=[(1, 100.0)], ts=100.0)


def test_record_rejects_unsorted_actives():
    with pytest.raises(ValueError):
        make_record(actives=[(1, 20.0), (2, 10.0)])


def test_instance_validates_padding(rng):
    inst = random_instance(rng, 8)
    bad_ids = inst.node_ids.copy()
    bad_ids[-1] = 5  # padded slot must stay PAD_ID
    if not inst.mask[-1]:
        with pytest.raises(ValueError):
            EgoInstance(inst.adjacency, bad_ids, inst.mask, inst.active_flags,
                        inst.ego_flags, inst.label)


def test_instance_requires_single_ego(rng):
    inst = random_instance(rng, 6)
    flags = inst.ego_flags.copy()
    flags[1] = True
    with pytest.raises(ValueError):
        EgoInstance(inst.adjacency, inst.node_ids, inst.mask,
                    inst.active_flags, flags, inst.label)


# --------------------------------------------------------------------------
# BFS sampling
# --------------------------------------------------------------------------

def test_bfs_star_no_padding():
    g = star_graph(6)
    rec = make_record(actives=[(1, 1.0), (2, 2.0), (3, 3.0), (4, 4.0), (5, 5.0)])
    inst = sample_bfs(g, rec, m=6)
    assert inst.mask.all()
    assert inst.node_ids[0] == 0
    # star adjacency: ego row connects to everyone, leaves mutually unconnected
    assert inst.adjacency[0, 1:].sum() == 5
    assert inst.adjacency[1:, 1:].sum() == 0


def test_bfs_padding_small_network():
    g = SocialGraph.from_edges(4, [(0, 1)])
    rec = make_record(actives=[(1, 1.0)])
    inst = sample_bfs(g, rec, m=32)
    assert inst.real_count == 2
    assert inst.mask.sum() == 2
    assert (inst.node_ids[2:] == PAD_ID).all()
    assert inst.adjacency[2:].sum() == 0


def test_bfs_orders_ego_then_actives_by_wow_ts():
    g = star_graph(8)
    rec = make_record(actives=[(5, 1.0), (2, 2.0), (7, 3.0)])
    inst = sample_bfs(g, rec, m=4)
    assert inst.node_ids.tolist() == [0, 5, 2, 7]
    assert inst.active_flags.tolist() == [False, True, True, True]


def test_bfs_overfull_actives_keep_earliest():
    g = star_graph(10)
    actives = [(i, float(i)) for i in range(1, 10)]
    inst = sample_bfs(g, make_record(actives=actives), m=4)
    assert inst.node_ids.tolist() == [0, 1, 2, 3]


def test_bfs_respects_tau():
    # path 0-1-2-3: node 3 is three hops out, never sampled at tau=2
    g = SocialGraph.from_edges(4, [(0, 1), (1, 2), (2, 3)])
    inst = sample_bfs(g, make_record(actives=[(1, 1.0)]), m=4, tau=2)
    real = set(inst.node_ids[inst.mask].tolist())
    assert real == {0, 1, 2}


def test_bfs_requires_active_friend():
    g = star_graph(4)
    rec = InteractionRecord(0, 0, 10.0, False, False, [])
    with pytest.raises(ValueError):
        sample_bfs(g, rec, m=4)


def test_bfs_unknown_user_errors():
    g = star_graph(4)
    with pytest.raises(ValueError):
        sample_bfs(g, make_record(user=77, actives=[(1, 1.0)]), m=4)


def bfs_oracle_members(g, rec, m, tau=2):
    """Plain queue re-trace with the ascending-id tie rule."""
    seeds = [rec.user] + [v for v, _ in rec.active_friends][: m - 1]
    depth = {rec.user: 0, **{v: 1 for v in seeds[1:]}}
    members = list(seeds)
    queue = list(seeds)
    while queue and len(members) < m:
        u = queue.pop(0)
        if depth[u] >= tau:
            continue
        for v in sorted(int(x) for x in g.neighbors(u)):
            if v in depth or len(members) >= m:
                continue
            depth[v] = depth[u] + 1
            members.append(v)
            queue.append(v)
    return members


def test_bfs_matches_queue_trace_oracle(rng):
    for trial in range(20):
        g = random_social_graph(rng, 50, 0.08)
        users = [u for u in range(50) if g.degree(u) >= 2]
        u = int(rng.choice(users))
        nbrs = g.neighbors(u)
        k = min(len(nbrs), 3)
        actives = [(int(v), float(10 + i)) for i, v in enumerate(nbrs[:k])]
        rec = make_record(user=u, actives=actives, ts=99.0)
        inst = sample_bfs(g, rec, m=8)
        want = bfs_oracle_members(g, rec, 8)
        assert inst.node_ids[inst.mask].tolist() == want


def test_bfs_deterministic(rng):
    g = random_social_graph(rng, 40, 0.1)
    u = next(u for u in range(40) if g.degree(u) >= 2)
    actives = [(int(v), float(i)) for i, v in enumerate(g.neighbors(u)[:2])]
    rec = make_record(user=u, actives=actives, ts=50.0)
    a = sample_bfs(g, rec, m=8)
    b = sample_bfs(g, rec, m=8)
    assert np.array_equal(a.node_ids, b.node_ids)
    assert np.array_equal(a.adjacency, b.adjacency)


# --------------------------------------------------------------------------
# RWR sampling
# --------------------------------------------------------------------------

def test_rwr_restart_one_stays_on_seeds(rng):
    g = random_social_graph(rng, 30, 0.2)
    u = next(u for u in range(30) if g.degree(u) >= 2)
    actives = [(int(v), float(i)) for i, v in enumerate(g.neighbors(u)[:2])]
    rec = make_record(user=u, actives=actives, ts=50.0)
    inst = sample_rwr(g, rec, m=16, restart_prob=1.0, seed=3)
    real = set(inst.node_ids[inst.mask].tolist())
    assert real == {u} | {v for v, _ in actives}


def test_rwr_same_seed_identical(rng):
    g = random_social_graph(rng, 50, 0.1)
    u = next(u for u in range(50) if g.degree(u) >= 3)
    actives = [(int(v), float(i)) for i, v in enumerate(g.neighbors(u)[:3])]
    rec = make_record(user=u, actives=actives, ts=50.0)
    a = sample_rwr(g, rec, m=8, restart_prob=0.4, seed=7)
    b = sample_rwr(g, rec, m=8, restart_prob=0.4, seed=7)
    assert np.array_equal(a.node_ids, b.node_ids)


def rwr_oracle_members(g, rec, m, restart_prob, seed):
    """Replay the walk from an identical generator stream."""
    seeds = [rec.user] + [v for v, _ in rec.active_friends][: m - 1]
    rng = np.random.default_rng(seed)
    visited = dict.fromkeys(seeds)
    current = seeds[0]
    budget = 256 * m
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
    return list(visited)[:m]


def test_rwr_matches_walk_replay_oracle(rng):
    g = random_social_graph(rng, 50, 0.1)
    u = next(u for u in range(50) if g.degree(u) >= 3)
    actives = [(int(v), float(i)) for i, v in enumerate(g.neighbors(u)[:3])]
    rec = make_record(user=u, actives=actives, ts=50.0)
    inst = sample_rwr(g, rec, m=8, restart_prob=0.3, seed=7)
    assert inst.node_ids[inst.mask].tolist() == rwr_oracle_members(g, rec, 8, 0.3, 7)


# --------------------------------------------------------------------------
# filtering / splitting
# --------------------------------------------------------------------------

def test_filter_zero_is_identity():
    log = [make_record(actives=[(1, 1.0)]), make_record(actives=[])]
    # empty active list requires building the record directly
    log[1] = InteractionRecord(0, 0, 10.0, False, False, [])
    assert filter_interactions(log, 0) == log


def test_filter_drops_below_threshold():
    four = [(i, float(i)) for i in range(1, 5)]
    five = [(i, float(i)) for i in range(1, 6)]
    log = [make_record(actives=four), make_record(actives=five)]
    kept = filter_interactions(log, 5)
    assert kept == [log[1]]


def test_filter_matches_predicate_scan(rng):
    log = []
    for _ in range(50):
        k = int(rng.integers(0, 8))
        actives = [(int(i + 1), float(i)) for i in range(k)]
        log.append(InteractionRecord(0, 0, 99.0, True, False, actives))
    want = [r for r in log if len(r.active_friends) >= 3]
    assert filter_interactions(log, 3) == want


def test_time_split_sizes():
    log = [make_record(ts=float(10 + i), actives=[(1, 1.0)]) for i in range(10)]
    tr, va, te_ = time_split(log, 0.5, 0.25)
    assert (len(tr), len(va), len(te_)) == (5, 2, 3)


def test_time_split_equal_ts_stable_order():
    log = [make_record(ts=5.0, actives=[(i + 1, 1.0)]) for i in range(4)]
    tr, va, te_ = time_split(log, 0.5, 0.25)
    assert tr == log[:2] and va == [log[2]] and te_ == [log[3]]


def test_time_split_monotone_boundaries(rng):
    log = [make_record(ts=float(rng.integers(100, 999)), actives=[(1, 1.0)])
           for _ in range(60)]
    tr, va, te_ = time_split(log, 0.5, 0.25)
    seq = [r.ts for r in tr + va + te_]
    assert all(a <= b for a, b in zip(seq, seq[1:]))
    assert max(r.ts for r in tr) <= min(r.ts for r in te_)


def test_time_split_empty_errors():
    with pytest.raises(ValueError):
        time_split([], 0.5, 0.25)


# --------------------------------------------------------------------------
# file formats
# --------------------------------------------------------------------------

def test_log_jsonl_roundtrip(tmp_path):
    log = [make_record(actives=[(3, 1.5), (4, 2.5)], wow=True),
           make_record(user=9, actives=[(1, 7.0)], wow=False)]
    path = tmp_path / "log.jsonl"
    save_log_jsonl(log, path)
    back = load_log_jsonl(path)
    assert back == log


def test_instance_cache_roundtrip(tmp_path, rng):
    instances = [random_instance(rng, 16) for _ in range(12)]
    path = tmp_path / "cache.bin"
    save_instance_cache(instances, path)
    back = load_instance_cache(path)
    assert len(back) == len(instances)
    for a, b in zip(instances, back):
        assert np.array_equal(a.adjacency, b.adjacency)
        assert np.array_equal(a.node_ids, b.node_ids)
        assert np.array_equal(a.mask, b.mask)
        assert np.array_equal(a.active_flags, b.active_flags)
        assert a.label == b.label


def test_instance_cache_rejects_garbage(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(ValueError):
        load_instance_cache(path)


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=25, deadline=None)
def test_sampled_instances_satisfy_invariants(seed):
    rng = np.random.default_rng(seed)
    g = random_social_graph(rng, 30, 0.15)
    users = [u for u in range(30) if g.degree(u) >= 1]
    u = int(rng.choice(users))
    k = min(g.degree(u), int(rng.integers(1, 4)))
    actives = [(int(v), float(i)) for i, v in enumerate(g.neighbors(u)[:k])]
    rec = make_record(user=u, actives=actives, ts=50.0)
    m = int(rng.integers(max(2, k + 1), 12))
    inst = sample_bfs(g, rec, m=m)  # EgoInstance.__post_init__ re-validates
    assert inst.node_ids[0] == u
    # ego and every active friend that fits are present, actives before others
    real = inst.node_ids[inst.mask].tolist()
    for v, _ in actives[: m - 1]:
        assert v in real
