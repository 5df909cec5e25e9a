"""Aggregate behavior measurements over interaction logs, plus a synthetic
cascade generator with planted effects for end-to-end testing.

Rate tables group exposures by demographic, dyadic, triadic, or structural
keys and report wow/click rates per cell. The generator builds a
community-structured friendship graph and simulates exposures whose labels
follow a logistic model over the same quantities the analyses measure, so
analyzer and generator close the loop.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .ego_sampler import InteractionRecord
from .graph_core import SocialGraph, connected_components, induce_subgraph, k_core

__all__ = [
    "ActiveRateTable",
    "BehaviorCoeffs",
    "SynthConfig",
    "rate_by_demographics",
    "rate_dyadic",
    "rate_triadic",
    "structural_diversity_curves",
    "generate_synthetic",
    "spearman_rho",
    "distance_bucket",
    "age_decade",
]

DISTANCE_BUCKETS = ("diff_prov", "same_prov", "same_city", "same_dist")


def age_decade(age: int) -> int:
    return (int(age) // 10) * 10


def distance_bucket(code_a: int, code_b: int) -> str:
    """Finest shared region-prefix level between two 6-digit PPCCDD codes."""
    a, b = int(code_a), int(code_b)
    if a == b:
        return "same_dist"
    if a // 100 == b // 100:
        return "same_city"
    if a // 10000 == b // 10000:
        return "same_prov"
    return "diff_prov"


def _closeness(code_a: int, code_b: int) -> float:
    return DISTANCE_BUCKETS.index(distance_bucket(code_a, code_b)) / 3.0


@dataclass
class ActiveRateTable:
    """Per-cell exposure/wow/click counts under a grouping schema.

    Cells partition the in-scope exposures, so the exposure counts sum to
    ``scope_size`` exactly.
    """

    key_names: tuple
    cells: dict = field(default_factory=dict)  # key tuple -> [exp, wows, clicks]
    scope_size: int = 0

    def add(self, key: tuple, is_wow: bool, is_click: bool):
        cell = self.cells.setdefault(key, [0, 0, 0])
        cell[0] += 1
        cell[1] += int(is_wow)
        cell[2] += int(is_click)
        self.scope_size += 1

    def exposures(self, key) -> int:
        return self.cells.get(tuple(key), [0, 0, 0])[0]

    def wow_rate(self, key) -> float:
        c = self.cells.get(tuple(key))
        return c[1] / c[0] if c and c[0] else 0.0

    def click_rate(self, key) -> float:
        c = self.cells.get(tuple(key))
        return c[2] / c[0] if c and c[0] else 0.0

    def rows(self):
        for key in sorted(self.cells, key=lambda k: tuple(str(x) for x in k)):
            exp, wows, clicks = self.cells[key]
            yield key, exp, wows, clicks, wows / exp, clicks / exp

    def save_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(list(self.key_names) +
                       ["exposures", "wows", "clicks", "wow_rate", "click_rate"])
            for key, exp, wows, clicks, wr, cr in self.rows():
                w.writerow(list(key) + [exp, wows, clicks, f"{wr:.6f}", f"{cr:.6f}"])


def _demo_key(schema: str, g: SocialGraph, u: int) -> tuple:
    if schema == "gender":
        return (int(g.gender[u]),)
    if schema == "age":
        return (age_decade(g.age[u]),)
    if schema == "gender_age":
        return (int(g.gender[u]), age_decade(g.age[u]))
    raise ValueError(f"unknown demographic schema {schema!r}")


def rate_by_demographics(log: list, g: SocialGraph, schema: str = "gender") -> ActiveRateTable:
    """Exposure-weighted wow/click rates per ego demographic cell."""
    names = {"gender": ("gender",), "age": ("age_decade",),
             "gender_age": ("gender", "age_decade")}
    if schema not in names:
        raise ValueError(f"unknown demographic schema {schema!r}")
    table = ActiveRateTable(names[schema])
    for r in log:
        table.add(_demo_key(schema, g, r.user), r.is_wow, r.is_click)
    return table


def rate_dyadic(log: list, g: SocialGraph, key: str = "gender") -> ActiveRateTable:
    """Rates over (ego, single active friend) pairs.

    Restricted to exposures with exactly one active friend. Role keys need
    mark_social_roles to have run.
    """
    names = {"gender": ("user_gender", "friend_gender"),
             "age": ("user_age_decade", "friend_age_decade"),
             "distance": ("distance",),
             "role_ol": ("user_role", "friend_role"),
             "role_sh": ("user_role", "friend_role")}
    if key not in names:
        raise ValueError(f"unknown dyadic key {key!r}")
    if key in ("role_ol", "role_sh") and (g.is_opinion_leader is None or
                                          g.is_cut_point is None):
        raise ValueError("social roles not computed")
    table = ActiveRateTable(names[key])
    for r in log:
        if len(r.active_friends) != 1:
            continue
        u = r.user
        v = r.active_friends[0][0]
        if key == "gender":
            k = (int(g.gender[u]), int(g.gender[v]))
        elif key == "age":
            k = (age_decade(g.age[u]), age_decade(g.age[v]))
        elif key == "distance":
            k = (distance_bucket(g.region_code[u], g.region_code[v]),)
        elif key == "role_ol":
            k = ("OL" if g.is_opinion_leader[u] else "OU",
                 "OL" if g.is_opinion_leader[v] else "OU")
        else:
            k = ("SH" if g.is_cut_point[u] else "OU",
                 "SH" if g.is_cut_point[v] else "OU")
        table.add(k, r.is_wow, r.is_click)
    return table


def rate_triadic(log: list, g: SocialGraph, key: str = "gender") -> ActiveRateTable:
    """Rates over (ego, two active friends); friend-side keys are sorted."""
    names = {"gender": ("user_gender", "friend_genders"),
             "age_diff": ("age_diffs",),
             "distance": ("distances",)}
    if key not in names:
        raise ValueError(f"unknown triadic key {key!r}")
    table = ActiveRateTable(names[key])
    for r in log:
        if len(r.active_friends) != 2:
            continue
        u = r.user
        v1, v2 = (r.active_friends[0][0], r.active_friends[1][0])
        if key == "gender":
            pair = tuple(sorted((int(g.gender[v1]), int(g.gender[v2]))))
            k = (int(g.gender[u]), f"{pair[0]}{pair[1]}")
        elif key == "age_diff":
            d1 = age_decade(int(g.age[v1]) - int(g.age[u]) + 100) - 100
            d2 = age_decade(int(g.age[v2]) - int(g.age[u]) + 100) - 100
            lo, hi = sorted((d1, d2))
            k = (f"{lo}|{hi}",)
        else:
            b1 = distance_bucket(g.region_code[u], g.region_code[v1])
            b2 = distance_bucket(g.region_code[u], g.region_code[v2])
            lo, hi = sorted((b1, b2), key=DISTANCE_BUCKETS.index)
            k = (f"{lo}|{hi}",)
        table.add(k, r.is_wow, r.is_click)
    return table


def structural_diversity_curves(log: list, g: SocialGraph,
                                core_k: int = 0,
                                n_range: tuple = (2, 7)) -> ActiveRateTable:
    """Rates per (#active friends, #CC of their induced subgraph) cell.

    The ego is excluded from the subgraph. With ``core_k=1`` the subgraph is
    first cleaned to its 1-core (outlier friends dropped), which can leave
    an empty graph (#CC = 0).
    """
    if core_k not in (0, 1):
        raise ValueError("core_k must be 0 or 1")
    table = ActiveRateTable(("n_friends", "n_cc"))
    lo, hi = n_range
    for r in log:
        n = len(r.active_friends)
        if not (lo <= n <= hi):
            continue
        circle = induce_subgraph(g, [v for v, _ in r.active_friends])
        if core_k == 1:
            circle = k_core(circle, 1)
        cc = len(connected_components(circle))
        table.add((n, cc), r.is_wow, r.is_click)
    return table


def spearman_rho(x, y) -> float:
    """Spearman rank correlation (average ranks for ties)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)

    def ranks(v):
        order = np.argsort(v, kind="mergesort")
        r = np.empty(len(v))
        sv = v[order]
        i = 0
        while i < len(v):
            j = i
            while j + 1 < len(v) and sv[j + 1] == sv[i]:
                j += 1
            r[order[i:j + 1]] = 0.5 * (i + j) + 1.0
            i = j + 1
        return r

    rx, ry = ranks(x), ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx ** 2).sum() * (ry ** 2).sum())
    return float((rx * ry).sum() / denom) if denom else 0.0


# --------------------------------------------------------------------------
# synthetic generator
# --------------------------------------------------------------------------

@dataclass
class BehaviorCoeffs:
    """Logistic coefficients of the planted label model (one behavior)."""

    intercept: float = -0.4
    active: float = 0.0  # on (n_active - mid) / half-range
    cc: float = 0.0  # on (#CC - 2.5)
    gender: float = 0.0  # on +-0.5 female/male sign of the ego
    age: float = 0.0  # on |age - 40| / 40 (U-shape: mid-aged least active)
    same_gender: float = 0.0  # on (fraction of same-gender actives - 0.5)
    distance: float = 0.0  # on (mean region closeness - 0.5)


def default_wow_coeffs() -> BehaviorCoeffs:
    return BehaviorCoeffs(intercept=-0.8, active=2.0, cc=-0.5, gender=0.3,
                          age=0.8, same_gender=3.0, distance=2.0)


def default_click_coeffs() -> BehaviorCoeffs:
    return BehaviorCoeffs(intercept=-1.1, active=-1.0, cc=0.5, gender=-0.3,
                          age=0.8, same_gender=3.0, distance=0.3)


@dataclass
class SynthConfig:
    node_count: int = 5000
    communities: int = 50
    p_in: float = 0.35
    p_out: float = 0.002
    exposures: int = 40000
    min_active: int = 2
    max_active: int = 7
    max_groups: int = 4
    region_mix: float = 0.7  # share of users carrying their community's code
    wow: BehaviorCoeffs = field(default_factory=default_wow_coeffs)
    click: BehaviorCoeffs = field(default_factory=default_click_coeffs)
    seed: int = 0

    def __post_init__(self):
        if self.communities < 1:
            raise ValueError("need at least one community")
        if not (1 <= self.min_active <= self.max_active):
            raise ValueError("need 1 <= min_active <= max_active")


def _community_codes(communities: int) -> np.ndarray:
    """A 6-digit PPCCDD region code per community (provinces of 25, cities of 5)."""
    comm = np.arange(communities)
    prov = 10 + comm // 25
    city = (comm // 5) % 5
    dist = comm % 5
    return prov * 10000 + city * 100 + dist


def _planted_partition_edges(rng, membership: np.ndarray, p_in: float,
                             p_out: float) -> list:
    n = len(membership)
    edges = []
    for c in np.unique(membership):
        nodes = np.flatnonzero(membership == c)
        k = len(nodes)
        if k < 2:
            continue
        iu, ju = np.triu_indices(k, 1)
        pick = rng.random(len(iu)) < p_in
        edges.extend(zip(nodes[iu[pick]].tolist(), nodes[ju[pick]].tolist()))
    # cross-community edges: binomial count, then uniform pair draws
    sizes = np.bincount(membership)
    cross_pairs = (n * (n - 1)) // 2 - int((sizes * (sizes - 1) // 2).sum())
    m_out = rng.binomial(cross_pairs, p_out) if cross_pairs > 0 else 0
    seen = set()
    while len(seen) < m_out:
        u, v = rng.integers(0, n, size=2)
        if u == v or membership[u] == membership[v]:
            continue
        seen.add((min(u, v), max(u, v)))
    edges.extend(seen)
    return edges


def _logit(c: BehaviorCoeffs, cfg: SynthConfig, g: SocialGraph, u: int,
           n: int, cc: int, actives: list) -> float:
    mid = 0.5 * (cfg.min_active + cfg.max_active)
    half = max(0.5 * (cfg.max_active - cfg.min_active), 1.0)
    gu = int(g.gender[u])
    gsign = 0.5 if gu == 2 else (-0.5 if gu == 1 else 0.0)
    known = [v for v in actives if g.gender[v] != 0 and gu != 0]
    same = (np.mean([int(g.gender[v]) == gu for v in known]) - 0.5) if known else 0.0
    close = np.mean([_closeness(g.region_code[u], g.region_code[v])
                     for v in actives]) - 0.5
    return (c.intercept
            + c.active * (n - mid) / half
            + c.cc * (cc - 2.5)
            + c.gender * gsign
            + c.age * abs(int(g.age[u]) - 40) / 40.0
            + c.same_gender * same
            + c.distance * close)


def generate_synthetic(cfg: SynthConfig):
    """Community graph plus a simulated exposure log with planted effects.

    Active-friend sets are drawn group-first (pick 1..max_groups friend
    communities, then friends within them) so the number of connected
    components varies freely at a fixed friend count. Labels are Bernoulli
    draws from the logistic models in ``cfg``. Deterministic given the seed.
    """
    rng = np.random.default_rng(cfg.seed)
    n = cfg.node_count
    membership = (np.arange(n) * cfg.communities) // n
    edges = _planted_partition_edges(rng, membership, cfg.p_in, cfg.p_out)

    gender = rng.choice([0, 1, 2], size=n, p=[0.05, 0.475, 0.475])
    age = np.clip(rng.normal(40, 15, size=n).astype(int), 10, 80)
    comm_codes = _community_codes(cfg.communities)
    region = comm_codes[membership].copy()
    shuffle = rng.random(n) > cfg.region_mix
    region[shuffle] = comm_codes[rng.integers(0, cfg.communities,
                                              size=int(shuffle.sum()))]
    g = SocialGraph.from_edges(n, edges, gender=gender, age=age,
                               region_code=region)

    eligible = np.flatnonzero(g.degrees >= cfg.min_active)
    if len(eligible) == 0:
        raise ValueError("no user has enough friends; densify the graph")
    log = []
    for e_idx in range(cfg.exposures):
        u = int(eligible[rng.integers(len(eligible))])
        nbrs = g.neighbors(u)
        n_act = int(rng.integers(cfg.min_active,
                                 min(cfg.max_active, len(nbrs)) + 1))
        # group-first sampling: communities of u's friends, then members
        groups: dict[int, list] = {}
        for v in nbrs:
            groups.setdefault(int(membership[v]), []).append(int(v))
        group_keys = sorted(groups)
        g_max = min(n_act, len(group_keys), cfg.max_groups)
        g_sel = int(rng.integers(1, g_max + 1))
        chosen = rng.choice(len(group_keys), size=g_sel, replace=False)
        pools = [list(groups[group_keys[i]]) for i in chosen]
        capacity = sum(len(p) for p in pools)
        if capacity < n_act:
            actives = rng.choice(nbrs, size=n_act, replace=False).astype(int).tolist()
        else:
            take = [1] * g_sel
            spare = n_act - g_sel
            while spare > 0:
                i = int(rng.integers(g_sel))
                if take[i] < len(pools[i]):
                    take[i] += 1
                    spare -= 1
            actives = []
            for i, pool in enumerate(pools):
                pick = rng.choice(len(pool), size=take[i], replace=False)
                actives.extend(pool[j] for j in pick)
        circle = induce_subgraph(g, actives)
        cc = len(connected_components(circle))
        ts = float(e_idx + n_act + 1)
        friend_order = rng.permutation(len(actives))
        active_pairs = [(actives[j], ts - len(actives) + rank)
                        for rank, j in enumerate(friend_order)]
        p_wow = 1.0 / (1.0 + math.exp(-_logit(cfg.wow, cfg, g, u, n_act, cc, actives)))
        p_click = 1.0 / (1.0 + math.exp(-_logit(cfg.click, cfg, g, u, n_act, cc, actives)))
        log.append(InteractionRecord(
            user=u, item=e_idx, ts=ts,
            is_wow=bool(rng.random() < p_wow),
            is_click=bool(rng.random() < p_click),
            active_friends=active_pairs,
        ))
    return g, log
