import numpy as np
import pytest

from diffusegnn.ego_sampler import EgoInstance
from diffusegnn.graph_core import SocialGraph, Subgraph


def random_adjacency(rng, n, p=0.3) -> np.ndarray:
    """Symmetric 0/1 adjacency with zero diagonal."""
    a = (rng.random((n, n)) < p).astype(np.uint8)
    a = np.triu(a, 1)
    return a + a.T


def random_subgraph(rng, n, p=0.3, ids=None) -> Subgraph:
    if ids is None:
        ids = list(range(n))
    return Subgraph(ids, random_adjacency(rng, n, p))


def random_social_graph(rng, n, p=0.1) -> SocialGraph:
    a = random_adjacency(rng, n, p)
    iu, ju = np.nonzero(np.triu(a, 1))
    return SocialGraph.from_edges(
        n, list(zip(iu.tolist(), ju.tolist())),
        gender=rng.choice([0, 1, 2], size=n, p=[0.1, 0.45, 0.45]),
        age=rng.integers(10, 80, size=n),
        region_code=rng.integers(100000, 600000, size=n),
    )


def random_instance(rng, m, connected=True, active_count=None) -> EgoInstance:
    """Random valid instance: k real slots (spanning tree + extras), rest padding."""
    k = int(rng.integers(2, m + 1))
    a = np.zeros((m, m), dtype=np.uint8)
    if connected:
        for i in range(1, k):
            j = int(rng.integers(0, i))
            a[i, j] = a[j, i] = 1
    extra = rng.random((m, m)) < 0.25
    for i in range(k):
        for j in range(i + 1, k):
            if extra[i, j]:
                a[i, j] = a[j, i] = 1
    ids = np.full(m, -1, dtype=np.int64)
    ids[:k] = rng.choice(10 * m, size=k, replace=False)
    mask = np.zeros(m, dtype=bool)
    mask[:k] = True
    active = np.zeros(m, dtype=bool)
    if active_count is None:
        active_count = int(rng.integers(1, k))
    active[1:1 + min(active_count, k - 1)] = True
    ego = np.zeros(m, dtype=bool)
    ego[0] = True
    return EgoInstance(a, ids, mask, active, ego, int(rng.integers(2)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
