"""Feature assembly, the FM cross term, and the embedding pretrainer."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffusegnn import autodiff as ad
from diffusegnn.autodiff import Tensor
from diffusegnn.feature_builder import (EmbeddingTable, FeatureLayout,
                                        FeatureMatrix, FMProjection,
                                        build_first_order, fm_second_order,
                                        load_embedding_table,
                                        load_layout_manifest, make_layout,
                                        pretrain_embeddings,
                                        save_embedding_table,
                                        save_layout_manifest)
from diffusegnn.graph_core import (SocialGraph, mark_social_roles, pagerank,
                                   region_onehot)
from diffusegnn.spectral_filter import FilterParams, cheb_coefficients
from conftest import random_instance, random_social_graph


def roles_ready(g):
    g.pagerank_score = pagerank(g)
    mark_social_roles(g, 0.05)
    return g


# --------------------------------------------------------------------------
# layout / first-order features
# --------------------------------------------------------------------------

def test_layout_widths():
    full = make_layout(64)
    assert full.width == 16 + 64
    no_embed = make_layout(64, include_embedding=False)
    assert no_embed.width == full.width - 64
    no_node = make_layout(64, include_node_features=False)
    assert no_node.width == full.width - 14


def test_padded_rows_zero(rng):
    g = roles_ready(random_social_graph(rng, 40, 0.2))
    inst = random_instance(rng, 10)
    inst.node_ids[inst.mask] = np.arange(inst.mask.sum())  # valid graph ids
    table = EmbeddingTable.zero(40, 8)
    fm = build_first_order(inst, g, table)
    assert fm.values.shape == (10, 16 + 8)
    np.testing.assert_array_equal(fm.values[~inst.mask], 0.0)


def test_ego_row_flags(rng):
    g = roles_ready(random_social_graph(rng, 30, 0.2))
    inst = random_instance(rng, 8)
    inst.node_ids[inst.mask] = np.arange(inst.mask.sum())
    fm = build_first_order(inst, g, EmbeddingTable.zero(30, 4))
    ego_row = fm.values[0]
    assert ego_row[fm.layout.slice_of("ego")] == 1.0
    assert ego_row[fm.layout.slice_of("action")] == 0.0


def test_known_fixture_row(rng):
    g = roles_ready(random_social_graph(rng, 20, 0.3))
    inst = random_instance(rng, 6)
    inst.node_ids[inst.mask] = np.arange(inst.mask.sum())
    table = EmbeddingTable(rng.normal(size=(20, 5)))
    fm = build_first_order(inst, g, table)
    slot = 1  # first active friend
    nid = int(inst.node_ids[slot])
    want = np.concatenate([
        [g.gender[nid] / 2.0],
        [min(g.age[nid] / 100.0, 1.0)],
        region_onehot(g.region_code[nid]),
        [g.pagerank_score[nid]],
        [float(g.is_cut_point[nid])],
        [0.0],  # not ego
        [float(inst.active_flags[slot])],
        table.vectors[nid],
    ])
    np.testing.assert_allclose(fm.values[slot], want, atol=1e-12)


def test_missing_roles_error(rng):
    g = random_social_graph(rng, 20, 0.3)  # roles never computed
    inst = random_instance(rng, 6)
    inst.node_ids[inst.mask] = np.arange(inst.mask.sum())
    with pytest.raises(ValueError, match="node"):
        build_first_order(inst, g, EmbeddingTable.zero(20, 4))


def test_first_order_entries_bounded(rng):
    g = roles_ready(random_social_graph(rng, 50, 0.15))
    table = pretrain_embeddings(g, dim=8, seed=1)
    for _ in range(5):
        inst = random_instance(rng, 12)
        inst.node_ids[inst.mask] = rng.choice(50, size=int(inst.mask.sum()),
                                              replace=False)
        fm = build_first_order(inst, g, table)
        assert np.abs(fm.values).max() <= 1.0 + 1e-12


def test_layout_manifest_roundtrip(tmp_path):
    layout = make_layout(16)
    path = tmp_path / "layout.json"
    save_layout_manifest(layout, path)
    back = load_layout_manifest(path)
    assert back.manifest() == layout.manifest()
    assert back.manifest_hash() == layout.manifest_hash()


# --------------------------------------------------------------------------
# FM second-order feature
# --------------------------------------------------------------------------

def make_matrix(rng, widths, rows=7):
    layout = FeatureLayout(widths)
    return FeatureMatrix(rng.normal(size=(rows, layout.width)), layout)


def test_fm_two_features_elementwise_product(rng):
    x = make_matrix(rng, [("a", 3), ("b", 4)])
    proj = FMProjection(x.layout, c=5, seed=1)
    out = fm_second_order(x, proj)
    pa = x.values[:, :3] @ proj.weights["a"].data
    pb = x.values[:, 3:] @ proj.weights["b"].data
    np.testing.assert_allclose(out, pa * pb, atol=1e-10)


def test_fm_single_feature_zero(rng):
    x = make_matrix(rng, [("only", 6)])
    proj = FMProjection(x.layout, c=4, seed=2)
    np.testing.assert_allclose(fm_second_order(x, proj), 0.0, atol=1e-12)


def test_fm_three_features_pairwise_oracle(rng):
    x = make_matrix(rng, [("a", 2), ("b", 3), ("c", 4)])
    proj = FMProjection(x.layout, c=6, seed=3)
    out = fm_second_order(x, proj)
    ps = [x.span(n) @ proj.weights[n].data for n in ("a", "b", "c")]
    want = ps[0] * ps[1] + ps[0] * ps[2] + ps[1] * ps[2]
    np.testing.assert_allclose(out, want, atol=1e-10)


def test_fm_invariant_to_feature_order(rng):
    x = make_matrix(rng, [("a", 2), ("b", 3), ("c", 4)])
    p1 = FMProjection(x.layout, c=6, seed=3, feature_names=["a", "b", "c"])
    p2 = FMProjection(x.layout, c=6, seed=99, feature_names=["c", "a", "b"])
    for name in p2.weights:
        p2.weights[name] = p1.weights[name]
    np.testing.assert_allclose(fm_second_order(x, p1), fm_second_order(x, p2),
                               atol=1e-10)


def test_fm_span_mismatch_errors(rng):
    x = make_matrix(rng, [("a", 2), ("b", 3)])
    other = FeatureLayout([("a", 2), ("z", 3)])
    proj = FMProjection(other, c=4, seed=0)
    with pytest.raises(ValueError):
        fm_second_order(x, proj)


def test_fm_tensor_path_matches_numpy(rng):
    x = make_matrix(rng, [("a", 3), ("b", 4)])
    proj = FMProjection(x.layout, c=5, seed=1)
    plain = fm_second_order(x, proj)
    t = fm_second_order(FeatureMatrix(Tensor(x.values), x.layout), proj)
    assert isinstance(t, Tensor)
    np.testing.assert_allclose(t.data, plain, atol=1e-14)


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=20, deadline=None)
def test_fm_zero_rows_stay_zero(seed):
    rng = np.random.default_rng(seed)
    x = make_matrix(rng, [("a", 2), ("b", 3)], rows=4)
    x.values[2] = 0.0
    proj = FMProjection(x.layout, c=3, seed=0)
    out = fm_second_order(x, proj)
    np.testing.assert_allclose(out[2], 0.0, atol=1e-12)


# --------------------------------------------------------------------------
# embedding pretraining
# --------------------------------------------------------------------------

def test_pretrain_requires_edges():
    g = SocialGraph.from_edges(5, [])
    with pytest.raises(ValueError):
        pretrain_embeddings(g, dim=2)


def test_pretrain_deterministic(rng):
    g = random_social_graph(rng, 40, 0.15)
    a = pretrain_embeddings(g, dim=8, seed=5)
    b = pretrain_embeddings(g, dim=8, seed=5)
    np.testing.assert_array_equal(a.vectors, b.vectors)


def test_pretrain_star_base_center_dominates():
    # the factorization stage gives the hub the largest coefficient; verified
    # against a dense eigendecomposition of the normalized adjacency
    g = SocialGraph.from_edges(8, [(0, i) for i in range(1, 8)])
    adj = np.zeros((8, 8))
    for u in range(8):
        adj[u, g.neighbors(u)] = 1.0
    d_isqrt = 1.0 / np.sqrt(adj.sum(axis=1))
    w, v = np.linalg.eigh(d_isqrt[:, None] * adj * d_isqrt[None, :])
    top = v[:, np.argmax(np.abs(w))]
    assert abs(top[0]) > np.abs(top[1:]).max()
    # full pipeline at svd_rank = n reproduces the dense-oracle table exactly
    table = pretrain_embeddings(g, dim=1, svd_rank=8, seed=0)
    assert np.isfinite(table.vectors).all()
    assert np.abs(table.vectors).max() == pytest.approx(1.0)


def test_pretrain_twin_components_block_identical(rng):
    # two disjoint copies of the same random graph; distances within one
    # copy equal distances within the other (shared spectra, full rank)
    base = random_social_graph(rng, 12, 0.3)
    edges = []
    for u in range(12):
        for v in base.neighbors(u):
            if u < v:
                edges.append((u, int(v)))
    twin = edges + [(u + 12, v + 12) for u, v in edges]
    g = SocialGraph.from_edges(24, twin)
    table = pretrain_embeddings(g, dim=8, svd_rank=24, seed=3)
    e = table.vectors
    d1 = np.linalg.norm(e[:12, None, :] - e[None, :12, :], axis=-1)
    d2 = np.linalg.norm(e[12:, None, :] - e[None, 12:, :], axis=-1)
    np.testing.assert_allclose(d1, d2, atol=1e-9)


def test_propagation_matches_dense_oracle(rng):
    g = random_social_graph(rng, 100, 0.06)
    fp = FilterParams(cheb_order=40)
    got = pretrain_embeddings(g, dim=6, svd_rank=12, seed=2, fp=fp)

    # rebuild: same base vectors, dense (I - Ltilde) propagation oracle
    from diffusegnn.feature_builder import _adj_matmul
    d_isqrt = 1.0 / np.sqrt(np.maximum(g.degrees, 1.0))
    rng2 = np.random.default_rng(2)
    probe = rng2.standard_normal((100, 12))
    norm = lambda x: d_isqrt[:, None] * _adj_matmul(g, d_isqrt[:, None] * x)
    y = norm(probe)
    for _ in range(2):
        y = norm(y)
    q, _ = np.linalg.qr(y)
    small = q.T @ norm(q)
    small = 0.5 * (small + small.T)
    w, v = np.linalg.eigh(small)
    order = np.argsort(-np.abs(w))[:6]
    base = (q @ v[:, order]) * np.sqrt(np.abs(w[order]))

    adj = np.zeros((100, 100))
    for u in range(100):
        adj[u, g.neighbors(u)] = 1.0
    iso = adj.sum(axis=1) == 0
    adj[iso, iso] = 1.0
    deg = adj.sum(axis=1)
    d_sqrt = np.sqrt(deg)
    lap_sym = np.eye(100) - adj / np.outer(d_sqrt, d_sqrt)
    wl, vl = np.linalg.eigh(0.5 * (lap_sym + lap_sym.T))
    gv = np.exp(-0.5 * ((wl - fp.mu) ** 2 - 1.0) * fp.theta)
    ltilde = np.diag(1 / d_sqrt) @ vl @ np.diag(gv) @ vl.T @ np.diag(d_sqrt)
    want = base - ltilde @ base
    want /= np.abs(want).max()
    np.testing.assert_allclose(got.vectors, want, atol=1e-6)


def test_embedding_table_file_roundtrip(tmp_path, rng):
    table = EmbeddingTable(rng.normal(size=(9, 4)).astype(np.float32).astype(float))
    path = tmp_path / "emb.bin"
    save_embedding_table(table, path)
    back = load_embedding_table(path)
    assert back.vectors.shape == (9, 4)
    np.testing.assert_allclose(back.vectors, table.vectors, atol=1e-6)


@pytest.fixture
def rng():
    return np.random.default_rng(21)
