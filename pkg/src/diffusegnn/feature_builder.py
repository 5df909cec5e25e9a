"""Per-node input features for ego-network instances.

A feature matrix is a dense (m, d) block plus a layout of named spans:
demographics (gender, age, region buckets), social roles (PageRank score,
cut-point flag), context flags (ego, action), a pretrained embedding, and
optionally a factorization-machine cross span computed from the others.

Also hosts the lightweight global-embedding pretrainer: randomized
truncated SVD of the degree-normalized adjacency followed by one pass of
band-pass spectral propagation.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph_core import REGION_BUCKETS, SocialGraph
from .spectral_filter import FilterParams, cheb_coefficients

AGE_SCALE = 100.0
GENDER_SCALE = 2.0

DEMOGRAPHIC_SPANS = ("gender", "age", "region")
ROLE_SPANS = ("pagerank", "cut_point")
CONTEXT_SPANS = ("ego", "action")

__all__ = [
    "Span",
    "FeatureLayout",
    "FeatureMatrix",
    "EmbeddingTable",
    "FMProjection",
    "make_layout",
    "build_first_order",
    "build_first_order_batch",
    "fm_second_order",
    "pretrain_embeddings",
    "save_embedding_table",
    "load_embedding_table",
    "save_layout_manifest",
    "load_layout_manifest",
]


@dataclass(frozen=True)
class Span:
    name: str
    offset: int
    width: int


class FeatureLayout:
    """Ordered, contiguous, non-overlapping named spans."""

    def __init__(self, widths: list[tuple[str, int]]):
        spans = []
        offset = 0
        for name, w in widths:
            spans.append(Span(name, offset, w))
            offset += w
        self.spans = spans
        self.width = offset
        self._by_name = {s.name: s for s in spans}

    def __contains__(self, name):
        return name in self._by_name

    def __iter__(self):
        return iter(self.spans)

    def names(self) -> list[str]:
        return [s.name for s in self.spans]

    def slice_of(self, name: str) -> slice:
        s = self._by_name[name]
        return slice(s.offset, s.offset + s.width)

    def manifest(self) -> dict:
        return {"width": self.width,
                "spans": [{"name": s.name, "offset": s.offset, "width": s.width}
                          for s in self.spans]}

    def manifest_hash(self) -> str:
        import hashlib
        blob = json.dumps(self.manifest(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_manifest(cls, manifest: dict) -> "FeatureLayout":
        return cls([(s["name"], s["width"]) for s in manifest["spans"]])


@dataclass
class FeatureMatrix:
    """Dense feature values (leading axes free, last axis = layout width)."""

    values: object  # ndarray or autodiff Tensor
    layout: FeatureLayout

    def span(self, name: str):
        sl = self.layout.slice_of(name)
        if isinstance(self.values, Tensor):
            return self.values[..., sl]
        return self.values[..., sl]


@dataclass
class EmbeddingTable:
    """Global per-node embedding vectors (width e) plus their provenance."""

    vectors: np.ndarray  # (n, e)
    source: str = "pretrained"  # or "zero"

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def zero(cls, node_count: int, dim: int = 64) -> "EmbeddingTable":
        return cls(np.zeros((node_count, dim)), source="zero")


def make_layout(embedding_dim: int, include_embedding: bool = True,
                include_node_features: bool = True) -> FeatureLayout:
    """First-order layout; ablations drop whole spans."""
    widths = []
    if include_node_features:
        widths += [("gender", 1), ("age", 1), ("region", REGION_BUCKETS),
                   ("pagerank", 1), ("cut_point", 1)]
    widths += [("ego", 1), ("action", 1)]
    if include_embedding:
        widths += [("embedding", embedding_dim)]
    return FeatureLayout(widths)


def _region_buckets(codes: np.ndarray) -> np.ndarray:
    return ((codes.astype(np.int64) * 2654435761) & 0xFFFFFFFF) % REGION_BUCKETS


def build_first_order_batch(node_ids: np.ndarray, mask: np.ndarray,
                            active_flags: np.ndarray, ego_flags: np.ndarray,
                            g: SocialGraph, table: EmbeddingTable,
                            layout: FeatureLayout | None = None,
                            dtype=np.float64) -> FeatureMatrix:
    """Vectorized feature assembly for stacked instances (B, m)."""
    if layout is None:
        layout = make_layout(table.dim)
    node_ids = np.asarray(node_ids)
    mask = np.asarray(mask, dtype=bool)
    ids = np.where(mask, node_ids, 0)
    out = np.zeros(node_ids.shape + (layout.width,), dtype=dtype)
    if "gender" in layout:
        if g.pagerank_score is None or g.is_cut_point is None:
            bad = int(node_ids[mask][0]) if mask.any() else -1
            raise ValueError(f"node {bad}: social roles not computed "
                             "(run pagerank + mark_social_roles first)")
        out[..., layout.slice_of("gender")] = \
            (g.gender[ids] / GENDER_SCALE)[..., None]
        out[..., layout.slice_of("age")] = \
            np.clip(g.age[ids] / AGE_SCALE, 0.0, 1.0)[..., None]
        eye = np.eye(REGION_BUCKETS, dtype=dtype)
        out[..., layout.slice_of("region")] = eye[_region_buckets(g.region_code[ids])]
        out[..., layout.slice_of("pagerank")] = g.pagerank_score[ids][..., None]
        out[..., layout.slice_of("cut_point")] = \
            g.is_cut_point[ids].astype(dtype)[..., None]
    out[..., layout.slice_of("ego")] = \
        np.asarray(ego_flags, dtype=dtype)[..., None]
    out[..., layout.slice_of("action")] = \
        np.asarray(active_flags, dtype=dtype)[..., None]
    if "embedding" in layout:
        if table.vectors.shape[0] < g.node_count:
            raise ValueError("embedding table smaller than graph")
        out[..., layout.slice_of("embedding")] = table.vectors[ids]
    out *= mask[..., None]  # padded rows stay all-zero
    return FeatureMatrix(out, layout)


def build_first_order(instance, g: SocialGraph, table: EmbeddingTable,
                      layout: FeatureLayout | None = None) -> FeatureMatrix:
    """Feature matrix (m, d) for a single EgoInstance."""
    fm = build_first_order_batch(instance.node_ids[None], instance.mask[None],
                                 instance.active_flags[None],
                                 instance.ego_flags[None], g, table, layout)
    return FeatureMatrix(fm.values[0], fm.layout)


class FMProjection:
    """Per-span projections into a shared cross space of dimension c."""

    def __init__(self, layout: FeatureLayout, c: int = 16, seed: int = 0,
                 feature_names: list[str] | None = None, dtype=np.float64):
        self.c = c
        self.feature_names = list(feature_names) if feature_names is not None \
            else layout.names()
        rng = np.random.default_rng(seed)
        self.weights = {}
        for name in self.feature_names:
            w = layout._by_name[name].width
            scale = np.sqrt(2.0 / (w + c))
            self.weights[name] = Tensor(
                rng.normal(0.0, scale, size=(w, c)).astype(dtype),
                requires_grad=True)

    def named_params(self):
        for name, t in self.weights.items():
            yield f"fm.{name}", t


def fm_second_order(x: FeatureMatrix, proj: FMProjection):
    """Second-order cross feature 0.5 * ((sum_i W_i x_i)^2 - sum_i (W_i x_i)^2).

    Elementwise squares; equals the sum over feature pairs of elementwise
    products of their projections. Returns the same array flavor as the
    input values (Tensor in, Tensor out).
    """
    missing = [n for n in proj.feature_names if n not in x.layout]
    if missing:
        raise ValueError(f"projection features missing from layout: {missing}")
    tensor_out = isinstance(x.values, Tensor)
    values = x.values if tensor_out else Tensor(np.asarray(x.values, dtype=np.float64))
    total = None
    sq_total = None
    for name in proj.feature_names:
        p = ad.matmul(values[..., x.layout.slice_of(name)], proj.weights[name])
        total = p if total is None else ad.add(total, p)
        sq = ad.square(p)
        sq_total = sq if sq_total is None else ad.add(sq_total, sq)
    out = ad.mul(ad.sub(ad.square(total), sq_total), 0.5)
    return out if tensor_out else out.data


# --------------------------------------------------------------------------
# global embedding pretraining
# --------------------------------------------------------------------------

def _adj_matmul(g: SocialGraph, x: np.ndarray, self_loop_isolated: bool = False) -> np.ndarray:
    """(A x) over the CSR graph for a stacked (n, k) operand."""
    n = g.node_count
    if len(g.indices) == 0:
        y = np.zeros_like(x)
    else:
        gathered = x[g.indices]
        starts = np.minimum(g.indptr[:-1], len(g.indices) - 1)
        y = np.add.reduceat(gathered, starts, axis=0)
        empty = np.diff(g.indptr) == 0
        y[empty] = 0.0
    if self_loop_isolated:
        iso = g.degrees == 0
        y[iso] = x[iso]
    return y


def pretrain_embeddings(g: SocialGraph, dim: int = 64,
                        fp: FilterParams | None = None,
                        svd_rank: int | None = None,
                        seed: int = 0) -> EmbeddingTable:
    """Spectrally propagated embeddings of the global friendship graph.

    Base vectors come from a randomized truncated eigendecomposition of the
    degree-normalized adjacency (scaled by sqrt of singular value); one
    Chebyshev pass of (I - Ltilde) with the band-pass kernel then folds in
    multi-hop structure. The table is max-abs normalized to [-1, 1].
    """
    if g.edge_count == 0:
        raise ValueError("cannot pretrain on a graph with no edges")
    if fp is None:
        fp = FilterParams()
    if svd_rank is None:
        svd_rank = min(dim + 16, g.node_count)
    if not (dim <= svd_rank <= g.node_count):
        raise ValueError("need dim <= svd_rank <= node_count")
    rng = np.random.default_rng(seed)
    d_isqrt = 1.0 / np.sqrt(np.maximum(g.degrees, 1.0))

    def norm_matmul(x):
        return d_isqrt[:, None] * _adj_matmul(g, d_isqrt[:, None] * x)

    # randomized symmetric eigendecomposition with two power passes
    probe = rng.standard_normal((g.node_count, svd_rank))
    y = norm_matmul(probe)
    for _ in range(2):
        y = norm_matmul(y)
    q, _ = np.linalg.qr(y)
    small = q.T @ norm_matmul(q)
    small = 0.5 * (small + small.T)
    w, v = np.linalg.eigh(small)
    order = np.argsort(-np.abs(w))[:dim]
    base = (q @ v[:, order]) * np.sqrt(np.abs(w[order]))

    # one propagation pass E <- (I - Ltilde) E on the global graph
    deg = np.maximum(g.degrees, 1.0).astype(np.float64)

    def prop(x):  # D^-1 A' x with unit self-loops on isolated rows
        return _adj_matmul(g, x, self_loop_isolated=True) / deg[:, None]

    coeffs = cheb_coefficients(fp)
    t_prev = base
    t_cur = -prop(base)  # (L - I) base
    ltilde = coeffs[0] * t_prev + coeffs[1] * t_cur
    for jj in range(2, fp.cheb_order + 1):
        t_next = -2.0 * prop(t_cur) - t_prev
        ltilde += coeffs[jj] * t_next
        t_prev, t_cur = t_cur, t_next
    out = base - ltilde
    peak = np.abs(out).max()
    if peak > 0:
        out = out / peak
    return EmbeddingTable(out, source="pretrained")


# --------------------------------------------------------------------------
# file formats
# --------------------------------------------------------------------------

def save_embedding_table(table: EmbeddingTable, path):
    """Binary layout: uint32 node_count, uint32 dim, row-major float32."""
    n, e = table.vectors.shape
    with open(path, "wb") as f:
        f.write(struct.pack("<II", n, e))
        f.write(table.vectors.astype(np.float32).tobytes())


def load_embedding_table(path) -> EmbeddingTable:
    with open(path, "rb") as f:
        n, e = struct.unpack("<II", f.read(8))
        vec = np.frombuffer(f.read(4 * n * e), dtype=np.float32)
    return EmbeddingTable(vec.reshape(n, e).astype(np.float64))


def save_layout_manifest(layout: FeatureLayout, path):
    with open(path, "w") as f:
        json.dump(layout.manifest(), f, indent=2)


def load_layout_manifest(path) -> FeatureLayout:
    with open(path) as f:
        return FeatureLayout.from_manifest(json.load(f))
