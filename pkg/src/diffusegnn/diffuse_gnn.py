"""Attention GNN with hierarchical coarsening for ego-network behavior prediction.

Pipeline per batch of instances: input features (plus the FM cross span)
-> spectral smoothing -> a chain of pool blocks (attention embed GNN +
attention assignment GNN, halving the node count each step) -> mask-aware
readout over every level -> fully-connected head -> probability.

Everything runs on the autodiff tape, so one backward pass yields gradients
for all weights including the filter center mu (through the Chebyshev
quadrature coefficients).
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .feature_builder import FeatureLayout, FeatureMatrix, FMProjection, fm_second_order
from .spectral_filter import FilterParams, build_laplacian_batch, smooth

__all__ = [
    "ModelConfig",
    "AttentionLayerParams",
    "PoolBlockParams",
    "ModelParams",
    "InstanceBatch",
    "attention_additive",
    "attention_dot",
    "coarsen",
    "pool_block",
    "readout",
    "build_model",
    "forward",
    "forward_batch",
    "loss_bce",
    "loss_bce_logits",
    "zero_grads",
    "adagrad_step",
    "save_checkpoint",
    "load_checkpoint",
]

SIGMOID_CLAMP = 1e-7
ADAGRAD_EPS = 1e-10
MU_RANGE = (0.0, 2.0)


@dataclass
class ModelConfig:
    """Architecture settings; defaults follow the reference setup for m=32."""

    m: int = 32
    heads: int = 8
    head_dim: int = 16
    coarsen_steps: int = 2
    pool_ratio: float = 0.5
    include_coarsest: bool = True
    stack_depth: int = 1
    attention: str = "AA"  # or "DA"
    readout_mode: str = "max"  # or "sum"
    leaky_slope: float = 0.2
    head_hidden: int = 64
    fm_dim: int = 16
    fm_features: list | None = None  # None = every span in the layout
    no_2nd_feature: bool = False
    no_smoothing: bool = False
    filter: FilterParams = field(default_factory=FilterParams)
    seed: int = 0

    def cluster_sizes(self) -> list[int]:
        sizes = []
        cur = self.m
        for _ in range(self.coarsen_steps):
            cur = max(1, math.ceil(cur * self.pool_ratio))
            sizes.append(cur)
        return sizes


@dataclass
class AttentionLayerParams:
    """One attention layer: shared projection plus per-head score vectors."""

    w_proj: Tensor  # (in_dim, heads * head_dim)
    a_src: Tensor  # (heads, head_dim)
    a_dst: Tensor  # (heads, head_dim)
    b_src: Tensor  # (heads,), used by dot attention only
    b_dst: Tensor  # (heads,)
    heads: int
    head_dim: int
    slope: float = 0.2

    @property
    def out_dim(self) -> int:
        return self.heads * self.head_dim


@dataclass
class PoolBlockParams:
    embed_gnn: list  # stack of AttentionLayerParams
    pool_gnn: list
    out_clusters: int


@dataclass
class ModelParams:
    config: ModelConfig
    layout: FeatureLayout
    mu: Tensor  # trainable filter center
    fm: FMProjection | None
    blocks: list
    coarse_gnn: list | None
    head_w1: Tensor
    head_b1: Tensor
    head_w2: Tensor
    head_b2: Tensor

    def named_params(self):
        yield "mu", self.mu
        if self.fm is not None:
            yield from self.fm.named_params()
        for bi, block in enumerate(self.blocks):
            for tag, stack in (("embed", block.embed_gnn), ("pool", block.pool_gnn)):
                for li, layer in enumerate(stack):
                    yield from _layer_params(f"block{bi}.{tag}{li}", layer)
        if self.coarse_gnn is not None:
            for li, layer in enumerate(self.coarse_gnn):
                yield from _layer_params(f"coarse{li}", layer)
        yield "head.w1", self.head_w1
        yield "head.b1", self.head_b1
        yield "head.w2", self.head_w2
        yield "head.b2", self.head_b2


def _layer_params(prefix, layer):
    yield f"{prefix}.w_proj", layer.w_proj
    yield f"{prefix}.a_src", layer.a_src
    yield f"{prefix}.a_dst", layer.a_dst
    yield f"{prefix}.b_src", layer.b_src
    yield f"{prefix}.b_dst", layer.b_dst


@dataclass
class InstanceBatch:
    """Stacked instance fields for batched forward passes."""

    adjacency: np.ndarray  # (B, m, m) float
    mask: np.ndarray  # (B, m) bool
    active_flags: np.ndarray
    ego_flags: np.ndarray
    node_ids: np.ndarray
    labels: np.ndarray  # (B,)

    @classmethod
    def from_instances(cls, instances) -> "InstanceBatch":
        return cls(
            adjacency=np.stack([i.adjacency for i in instances]).astype(np.float64),
            mask=np.stack([i.mask for i in instances]),
            active_flags=np.stack([i.active_flags for i in instances]),
            ego_flags=np.stack([i.ego_flags for i in instances]),
            node_ids=np.stack([i.node_ids for i in instances]),
            labels=np.array([i.label for i in instances], dtype=np.float64),
        )

    def __len__(self):
        return self.adjacency.shape[0]


# --------------------------------------------------------------------------
# attention
# --------------------------------------------------------------------------

def _attention(params: AttentionLayerParams, neigh_mask: np.ndarray, x,
               dot: bool):
    """Shared attention core; (B, m, F) in, ((B, m, H*dh), alpha) out."""
    x = ad.as_tensor(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = ad.reshape(x, (1,) + x.shape)
        neigh_mask = neigh_mask[None]
    bsz, m, _ = x.shape
    h, dh = params.heads, params.head_dim
    if x.shape[-1] != params.w_proj.shape[0]:
        raise ValueError(f"attention input width {x.shape[-1]} != "
                         f"projection rows {params.w_proj.shape[0]}")
    proj = ad.reshape(ad.matmul(x, params.w_proj), (bsz, m, h, dh))
    s_src = ad.reduce_sum(ad.mul(proj, params.a_src), axis=-1)  # (B, m, H)
    s_dst = ad.reduce_sum(ad.mul(proj, params.a_dst), axis=-1)
    if dot:
        s_src = ad.add(s_src, params.b_src)
        s_dst = ad.add(s_dst, params.b_dst)
        logits = ad.mul(ad.reshape(s_src, (bsz, m, 1, h)),
                        ad.reshape(s_dst, (bsz, 1, m, h)))
    else:
        logits = ad.add(ad.reshape(s_src, (bsz, m, 1, h)),
                        ad.reshape(s_dst, (bsz, 1, m, h)))
    logits = ad.leaky_relu(logits, params.slope)
    alpha = ad.masked_softmax(logits, neigh_mask[..., None], axis=2)
    # weighted neighbor aggregation per head
    alpha_t = ad.swapaxes(ad.swapaxes(alpha, 1, 3), 2, 3)  # (B, H, i, j)
    proj_t = ad.swapaxes(proj, 1, 2)  # (B, H, j, dh)
    out = ad.swapaxes(ad.matmul(alpha_t, proj_t), 1, 2)  # (B, i, H, dh)
    out = ad.leaky_relu(ad.reshape(out, (bsz, m, h * dh)), params.slope)
    if single:
        out = ad.reshape(out, (m, h * dh))
        alpha = ad.reshape(alpha, (m, m, h))
    return out, alpha


def attention_additive(params: AttentionLayerParams, neigh_mask: np.ndarray, x):
    """GAT-style scores: softmax of leaky(a_src . W x_i + a_dst . W x_j)."""
    return _attention(params, neigh_mask, x, dot=False)


def attention_dot(params: AttentionLayerParams, neigh_mask: np.ndarray, x):
    """Dot scores: softmax of leaky((a_src . W x_i + b_src)(a_dst . W x_j + b_dst))."""
    return _attention(params, neigh_mask, x, dot=True)


def _run_stack(stack, neigh_mask, x, dot):
    alpha = None
    for layer in stack:
        x, alpha = _attention(layer, neigh_mask, x, dot)
    return x, alpha


def neighbor_mask(adjacency: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Attention neighborhoods: positive adjacency plus self-loops on real slots."""
    adj = np.asarray(adjacency)
    single = adj.ndim == 2
    if single:
        adj = adj[None]
    bsz, m, _ = adj.shape
    if mask is None:
        mask = np.ones((bsz, m), dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim == 1:
            mask = mask[None]
    neigh = adj > 0
    eye = np.eye(m, dtype=bool)
    neigh = neigh | (eye[None] & mask[:, :, None])
    neigh = neigh & mask[:, :, None] & mask[:, None, :]
    return neigh[0] if single else neigh


# --------------------------------------------------------------------------
# hierarchical coarsening
# --------------------------------------------------------------------------

def coarsen(b_assign, a, z):
    """Cluster-weighted collapse: x_next = B^T z, a_next = B^T a B."""
    b_assign = ad.as_tensor(b_assign, dtype=np.float64)
    a = ad.as_tensor(a, dtype=np.float64)
    z = ad.as_tensor(z, dtype=np.float64)
    bt = ad.swapaxes(b_assign, -1, -2)
    x_next = ad.matmul(bt, z)
    a_next = ad.matmul(bt, ad.matmul(a, b_assign))
    return x_next, a_next


def pool_block(block: PoolBlockParams, a, x, mask: np.ndarray | None = None,
               dot: bool = False):
    """One coarsening step: embed, assign (row-softmax), collapse.

    Returns (z, b_assign, a_next, x_next). ``mask`` marks real rows at the
    finest level; padded rows get an all-zero assignment row.
    """
    a_arr = a.data if isinstance(a, Tensor) else np.asarray(a, dtype=np.float64)
    neigh = neighbor_mask(a_arr, mask)
    z, _ = _run_stack(block.embed_gnn, neigh, x, dot)
    scores, _ = _run_stack(block.pool_gnn, neigh, x, dot)
    if scores.shape[-1] != block.out_clusters:
        raise ValueError("pool GNN output width must equal out_clusters")
    if mask is None:
        row_mask = np.ones(scores.shape[:-1] + (1,), dtype=bool)
    else:
        row_mask = np.asarray(mask, dtype=bool)[..., None]
    b_assign = ad.masked_softmax(scores, np.broadcast_to(row_mask, scores.shape),
                                 axis=-1)
    x_next, a_next = coarsen(b_assign, ad.as_tensor(a, dtype=np.float64), z)
    return z, b_assign, a_next, x_next


def readout(z_levels: list, mode: str = "max", mask0: np.ndarray | None = None):
    """Column-wise max or sum per level, concatenated.

    Level 0 is mask-aware: padded slots never contribute. Later levels pool
    over every cluster.
    """
    if not z_levels:
        raise ValueError("readout needs at least one level")
    if mode not in ("max", "sum"):
        raise ValueError(f"unknown readout mode {mode!r}")
    pooled = []
    for li, z in enumerate(z_levels):
        z = ad.as_tensor(z, dtype=np.float64)
        axis = z.ndim - 2
        if mode == "sum":
            pooled.append(ad.reduce_sum(z, axis=axis))
        else:
            if li == 0 and mask0 is not None:
                m = np.asarray(mask0, dtype=bool)[..., None]
            else:
                m = np.ones(z.shape, dtype=bool)
            pooled.append(ad.masked_max(z, np.broadcast_to(m, z.shape), axis=axis))
    return ad.concat(pooled, axis=-1)


# --------------------------------------------------------------------------
# model assembly / forward
# --------------------------------------------------------------------------

def _glorot(rng, shape):
    fan = sum(shape) if len(shape) > 1 else shape[0] + 1
    return rng.normal(0.0, np.sqrt(2.0 / fan), size=shape)


ATTN_VEC_INIT = 0.05  # keeps every softmax near-uniform at the start


def _init_layer(rng, in_dim, heads, head_dim, slope) -> AttentionLayerParams:
    return AttentionLayerParams(
        w_proj=Tensor(_glorot(rng, (in_dim, heads * head_dim)), requires_grad=True),
        a_src=Tensor(rng.normal(0.0, ATTN_VEC_INIT, (heads, head_dim)), requires_grad=True),
        a_dst=Tensor(rng.normal(0.0, ATTN_VEC_INIT, (heads, head_dim)), requires_grad=True),
        b_src=Tensor(np.zeros(heads), requires_grad=True),
        b_dst=Tensor(np.zeros(heads), requires_grad=True),
        heads=heads,
        head_dim=head_dim,
        slope=slope,
    )


def _init_stack(rng, in_dim, heads, head_dim, depth, slope):
    stack = []
    cur = in_dim
    for _ in range(depth):
        stack.append(_init_layer(rng, cur, heads, head_dim, slope))
        cur = heads * head_dim
    return stack


def build_model(layout: FeatureLayout, cfg: ModelConfig) -> ModelParams:
    """Seeded parameter initialization for the configured architecture."""
    rng = np.random.default_rng(cfg.seed)
    fm = None
    in_width = layout.width
    if not cfg.no_2nd_feature:
        fm = FMProjection(layout, c=cfg.fm_dim, seed=cfg.seed + 1,
                          feature_names=cfg.fm_features)
        in_width += cfg.fm_dim
    hidden = cfg.heads * cfg.head_dim
    blocks = []
    cur_dim = in_width
    for out_clusters in cfg.cluster_sizes():
        embed = _init_stack(rng, cur_dim, cfg.heads, cfg.head_dim,
                            cfg.stack_depth, cfg.leaky_slope)
        pool = _init_stack(rng, cur_dim, 1, out_clusters, cfg.stack_depth,
                           cfg.leaky_slope)
        blocks.append(PoolBlockParams(embed, pool, out_clusters))
        cur_dim = hidden
    coarse = None
    levels = len(blocks)
    if cfg.include_coarsest and cfg.coarsen_steps > 0:
        coarse = _init_stack(rng, hidden, cfg.heads, cfg.head_dim,
                             cfg.stack_depth, cfg.leaky_slope)
        levels += 1
    if cfg.coarsen_steps == 0:
        # flat variant: a single embed GNN, no pooling
        blocks = []
        coarse = _init_stack(rng, in_width, cfg.heads, cfg.head_dim,
                             cfg.stack_depth, cfg.leaky_slope)
        levels = 1
    head_in = levels * hidden
    return ModelParams(
        config=cfg,
        layout=layout,
        mu=Tensor(np.array(cfg.filter.mu, dtype=np.float64), requires_grad=True),
        fm=fm,
        blocks=blocks,
        coarse_gnn=coarse,
        head_w1=Tensor(_glorot(rng, (head_in, cfg.head_hidden)), requires_grad=True),
        head_b1=Tensor(np.zeros(cfg.head_hidden), requires_grad=True),
        # zero-init the output layer: the untrained model predicts exactly 0.5
        # instead of saturating through the amplified spectral features
        head_w2=Tensor(np.zeros((cfg.head_hidden, 1)), requires_grad=True),
        head_b2=Tensor(np.zeros(1), requires_grad=True),
    )


def forward_batch(model: ModelParams, batch: InstanceBatch,
                  features: FeatureMatrix, trace: dict | None = None,
                  return_logits: bool = False) -> Tensor:
    """Probabilities (B,) for a stacked batch; populates ``trace`` if given.

    ``return_logits`` yields the pre-sigmoid scores instead (the training
    loop pairs them with :func:`loss_bce_logits` for saturation-safe
    gradients).
    """
    cfg = model.config
    dot = cfg.attention == "DA"
    x = ad.as_tensor(features.values, dtype=np.float64)
    if model.fm is not None:
        cross = fm_second_order(FeatureMatrix(x, features.layout), model.fm)
        x = ad.concat([x, cross], axis=-1)
    if not cfg.no_smoothing:
        lb = build_laplacian_batch(batch.adjacency)
        x = smooth(lb, cfg.filter, x, mu=model.mu)
    a = batch.adjacency
    mask = batch.mask
    levels = []
    assignments = []
    for block in model.blocks:
        z, b_assign, a_next, x_next = pool_block(block, a, x, mask=mask, dot=dot)
        levels.append(z)
        assignments.append(b_assign)
        a, x, mask = a_next, x_next, None
    if model.coarse_gnn is not None:
        a_arr = a.data if isinstance(a, Tensor) else np.asarray(a)
        z, _ = _run_stack(model.coarse_gnn, neighbor_mask(a_arr, mask), x, dot)
        levels.append(z)
    zg = readout(levels, mode=cfg.readout_mode, mask0=batch.mask)
    h1 = ad.relu(ad.add(ad.matmul(zg, model.head_w1), model.head_b1))
    logit = ad.reshape(ad.add(ad.matmul(h1, model.head_w2), model.head_b2),
                       (len(batch),))
    if trace is not None:
        trace["levels"] = levels
        trace["assignments"] = assignments
        trace["readout"] = zg
    if return_logits:
        return logit
    return ad.sigmoid(logit)


def forward(model: ModelParams, instance, features: FeatureMatrix) -> float:
    """Probability for a single instance."""
    batch = InstanceBatch.from_instances([instance])
    fm = FeatureMatrix(np.asarray(features.values)[None], features.layout)
    return float(forward_batch(model, batch, fm).data[0])


def loss_bce(pred: Tensor, labels) -> Tensor:
    """Cross-entropy summed over the batch; predictions clamped at 1e-7."""
    y = np.asarray(labels, dtype=np.float64)
    p = ad.clip(ad.as_tensor(pred), SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP)
    pos = ad.mul(ad.log(p), y)
    negt = ad.mul(ad.log(ad.sub(1.0, p)), 1.0 - y)
    return ad.mul(ad.reduce_sum(ad.add(pos, negt)), -1.0)


def loss_bce_logits(logits: Tensor, labels) -> Tensor:
    """Same cross-entropy from pre-sigmoid scores.

    softplus(x) - y*x keeps the gradient (sigmoid(x) - y) finite even when
    the probabilities saturate, which the clamped form cannot.
    """
    y = np.asarray(labels, dtype=np.float64)
    return ad.reduce_sum(ad.sub(ad.softplus(logits), ad.mul(logits, y)))


def zero_grads(model: ModelParams):
    for _, p in model.named_params():
        p.grad = None


def adagrad_step(model: ModelParams, lr: float, l2: float, state: dict) -> None:
    """Adagrad update with L2 folded into the gradient, then clamp mu to [0, 2]."""
    for name, p in model.named_params():
        g = (p.grad if p.grad is not None else 0.0) + l2 * p.data
        acc = state.get(name)
        if acc is None:
            acc = np.zeros_like(p.data)
            state[name] = acc
        acc += g * g
        p.data = p.data - lr * g / np.sqrt(acc + ADAGRAD_EPS)
    model.mu.data = np.clip(model.mu.data, *MU_RANGE)


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(model: ModelParams, path):
    """Versioned npz of every tensor plus config and the layout manifest hash."""
    arrays = {f"param/{name}": p.data for name, p in model.named_params()}
    cfg = model.config
    meta = {
        "version": CHECKPOINT_VERSION,
        "manifest_hash": model.layout.manifest_hash(),
        "layout": model.layout.manifest(),
        "config": {
            "m": cfg.m, "heads": cfg.heads, "head_dim": cfg.head_dim,
            "coarsen_steps": cfg.coarsen_steps, "pool_ratio": cfg.pool_ratio,
            "include_coarsest": cfg.include_coarsest,
            "stack_depth": cfg.stack_depth, "attention": cfg.attention,
            "readout_mode": cfg.readout_mode, "leaky_slope": cfg.leaky_slope,
            "head_hidden": cfg.head_hidden, "fm_dim": cfg.fm_dim,
            "fm_features": cfg.fm_features,
            "no_2nd_feature": cfg.no_2nd_feature,
            "no_smoothing": cfg.no_smoothing, "seed": cfg.seed,
            "filter": {"mu": cfg.filter.mu, "theta": cfg.filter.theta,
                       "cheb_order": cfg.filter.cheb_order,
                       "mode": cfg.filter.mode,
                       "quad_points": cfg.filter.quad_points},
        },
    }
    np.savez_compressed(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
                        **arrays)


def load_checkpoint(path, layout: FeatureLayout) -> ModelParams:
    """Rebuild the model; refuses to load when the layout hash disagrees."""
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        if meta["manifest_hash"] != layout.manifest_hash():
            raise ValueError("checkpoint layout manifest hash does not match "
                             "the provided feature layout")
        c = meta["config"]
        cfg = ModelConfig(
            m=c["m"], heads=c["heads"], head_dim=c["head_dim"],
            coarsen_steps=c["coarsen_steps"], pool_ratio=c["pool_ratio"],
            include_coarsest=c["include_coarsest"], stack_depth=c["stack_depth"],
            attention=c["attention"], readout_mode=c["readout_mode"],
            leaky_slope=c["leaky_slope"], head_hidden=c["head_hidden"],
            fm_dim=c["fm_dim"], fm_features=c["fm_features"],
            no_2nd_feature=c["no_2nd_feature"], no_smoothing=c["no_smoothing"],
            seed=c["seed"],
            filter=FilterParams(**c["filter"]),
        )
        model = build_model(layout, cfg)
        for name, p in model.named_params():
            p.data = z[f"param/{name}"].copy()
    return model
