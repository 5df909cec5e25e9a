"""Training loop, evaluation metrics, and the hand-crafted-feature baseline.

Metrics follow the usual definitions: AUC is the Mann-Whitney statistic
with average ranks for ties; precision/recall/F1 come from a fixed or
validation-tuned threshold. Training is mini-batch Adagrad with early
stopping on validation AUC, fully determined by the seed.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import diffuse_gnn as dg
from .diffuse_gnn import InstanceBatch, ModelConfig, ModelParams
from .feature_builder import (EmbeddingTable, FeatureLayout,
                              build_first_order_batch, make_layout)
from .graph_core import SocialGraph, connected_components, induce_subgraph, \
    local_clustering_coefficient
from .ego_sampler import sample_bfs, sample_rwr

__all__ = [
    "TrainConfig",
    "MetricsReport",
    "rebalance",
    "auc",
    "prf1",
    "evaluate_scores",
    "train",
    "score_instances",
    "lr_baseline",
    "LogisticRegressionModel",
    "make_handcrafted_extractor",
]


@dataclass
class TrainConfig:
    behavior: str = "wow"
    lr: float = 0.01  # reference setup: 0.01 for wow, 0.1 for click
    l2: float = 0.0005
    batch_size: int = 256
    max_epochs: int = 30
    patience: int = 5
    pos_neg_ratio: float = 1.5
    seed: int = 0
    attention: str = "AA"
    no_pretrain: bool = False
    no_node_feature: bool = False
    no_2nd_feature: bool = False
    no_smoothing: bool = False
    tune_threshold: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.lr <= 0 or self.pos_neg_ratio <= 0:
            raise ValueError("lr and pos_neg_ratio must be positive")
        if self.behavior not in ("wow", "click"):
            raise ValueError("behavior must be wow or click")

    def ablation_tags(self) -> list[str]:
        return [t for t, on in (("no_pretrain", self.no_pretrain),
                                ("no_node_feature", self.no_node_feature),
                                ("no_2nd_feature", self.no_2nd_feature),
                                ("no_smoothing", self.no_smoothing)) if on]

    def make_layout(self, embedding_dim: int) -> FeatureLayout:
        return make_layout(embedding_dim,
                           include_embedding=not self.no_pretrain,
                           include_node_features=not self.no_node_feature)

    def model_config(self) -> ModelConfig:
        cfg = self.model
        cfg.attention = self.attention
        cfg.no_2nd_feature = self.no_2nd_feature
        cfg.no_smoothing = self.no_smoothing
        cfg.seed = self.seed
        return cfg


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    auc: float
    threshold: float = 0.5
    loss_trace: list = field(default_factory=list)  # (epoch, train_loss, val_auc)

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall,
                "f1": self.f1, "auc": self.auc, "threshold": self.threshold,
                "loss_trace": self.loss_trace}

    def save_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    def save_trace_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "train_loss", "val_auc"])
            w.writerows(self.loss_trace)


def rebalance(instances: list, ratio: float, seed: int, label_of=None) -> list:
    """Keep all positives, uniformly subsample negatives toward pos:neg = ratio:1.

    Output preserves the input order; deterministic given the seed. Never
    upsamples: if negatives are scarce already, they are all kept.
    """
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    if label_of is None:
        label_of = lambda x: x.label
    labels = np.array([int(bool(label_of(x))) for x in instances])
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("rebalance requires both classes present")
    target = min(n_neg, int(round(n_pos / ratio)))
    rng = np.random.default_rng(seed)
    neg_idx = np.flatnonzero(labels == 0)
    keep_neg = set(rng.choice(neg_idx, size=target, replace=False).tolist())
    return [x for i, x in enumerate(instances) if labels[i] == 1 or i in keep_neg]


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties averaged."""
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    sorted_x = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC requires both classes present")
    ranks = _average_ranks(scores)
    rank_sum = ranks[labels == 1].sum()
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def prf1(scores, labels, threshold: float = 0.5):
    """Precision, recall, F1 at a fixed decision threshold (score >= threshold)."""
    if not (0.0 < threshold < 1.0):
        raise ValueError("threshold must be in (0,1)")
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    pred = scores >= threshold
    tp = int((pred & (labels == 1)).sum())
    fp = int((pred & (labels == 0)).sum())
    fn = int((~pred & (labels == 1)).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def _tune_threshold(scores, labels) -> float:
    """Threshold in (0,1) maximizing F1 on the given set."""
    best_t, best_f1 = 0.5, -1.0
    for t in np.unique(np.clip(scores, 1e-6, 1 - 1e-6)):
        _, _, f1 = prf1(scores, labels, float(t))
        if f1 > best_f1:
            best_t, best_f1 = float(t), f1
    return best_t


def evaluate_scores(scores, labels, threshold: float = 0.5) -> MetricsReport:
    p, r, f1 = prf1(scores, labels, threshold)
    return MetricsReport(p, r, f1, auc(scores, labels), threshold)


# --------------------------------------------------------------------------
# model training
# --------------------------------------------------------------------------

class _FeatureSource:
    """Builds per-batch feature matrices from stacked instance fields."""

    def __init__(self, g: SocialGraph, table: EmbeddingTable,
                 layout: FeatureLayout):
        self.g = g
        self.table = table
        self.layout = layout

    def build(self, batch: InstanceBatch):
        return build_first_order_batch(batch.node_ids, batch.mask,
                                       batch.active_flags, batch.ego_flags,
                                       self.g, self.table, self.layout)


def score_instances(model: ModelParams, instances: list, source: _FeatureSource,
                    batch_size: int = 512) -> np.ndarray:
    scores = []
    for lo in range(0, len(instances), batch_size):
        batch = InstanceBatch.from_instances(instances[lo:lo + batch_size])
        probs = dg.forward_batch(model, batch, source.build(batch))
        scores.append(probs.data)
    return np.concatenate(scores)


def train(model: ModelParams, splits, cfg: TrainConfig, g: SocialGraph,
          table: EmbeddingTable, log_fn=None):
    """Mini-batch Adagrad with early stopping on validation AUC.

    ``splits`` is (train, val, test) lists of EgoInstance. Returns
    (best parameter snapshot, MetricsReport on test). Raises on divergence.
    """
    train_set, val_set, test_set = splits
    if not train_set or not val_set:
        raise ValueError("train and validation splits must be nonempty")
    source = _FeatureSource(g, table, model.layout)
    rng = np.random.default_rng(cfg.seed)
    state: dict = {}
    best = {"auc": -1.0, "params": None, "epoch": -1}
    trace = []
    val_labels = np.array([i.label for i in val_set])
    epochs_since_best = 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(train_set))
        total_loss = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            chunk = [train_set[i] for i in order[lo:lo + cfg.batch_size]]
            batch = InstanceBatch.from_instances(chunk)
            dg.zero_grads(model)
            logits = dg.forward_batch(model, batch, source.build(batch),
                                      return_logits=True)
            loss = dg.loss_bce_logits(logits, batch.labels)
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
            loss.backward()
            dg.adagrad_step(model, cfg.lr, cfg.l2, state)
            total_loss += float(loss.data)
        train_loss = total_loss / len(train_set)
        val_auc = auc(score_instances(model, val_set, source), val_labels)
        trace.append((epoch, train_loss, val_auc))
        if log_fn:
            log_fn(f"epoch {epoch}: train_loss={train_loss:.4f} val_auc={val_auc:.4f}")
        if val_auc > best["auc"]:
            best = {"auc": val_auc, "epoch": epoch,
                    "params": {n: p.data.copy() for n, p in model.named_params()}}
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= cfg.patience:
                break
    if best["params"] is not None:
        for name, p in model.named_params():
            p.data = best["params"][name]
    threshold = 0.5
    if cfg.tune_threshold:
        threshold = _tune_threshold(score_instances(model, val_set, source),
                                    val_labels)
    test_labels = np.array([i.label for i in test_set]) if test_set else np.array([])
    if len(test_set):
        report = evaluate_scores(score_instances(model, test_set, source),
                                 test_labels, threshold)
    else:
        report = MetricsReport(0.0, 0.0, 0.0, 0.5, threshold)
    report.loss_trace = trace
    return model, report


def sample_split_instances(g: SocialGraph, record_splits, cfg: TrainConfig,
                           sampler: str = "bfs", restart_prob: float = 0.4):
    """Sample EgoInstances for (train, val, test) record lists."""
    out = []
    for part in record_splits:
        instances = []
        for idx, rec in enumerate(part):
            label = rec.label(cfg.behavior)
            if sampler == "bfs":
                inst = sample_bfs(g, rec, m=cfg.model.m, label=label)
            else:
                inst = sample_rwr(g, rec, m=cfg.model.m,
                                  restart_prob=restart_prob,
                                  seed=cfg.seed + idx, label=label)
            instances.append(inst)
        out.append(instances)
    return tuple(out)


# --------------------------------------------------------------------------
# logistic-regression baseline
# --------------------------------------------------------------------------

def make_handcrafted_extractor(g: SocialGraph, include_cc: bool = True):
    """Feature vector per interaction record, mirroring the baseline design.

    Ego demographics and roles, the active-friend count, the number of
    connected components of the active-friend subgraph (optional), the
    ego's local clustering coefficient over {ego} + active friends, and the
    mean and sum of neighborhood-Jaccard overlaps between ego and each
    active friend.
    """
    if g.pagerank_score is None or g.is_cut_point is None:
        raise ValueError("social roles must be computed before extracting features")

    def jaccard(u, v):
        nu = set(int(x) for x in g.neighbors(u))
        nv = set(int(x) for x in g.neighbors(v))
        union = len(nu | nv)
        return len(nu & nv) / union if union else 0.0

    def extract(rec) -> np.ndarray:
        u = rec.user
        actives = [v for v, _ in rec.active_friends]
        circle = induce_subgraph(g, actives)
        feats = [
            g.gender[u] / 2.0,
            min(g.age[u] / 100.0, 1.0),
            float(g.is_opinion_leader[u]),
            float(g.is_cut_point[u]),
            float(len(actives)),
        ]
        if include_cc:
            feats.append(float(len(connected_components(circle))))
        ego_net = induce_subgraph(g, [u] + actives)
        feats.append(local_clustering_coefficient(ego_net, u))
        overlaps = [jaccard(u, v) for v in actives]
        feats.append(float(np.mean(overlaps)) if overlaps else 0.0)
        feats.append(float(np.sum(overlaps)))
        return np.array(feats)

    return extract


@dataclass
class LogisticRegressionModel:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    std: np.ndarray

    def scores(self, x: np.ndarray) -> np.ndarray:
        z = (x - self.mean) / self.std
        logit = z @ self.weights + self.bias
        return 1.0 / (1.0 + np.exp(-np.clip(logit, -500, 500)))


def fit_logistic(x: np.ndarray, y: np.ndarray, l2: float = 1e-4,
                 lr: float = 1.0, iters: int = 3000,
                 tol: float = 1e-9) -> LogisticRegressionModel:
    """Full-batch gradient descent on standardized features."""
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0] = 1.0
    z = (x - mean) / std
    n, d = z.shape
    w = np.zeros(d)
    b = 0.0
    for _ in range(iters):
        p = 1.0 / (1.0 + np.exp(-np.clip(z @ w + b, -500, 500)))
        err = p - y
        gw = z.T @ err / n + l2 * w
        gb = err.mean()
        w -= lr * gw
        b -= lr * gb
        if np.abs(gw).max() < tol and abs(gb) < tol:
            break
    return LogisticRegressionModel(w, b, mean, std)


def lr_baseline(features_of, splits, cfg: TrainConfig) -> MetricsReport:
    """Train/evaluate logistic regression on (train, val, test) record splits."""
    train_recs, val_recs, test_recs = splits
    if not train_recs:
        raise ValueError("empty training split")

    def stack(recs):
        x = np.stack([features_of(r) for r in recs])
        y = np.array([r.label(cfg.behavior) for r in recs], dtype=np.float64)
        return x, y

    x_tr, y_tr = stack(train_recs)
    model = fit_logistic(x_tr, y_tr, l2=cfg.l2)
    threshold = 0.5
    if cfg.tune_threshold and val_recs:
        x_v, y_v = stack(val_recs)
        threshold = _tune_threshold(model.scores(x_v), y_v)
    x_te, y_te = stack(test_recs)
    return evaluate_scores(model.scores(x_te), y_te, threshold)
