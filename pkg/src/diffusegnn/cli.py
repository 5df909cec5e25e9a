"""Command line: dataset synthesis, pretraining, sampling, training,
evaluation, analytics, and conversion of public cascade dumps.

Every run writes a resolved-config JSON next to its outputs so any artifact
can be reproduced from its directory alone.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import analytics as an
from . import diffuse_gnn as dg
from . import ego_sampler as es
from . import feature_builder as fb
from . import graph_core as gc
from . import train_eval as te
from .spectral_filter import FilterParams

__all__ = ["main", "build_parser"]


def _write_config(args, out_dir=None, sibling=None):
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    if out_dir is not None:
        path = os.path.join(out_dir, "resolved_config.json")
    else:
        path = str(sibling) + ".config.json"
    with open(path, "w") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)


def _load_graph(args) -> gc.SocialGraph:
    g = gc.load_edge_list(args.graph)
    if getattr(args, "attributes", None):
        gc.load_attributes_csv(args.attributes, g)
    return g


def _prepare_roles(g: gc.SocialGraph, damping=0.85, quantile=0.01):
    g.pagerank_score = gc.pagerank(g, damping=damping)
    gc.mark_social_roles(g, ol_quantile=quantile)


def _filter_params(args) -> FilterParams:
    return FilterParams(mu=args.mu, theta=args.theta,
                        cheb_order=args.cheb_order, mode=args.smooth_mode)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_synth(args):
    cfg = an.SynthConfig(
        node_count=args.nodes, communities=args.communities,
        p_in=args.p_in, p_out=args.p_out, exposures=args.exposures,
        min_active=args.min_active, max_active=args.max_active,
        seed=args.seed,
        wow=an.BehaviorCoeffs(intercept=args.wow_intercept,
                              active=args.wow_active, cc=args.wow_cc,
                              gender=args.wow_gender, age=args.wow_age,
                              same_gender=args.wow_same_gender,
                              distance=args.wow_distance),
        click=an.BehaviorCoeffs(intercept=args.click_intercept,
                                active=args.click_active, cc=args.click_cc,
                                gender=args.click_gender, age=args.click_age,
                                same_gender=args.click_same_gender,
                                distance=args.click_distance),
    )
    g, log = an.generate_synthetic(cfg)
    os.makedirs(args.out, exist_ok=True)
    gc.save_edge_list(g, os.path.join(args.out, "graph.edges"))
    gc.save_attributes_csv(g, os.path.join(args.out, "attributes.csv"))
    es.save_log_jsonl(log, os.path.join(args.out, "log.jsonl"))
    _write_config(args, out_dir=args.out)
    print(f"wrote graph ({g.node_count} nodes, {g.edge_count} edges) and "
          f"{len(log)} exposures to {args.out}")


def cmd_pretrain(args):
    g = _load_graph(args)
    table = fb.pretrain_embeddings(g, dim=args.dim, fp=_filter_params(args),
                                   svd_rank=args.svd_rank, seed=args.seed)
    fb.save_embedding_table(table, args.out)
    _write_config(args, sibling=args.out)
    print(f"wrote {table.vectors.shape[0]}x{table.dim} embedding table to {args.out}")


def cmd_sample(args):
    g = _load_graph(args)
    log = es.load_log_jsonl(args.log)
    log = es.filter_interactions(log, args.min_active)
    if not log:
        raise SystemExit("no interactions left after filtering")
    instances = []
    for idx, rec in enumerate(log):
        label = rec.label(args.behavior)
        if args.sampler == "bfs":
            instances.append(es.sample_bfs(g, rec, m=args.m, tau=args.tau,
                                           label=label))
        else:
            instances.append(es.sample_rwr(g, rec, m=args.m,
                                           restart_prob=args.restart_prob,
                                           seed=args.seed + idx, label=label))
    es.save_instance_cache(instances, args.out)
    layout = fb.make_layout(args.dim)
    fb.save_layout_manifest(layout, str(args.out) + ".layout.json")
    _write_config(args, sibling=args.out)
    print(f"wrote {len(instances)} instances (m={args.m}) to {args.out}")


def _train_config(args) -> te.TrainConfig:
    model_cfg = dg.ModelConfig(
        m=args.m, heads=args.heads, head_dim=args.head_dim,
        coarsen_steps=args.coarsen_steps, readout_mode=args.readout,
        include_coarsest=not args.exclude_coarsest,
        fm_dim=args.fm_dim, filter=_filter_params(args), seed=args.seed,
    )
    lr = args.lr if args.lr is not None else (0.01 if args.behavior == "wow" else 0.1)
    return te.TrainConfig(
        behavior=args.behavior, lr=lr, l2=args.l2,
        batch_size=args.batch_size, max_epochs=args.epochs,
        patience=args.patience, pos_neg_ratio=args.ratio, seed=args.seed,
        attention=args.attention,
        no_pretrain="no_pretrain" in args.ablation,
        no_node_feature="no_node_feature" in args.ablation,
        no_2nd_feature="no_2nd_feature" in args.ablation,
        no_smoothing="no_smoothing" in args.ablation,
        tune_threshold=args.tune_threshold,
        model=model_cfg,
    )


def _load_table(args, g) -> fb.EmbeddingTable:
    if getattr(args, "embeddings", None):
        return fb.load_embedding_table(args.embeddings)
    return fb.EmbeddingTable.zero(g.node_count, args.dim)


def cmd_train(args):
    g = _load_graph(args)
    _prepare_roles(g)
    cfg = _train_config(args)
    table = _load_table(args, g)
    log = es.load_log_jsonl(args.log)
    log = es.filter_interactions(log, args.min_active)
    log = te.rebalance(log, cfg.pos_neg_ratio, cfg.seed,
                       label_of=lambda r: r.label(cfg.behavior))
    rec_splits = es.time_split(log, args.train_frac, args.val_frac)
    splits = te.sample_split_instances(g, rec_splits, cfg, sampler=args.sampler,
                                       restart_prob=args.restart_prob)
    layout = cfg.make_layout(table.dim)
    model = dg.build_model(layout, cfg.model_config())
    model, report = te.train(model, splits, cfg, g, table,
                             log_fn=print if args.verbose else None)
    os.makedirs(args.out, exist_ok=True)
    dg.save_checkpoint(model, os.path.join(args.out, "checkpoint.npz"))
    report.save_json(os.path.join(args.out, "metrics.json"))
    report.save_trace_csv(os.path.join(args.out, "loss_trace.csv"))
    manifest = layout.manifest()
    manifest["ablations"] = cfg.ablation_tags()
    with open(os.path.join(args.out, "checkpoint_manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)
    _write_config(args, out_dir=args.out)
    print(f"test metrics: auc={report.auc:.4f} f1={report.f1:.4f} "
          f"precision={report.precision:.4f} recall={report.recall:.4f}")


def cmd_eval(args):
    g = _load_graph(args)
    _prepare_roles(g)
    table = _load_table(args, g)
    cfg = _train_config(args)
    layout = cfg.make_layout(table.dim)
    model = dg.load_checkpoint(args.checkpoint, layout)
    if args.cache:
        instances = es.load_instance_cache(args.cache)
    else:
        log = es.filter_interactions(es.load_log_jsonl(args.log), args.min_active)
        instances = [es.sample_bfs(g, r, m=model.config.m, label=r.label(cfg.behavior))
                     for r in log]
    source = te._FeatureSource(g, table, layout)
    scores = te.score_instances(model, instances, source)
    labels = np.array([i.label for i in instances])
    report = te.evaluate_scores(scores, labels)
    os.makedirs(args.out, exist_ok=True)
    report.save_json(os.path.join(args.out, "metrics.json"))
    if args.dump_assignments:
        _dump_assignments(model, instances[:args.dump_assignments], source,
                          os.path.join(args.out, "assignments.csv"))
    _write_config(args, out_dir=args.out)
    print(f"eval metrics: auc={report.auc:.4f} f1={report.f1:.4f}")


def _dump_assignments(model, instances, source, path):
    """Per-node hard cluster ids per pooling level, one row per real slot."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["instance", "slot", "node_id", "active", "level", "cluster"])
        for idx, inst in enumerate(instances):
            batch = dg.InstanceBatch.from_instances([inst])
            trace = {}
            dg.forward_batch(model, batch, source.build(batch), trace=trace)
            for level, b in enumerate(trace["assignments"]):
                hard = np.argmax(b.data[0], axis=-1)
                if level == 0:
                    for slot in np.flatnonzero(inst.mask):
                        w.writerow([idx, int(slot), int(inst.node_ids[slot]),
                                    int(inst.active_flags[slot]), level,
                                    int(hard[slot])])
                else:
                    for slot, c in enumerate(hard):
                        w.writerow([idx, int(slot), -1, -1, level, int(c)])


def cmd_analyze(args):
    g = _load_graph(args)
    log = es.load_log_jsonl(args.log)
    if args.min_user_interactions > 1:
        log = es.filter_min_user_interactions(log, args.min_user_interactions)
    os.makedirs(args.out, exist_ok=True)
    _prepare_roles(g)
    outputs = {
        "rate_gender.csv": an.rate_by_demographics(log, g, "gender"),
        "rate_age.csv": an.rate_by_demographics(log, g, "age"),
        "rate_gender_age.csv": an.rate_by_demographics(log, g, "gender_age"),
        "dyadic_gender.csv": an.rate_dyadic(log, g, "gender"),
        "dyadic_age.csv": an.rate_dyadic(log, g, "age"),
        "dyadic_distance.csv": an.rate_dyadic(log, g, "distance"),
        "dyadic_role_ol.csv": an.rate_dyadic(log, g, "role_ol"),
        "dyadic_role_sh.csv": an.rate_dyadic(log, g, "role_sh"),
        "triadic_gender.csv": an.rate_triadic(log, g, "gender"),
        "triadic_age_diff.csv": an.rate_triadic(log, g, "age_diff"),
        "triadic_distance.csv": an.rate_triadic(log, g, "distance"),
        "diversity_raw.csv": an.structural_diversity_curves(log, g, core_k=0),
        "diversity_1core.csv": an.structural_diversity_curves(log, g, core_k=1),
    }
    for name, table in outputs.items():
        table.save_csv(os.path.join(args.out, name))
    _write_config(args, out_dir=args.out)
    print(f"wrote {len(outputs)} analysis tables to {args.out}")


def cmd_convert_weibo(args):
    """Convert a Weibo-style following network + retweet cascades to the log format.

    Network file: first line "n m"; then one line per user:
    "<uid> <k> <nbr> <flag> ..." (flags ignored, edges collapsed undirected).
    Cascades file: per cascade, a header line
    "<item_id> <root_uid> <root_ts> <n_retweets>" followed by one line of
    "<uid> <ts>" pairs (empty when n_retweets = 0).
    """
    with open(args.network) as f:
        first = f.readline().split()
        n = int(first[0])
        edges = []
        for line in f:
            parts = line.split()
            if not parts:
                continue
            u = int(parts[0])
            k = int(parts[1])
            for i in range(k):
                v = int(parts[2 + 2 * i])
                if v != u:
                    edges.append((u, v))
    g = gc.SocialGraph.from_edges(n, edges)
    log = []
    with open(args.cascades) as f:
        while True:
            header = f.readline()
            if not header.strip():
                break
            item, root, root_ts, k = header.split()
            item, root, root_ts, k = int(item), int(root), float(root_ts), int(k)
            body = f.readline().split() if k > 0 else []
            events = [(root, root_ts)] + \
                [(int(body[2 * i]), float(body[2 * i + 1])) for i in range(k)]
            events.sort(key=lambda e: e[1])
            acted = {u: t for u, t in events}
            # positives: the retweeters themselves, judged at action time
            for u, t in events:
                if u == root or u >= n:
                    continue
                active = sorted(((int(v), acted[int(v)]) for v in g.neighbors(u)
                                 if int(v) in acted and acted[int(v)] < t),
                                key=lambda p: p[1])
                if len(active) >= args.min_active:
                    log.append(es.InteractionRecord(u, item, t, True, False, active))
            # negatives: exposed bystanders, judged at cascade end
            t_end = events[-1][1] + 1.0
            bystanders = set()
            for u, _ in events:
                if u < n:
                    bystanders.update(int(v) for v in g.neighbors(u))
            for u in sorted(bystanders - set(acted)):
                active = sorted(((int(v), acted[int(v)]) for v in g.neighbors(u)
                                 if int(v) in acted),
                                key=lambda p: p[1])
                if len(active) >= args.min_active:
                    log.append(es.InteractionRecord(u, item, t_end, False, False,
                                                    active))
    es.save_log_jsonl(log, args.out)
    _write_config(args, sibling=args.out)
    print(f"wrote {len(log)} interaction records to {args.out}")


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _add_filter_flags(p):
    p.add_argument("--mu", type=float, default=0.4)
    p.add_argument("--theta", type=float, default=7.0)
    p.add_argument("--cheb-order", type=int, default=10)
    p.add_argument("--smooth-mode", choices=["chebyshev", "exact"],
                   default="chebyshev")


def _add_model_flags(p):
    p.add_argument("--m", type=int, default=32)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--head-dim", type=int, default=16)
    p.add_argument("--coarsen-steps", type=int, default=2)
    p.add_argument("--readout", choices=["max", "sum"], default="max")
    p.add_argument("--exclude-coarsest", action="store_true")
    p.add_argument("--fm-dim", type=int, default=16)
    p.add_argument("--attention", choices=["AA", "DA"], default="AA")
    _add_filter_flags(p)


def _add_train_flags(p):
    p.add_argument("--behavior", choices=["wow", "click"], default="wow")
    p.add_argument("--lr", type=float, default=None,
                   help="default 0.01 for wow, 0.1 for click")
    p.add_argument("--l2", type=float, default=0.0005)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--ratio", type=float, default=1.5,
                   help="positive:negative rebalancing ratio")
    p.add_argument("--ablation", action="append", default=[],
                   choices=["no_pretrain", "no_node_feature", "no_2nd_feature",
                            "no_smoothing"])
    p.add_argument("--tune-threshold", action="store_true")
    p.add_argument("--train-frac", type=float, default=0.5)
    p.add_argument("--val-frac", type=float, default=0.25)
    p.add_argument("--sampler", choices=["bfs", "rwr"], default="bfs")
    p.add_argument("--restart-prob", type=float, default=0.4)
    p.add_argument("--min-active", type=int, default=2)
    p.add_argument("--verbose", action="store_true")
    _add_model_flags(p)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="diffusegnn",
                                 description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic graph + cascade log")
    p.add_argument("--out", required=True)
    p.add_argument("--nodes", type=int, default=5000)
    p.add_argument("--communities", type=int, default=50)
    p.add_argument("--p-in", type=float, default=0.35)
    p.add_argument("--p-out", type=float, default=0.002)
    p.add_argument("--exposures", type=int, default=40000)
    p.add_argument("--min-active", type=int, default=2)
    p.add_argument("--max-active", type=int, default=7)
    p.add_argument("--seed", type=int, default=0)
    defaults_w = an.default_wow_coeffs()
    defaults_c = an.default_click_coeffs()
    for name in ("intercept", "active", "cc", "gender", "age", "same_gender",
                 "distance"):
        p.add_argument(f"--wow-{name.replace('_', '-')}", dest=f"wow_{name}",
                       type=float, default=getattr(defaults_w, name))
        p.add_argument(f"--click-{name.replace('_', '-')}", dest=f"click_{name}",
                       type=float, default=getattr(defaults_c, name))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="pretrain global node embeddings")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--svd-rank", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    _add_filter_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("sample", help="sample ego-network instances to a cache")
    p.add_argument("--graph", required=True)
    p.add_argument("--attributes")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--behavior", choices=["wow", "click"], default="wow")
    p.add_argument("--sampler", choices=["bfs", "rwr"], default="bfs")
    p.add_argument("--m", type=int, default=32)
    p.add_argument("--tau", type=int, default=2)
    p.add_argument("--restart-prob", type=float, default=0.4)
    p.add_argument("--min-active", type=int, default=2)
    p.add_argument("--dim", type=int, default=64,
                   help="embedding width recorded in the layout manifest")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train", help="train a behavior prediction model")
    p.add_argument("--graph", required=True)
    p.add_argument("--attributes")
    p.add_argument("--log", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--dim", type=int, default=64,
                   help="embedding width when no table is given")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--graph", required=True)
    p.add_argument("--attributes")
    p.add_argument("--log")
    p.add_argument("--cache")
    p.add_argument("--embeddings")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-assignments", type=int, default=0,
                   help="write cluster assignments for the first N instances")
    p.add_argument("--seed", type=int, default=0)
    _add_train_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="emit the measurement tables as CSV")
    p.add_argument("--graph", required=True)
    p.add_argument("--attributes")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-user-interactions", type=int, default=1)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("convert-weibo",
                       help="convert a Weibo-style dump to the JSON-lines log")
    p.add_argument("--network", required=True)
    p.add_argument("--cascades", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-active", type=int, default=1)
    p.set_defaults(func=cmd_convert_weibo)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
