"""Command-line entry point: ``rgrl {validate,precompute,train,eval,import-cora}``."""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from . import encoder as enc
from . import evaluation as ev
from .datasets import DatasetError, convert_cora, validate_dataset
from .diffusion import adjacency_anchors, anchor_purity, cached_ppr_topk, knn_anchors, ppr_topk
from .graph import graph_hash
from .sampler import build_distribution
from .trainer import (SPLIT, MultiplexTrainer, TrainConfig, Trainer, derive_seed, embed,
                      multiplex_inference, new_state)

TASKS = ("classify", "linkpred-random", "linkpred-hard", "degree-analysis", "anchor-purity")
PURITY_KS = tuple(range(1, 11))


class CliError(Exception):
    pass


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def _update_manifest(out: Path, stage: str, args, started: str, cfg: TrainConfig | None) -> None:
    path = out / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {"stages": {}}
    manifest.update({"dataset": str(Path(args.dataset).resolve()), "output_dir": str(out.resolve()),
                     "version": version_string()})
    if getattr(args, "config", None):
        manifest["config"] = str(Path(args.config).resolve())
    if cfg is not None:
        manifest["config_hash"] = cfg.config_hash()
    manifest["stages"][stage] = {"started": started, "finished": _now(), "argv": sys.argv[1:]}
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _load(dataset) -> tuple[dict, list]:
    diag, parsed = validate_dataset(dataset)
    if not diag.ok:
        raise CliError("\n".join(diag.errors))
    return parsed["meta"], list(parsed["graphs"].values())


def _config(args, header: dict | None = None) -> TrainConfig:
    if getattr(args, "config", None):
        cfg = TrainConfig.load(args.config)
    elif header is not None and "config" in header.get("extra", {}):
        cfg = TrainConfig.from_dict(header["extra"]["config"])
    else:
        cfg = TrainConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    if out.resolve() == Path(args.dataset).resolve():
        raise CliError("--out must differ from the dataset directory")
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands -----------------------------------------------------------------

def cmd_validate(args) -> int:
    diag, _ = validate_dataset(args.dataset)
    for message in diag.errors:
        print(f"error: {message}", file=sys.stderr)
    if not diag.ok:
        return 1
    c = diag.counts
    edges = c["edges"]
    if isinstance(edges, dict):
        edges = ",".join(f"{k}={v}" for k, v in edges.items())
    print(f"# Nodes\t{c['nodes']}\n# Edges\t{edges}\n# Features\t{c['features']}\n"
          f"# Cls.\t{c['classes'] if c['classes'] is not None else '-'}")
    return 0


def cmd_precompute(args) -> int:
    started = _now()
    cfg = _config(args)
    out = _out(args)
    _, graphs = _load(args.dataset)
    for idx, g in enumerate(graphs):
        name = "ppr_topk.tsv" if len(graphs) == 1 else f"ppr_topk.{idx}.tsv"
        _, recomputed = cached_ppr_topk(g, out / name, cfg.teleport, cfg.k_local, cfg.ppr_k_max, cfg.ppr_tol)
        print(f"{name}: {'computed' if recomputed else 'cache hit'}")
    degrees = sum(g.degrees for g in graphs)
    dist = build_distribution(degrees, cfg.alpha, cfg.beta)
    lines = ["node\tdegree\tweight\tprobability"]
    lines += [f"{i}\t{int(d)}\t{w!r}\t{p!r}" for i, (d, w, p) in enumerate(zip(degrees, dist.weights, dist.probs))]
    (out / "sampler_distribution.tsv").write_text("\n".join(lines) + "\n")
    _update_manifest(out, "precompute", args, started, cfg)
    return 0


def cmd_train(args) -> int:
    started = _now()
    cfg = _config(args)
    out = _out(args)
    meta, graphs = _load(args.dataset)
    (out / "config.json").write_text(cfg.to_json())
    if len(graphs) == 1:
        g = graphs[0]
        local, _ = cached_ppr_topk(g, out / "ppr_topk.tsv", cfg.teleport, cfg.k_local, cfg.ppr_k_max, cfg.ppr_tol)
        trainer = Trainer(g, cfg, local_anchors=local)
        trainer.fit(log_path=out / "train_log.jsonl")
    else:
        trainer = MultiplexTrainer(graphs, cfg)
        with open(out / "train_log.jsonl", "w") as log:
            trainer.fit(callback=lambda s: log.write(s.to_json() + "\n"))
    last = trainer.history[-1] if trainer.history else None
    extra = {"config": cfg.to_dict(), "dataset_hash": graph_hash(graphs[0]), "layers": meta.get("layers", [])}
    enc.save_checkpoint(out / "checkpoint.bin", trainer.state, cfg.config_hash(), extra)
    if last is not None:
        print(f"epochs={len(trainer.history)} final loss_total={last.loss_total:.6f}")
    _update_manifest(out, "train", args, started, cfg)
    return 0


def _embeddings(state, graphs) -> np.ndarray:
    if len(graphs) == 1:
        return embed(state, graphs[0])
    return multiplex_inference([embed(state, g) for g in graphs])


def _split_seeds(cfg: TrainConfig, count: int) -> list[int]:
    return [int(derive_seed(cfg.seed, SPLIT, s).generate_state(1)[0]) for s in range(count)]


def _summary(per_seed: list[dict], prefix: str = "") -> dict:
    out = {}
    for key in per_seed[0]:
        values = np.array([m[key] for m in per_seed], dtype=np.float64)
        out[f"{prefix}{key}_mean"] = float(values.mean())
        out[f"{prefix}{key}_std"] = float(values.std())
    return out


def _reg(args) -> list[float]:
    return [float(v) for v in args.reg.split(",")]


def eval_classify(graphs, state, cfg, seeds, reg, with_buckets: bool):
    g = graphs[0]
    if g.labels is None:
        raise CliError("node classification needs labels.tsv")
    emb = _embeddings(state, graphs)
    control = _embeddings(new_state(g, cfg), graphs)
    trained, untrained, preds, truth, degs = [], [], [], [], []
    for s in seeds:
        split = ev.SplitSpec(seed=s)
        rep = ev.linear_probe(emb, g.labels, split, reg)
        trained.append({k: rep.metrics[k] for k in ("accuracy", "macro_f1", "micro_f1")})
        untrained.append({"accuracy": ev.linear_probe(control, g.labels, split, reg).metrics["accuracy"]})
        nodes = np.asarray(rep.extra["test_nodes"])
        preds.append(np.asarray(rep.extra["predictions"]))
        truth.append(g.labels[nodes])
        degs.append(g.degrees[nodes])
    metrics = {**_summary(trained), **_summary(untrained, "untrained_"),
               "per_seed": trained, "untrained_per_seed": untrained}
    buckets = None
    if with_buckets:
        buckets = ev.misclassification_by_degree(np.concatenate(preds), np.concatenate(truth),
                                                 np.concatenate(degs))
        metrics["lowest_bucket_rate"] = buckets[0]["rate"] if buckets else None
    return metrics, buckets


def eval_linkpred(graphs, cfg, seeds, reg, mode):
    if len(graphs) != 1:
        raise CliError("link prediction supports single-layer datasets only")
    g = graphs[0]
    trained, untrained = [], []
    for s in seeds:
        split = ev.edge_split_and_negatives(g, ev.SplitSpec.edges(s), mode)
        trainer = Trainer(split.train_graph, cfg)
        trainer.fit()
        rep = ev.link_predict(trainer.embed(), split, reg)
        trained.append({"auc": rep.metrics["auc"], "ap": rep.metrics["ap"]})
        control = ev.link_predict(embed(new_state(split.train_graph, cfg), split.train_graph), split, reg)
        untrained.append({"auc": control.metrics["auc"], "ap": control.metrics["ap"]})
        counts = [len(split.train_pos), len(split.train_neg), len(split.val_pos), len(split.val_neg),
                  len(split.test_pos), len(split.test_neg)]
        if counts[0::2] != counts[1::2]:
            raise CliError(f"negative/positive count mismatch per partition: {counts}")
    return {**_summary(trained), **_summary(untrained, "untrained_"),
            "per_seed": trained, "untrained_per_seed": untrained}


def eval_purity(graphs, state, cfg, ks):
    g = graphs[0]
    if g.labels is None:
        raise CliError("anchor purity needs labels.tsv")
    k = max(ks)
    adjacency = anchor_purity(adjacency_anchors(g), g.labels, ks)
    diffusion = anchor_purity(ppr_topk(g, cfg.teleport, k, cfg.ppr_k_max, cfg.ppr_tol).rows(), g.labels, ks)
    knn = anchor_purity(knn_anchors(_embeddings(state, graphs), k), g.labels, ks) if state is not None else None
    rows = [{"K": kk, "adjacency_ratio": adjacency[kk], "diffusion_ratio": diffusion[kk],
             "knn_ratio": knn[kk] if knn else float("nan")} for kk in ks]
    return rows


def cmd_eval(args) -> int:
    started = _now()
    if args.task not in TASKS:
        raise CliError(f"unknown task {args.task!r}; choose from {', '.join(TASKS)}")
    state, header = None, None
    if args.checkpoint:
        state, header = enc.load_checkpoint(args.checkpoint)
    elif args.task in ("classify", "degree-analysis"):
        raise CliError(f"task {args.task} needs --checkpoint")
    cfg = _config(args, header)
    out = _out(args)
    _, graphs = _load(args.dataset)
    if header is not None:
        expected = header.get("extra", {}).get("dataset_hash")
        if expected and expected != graph_hash(graphs[0]):
            raise CliError("checkpoint was trained on a different dataset (graph hash mismatch)")
    seeds = _split_seeds(cfg, args.seeds)
    reg = _reg(args)
    buckets, extra = None, {}
    if args.task in ("classify", "degree-analysis"):
        metrics, buckets = eval_classify(graphs, state, cfg, seeds, reg, args.task == "degree-analysis")
        if buckets is not None:
            (out / "degree_buckets.tsv").write_text(ev.bucket_table_tsv(buckets))
    elif args.task.startswith("linkpred"):
        metrics = eval_linkpred(graphs, cfg, seeds, reg, args.task.split("-", 1)[1])
    else:
        rows = eval_purity(graphs, state, cfg, PURITY_KS)
        lines = ["K\tadjacency_ratio\tdiffusion_ratio\tknn_ratio"]
        lines += [f"{r['K']}\t{r['adjacency_ratio']!r}\t{r['diffusion_ratio']!r}\t{r['knn_ratio']!r}" for r in rows]
        (out / "anchor_purity.tsv").write_text("\n".join(lines) + "\n")
        metrics, seeds = {"rows": rows}, []
    report = ev.MetricReport(args.task, metrics, buckets, cfg.config_hash(), seeds, extra)
    (out / "report.json").write_text(report.to_json())
    summary = {k: v for k, v in metrics.items() if isinstance(v, float)}
    print(json.dumps(summary, sort_keys=True))
    _update_manifest(out, f"eval:{args.task}", args, started, cfg)
    return 0


def cmd_import_cora(args) -> int:
    path = convert_cora(args.source, args.out)
    print(f"wrote {path}")
    return 0


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rgrl", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a dataset directory and print its counts")
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_validate)

    def common(p, checkpoint=False):
        p.add_argument("--dataset", required=True)
        p.add_argument("--config", help="JSON TrainConfig; every field optional, unknown keys rejected")
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, help="overrides the config seed")
        if checkpoint:
            p.add_argument("--checkpoint")

    p = sub.add_parser("precompute", help="diffusion top-K anchors and the sampling distribution")
    common(p)
    p.set_defaults(func=cmd_precompute)

    p = sub.add_parser("train", help="train and write checkpoint.bin and train_log.jsonl")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate embeddings and write report.json")
    common(p, checkpoint=True)
    p.add_argument("--task", required=True, choices=TASKS)
    p.add_argument("--seeds", type=int, default=5, help="number of split seeds")
    p.add_argument("--reg", default="1e-4", help="L2 strength, or a comma-separated grid")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("import-cora", help="convert raw Planetoid or LINQS Cora files")
    p.add_argument("--source", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_import_cora)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = os.environ.get("RGRL_THREADS")
    if threads:
        from threadpoolctl import threadpool_limits
        limiter = threadpool_limits(limits=int(threads))
    else:
        limiter = nullcontext()
    with limiter:
        try:
            return args.func(args)
        except (CliError, DatasetError, ValueError, RuntimeError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1


if __name__ == "__main__":
    sys.exit(main())
