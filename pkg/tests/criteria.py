"""Acceptance checks. Each ``criterion_n`` returns ``(ok, detail)``.

Dataset-dependent checks take the graph as an argument so the same code runs
on the real benchmark graph and on synthetic stand-ins.
"""
from __future__ import annotations

import os
import tempfile
import time
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import shortest_path
from scipy.stats import chisquare

from rgrl import datasets as ds
from rgrl import encoder as enc
from rgrl import evaluation as ev
from rgrl.diffusion import adjacency_anchors, anchor_purity, ppr_diffuse, ppr_topk
from rgrl.graph import build_graph, graph_hash
from rgrl.loss import kl_loss, online_distribution, softmax, target_distribution
from rgrl.sampler import build_distribution, sample_global_anchors
from rgrl.trainer import (ANCHORS, TrainConfig, Trainer, derive_seed, ema_update, multiplex_inference,
                          multiplex_pairs, new_state, embed)

import gradcheck
from conftest import cycle, random_graph

REPO = Path(__file__).resolve().parents[1]
CORA_DEFAULT = REPO / "data" / "cora"
PURITY_KS = range(1, 11)
RESULTS: list[str] = []


class MissingData(RuntimeError):
    pass


def record(number: int, ok: bool, detail: str) -> str:
    line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'}: {detail}"
    RESULTS.append(line)
    print(line)
    return line


# -- Cora lookup ----------------------------------------------------------------

_cora_cache: dict = {}


def cora_dir() -> Path:
    return Path(os.environ.get("RGRL_CORA_DIR", CORA_DEFAULT))


def load_cora():
    """Cora from ``$RGRL_CORA_DIR`` or ``data/cora``; raw Planetoid/LINQS files are converted."""
    source = cora_dir()
    if "graph" in _cora_cache and _cora_cache["source"] == source:
        return _cora_cache["graph"]
    if (source / "meta.json").exists():
        g = ds.load_dataset(source)
    elif source.is_dir():
        out = Path(tempfile.mkdtemp(prefix="rgrl-cora-"))
        try:
            g = ds.load_dataset(ds.convert_cora(source, out / "cora"))
        except ds.DatasetError as exc:
            raise MissingData(str(exc)) from exc
    else:
        raise MissingData(f"Cora not found at {source} (set RGRL_CORA_DIR or run `rgrl import-cora`)")
    _cora_cache.update(source=source, graph=g)
    return g


# -- shared training cache --------------------------------------------------------

_trained: dict = {}


def trained_state(g, seed: int, epochs: int | None = None):
    """Default-config training run, memoized per (graph, seed, epochs)."""
    key = (graph_hash(g), seed, epochs)
    if key not in _trained:
        cfg = TrainConfig(seed=seed) if epochs is None else TrainConfig(seed=seed, epochs=epochs)
        start = time.perf_counter()
        trainer = Trainer(g, cfg)
        trainer.fit()
        _trained[key] = (trainer, time.perf_counter() - start)
    return _trained[key]


# -- 1: gradients -------------------------------------------------------------------

def criterion_1(seed: int = 0):
    start = time.perf_counter()
    state, v1, v2, glob, local = gradcheck.make_problem(seed)
    errors, analytic_loss, oracle_loss = gradcheck.check(state, v1, v2, glob, local, lam=1.0, step=1e-3)
    elapsed = time.perf_counter() - start
    worst = max(errors, key=errors.get)
    ok = errors[worst] < 1e-5 and elapsed < 10 and abs(analytic_loss - oracle_loss) < 1e-10
    return ok, (f"max relative error {errors[worst]:.2e} ({worst}), loss gap {abs(analytic_loss - oracle_loss):.1e}, "
                f"{elapsed:.1f}s")


# -- 2: diffusion -------------------------------------------------------------------

def criterion_2():
    g2 = build_graph([(0, 1)], np.ones((2, 1)))
    worst = 0.0
    for t in (0.05, 0.15, 0.5):
        s = ppr_diffuse(g2, t, k_max=2000, tol=0.0)
        q = (1 - t) ** 2
        expected = np.array([[t / (1 - q), t * (1 - t) / (1 - q)], [t * (1 - t) / (1 - q), t / (1 - q)]])
        worst = max(worst, float(np.abs(s - expected).max()))
    rows = ppr_diffuse(cycle(10), 0.15, k_max=500, tol=0.0).sum(axis=1)
    row_err = float(np.abs(rows - 1).max())
    return worst < 1e-8 and row_err < 1e-8, f"two-node max error {worst:.1e}, 10-cycle row-sum error {row_err:.1e}"


# -- 3: sampler -----------------------------------------------------------------------

def threshold_graph():
    """101 nodes with every degree 1..100 present.

    Nodes 1..100 are joined when ``i + j > 100``; node 0 joins 51..100.
    """
    edges = [(i, j) for i in range(1, 101) for j in range(i + 1, 101) if i + j > 100]
    edges += [(0, j) for j in range(51, 101)]
    return build_graph(edges, np.ones((101, 1)))


def criterion_3(draws: int = 100_000, root: int = 0):
    g = threshold_graph()
    deg = g.degrees
    dist = build_distribution(deg)
    picks = np.fromiter((sample_global_anchors(dist, 1, derive_seed(root, ANCHORS, i))[0] for i in range(draws)),
                        dtype=np.int64, count=draws)
    observed = np.bincount(picks, minlength=g.num_nodes)
    p = chisquare(observed, dist.probs * draws).pvalue
    order = np.argsort(deg, kind="stable")
    monotone = bool(np.all(np.diff(dist.probs[order]) <= 0))
    span = (int(deg.min()), int(deg.max()))
    ok = p > 0.01 and monotone and span == (1, 100)
    return ok, f"degrees {span[0]}-{span[1]}, chi-square p={p:.3f} over {draws} draws, monotone={monotone}"


# -- 4: loss invariants ------------------------------------------------------------------

def criterion_4(seed: int = 0):
    rng = np.random.default_rng(seed)
    z, h = rng.standard_normal((30, 16)), rng.standard_normal((30, 16))
    anchors = rng.choice(30, size=8, replace=False)
    row_err = 0.0
    for i in range(30):
        for tau in (0.01, 0.1, 1.0):
            row_err = max(row_err, abs(target_distribution(h, i, anchors, tau).sum() - 1),
                          abs(online_distribution(z, h, i, anchors, tau).sum() - 1))
    kls = [kl_loss(softmax(rng.standard_normal(12) * 3), softmax(rng.standard_normal(12) * 3)) for _ in range(1000)]
    c = rng.uniform(0.01, 100, size=30)
    scale_err = max(float(np.abs(online_distribution(z * c[:, None], h * c[::-1, None], i, anchors, 0.1)
                                 - online_distribution(z, h, i, anchors, 0.1)).max()) for i in range(30))
    sharp = True
    for i in range(30):
        hot, cold = target_distribution(h, i, anchors, 1.0), target_distribution(h, i, anchors, 0.1)
        sharp &= bool(cold.max() > hot.max() and np.sum(cold * np.log(cold + 1e-300)) > np.sum(hot * np.log(hot)))
    ok = row_err < 1e-6 and min(kls) >= 0 and scale_err < 1e-9 and sharp
    return ok, (f"row-sum error {row_err:.1e}, min KL {min(kls):.2e} over 1000 pairs, scale error {scale_err:.1e}, "
                f"lower temperature sharpens={sharp}")


# -- 5: moving average ------------------------------------------------------------------

def criterion_5(seed: int = 0):
    state = enc.init_state(8, (16,), 8, 16, seed)
    rng = np.random.default_rng(seed)
    for v in state.online.values():
        v += rng.standard_normal(v.shape)
    gamma = 0.99
    expected = {k: gamma * state.target[k] + (1.0 - gamma) * state.online[k] for k in state.target}
    ema_update(state.online, state.target, gamma)
    gap = max(float(np.abs(state.target[k] - expected[k]).max()) for k in expected)
    g = random_graph(30, 0.15, 8, seed=seed)
    before = enc.state_checksum(state.target)
    _, z, cache = enc.online_forward(state, g)
    enc.online_backward(state, cache, rng.standard_normal(z.shape))
    unchanged = enc.state_checksum(state.target) == before
    trainer = Trainer(g, TrainConfig(epochs=1, k_glob=16, hidden_dims=(16,), embed_dim=8, predictor_hidden=16),
                      state=state)
    target_before = {k: v.copy() for k, v in trainer.state.target.items()}
    online_before = {k: v.copy() for k, v in trainer.state.online.items()}
    trainer.train_epoch(0)
    step_gap = max(float(np.abs(trainer.state.target[k] - (gamma * target_before[k] + (1 - gamma)
                                                           * trainer.state.online[k])).max()) for k in target_before)
    moved = any(not np.array_equal(online_before[k], trainer.state.online[k]) for k in online_before)
    ok = gap == 0.0 and step_gap == 0.0 and unchanged and moved
    return ok, f"EMA gap {gap} (direct), {step_gap} (training step), target unchanged by backward={unchanged}"


# -- 6: node classification -------------------------------------------------------------

def criterion_6(g, train_seeds=range(5), epochs: int | None = None, budget_s: float = 900.0):
    start = time.perf_counter()
    trained, untrained = [], []
    for s in train_seeds:
        trainer, _ = trained_state(g, s, epochs)
        split = ev.SplitSpec(seed=s)
        trained.append(ev.linear_probe(trainer.embed(), g.labels, split).metrics["accuracy"])
        control = embed(new_state(g, trainer.cfg), g)
        untrained.append(ev.linear_probe(control, g.labels, split).metrics["accuracy"])
    elapsed = time.perf_counter() - start
    mean, ctrl = float(np.mean(trained)), float(np.mean(untrained))
    ok = mean >= 0.78 and mean - ctrl >= 0.05 and elapsed <= budget_s
    return ok, (f"accuracy {mean:.4f} +- {np.std(trained):.4f} over {len(trained)} seeds, untrained {ctrl:.4f}, "
                f"margin {100 * (mean - ctrl):.1f} points, {elapsed:.0f}s")


# -- 7: link prediction ------------------------------------------------------------------

def bfs_distances(g, pairs):
    """Hop distances by an independent unweighted shortest-path solve."""
    sources, inverse = np.unique(pairs[:, 0], return_inverse=True)
    dist = shortest_path(g.adjacency, unweighted=True, directed=False, indices=sources)
    return dist[inverse, pairs[:, 1]]


def link_run(g, mode: str, seed: int = 0):
    split = ev.edge_split_and_negatives(g, ev.SplitSpec.edges(seed), mode)
    cfg = TrainConfig(seed=seed)
    trainer = Trainer(split.train_graph, cfg)
    trainer.fit()
    auc = ev.link_predict(trainer.embed(), split).metrics["auc"]
    control = ev.link_predict(embed(new_state(split.train_graph, cfg), split.train_graph), split).metrics["auc"]
    return split, auc, control


def criterion_7(g, seed: int = 0):
    checks = []
    out = {}
    for mode in ("random", "hard"):
        split, auc, control = link_run(g, mode, seed)
        out[mode] = (auc, control)
        checks.append(all(len(p) == len(q) for p, q in ((split.train_pos, split.train_neg),
                                                         (split.val_pos, split.val_neg),
                                                         (split.test_pos, split.test_neg))))
        if mode == "hard":
            negs = np.vstack([split.train_neg, split.val_neg, split.test_neg])
            checks.append(bool(np.isin(bfs_distances(g, negs), (2, 3)).all()))
    counts_ok = all(checks)
    ok = out["random"][0] >= 0.80 and out["hard"][0] > out["hard"][1] and counts_ok
    return ok, (f"random AUC {out['random'][0]:.4f} (untrained {out['random'][1]:.4f}), "
                f"hard AUC {out['hard'][0]:.4f} vs untrained {out['hard'][1]:.4f}, count/BFS checks={counts_ok}")


# -- 8: anchor purity ------------------------------------------------------------------

def purity_table(g, cfg: TrainConfig | None = None):
    cfg = cfg or TrainConfig()
    adjacency = anchor_purity(adjacency_anchors(g), g.labels, PURITY_KS)
    diffusion = anchor_purity(ppr_topk(g, cfg.teleport, max(PURITY_KS), cfg.ppr_k_max, cfg.ppr_tol).rows(),
                              g.labels, PURITY_KS)
    return adjacency, diffusion


def purity_ok(g) -> tuple[bool, str]:
    adjacency, diffusion = purity_table(g)
    failing = [k for k in PURITY_KS if diffusion[k] < adjacency[k]]
    text = " ".join(f"K{k}:{diffusion[k]:.3f}/{adjacency[k]:.3f}" for k in PURITY_KS)
    return not failing, f"diffusion/adjacency {text}" + (f"; diffusion below at K={failing}" if failing else "")


def criterion_8(g_fixture, g_main):
    ok_a, text_a = purity_ok(g_fixture)
    ok_b, text_b = purity_ok(g_main)
    return ok_a and ok_b, f"fixture [{text_a}]; benchmark graph [{text_b}]"


# -- 9: degree buckets ------------------------------------------------------------------

def six_node_case() -> bool:
    deg = np.array([1, 2, 3, 4, 5, 20])
    labels = np.array([0, 0, 1, 1, 0, 1])
    preds = np.array([1, 0, 1, 1, 0, 1])
    rows = ev.misclassification_by_degree(preds, labels, deg)
    table = {(r["lo"], r["hi"]): (r["count"], r["misclassified"], r["rate"]) for r in rows}
    return table == {(1, 2): (2, 1, 0.5), (3, 4): (2, 0, 0.0), (5, 8): (1, 0, 0.0), (17, None): (1, 0, 0.0)}


def degree_table(g, seed: int = 0, epochs: int | None = None):
    trainer, _ = trained_state(g, seed, epochs)
    rep = ev.linear_probe(trainer.embed(), g.labels, ev.SplitSpec(seed=seed))
    nodes = np.asarray(rep.extra["test_nodes"])
    return ev.misclassification_by_degree(np.asarray(rep.extra["predictions"]), g.labels[nodes],
                                          g.degrees[nodes])


def criterion_9(g, seed: int = 0, epochs: int | None = None, out_path=None):
    exact = six_node_case()
    rows = degree_table(g, seed, epochs)
    tsv = ev.bucket_table_tsv(rows)
    if out_path is not None:
        Path(out_path).write_text(tsv)
    lowest = rows[0]
    ok = exact and len(rows) > 0 and sum(r["count"] for r in rows) > 0
    return ok, (f"lowest bucket [{lowest['lo']},{lowest['hi']}] rate {lowest['rate']:.4f} "
                f"({lowest['misclassified']}/{lowest['count']}), {len(rows)} buckets, six-node case exact={exact}"), tsv


# -- 10: multiplex ----------------------------------------------------------------------

def criterion_10(seed: int = 0):
    base = random_graph(20, 0.2, 4, seed=seed)
    layers = [base.with_edges(base.edges[i::4]) for i in range(4)]
    pairs = multiplex_pairs(layers)
    rng = np.random.default_rng(seed)
    e = rng.standard_normal((20, 8))
    pooled = multiplex_inference([e.copy() for _ in range(4)])
    gap = float(np.abs(pooled - e).max())
    ok = bool(len(pairs) == 6 and len(set(pairs)) == 6 and gap <= 4 * np.finfo(float).eps * np.abs(e).max())
    return ok, f"{len(pairs)} layer pairs from 4 layers, mean-pool identity gap {gap:.1e}"


# -- 11: CLI determinism ----------------------------------------------------------------

DETERMINISM_CONFIG = {"epochs": 20, "k_glob": 64, "k_local": 4, "hidden_dims": [64], "embed_dim": 32,
                      "predictor_hidden": 64}


def criterion_11(workdir):
    import json

    from rgrl.cli import main

    workdir = Path(workdir)
    config = workdir / "config.json"
    config.write_text(json.dumps(DETERMINISM_CONFIG))
    fixture = ds.PACKAGE_DATA / "sbm100"
    snapshots = []
    for run in ("a", "b"):
        out = workdir / run
        base = ["--dataset", str(fixture), "--config", str(config), "--out", str(out), "--seed", "7"]
        codes = [main(["train", *base])]
        files = {"checkpoint.bin": (out / "checkpoint.bin").read_bytes()}
        for task in ("classify", "degree-analysis", "anchor-purity"):
            codes.append(main(["eval", *base, "--checkpoint", str(out / "checkpoint.bin"), "--task", task,
                               "--seeds", "3"]))
            files[f"{task}/report.json"] = (out / "report.json").read_bytes()
        files["degree_buckets.tsv"] = (out / "degree_buckets.tsv").read_bytes()
        files["anchor_purity.tsv"] = (out / "anchor_purity.tsv").read_bytes()
        snapshots.append((codes, files))
    same = snapshots[0][1] == snapshots[1][1]
    codes_ok = all(c == 0 for c in snapshots[0][0] + snapshots[1][0])
    return same and codes_ok, f"{len(snapshots[0][1])} artifacts compared byte for byte, identical={same}"
