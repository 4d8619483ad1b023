"""Downstream evaluation: linear probe, link prediction, degree-bucket analysis."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import rankdata

from . import kernels
from .graph import SparseGraph

NODE_FRACTIONS = (0.1, 0.1, 0.8)
EDGE_FRACTIONS = (0.5, 0.2, 0.3)
DEGREE_BUCKETS = ((1, 2), (3, 4), (5, 8), (9, 16), (17, None))


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    kind: str = "node_split"
    fractions: tuple = NODE_FRACTIONS
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("node_split", "edge_split"):
            raise EvaluationError(f"unknown split kind {self.kind!r}")
        if len(self.fractions) != 3 or min(self.fractions) < 0 or abs(sum(self.fractions) - 1) > 1e-9:
            raise EvaluationError(f"split fractions must be three nonnegative numbers summing to 1, got {self.fractions}")

    @classmethod
    def edges(cls, seed: int = 0, fractions=EDGE_FRACTIONS) -> "SplitSpec":
        return cls("edge_split", tuple(fractions), seed)


@dataclass
class MetricReport:
    task: str
    metrics: dict
    per_degree_buckets: list | None = None
    config_hash: str = ""
    seeds: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"task": self.task, "metrics": self.metrics, "config_hash": self.config_hash, "seeds": self.seeds}
        if self.per_degree_buckets is not None:
            out["per_degree_buckets"] = self.per_degree_buckets
        if self.extra:
            out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def split_indices(n: int, fractions, seed) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Random disjoint, exhaustive partition of ``range(n)``."""
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return (np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_val]),
            np.sort(perm[n_train + n_val:]))


# -- metrics -------------------------------------------------------------------

def accuracy(y_true, y_pred) -> float:
    return float(np.mean(np.asarray(y_true) == np.asarray(y_pred)))


def f1_scores(y_true, y_pred, num_classes: int) -> tuple[float, float]:
    """Macro and micro F1 over one-vs-rest counts (classes absent from both count as 0)."""
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    tp = np.array([np.sum((y_pred == c) & (y_true == c)) for c in range(num_classes)], dtype=float)
    fp = np.array([np.sum((y_pred == c) & (y_true != c)) for c in range(num_classes)], dtype=float)
    fn = np.array([np.sum((y_pred != c) & (y_true == c)) for c in range(num_classes)], dtype=float)
    denom = 2 * tp + fp + fn
    per_class = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    micro_denom = 2 * tp.sum() + fp.sum() + fn.sum()
    micro = 2 * tp.sum() / micro_denom if micro_denom else 0.0
    return float(per_class.mean()), float(micro)


def auc_score(y_true, scores) -> float:
    """ROC AUC via the Mann-Whitney rank statistic (ties get average rank)."""
    y_true = np.asarray(y_true).astype(bool)
    n_pos, n_neg = int(y_true.sum()), int((~y_true).sum())
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("AUC needs both positive and negative examples")
    ranks = rankdata(scores)
    return float((ranks[y_true].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def average_precision(y_true, scores) -> float:
    """Step-wise AP: precision at each distinct threshold weighted by the recall gained."""
    y_true = np.asarray(y_true).astype(bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(y_true.sum())
    if n_pos == 0 or n_pos == len(y_true):
        raise EvaluationError("AP needs both positive and negative examples")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], y_true[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tps = np.cumsum(y)[last]
    precision = tps / (last + 1)
    recall_gain = np.diff(np.r_[0, tps]) / n_pos
    return float(np.sum(precision * recall_gain))


# -- logistic regression ------------------------------------------------------

@dataclass
class _LogReg:
    weights: np.ndarray
    bias: np.ndarray
    mean: np.ndarray
    scale: np.ndarray

    def logits(self, x: np.ndarray) -> np.ndarray:
        return ((x - self.mean) / self.scale) @ self.weights + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1)


def _fit_logreg(x, y, num_classes, reg, x_val, score_val, max_iter=500, tol=1e-5) -> tuple[_LogReg, float]:
    """Multinomial logistic regression by full-batch L-BFGS.

    Every iterate is scored on the validation set with ``score_val`` and the
    best one is kept (the later iterate wins a tie, being closer to convergence).
    """
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    xs = (x - mean) / scale
    n, d = xs.shape
    onehot = np.eye(num_classes)[y]

    def unpack(theta):
        return theta[:d * num_classes].reshape(d, num_classes), theta[d * num_classes:]

    def objective(theta):
        w, b = unpack(theta)
        logits = xs @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        loss = -np.sum(onehot * logp) / n + 0.5 * reg * np.sum(w * w)
        resid = (np.exp(logp) - onehot) / n
        grad = np.concatenate([(xs.T @ resid + reg * w).ravel(), resid.sum(axis=0)])
        return loss, grad

    best = {"score": -np.inf, "theta": None}

    def track(theta):
        w, b = unpack(theta)
        score = score_val(_LogReg(w.copy(), b.copy(), mean, scale))
        if score >= best["score"]:
            best["score"], best["theta"] = score, theta.copy()

    theta0 = np.zeros(d * num_classes + num_classes)
    track(theta0)
    result = minimize(objective, theta0, jac=True, method="L-BFGS-B", callback=track,
                      options={"maxiter": max_iter, "gtol": tol})
    track(result.x)
    w, b = unpack(best["theta"])
    return _LogReg(w, b, mean, scale), best["score"]


def _as_list(reg) -> list[float]:
    return [float(r) for r in np.atleast_1d(reg)]


def linear_probe(embeddings, labels, split: SplitSpec = SplitSpec(), reg=1e-4,
                 num_classes: int | None = None) -> MetricReport:
    """Frozen-embedding logistic-regression node classification.

    ``reg`` may be a single L2 strength or a grid; the (strength, iterate)
    with the best validation accuracy is evaluated on the test nodes.
    """
    emb = np.array(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    num_classes = int(labels.max()) + 1 if num_classes is None else num_classes
    train, val, test = split_indices(len(labels), split.fractions, split.seed)
    missing = sorted(set(range(num_classes)) - set(labels[train].tolist()))
    if missing:
        raise EvaluationError(f"classes {missing} have no training node under split seed {split.seed}; "
                              "choose another seed")
    best_model, best_score = None, -np.inf
    for r in _as_list(reg):
        model, score = _fit_logreg(emb[train], labels[train], num_classes, r, emb[val],
                                   lambda m: accuracy(labels[val], m.predict(emb[val])))
        if score > best_score:
            best_model, best_score = model, score
    pred = best_model.predict(emb[test])
    macro, micro = f1_scores(labels[test], pred, num_classes)
    metrics = {"accuracy": accuracy(labels[test], pred), "macro_f1": macro, "micro_f1": micro,
               "val_accuracy": best_score}
    return MetricReport("classify", metrics, seeds=[split.seed],
                        extra={"test_nodes": test.tolist(), "predictions": pred.tolist()})


# -- link prediction ----------------------------------------------------------

@dataclass(eq=False)
class EdgeSplit:
    train_pos: np.ndarray
    val_pos: np.ndarray
    test_pos: np.ndarray
    train_neg: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray
    mode: str
    train_graph: SparseGraph


def _random_non_edges(g: SparseGraph, count: int, rng) -> np.ndarray:
    n = g.num_nodes
    existing = set((g.edges[:, 0] * n + g.edges[:, 1]).tolist())
    available = n * (n - 1) // 2 - len(existing)
    if count > available:
        raise EvaluationError(f"need {count} negative pairs but only {available} non-adjacent pairs exist")
    chosen: dict[int, None] = {}
    while len(chosen) < count:
        draw = rng.integers(0, n, size=(2 * (count - len(chosen)) + 16, 2))
        lo, hi = draw.min(axis=1), draw.max(axis=1)
        for key in (lo * n + hi)[lo != hi].tolist():
            if key not in existing and key not in chosen:
                chosen[key] = None
                if len(chosen) == count:
                    break
    keys = np.fromiter(chosen, dtype=np.int64, count=count)
    return np.stack([keys // n, keys % n], axis=1)


def hard_negative_candidates(g: SparseGraph) -> np.ndarray:
    """Non-adjacent pairs at shortest-path distance 2 or 3 in ``g``."""
    return kernels.khop_pairs(g.indptr, g.indices, g.num_nodes, 2, 3)


def edge_split_and_negatives(g: SparseGraph, split: SplitSpec | None = None, mode: str = "random") -> EdgeSplit:
    """Partition edges and draw an equal number of negatives per partition.

    Negatives are non-edges of the original graph; ``hard`` restricts them to
    pairs within distance 2-3 of each other in the original graph. The
    returned ``train_graph`` keeps only the training positives.
    """
    split = split or SplitSpec.edges()
    if mode not in ("random", "hard"):
        raise EvaluationError(f"unknown negative mode {mode!r}")
    rng = np.random.default_rng(split.seed)
    perm = rng.permutation(g.num_edges)
    n_train = int(round(split.fractions[0] * g.num_edges))
    n_val = int(round(split.fractions[1] * g.num_edges))
    parts = [np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_val]), np.sort(perm[n_train + n_val:])]
    pos = [g.edges[p] for p in parts]
    total = g.num_edges
    if mode == "random":
        neg = _random_non_edges(g, total, rng)
    else:
        candidates = hard_negative_candidates(g)
        if len(candidates) < total:
            raise EvaluationError(f"hard negatives: found {len(candidates)} candidate pairs within 3 hops, "
                                  f"need {total}")
        neg = candidates[rng.choice(len(candidates), size=total, replace=False)]
    bounds = np.cumsum([0] + [len(p) for p in pos])
    negs = [neg[bounds[i]:bounds[i + 1]] for i in range(3)]
    return EdgeSplit(*pos, *negs, mode, g.with_edges(pos[0]))


def edge_features(embeddings: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    return embeddings[pairs[:, 0]] * embeddings[pairs[:, 1]]


def link_predict(embeddings, split: EdgeSplit, reg=1e-4) -> MetricReport:
    """Logistic regression on endpoint-product features; test AUC and AP."""
    emb = np.asarray(embeddings, dtype=np.float64)

    def stack(pos, neg):
        x = np.vstack([edge_features(emb, pos), edge_features(emb, neg)])
        y = np.r_[np.ones(len(pos), dtype=np.int64), np.zeros(len(neg), dtype=np.int64)]
        return x, y

    x_tr, y_tr = stack(split.train_pos, split.train_neg)
    x_va, y_va = stack(split.val_pos, split.val_neg)
    x_te, y_te = stack(split.test_pos, split.test_neg)
    for name, y in (("train", y_tr), ("val", y_va), ("test", y_te)):
        if y.min() == y.max():
            raise EvaluationError(f"{name} partition contains a single class")

    def score(model):
        logits = model.logits(x_va)
        return auc_score(y_va, logits[:, 1] - logits[:, 0])

    best_model, best_score = None, -np.inf
    for r in _as_list(reg):
        model, s = _fit_logreg(x_tr, y_tr, 2, r, x_va, score)
        if s > best_score:
            best_model, best_score = model, s
    logits = best_model.logits(x_te)
    margin = logits[:, 1] - logits[:, 0]
    metrics = {"auc": auc_score(y_te, margin), "ap": average_precision(y_te, margin), "val_auc": best_score}
    return MetricReport(f"linkpred-{split.mode}", metrics)


# -- degree analysis ----------------------------------------------------------

def misclassification_by_degree(predictions, labels, degrees, buckets=DEGREE_BUCKETS) -> list[dict]:
    """Misclassification rate per degree bucket over the given nodes.

    ``predictions``, ``labels`` and ``degrees`` are aligned per evaluated node.
    Buckets are inclusive ``(lo, hi)``; ``hi=None`` is unbounded. Buckets with
    no nodes are omitted.
    """
    predictions, labels, degrees = (np.asarray(a) for a in (predictions, labels, degrees))
    rows = []
    for lo, hi in buckets:
        inside = degrees >= lo
        if hi is not None:
            inside &= degrees <= hi
        count = int(inside.sum())
        if count == 0:
            continue
        wrong = int(np.sum(predictions[inside] != labels[inside]))
        rows.append({"lo": int(lo), "hi": None if hi is None else int(hi), "count": count,
                     "misclassified": wrong, "rate": wrong / count})
    return rows


def bucket_table_tsv(rows) -> str:
    lines = ["degree_lo\tdegree_hi\tcount\tmisclassified\trate"]
    for r in rows:
        hi = "inf" if r["hi"] is None else str(r["hi"])
        lines.append(f"{r['lo']}\t{hi}\t{r['count']}\t{r['misclassified']}\t{r['rate']!r}")
    return "\n".join(lines) + "\n"
