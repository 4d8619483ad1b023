"""Training loop: two views, relational loss, Adam on the online path, EMA target."""
from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import encoder as enc
from .diffusion import DiffusionTopK, ppr_topk
from .graph import AugmentationConfig, SparseGraph, augment
from .loss import relational_loss
from .sampler import AnchorDistribution, build_distribution, sample_global_anchors

# sub-seed streams derived from the root seed
INIT, AUG1, AUG2, ANCHORS, SPLIT, PROBE, NEGATIVES = range(7)


def derive_seed(root: int, *path: int) -> np.random.SeedSequence:
    """Counter-based child seed: same ``(root, path)`` always gives the same stream."""
    return np.random.SeedSequence(int(root), spawn_key=tuple(int(p) for p in path))


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 300
    learning_rate: float = 5e-4
    ema_decay: float = 0.99
    lam: float = 1.0
    tau_online_glob: float = 0.1
    tau_target_glob: float = 0.01
    tau_online_local: float = 0.1
    tau_target_local: float = 1.0
    k_glob: int = 256
    k_local: int = 4
    alpha: float = 0.5
    beta: float = 0.1
    teleport: float = 0.15
    ppr_k_max: int = 100
    ppr_tol: float = 1e-9
    aug1: AugmentationConfig = field(default_factory=lambda: AugmentationConfig(0.3, 0.2))
    aug2: AugmentationConfig = field(default_factory=lambda: AugmentationConfig(0.4, 0.4))
    hidden_dims: tuple = (256,)
    embed_dim: int = 128
    predictor_hidden: int = 512
    symmetric: bool = False
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.hidden_dims = tuple(int(d) for d in self.hidden_dims)
        if isinstance(self.aug1, dict):
            self.aug1 = AugmentationConfig(**self.aug1)
        if isinstance(self.aug2, dict):
            self.aug2 = AugmentationConfig(**self.aug2)
        checks = [
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.learning_rate > 0, "learning_rate must be positive"),
            (0.0 <= self.ema_decay <= 1.0, "ema_decay must lie in [0, 1]"),
            (self.lam >= 0, "lambda must be nonnegative"),
            (min(self.tau_online_glob, self.tau_target_glob, self.tau_online_local,
                 self.tau_target_local) > 0, "temperatures must be positive"),
            (self.k_glob >= 1 and self.k_local >= 1, "K_glob and K_local must be >= 1"),
            (0.0 < self.alpha < 1.0, "alpha must lie in (0, 1)"),
            (self.beta >= 0, "beta must be nonnegative"),
            (0.0 < self.teleport < 1.0, "teleport must lie in (0, 1)"),
            (self.ppr_k_max >= 1, "ppr_k_max must be >= 1"),
            (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0, "Adam decay rates must lie in [0, 1)"),
            (self.adam_eps > 0, "adam_eps must be positive"),
            (self.embed_dim >= 1 and self.predictor_hidden >= 1, "layer widths must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["lambda"] = out.pop("lam")
        out["hidden_dims"] = list(self.hidden_dims)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        for key in ("aug1", "aug2"):
            if isinstance(data.get(key), dict):
                extra = set(data[key]) - {"feature_mask_prob", "edge_drop_prob"}
                if extra:
                    raise ConfigError(f"unknown keys in {key}: {', '.join(sorted(extra))}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_json(Path(path).read_text())

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


class Adam:
    """Adam with bias correction; moments keyed by parameter name."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for {name}")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def ema_update(online: dict, target: dict, gamma: float) -> None:
    """In place ``target <- gamma * target + (1 - gamma) * online``."""
    for name, t in target.items():
        o = online[name]
        if o.shape != t.shape:
            raise ValueError(f"shape mismatch for {name}: online {o.shape} vs target {t.shape}")
        t *= gamma
        t += (1.0 - gamma) * o


@dataclass
class EpochStats:
    epoch: int
    loss_glob: float
    loss_local: float
    loss_total: float
    wall_ms: float

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


def new_state(graph: SparseGraph, cfg: TrainConfig) -> enc.EncoderState:
    return enc.init_state(graph.num_features, cfg.hidden_dims, cfg.embed_dim, cfg.predictor_hidden,
                          derive_seed(cfg.seed, INIT))


def embed(state: enc.EncoderState, graph: SparseGraph) -> np.ndarray:
    """Online-encoder embeddings of the unaugmented graph."""
    return enc.gcn_forward(state.online, graph)


class Trainer:
    """Owns one run: precomputed anchors, encoder state and optimizer."""

    def __init__(self, graph: SparseGraph, cfg: TrainConfig, state: enc.EncoderState | None = None,
                 local_anchors: DiffusionTopK | None = None,
                 distribution: AnchorDistribution | None = None):
        self.graph = graph
        self.cfg = cfg
        if cfg.k_glob > graph.num_nodes:
            raise ConfigError(f"K_glob={cfg.k_glob} exceeds the node count {graph.num_nodes}")
        self.state = state if state is not None else new_state(graph, cfg)
        self.local = local_anchors if local_anchors is not None else ppr_topk(
            graph, cfg.teleport, cfg.k_local, cfg.ppr_k_max, cfg.ppr_tol)
        self.dist = distribution if distribution is not None else build_distribution(
            graph.degrees, cfg.alpha, cfg.beta)
        self.optimizer = Adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        self.features = enc.feature_operand(graph)
        self.history: list[EpochStats] = []

    def _pair_loss(self, online_view, target_view, anchors):
        cfg = self.cfg
        _, z, cache = enc.online_forward(self.state, online_view, x=self.features)
        h_target = enc.target_forward(self.state, target_view, x=self.features)
        terms = relational_loss(z, h_target, anchors, self.local.ids, cfg.lam, cfg.tau_online_glob,
                                cfg.tau_target_glob, cfg.tau_online_local, cfg.tau_target_local)
        return terms, cache

    def train_epoch(self, epoch: int) -> EpochStats:
        cfg = self.cfg
        start = time.perf_counter()
        view1 = augment(self.graph, cfg.aug1, derive_seed(cfg.seed, AUG1, epoch))
        view2 = augment(self.graph, cfg.aug2, derive_seed(cfg.seed, AUG2, epoch))
        anchors = sample_global_anchors(self.dist, cfg.k_glob, derive_seed(cfg.seed, ANCHORS, epoch))
        pairs = [(view1, view2), (view2, view1)] if cfg.symmetric else [(view1, view2)]
        glob = local = total = 0.0
        grads = None
        for online_view, target_view in pairs:
            terms, cache = self._pair_loss(online_view, target_view, anchors)
            if not np.isfinite(terms.total):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}: glob={terms.glob}, local={terms.local}, "
                    f"max_logit={terms.max_logit}")
            g = enc.online_backward(self.state, cache, terms.grad_z)
            grads = g if grads is None else {k: grads[k] + g[k] for k in grads}
            glob += terms.glob
            local += terms.local
            total += terms.total
        self.optimizer.step(self.state.online_parameters(), grads)
        ema_update(self.state.online, self.state.target, cfg.ema_decay)
        stats = EpochStats(epoch, glob, local, total, (time.perf_counter() - start) * 1e3)
        self.history.append(stats)
        return stats

    def fit(self, epochs: int | None = None, log_path=None, callback=None) -> list[EpochStats]:
        epochs = self.cfg.epochs if epochs is None else epochs
        log = open(log_path, "w") if log_path else None
        try:
            for epoch in range(len(self.history), len(self.history) + epochs):
                stats = self.train_epoch(epoch)
                if log:
                    log.write(stats.to_json() + "\n")
                if callback:
                    callback(stats)
        finally:
            if log:
                log.close()
        return self.history

    def embed(self, graph: SparseGraph | None = None) -> np.ndarray:
        return embed(self.state, self.graph if graph is None else graph)


# -- multiplex networks -------------------------------------------------------

def multiplex_pairs(layers) -> list[tuple[int, int]]:
    """All unordered layer pairs ``(a, b)``, ``a < b``."""
    if len(layers) < 2:
        raise ValueError("a multiplex network needs at least two layers")
    sizes = {layer.num_nodes for layer in layers}
    if len(sizes) != 1:
        raise ValueError(f"layers disagree on node count: {sorted(sizes)}")
    return list(itertools.combinations(range(len(layers)), 2))


def multiplex_inference(embeddings) -> np.ndarray:
    """Mean-pool per-layer node embeddings."""
    embeddings = [np.asarray(e) for e in embeddings]
    if not embeddings:
        raise ValueError("no layer embeddings given")
    shapes = {e.shape for e in embeddings}
    if len(shapes) != 1:
        raise ValueError(f"layer embeddings differ in shape: {sorted(shapes)}")
    return np.mean(np.stack(embeddings), axis=0)


class MultiplexTrainer:
    """Each layer is a view; every layer pair contributes one relational loss per epoch.

    One online/target encoder pair is shared by all layers. Global anchors are
    drawn from the inverse-degree distribution over summed layer degrees; local
    anchors for a pair come from the diffusion of its online-side layer.
    """

    def __init__(self, layers, cfg: TrainConfig):
        self.pairs = multiplex_pairs(layers)
        self.layers = list(layers)
        self.cfg = cfg
        base = self.layers[0]
        if cfg.k_glob > base.num_nodes:
            raise ConfigError(f"K_glob={cfg.k_glob} exceeds the node count {base.num_nodes}")
        self.state = new_state(base, cfg)
        self.local = [ppr_topk(layer, cfg.teleport, cfg.k_local, cfg.ppr_k_max, cfg.ppr_tol)
                      for layer in self.layers]
        self.dist = build_distribution(sum(layer.degrees for layer in self.layers), cfg.alpha, cfg.beta)
        self.optimizer = Adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        self.features = enc.feature_operand(base)
        self.props = [enc.propagation(layer) for layer in self.layers]
        self.history: list[EpochStats] = []

    def train_epoch(self, epoch: int) -> EpochStats:
        cfg = self.cfg
        start = time.perf_counter()
        anchors = sample_global_anchors(self.dist, cfg.k_glob, derive_seed(cfg.seed, ANCHORS, epoch))
        glob = local = total = 0.0
        grads = None
        for a, b in self.pairs:
            _, z, cache = enc.online_forward(self.state, self.layers[a], self.props[a], self.features)
            h_target = enc.target_forward(self.state, self.layers[b], self.props[b], self.features)
            terms = relational_loss(z, h_target, anchors, self.local[a].ids, cfg.lam, cfg.tau_online_glob,
                                    cfg.tau_target_glob, cfg.tau_online_local, cfg.tau_target_local)
            if not np.isfinite(terms.total):
                raise TrainingError(f"non-finite loss at epoch {epoch}, layer pair {(a, b)}: "
                                    f"glob={terms.glob}, local={terms.local}, max_logit={terms.max_logit}")
            g = enc.online_backward(self.state, cache, terms.grad_z)
            grads = g if grads is None else {k: grads[k] + g[k] for k in grads}
            glob += terms.glob
            local += terms.local
            total += terms.total
        self.optimizer.step(self.state.online_parameters(), grads)
        ema_update(self.state.online, self.state.target, cfg.ema_decay)
        stats = EpochStats(epoch, glob, local, total, (time.perf_counter() - start) * 1e3)
        self.history.append(stats)
        return stats

    def fit(self, epochs: int | None = None) -> list[EpochStats]:
        epochs = self.cfg.epochs if epochs is None else epochs
        for epoch in range(len(self.history), len(self.history) + epochs):
            self.train_epoch(epoch)
        return self.history

    def embed(self) -> np.ndarray:
        return multiplex_inference([enc.gcn_forward(self.state.online, layer, prop, self.features)
                                    for layer, prop in zip(self.layers, self.props)])
