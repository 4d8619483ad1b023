"""Dataset directories, validation, synthetic fixtures and Cora converters.

A dataset directory holds::

    edges.tsv      two tab-separated 0-based node ids per line
    features.tsv   one tab-separated row of reals per node
    labels.tsv     optional, one integer per line
    meta.json      {"name", "num_nodes", "num_features", "num_classes", ["layers"]}

Multiplex datasets list layer names under ``layers`` and store each layer's
edges in ``edges.<layer>.tsv``.
"""
from __future__ import annotations

import json
import pickle
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import SparseGraph, build_graph

PACKAGE_DATA = Path(__file__).parent / "data"


class DatasetError(ValueError):
    pass


@dataclass
class Diagnostics:
    errors: list = field(default_factory=list)
    counts: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.errors


def _read_edges(path: Path, num_nodes: int, diag: Diagnostics) -> np.ndarray:
    pairs = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        try:
            i, j = (int(p) for p in parts)
        except ValueError:
            diag.errors.append(f"{path.name}:{lineno}: expected two tab-separated integers, got {line!r}")
            continue
        for v in (i, j):
            if not 0 <= v < num_nodes:
                diag.errors.append(f"{path.name}:{lineno}: node id {v} out of range [0, {num_nodes})")
        pairs.append((i, j))
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def _read_features(path: Path, num_features: int | None, diag: Diagnostics) -> np.ndarray:
    rows = []
    width = num_features
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        parts = line.split("\t")
        if width is None:
            width = len(parts)
        if len(parts) != width:
            diag.errors.append(f"{path.name}:{lineno}: ragged row with {len(parts)} values, expected {width}")
            return np.zeros((0, width or 0), dtype=np.float32)
        try:
            rows.append(np.array(parts, dtype=np.float32))
        except ValueError:
            diag.errors.append(f"{path.name}:{lineno}: non-numeric feature value")
            return np.zeros((0, width), dtype=np.float32)
    return np.vstack(rows) if rows else np.zeros((0, width or 0), dtype=np.float32)


def _read_labels(path: Path, num_classes: int | None, diag: Diagnostics) -> np.ndarray:
    labels = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        try:
            value = int(line)
        except ValueError:
            diag.errors.append(f"{path.name}:{lineno}: label {line!r} is not an integer")
            continue
        if value < 0 or (num_classes is not None and value >= num_classes):
            diag.errors.append(f"{path.name}:{lineno}: label {value} outside [0, {num_classes})")
        labels.append(value)
    return np.asarray(labels, dtype=np.int64)


def edge_files(directory: Path, meta: dict) -> dict[str, Path]:
    layers = meta.get("layers")
    if layers:
        return {name: directory / f"edges.{name}.tsv" for name in layers}
    return {"": directory / "edges.tsv"}


def validate_dataset(directory) -> tuple[Diagnostics, dict]:
    """Check a dataset directory; returns diagnostics and the parsed arrays."""
    directory = Path(directory)
    diag = Diagnostics()
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        diag.errors.append("meta.json: missing")
        return diag, {}
    meta = json.loads(meta_path.read_text())
    for key in ("num_nodes", "num_features"):
        if key not in meta:
            diag.errors.append(f"meta.json: missing {key!r}")
    if diag.errors:
        return diag, {}
    n, f = int(meta["num_nodes"]), int(meta["num_features"])
    num_classes = meta.get("num_classes")
    features = _read_features(directory / "features.tsv", f, diag) if (directory / "features.tsv").exists() else None
    if features is None:
        diag.errors.append("features.tsv: missing")
    elif not diag.errors and features.shape[0] != n:
        diag.errors.append(f"features.tsv: {features.shape[0]} rows, meta.json says {n} nodes")
    layers = {}
    for name, path in edge_files(directory, meta).items():
        if not path.exists():
            diag.errors.append(f"{path.name}: missing")
            continue
        layers[name] = _read_edges(path, n, diag)
    labels = None
    if (directory / "labels.tsv").exists():
        labels = _read_labels(directory / "labels.tsv", num_classes, diag)
        if len(labels) != n:
            diag.errors.append(f"labels.tsv: {len(labels)} labels for {n} nodes")
        elif num_classes is not None and len(np.unique(labels)) != num_classes:
            diag.errors.append(f"labels.tsv: {len(np.unique(labels))} distinct labels, meta.json says {num_classes}")
    if diag.errors:
        return diag, {}
    graphs = {name: build_graph(pairs, features, labels, n) for name, pairs in layers.items()}
    for name, g in graphs.items():
        a = g.adjacency
        if (a != a.T).nnz:
            diag.errors.append(f"edges{'.' + name if name else ''}.tsv: adjacency not symmetric after load")
    first = next(iter(graphs.values()))
    diag.counts = {
        "nodes": n,
        "edges": {k or "edges": v.num_edges for k, v in graphs.items()} if meta.get("layers") else first.num_edges,
        "features": f,
        "classes": int(num_classes) if num_classes is not None else None,
    }
    return diag, {"meta": meta, "graphs": graphs}


def load_dataset(directory) -> SparseGraph:
    """Load a single-layer dataset, raising on any validation error."""
    diag, parsed = validate_dataset(directory)
    if not diag.ok:
        raise DatasetError("; ".join(diag.errors))
    graphs = parsed["graphs"]
    if len(graphs) != 1:
        raise DatasetError("multiplex dataset: use load_multiplex")
    return next(iter(graphs.values()))


def load_multiplex(directory) -> tuple[list[str], list[SparseGraph]]:
    diag, parsed = validate_dataset(directory)
    if not diag.ok:
        raise DatasetError("; ".join(diag.errors))
    return list(parsed["graphs"]), list(parsed["graphs"].values())


def _fmt(x: float) -> str:
    return repr(float(x)) if x != int(x) else str(int(x))


def write_dataset(directory, name: str, features, layers: dict[str, np.ndarray], labels=None) -> Path:
    """Write a dataset directory. ``layers`` maps layer name to an edge array;
    a single unnamed layer (key ``""``) is written as ``edges.tsv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    features = np.asarray(features, dtype=np.float32)
    meta = {"name": name, "num_nodes": int(features.shape[0]), "num_features": int(features.shape[1])}
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        meta["num_classes"] = int(labels.max()) + 1
        (directory / "labels.tsv").write_text("".join(f"{int(v)}\n" for v in labels))
    named = [k for k in layers if k]
    if named:
        meta["layers"] = named
    for key, edges in layers.items():
        path = directory / (f"edges.{key}.tsv" if key else "edges.tsv")
        path.write_text("".join(f"{int(i)}\t{int(j)}\n" for i, j in np.asarray(edges)))
    (directory / "features.tsv").write_text(
        "".join("\t".join(_fmt(v) for v in row) + "\n" for row in features))
    (directory / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return directory


# -- synthetic fixtures -------------------------------------------------------

def stochastic_block_graph(sizes, p_in: float, p_out: float, num_features: int, seed,
                           words_per_node: int = 10, topic_strength: float = 0.6) -> SparseGraph:
    """Planted-partition graph with bag-of-words features.

    Each class owns a block of ``num_features // len(sizes)`` "topic" columns;
    a node draws ``words_per_node`` distinct binary features, each from its
    class topic with probability ``topic_strength`` and uniformly otherwise.
    """
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(sizes)), sizes)
    n = len(labels)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng.random(len(iu)) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    block = num_features // len(sizes)
    features = np.zeros((n, num_features), dtype=np.float32)
    for i in range(n):
        topical = rng.random(words_per_node) < topic_strength
        cols = np.where(topical, labels[i] * block + rng.integers(0, block, words_per_node),
                        rng.integers(0, num_features, words_per_node))
        features[i, cols] = 1.0
    return build_graph(edges, features, labels, n)


def sbm_fixture() -> SparseGraph:
    """The bundled 100-node two-community fixture."""
    return load_dataset(PACKAGE_DATA / "sbm100")


def make_sbm_fixture(directory) -> Path:
    g = stochastic_block_graph([50, 50], 0.12, 0.01, 32, seed=20240601, words_per_node=6)
    return write_dataset(directory, "sbm100", g.features, {"": g.edges}, g.labels)


def cora_like(seed=0, num_nodes: int = 2708, num_classes: int = 7, num_features: int = 1433) -> SparseGraph:
    """Synthetic stand-in with Cora's size, class count and sparsity (not Cora)."""
    base = num_nodes // num_classes
    sizes = [base + (1 if c < num_nodes - base * num_classes else 0) for c in range(num_classes)]
    mean_degree = 3.9
    p_in = 0.8 * mean_degree / (base - 1)
    p_out = 0.2 * mean_degree / (num_nodes - base)
    return stochastic_block_graph(sizes, p_in, p_out, num_features, seed, words_per_node=18,
                                  topic_strength=0.35)


# -- Cora converters ----------------------------------------------------------

def _load_pickle(path: Path):
    with open(path, "rb") as fh:
        return pickle.load(fh, encoding="latin1")


def planetoid_to_arrays(raw_dir, name: str = "cora"):
    """Read the Planetoid ``ind.<name>.*`` files into ``(edges, features, labels)``.

    Node order follows the usual convention: ``allx`` rows, then test rows
    placed at their ``test.index`` positions.
    """
    raw_dir = Path(raw_dir)
    obj = {k: _load_pickle(raw_dir / f"ind.{name}.{k}") for k in ("x", "y", "tx", "ty", "allx", "ally", "graph")}
    test_index = np.array([int(v) for v in (raw_dir / f"ind.{name}.test.index").read_text().split()])
    test_sorted = np.sort(test_index)
    features = sp.vstack([obj["allx"], obj["tx"]]).tolil()
    features[test_index, :] = features[test_sorted, :]
    onehot = np.vstack([obj["ally"], obj["ty"]])
    onehot[test_index, :] = onehot[test_sorted, :]
    labels = onehot.argmax(axis=1)
    edges = [(i, j) for i, nbrs in obj["graph"].items() for j in nbrs]
    return np.asarray(edges, dtype=np.int64), np.asarray(features.todense(), dtype=np.float32), labels


def linqs_to_arrays(content_path, cites_path):
    """Read LINQS ``cora.content`` / ``cora.cites`` (publication ids remapped to 0..N-1)."""
    ids, feats, names = [], [], []
    for line in Path(content_path).read_text().splitlines():
        parts = line.split()
        ids.append(parts[0])
        feats.append([float(v) for v in parts[1:-1]])
        names.append(parts[-1])
    index = {pid: i for i, pid in enumerate(ids)}
    classes = {c: k for k, c in enumerate(sorted(set(names)))}
    edges = []
    for line in Path(cites_path).read_text().splitlines():
        a, b = line.split()
        if a in index and b in index:
            edges.append((index[a], index[b]))
    return (np.asarray(edges, dtype=np.int64), np.asarray(feats, dtype=np.float32),
            np.array([classes[c] for c in names], dtype=np.int64))


def convert_cora(source, out_dir) -> Path:
    """Convert raw Cora (Planetoid or LINQS layout) into a dataset directory."""
    source = Path(source)
    if (source / "ind.cora.x").exists():
        edges, features, labels = planetoid_to_arrays(source, "cora")
    elif (source / "cora.content").exists():
        edges, features, labels = linqs_to_arrays(source / "cora.content", source / "cora.cites")
    else:
        raise DatasetError(f"{source}: no Planetoid (ind.cora.*) or LINQS (cora.content) files found")
    g = build_graph(edges, features, labels)
    return write_dataset(out_dir, "cora", g.features, {"": g.edges}, g.labels)
