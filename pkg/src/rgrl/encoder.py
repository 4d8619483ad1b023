"""GCN encoders, node-level predictor and their hand-written gradients.

Parameters live in plain ordered dicts of numpy arrays:

* GCN: ``W0 .. W{L-1}`` weight matrices and ``a0 .. a{L-1}`` PReLU slopes
  (shape ``(1,)``). Layer ``l`` computes ``prelu(P @ H @ W_l, a_l)`` with
  ``P`` the self-loop normalized adjacency.
* predictor: ``W0`` (D x hidden), ``a0`` and ``W1`` (hidden x D), computing
  ``prelu(H @ W0, a0) @ W1``.

No layer carries a bias.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import SparseGraph, normalized_transition

INIT_SLOPE = 0.25
CHECKPOINT_MAGIC = b"RGRLCKPT"


@dataclass(eq=False)
class EncoderState:
    online: dict
    predictor: dict
    target: dict

    def named_parameters(self):
        for prefix, group in (("online", self.online), ("predictor", self.predictor), ("target", self.target)):
            for name, value in group.items():
                yield f"{prefix}.{name}", value

    def online_parameters(self) -> dict:
        out = {f"online.{k}": v for k, v in self.online.items()}
        out.update({f"predictor.{k}": v for k, v in self.predictor.items()})
        return out

    def copy(self) -> "EncoderState":
        return EncoderState(
            {k: v.copy() for k, v in self.online.items()},
            {k: v.copy() for k, v in self.predictor.items()},
            {k: v.copy() for k, v in self.target.items()},
        )


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float64) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def init_gcn(rng, dims: list[int], dtype=np.float64) -> dict:
    params = {}
    for layer, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        params[f"W{layer}"] = glorot(rng, fan_in, fan_out, dtype)
        params[f"a{layer}"] = np.full(1, INIT_SLOPE, dtype=dtype)
    return params


def init_predictor(rng, dim: int, hidden: int, dtype=np.float64) -> dict:
    return {
        "W0": glorot(rng, dim, hidden, dtype),
        "a0": np.full(1, INIT_SLOPE, dtype=dtype),
        "W1": glorot(rng, hidden, dim, dtype),
    }


def init_state(in_dim: int, hidden_dims, embed_dim: int, predictor_hidden: int, seed,
               dtype=np.float64) -> EncoderState:
    """Random online/predictor parameters; the target starts as a copy of online."""
    rng = np.random.default_rng(seed)
    online = init_gcn(rng, [in_dim, *hidden_dims, embed_dim], dtype)
    predictor = init_predictor(rng, embed_dim, predictor_hidden, dtype)
    target = {k: v.copy() for k, v in online.items()}
    return EncoderState(online, predictor, target)


def num_layers(params: dict) -> int:
    return sum(1 for k in params if k.startswith("W"))


def prelu(x: np.ndarray, slope) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def feature_operand(g: SparseGraph, dtype=np.float64, density_cutoff: float = 0.1):
    """Feature matrix in the cheapest form for ``X @ W`` (CSR when sparse)."""
    x = np.asarray(g.features, dtype=dtype)
    if x.size and np.count_nonzero(x) / x.size < density_cutoff:
        return sp.csr_matrix(x)
    return x


def propagation(view: SparseGraph) -> sp.csr_matrix:
    return normalized_transition(view, add_self_loops=True)


def _masked_weight(w: np.ndarray, mask) -> np.ndarray:
    if mask is None:
        return w
    return w * mask[:, None].astype(w.dtype)


def gcn_forward(params: dict, view: SparseGraph, prop=None, x=None, keep_cache: bool = False):
    """Embed every node of ``view``.

    The view's feature-column mask is folded into the first weight matrix,
    which is equivalent to masking the features. Returns ``H`` or, with
    ``keep_cache``, ``(H, cache)`` for :func:`gcn_backward`.
    """
    w0 = params["W0"]
    if x is None:
        x = feature_operand(view, w0.dtype)
    if x.shape[1] != w0.shape[0]:
        raise ValueError(f"feature width {x.shape[1]} does not match first layer input {w0.shape[0]}")
    if prop is None:
        prop = propagation(view)
    mask = view.feature_mask
    layers = []
    h = x
    for layer in range(num_layers(params)):
        w = params[f"W{layer}"]
        if layer == 0:
            w = _masked_weight(w, mask)
        elif h.shape[1] != w.shape[0]:
            raise ValueError(f"layer {layer} expects width {w.shape[0]}, got {h.shape[1]}")
        pre = prop @ np.asarray(h @ w)
        layers.append((h, pre))
        h = prelu(pre, params[f"a{layer}"][0])
    if keep_cache:
        return h, {"prop": prop, "mask": mask, "layers": layers}
    return h


def gcn_backward(params: dict, cache: dict, grad_out: np.ndarray) -> dict:
    """Gradients of a scalar w.r.t. GCN parameters given ``dL/dH``."""
    if cache is None:
        raise RuntimeError("gcn_backward called before a cached forward pass")
    prop = cache["prop"]
    grads = {}
    g = grad_out
    for layer in reversed(range(num_layers(params))):
        inp, pre = cache["layers"][layer]
        slope = params[f"a{layer}"]
        grads[f"a{layer}"] = np.array([np.sum(g * np.minimum(pre, 0.0))], dtype=slope.dtype)
        d_pre = g * np.where(pre > 0, 1.0, slope[0])
        # prop is symmetric, so prop.T @ d_pre == prop @ d_pre
        d_hw = prop @ d_pre
        w = params[f"W{layer}"]
        dw = np.asarray(inp.T @ d_hw)
        if layer == 0:
            if cache["mask"] is not None:
                dw = _masked_weight(dw, cache["mask"])
        else:
            g = d_hw @ w.T
        grads[f"W{layer}"] = dw
    return {k: grads[k] for k in params}


def predictor_forward(params: dict, h: np.ndarray, keep_cache: bool = False):
    w0, w1 = params["W0"], params["W1"]
    if h.shape[1] != w0.shape[0]:
        raise ValueError(f"predictor expects width {w0.shape[0]}, got {h.shape[1]}")
    pre = h @ w0
    hid = prelu(pre, params["a0"][0])
    z = hid @ w1
    if keep_cache:
        return z, (h, pre, hid)
    return z


def predictor_backward(params: dict, cache, grad_z: np.ndarray):
    """Returns ``(param_grads, dL/dH)``."""
    if cache is None:
        raise RuntimeError("predictor_backward called before a cached forward pass")
    h, pre, hid = cache
    slope = params["a0"]
    d_hid = grad_z @ params["W1"].T
    d_pre = d_hid * np.where(pre > 0, 1.0, slope[0])
    grads = {
        "W0": h.T @ d_pre,
        "a0": np.array([np.sum(d_hid * np.minimum(pre, 0.0))], dtype=slope.dtype),
        "W1": hid.T @ grad_z,
    }
    return grads, d_pre @ params["W0"].T


def online_forward(state: EncoderState, view: SparseGraph, prop=None, x=None):
    """Online encoder and predictor on one view: ``(H, Z, cache)``."""
    h, gcn_cache = gcn_forward(state.online, view, prop, x, keep_cache=True)
    z, pred_cache = predictor_forward(state.predictor, h, keep_cache=True)
    return h, z, (gcn_cache, pred_cache)


def online_backward(state: EncoderState, cache, grad_z: np.ndarray, grad_h=None) -> dict:
    """Gradients for every online-path parameter, keyed like ``online_parameters``.

    The target encoder never appears here; it only moves by EMA.
    """
    if cache is None:
        raise RuntimeError("backward called before forward")
    gcn_cache, pred_cache = cache
    pred_grads, d_h = predictor_backward(state.predictor, pred_cache, grad_z)
    if grad_h is not None:
        d_h = d_h + grad_h
    gcn_grads = gcn_backward(state.online, gcn_cache, d_h)
    out = {f"online.{k}": v.astype(state.online[k].dtype, copy=False) for k, v in gcn_grads.items()}
    out.update({f"predictor.{k}": v.astype(state.predictor[k].dtype, copy=False) for k, v in pred_grads.items()})
    return out


def target_forward(state: EncoderState, view: SparseGraph, prop=None, x=None) -> np.ndarray:
    return gcn_forward(state.target, view, prop, x)


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(path, state: EncoderState, config_hash: str = "", extra: dict | None = None) -> None:
    """Magic, little-endian u64 header length, JSON header, then raw <f8 values."""
    entries = [{"name": name, "shape": list(value.shape)} for name, value in state.named_parameters()]
    header = {"format": "rgrl-checkpoint/1", "dtype": "<f8", "config_hash": config_hash, "params": entries}
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, value in state.named_parameters():
            fh.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[EncoderState, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not an rgrl checkpoint")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen])
    offset = 16 + hlen
    groups = {"online": {}, "predictor": {}, "target": {}}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        value = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * count
        prefix, name = entry["name"].split(".", 1)
        groups[prefix][name] = value
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes after parameters")
    return EncoderState(groups["online"], groups["predictor"], groups["target"]), header


def state_checksum(params: dict) -> str:
    h = hashlib.sha256()
    for name in params:
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name]).tobytes())
    return h.hexdigest()
