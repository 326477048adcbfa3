"""Forward and hand-derived backward passes for the fusion/GNN detector.

The model fuses raw-text and verdict embeddings through three LSTM-style
gates, encodes the graph with a two-layer convolution over the normalized
adjacency, pools neighbor representations into a subgraph readout, and
scores node-subgraph pairs with a sigmoid bilinear discriminator trained by
binary cross-entropy over positive/negative pairs. Gradients are exact
analytic derivatives validated against central finite differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .fileio import atomic_write_bytes

LN_EPS = 1e-5
PROB_CLAMP = 1e-7

FUSION_MODES = ("gate", "mean", "verdict_only", "orig_only")

PARAMS_MAGIC = b"CLLP"
PARAMS_VERSION = 1

# Declaration order fixes Adam state, persistence layout, and grad reports.
TENSOR_NAMES = (
    "w_f", "u_f", "w_i", "u_i", "w_o", "u_o",
    "b_f", "b_i", "b_o",
    "w1", "w2", "w_bil",
)


class ParamsFormatError(ValueError):
    pass


@dataclass
class FusionParams:
    """All trainable tensors. Gate weights act in the embedding dimension D;
    the first GNN layer reduces D to the hidden dimension d; the bilinear
    matrix pairs a d-dim readout with a D-dim fused feature."""

    w_f: np.ndarray
    u_f: np.ndarray
    w_i: np.ndarray
    u_i: np.ndarray
    w_o: np.ndarray
    u_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_o: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    w_bil: np.ndarray

    @property
    def dim_in(self) -> int:
        return self.w_f.shape[0]

    @property
    def dim_hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def dtype(self):
        return self.w_f.dtype

    def items(self) -> List[Tuple[str, np.ndarray]]:
        return [(name, getattr(self, name)) for name in TENSOR_NAMES]

    def copy(self) -> "FusionParams":
        return FusionParams(**{name: arr.copy() for name, arr in self.items()})

    def astype(self, dtype) -> "FusionParams":
        return FusionParams(**{name: arr.astype(dtype) for name, arr in self.items()})

    def sq_norm(self) -> float:
        return float(sum(np.sum(arr * arr) for _, arr in self.items()))

    def validate(self) -> None:
        d_in, d_hid = self.dim_in, self.dim_hidden
        shapes = _tensor_shapes(d_in, d_hid)
        for name, arr in self.items():
            if arr.shape != shapes[name]:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shapes[name]}")
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite values")


def _tensor_shapes(d_in: int, d_hid: int) -> Dict[str, tuple]:
    return {
        "w_f": (d_in, d_in), "u_f": (d_in, d_in),
        "w_i": (d_in, d_in), "u_i": (d_in, d_in),
        "w_o": (d_in, d_in), "u_o": (d_in, d_in),
        "b_f": (d_in,), "b_i": (d_in,), "b_o": (d_in,),
        "w1": (d_in, d_hid), "w2": (d_hid, d_hid), "w_bil": (d_hid, d_in),
    }


def init_params(d_in: int, d_hid: int, seed: int, dtype=np.float32) -> FusionParams:
    """Glorot-uniform weights from a seeded generator; zero biases."""
    if d_in < 1 or d_hid < 1:
        raise ValueError("dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in _tensor_shapes(d_in, d_hid).items():
        if len(shape) == 1:
            tensors[name] = np.zeros(shape, dtype=dtype)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            tensors[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return FusionParams(**tensors)


def save_params(path, params: FusionParams) -> None:
    params.validate()
    header = PARAMS_MAGIC + struct.pack("<III", PARAMS_VERSION, params.dim_in, params.dim_hidden)
    body = b"".join(arr.astype("<f4").tobytes(order="C") for _, arr in params.items())
    atomic_write_bytes(path, header + body)


def load_params(path, dtype=np.float32) -> FusionParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != PARAMS_MAGIC:
        raise ParamsFormatError(f"bad magic: expected {PARAMS_MAGIC!r}, found {blob[:4]!r}")
    version, d_in, d_hid = struct.unpack("<III", blob[4:16])
    if version != PARAMS_VERSION:
        raise ParamsFormatError(f"unsupported version {version}")
    offset = 16
    tensors = {}
    for name, shape in _tensor_shapes(d_in, d_hid).items():
        count = int(np.prod(shape))
        end = offset + 4 * count
        if end > len(blob):
            raise ParamsFormatError(f"truncated file while reading {name}")
        tensors[name] = (
            np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            .reshape(shape)
            .astype(dtype)
        )
        offset = end
    if offset != len(blob):
        raise ParamsFormatError(f"{len(blob) - offset} trailing bytes")
    return FusionParams(**tensors)


# ---------------------------------------------------------------------------
# Layer norm (no learnable affine)

def ln_forward(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Row-wise (x - mean)/sqrt(var + eps); returns (y, 1/sqrt(var + eps))."""
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    return (x - mean) * inv, inv


def ln_backward(grad: np.ndarray, y: np.ndarray, inv: np.ndarray) -> np.ndarray:
    """Gradient through row-wise layer norm given its output y and inv std."""
    g_mean = grad.mean(axis=-1, keepdims=True)
    gy_mean = (grad * y).mean(axis=-1, keepdims=True)
    return inv * (grad - g_mean - y * gy_mean)


def layer_norm(x) -> np.ndarray:
    """Public normalization op; requires dimension >= 2."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ValueError("layer_norm requires dimension >= 2")
    return ln_forward(x)[0]


# ---------------------------------------------------------------------------
# Fusion

def fuse_forward(
    params: FusionParams, x_orig: np.ndarray, x_verd: np.ndarray, mode: str = "gate"
) -> Tuple[np.ndarray, dict]:
    """Fused per-node features H plus the cache needed for the backward pass.

    gate: each gate is sigmoid(LN(W x_orig + U x_verd + b)); the forget and
    input gates mix the two embeddings and the output gate scales the mix
    before a final layer norm. The other modes bypass the gates entirely.
    """
    if mode not in FUSION_MODES:
        raise ValueError(f"fusion mode must be one of {FUSION_MODES}")
    if x_orig.shape != x_verd.shape or x_orig.shape[1] != params.dim_in:
        raise ValueError(
            f"embedding shapes {x_orig.shape}/{x_verd.shape} do not match D={params.dim_in}"
        )
    cache: dict = {"mode": mode, "x_orig": x_orig, "x_verd": x_verd}
    if mode == "gate":
        gates = {}
        for g, w, u, b in (
            ("f", params.w_f, params.u_f, params.b_f),
            ("i", params.w_i, params.u_i, params.b_i),
            ("o", params.w_o, params.u_o, params.b_o),
        ):
            pre = x_orig @ w + x_verd @ u + b
            y, inv = ln_forward(pre)
            act = expit(y)
            gates[g] = (y, inv, act)
        x_hat = gates["f"][2] * x_orig + gates["i"][2] * x_verd
        pooled = gates["o"][2] * x_hat
        cache["gates"] = gates
        cache["x_hat"] = x_hat
    elif mode == "mean":
        pooled = (x_orig + x_verd) / 2.0
    elif mode == "verdict_only":
        pooled = x_verd
    else:
        pooled = x_orig
    h, inv_h = ln_forward(pooled)
    cache["h"] = h
    cache["inv_h"] = inv_h
    return h, cache


def fuse_backward(
    params: FusionParams, cache: dict, grad_h: np.ndarray
) -> Dict[str, np.ndarray]:
    """Gate-parameter gradients from dL/dH (zero outside gate mode)."""
    grads = {
        name: np.zeros_like(arr)
        for name, arr in params.items()
        if name not in ("w1", "w2", "w_bil")
    }
    if cache["mode"] != "gate":
        return grads
    x_orig, x_verd = cache["x_orig"], cache["x_verd"]
    gates, x_hat = cache["gates"], cache["x_hat"]
    g_pool = ln_backward(grad_h, cache["h"], cache["inv_h"])
    act_o = gates["o"][2]
    g_act = {
        "o": g_pool * x_hat,
    }
    g_xhat = g_pool * act_o
    g_act["f"] = g_xhat * x_orig
    g_act["i"] = g_xhat * x_verd
    for g, (y, inv, act) in gates.items():
        g_y = g_act[g] * act * (1.0 - act)
        g_pre = ln_backward(g_y, y, inv)
        grads[f"w_{g}"] = x_orig.T @ g_pre
        grads[f"u_{g}"] = x_verd.T @ g_pre
        grads[f"b_{g}"] = g_pre.sum(axis=0)
    return grads


def gate_fuse(
    params: FusionParams, x_orig: np.ndarray, x_verd: np.ndarray, mode: str = "gate"
) -> np.ndarray:
    """Fused features only (forward convenience wrapper)."""
    return fuse_forward(params, np.atleast_2d(x_orig), np.atleast_2d(x_verd), mode)[0]


# ---------------------------------------------------------------------------
# Two-layer graph convolution

def gcn_forward(
    params: FusionParams, a_hat: sp.spmatrix, h: np.ndarray
) -> Tuple[np.ndarray, dict]:
    """Z = A_hat relu(A_hat H W1) W2 with a linear output layer."""
    if h.shape[1] != params.dim_in:
        raise ValueError(f"H has {h.shape[1]} columns, expected {params.dim_in}")
    ah = a_hat @ h
    pre = ah @ params.w1
    m = np.maximum(pre, 0.0)
    am = a_hat @ m
    z = am @ params.w2
    return z, {"ah": ah, "mask": pre > 0.0, "m": m, "am": am, "a_hat": a_hat}


def gcn_backward(
    params: FusionParams, cache: dict, grad_z: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(dW1, dW2, dH) given dL/dZ; exploits the symmetry of A_hat."""
    a_hat = cache["a_hat"]
    d_w2 = cache["am"].T @ grad_z
    g_am = grad_z @ params.w2.T
    g_m = a_hat @ g_am
    g_pre = g_m * cache["mask"]
    d_w1 = cache["ah"].T @ g_pre
    g_h = a_hat @ (g_pre @ params.w1.T)
    return d_w1, d_w2, g_h


# ---------------------------------------------------------------------------
# Readout and discriminator

def readout(z: np.ndarray, neighbor_idx: Sequence[int], v: Optional[int] = None) -> np.ndarray:
    """Mean of the listed rows of Z; falls back to Z[v] for isolated nodes."""
    idx = np.asarray(neighbor_idx, dtype=np.int64)
    if idx.size == 0:
        if v is None:
            raise ValueError("isolated readout requires the node index for fallback")
        return z[v].copy()
    return z[idx].mean(axis=0)


def discriminate(params: FusionParams, e_v: np.ndarray, h_v: np.ndarray) -> float:
    """sigmoid(e_v W h_v): probability the pair is a true node-subgraph match."""
    e_v = np.asarray(e_v)
    h_v = np.asarray(h_v)
    if e_v.shape != (params.dim_hidden,) or h_v.shape != (params.dim_in,):
        raise ValueError(
            f"expected shapes ({params.dim_hidden},)/({params.dim_in},), "
            f"got {e_v.shape}/{h_v.shape}"
        )
    return float(expit(e_v @ params.w_bil @ h_v))


# ---------------------------------------------------------------------------
# Batch loss and gradients

@dataclass
class Batch:
    """Training batch: node indices, one sampled neighbor list per node
    (empty = isolated, readout falls back to the node itself), and negative
    partner positions forming a derangement of the batch."""

    nodes: np.ndarray
    neighbor_lists: List[np.ndarray]
    negatives: np.ndarray

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.int64)
        self.negatives = np.asarray(self.negatives, dtype=np.int64)
        nb = len(self.nodes)
        if nb == 0:
            raise ValueError("batch must be non-empty")
        if len(self.neighbor_lists) != nb or len(self.negatives) != nb:
            raise ValueError("batch fields must have equal length")
        if np.any(self.negatives == np.arange(nb)):
            raise ValueError("negative partner must differ from self")

    @property
    def size(self) -> int:
        return len(self.nodes)


def _batch_readouts(z: np.ndarray, batch: Batch) -> np.ndarray:
    e = np.empty((batch.size, z.shape[1]), dtype=z.dtype)
    for k in range(batch.size):
        e[k] = readout(z, batch.neighbor_lists[k], v=int(batch.nodes[k]))
    return e


def _forward(
    params: FusionParams,
    batch: Batch,
    a_hat: sp.spmatrix,
    x_orig: np.ndarray,
    x_verd: np.ndarray,
    weight_decay: float,
    mode: str,
) -> Tuple[float, dict]:
    h, fuse_cache = fuse_forward(params, x_orig, x_verd, mode)
    z, gcn_cache = gcn_forward(params, a_hat, h)
    e = _batch_readouts(z, batch)
    hb = h[batch.nodes]
    q = hb @ params.w_bil.T  # q[k] = W h_k
    logit_pos = np.sum(e * q, axis=1)
    logit_neg = np.sum(e[batch.negatives] * q, axis=1)
    s_pos = expit(logit_pos)
    s_neg = expit(logit_neg)
    sp_c = np.clip(s_pos, PROB_CLAMP, 1.0 - PROB_CLAMP)
    sn_c = np.clip(s_neg, PROB_CLAMP, 1.0 - PROB_CLAMP)
    data_loss = -np.sum(np.log(sp_c) + np.log1p(-sn_c)) / (2.0 * batch.size)
    loss = float(data_loss + 0.5 * weight_decay * params.sq_norm())
    cache = {
        "fuse": fuse_cache, "gcn": gcn_cache, "h": h, "z": z, "e": e, "hb": hb, "q": q,
        "s_pos": s_pos, "s_neg": s_neg, "sp_c": sp_c, "sn_c": sn_c,
    }
    return loss, cache


def batch_loss(
    params: FusionParams,
    batch: Batch,
    a_hat: sp.spmatrix,
    x_orig: np.ndarray,
    x_verd: np.ndarray,
    weight_decay: float = 0.0,
    mode: str = "gate",
) -> float:
    """Mean BCE over positive/negative pairs plus L2 on all parameters;
    probabilities are clamped away from {0, 1} before the logs."""
    return _forward(params, batch, a_hat, x_orig, x_verd, weight_decay, mode)[0]


def backward(
    params: FusionParams,
    batch: Batch,
    a_hat: sp.spmatrix,
    x_orig: np.ndarray,
    x_verd: np.ndarray,
    weight_decay: float = 0.0,
    mode: str = "gate",
) -> Tuple[float, Dict[str, np.ndarray]]:
    """(loss, exact gradients for every tensor in declaration order)."""
    loss, cache = _forward(params, batch, a_hat, x_orig, x_verd, weight_decay, mode)
    nb = batch.size
    s_pos, s_neg = cache["s_pos"], cache["s_neg"]
    sp_c, sn_c = cache["sp_c"], cache["sn_c"]
    # d(-log sp_c)/dlogit with clamping treated as a true clip: zero slope
    # outside the clamp window.
    in_pos = (s_pos > PROB_CLAMP) & (s_pos < 1.0 - PROB_CLAMP)
    in_neg = (s_neg > PROB_CLAMP) & (s_neg < 1.0 - PROB_CLAMP)
    g_pos = (-1.0 / sp_c) * in_pos * s_pos * (1.0 - s_pos) / (2.0 * nb)
    g_neg = (1.0 / (1.0 - sn_c)) * in_neg * s_neg * (1.0 - s_neg) / (2.0 * nb)

    e, q, hb = cache["e"], cache["q"], cache["hb"]
    e_neg = e[batch.negatives]
    d_wbil = e.T @ (g_pos[:, None] * hb) + e_neg.T @ (g_neg[:, None] * hb)
    g_e = g_pos[:, None] * q
    np.add.at(g_e, batch.negatives, g_neg[:, None] * q)
    g_hb = (g_pos[:, None] * e + g_neg[:, None] * e_neg) @ params.w_bil

    z = cache["z"]
    g_z = np.zeros_like(z)
    for k in range(nb):
        idx = batch.neighbor_lists[k]
        if len(idx) == 0:
            g_z[batch.nodes[k]] += g_e[k]
        else:
            np.add.at(g_z, idx, g_e[k] / len(idx))

    d_w1, d_w2, g_h = gcn_backward(params, cache["gcn"], g_z)
    np.add.at(g_h, batch.nodes, g_hb)
    grads = fuse_backward(params, cache["fuse"], g_h)
    grads["w1"] = d_w1
    grads["w2"] = d_w2
    grads["w_bil"] = d_wbil
    if weight_decay:
        for name, arr in params.items():
            grads[name] = grads[name] + weight_decay * arr
    return loss, grads


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_tensor: str
    per_tensor: Dict[str, float]


def grad_check(
    params: FusionParams,
    batch: Batch,
    a_hat: sp.spmatrix,
    x_orig: np.ndarray,
    x_verd: np.ndarray,
    weight_decay: float = 0.0,
    mode: str = "gate",
    eps: float = 1e-5,
) -> GradCheckResult:
    """Central finite differences vs analytic gradients, elementwise, in
    float64; relative error uses |a| + |n| with a 1e-6 absolute floor."""
    params = params.astype(np.float64)
    x_orig = x_orig.astype(np.float64)
    x_verd = x_verd.astype(np.float64)
    a_hat = a_hat.astype(np.float64)
    _, analytic = backward(params, batch, a_hat, x_orig, x_verd, weight_decay, mode)
    per_tensor: Dict[str, float] = {}
    worst = ("", -1.0)
    for name, arr in params.items():
        grad = analytic[name]
        tensor_worst = 0.0
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = batch_loss(params, batch, a_hat, x_orig, x_verd, weight_decay, mode)
            flat[j] = orig - eps
            down = batch_loss(params, batch, a_hat, x_orig, x_verd, weight_decay, mode)
            flat[j] = orig
            numeric = (up - down) / (2.0 * eps)
            denom = max(abs(numeric) + abs(gflat[j]), 1e-6)
            rel = abs(numeric - gflat[j]) / denom
            tensor_worst = max(tensor_worst, rel)
        per_tensor[name] = tensor_worst
        if tensor_worst > worst[1]:
            worst = (name, tensor_worst)
    return GradCheckResult(max_rel_error=worst[1], worst_tensor=worst[0], per_tensor=per_tensor)
