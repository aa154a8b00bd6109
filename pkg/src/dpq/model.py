"""Deep product quantization network with hand-written backpropagation.

Architecture, per input vector x:

    F = relu(x @ front_w + front_b)            (optional; identity otherwise)
    F -> M slices of width U // M              (trailing units discarded)
    p_m = softmax(relu(F_m @ w1_m + b1_m) @ w2_m + b2_m)
    soft_m = p_m @ C_m,   hard_m = C_m[argmax p_m]
    pred_soft = soft @ W + b,   pred_hard = hard @ W + b

Backward through the argmax uses the straight-through rule: the gradient
arriving at the one-hot vector is handed to p_m unchanged.
"""

from __future__ import annotations

import logging
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .codec import (
    Codebook,
    CompressedCode,
    FormatError,
    LossWeights,
    PathLike,
    QuantizerConfig,
    VectorSet,
)
from .pq import kmeans

log = logging.getLogger(__name__)

MODEL_MAGIC = b"DPQM"
MODEL_VERSION = 1

PARAM_ORDER = ("front_w", "front_b", "w1", "b1", "w2", "b2", "codebooks", "cls_w", "cls_b", "centers")
SLICE_PARAMS = ("w1", "b1", "w2", "b2")
# weight decay covers the affine weight matrices only; codebooks, centers and biases are exempt
DECAYED_PARAMS = ("front_w", "w1", "w2", "cls_w")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class DpqModel:
    config: QuantizerConfig
    params: dict
    normalized: bool = False

    def __post_init__(self):
        cfg = self.config
        M, K, D, N, H, C = cfg.M, cfg.K, cfg.centroid_dim, cfg.slice_dim, cfg.hidden_dim, cfg.num_classes
        shapes = {
            "w1": (M, N, H),
            "b1": (M, H),
            "w2": (M, H, K),
            "b2": (M, K),
            "codebooks": (M, K, D),
            "cls_w": (M * D, C),
            "cls_b": (C,),
            "centers": (C, M * D),
        }
        if cfg.front_dim:
            shapes["front_w"] = (cfg.input_dim, cfg.front_dim)
            shapes["front_b"] = (cfg.front_dim,)
        if set(self.params) != set(shapes):
            raise ValueError(f"expected parameters {sorted(shapes)}, got {sorted(self.params)}")
        frozen = {}
        for name in PARAM_ORDER:
            if name not in shapes:
                continue
            arr = np.array(self.params[name], dtype=np.float64)
            if arr.shape != shapes[name]:
                raise ValueError(f"parameter {name} has shape {arr.shape}, expected {shapes[name]}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"parameter {name} has non-finite entries")
            arr.setflags(write=False)
            frozen[name] = arr
        object.__setattr__(self, "params", frozen)

    @property
    def codebook(self) -> Codebook:
        return Codebook(self.params["codebooks"])

    @property
    def M(self) -> int:
        return self.config.M

    @property
    def K(self) -> int:
        return self.config.K

    @property
    def D(self) -> int:
        return self.config.centroid_dim

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    def with_params(self, **updates) -> "DpqModel":
        params = dict(self.params)
        params.update(updates)
        return DpqModel(self.config, params, self.normalized)


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    """Batched forward quantities; leading axis is the batch."""

    x: np.ndarray
    front_pre: Optional[np.ndarray]
    s: np.ndarray  # (B, M, N) sliced features
    h_pre: np.ndarray  # (B, M, H)
    logits: np.ndarray  # (B, M, K)
    p: np.ndarray  # (B, M, K)
    kstar: np.ndarray  # (B, M)
    e: np.ndarray  # (B, M, K)
    soft: np.ndarray  # (B, M*D)
    hard: np.ndarray  # (B, M*D)
    pred_soft: np.ndarray  # (B, C)
    pred_hard: np.ndarray  # (B, C)


@dataclass(frozen=True)
class LossTerms:
    softmax_soft: float
    softmax_hard: float
    central: float
    gini_batch: float
    gini_sample: float
    weight_decay: float
    total: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


# -- elementary operations ----------------------------------------------------


def _check_prob(p: np.ndarray, C_m: np.ndarray) -> None:
    if p.ndim != 1 or C_m.ndim != 2 or p.shape[0] != C_m.shape[0]:
        raise ValueError(f"probabilities of shape {p.shape} do not match centroids {C_m.shape}")


def soft_subvector(p_m, C_m) -> np.ndarray:
    """Convex combination of the centroid rows weighted by p_m."""
    p_m, C_m = np.asarray(p_m, dtype=np.float64), np.asarray(C_m, dtype=np.float64)
    _check_prob(p_m, C_m)
    return p_m @ C_m


def hard_subvector(p_m, C_m) -> tuple[np.ndarray, int]:
    p_m, C_m = np.asarray(p_m, dtype=np.float64), np.asarray(C_m, dtype=np.float64)
    _check_prob(p_m, C_m)
    k = int(np.argmax(p_m))
    return C_m[k].copy(), k


def st_backward(upstream_grad_on_e):
    """Straight-through rule: d(loss)/d(p_m) receives d(loss)/d(e_m) unchanged."""
    return upstream_grad_on_e


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - np.max(z, axis=axis, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=axis, keepdims=True)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z, axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_loss(scores, label: int) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= label < scores.shape[-1]:
        raise ValueError(f"label {label} outside [0, {scores.shape[-1]})")
    return float(-_log_softmax(scores)[label])


def joint_central_loss(soft, hard, label: int, centers) -> float:
    centers = np.asarray(centers, dtype=np.float64)
    if not 0 <= label < centers.shape[0]:
        raise ValueError(f"label {label} outside [0, {centers.shape[0]})")
    o = centers[label]
    return float(0.5 * np.sum((np.asarray(soft) - o) ** 2) + 0.5 * np.sum((np.asarray(hard) - o) ** 2))


def gini_batch(p_batch) -> float:
    """Squared norm of the batch-mean assignment distribution (1/K..1)."""
    p_batch = np.asarray(p_batch, dtype=np.float64)
    if p_batch.ndim != 2 or p_batch.shape[0] == 0:
        raise ValueError("gini_batch needs a non-empty (B, K) batch")
    mean = p_batch.mean(axis=0)
    return float(mean @ mean)


def gini_sample(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    return float(-(p @ p))


# -- model construction -------------------------------------------------------


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _front(x: np.ndarray, params: dict) -> tuple[Optional[np.ndarray], np.ndarray]:
    if "front_w" not in params:
        return None, x
    pre = x @ params["front_w"] + params["front_b"]
    return pre, np.maximum(pre, 0.0)


def _slices(features: np.ndarray, cfg: QuantizerConfig) -> np.ndarray:
    B = features.shape[0]
    used = cfg.M * cfg.slice_dim
    return features[:, :used].reshape(B, cfg.M, cfg.slice_dim)


def init_model(config: QuantizerConfig, warmup: Optional[np.ndarray] = None) -> DpqModel:
    """Randomly initialised model.

    When ``warmup`` vectors are given and the centroid dimension equals the
    slice width, codebooks start from k-means on the warmup slices; otherwise
    they are drawn from N(0, 1/D).
    """
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    M, K, D, N, H, C = cfg.M, cfg.K, cfg.centroid_dim, cfg.slice_dim, cfg.hidden_dim, cfg.num_classes
    params = {}
    if cfg.front_dim:
        params["front_w"] = _uniform(rng, cfg.input_dim, (cfg.input_dim, cfg.front_dim))
        params["front_b"] = np.zeros(cfg.front_dim)
    params["w1"] = _uniform(rng, N, (M, N, H))
    params["b1"] = np.zeros((M, H))
    params["w2"] = _uniform(rng, H, (M, H, K))
    params["b2"] = np.zeros((M, K))
    params["cls_w"] = _uniform(rng, M * D, (M * D, C))
    params["cls_b"] = np.zeros(C)
    params["centers"] = np.zeros((C, M * D))

    codebooks = rng.normal(0.0, 1.0 / math.sqrt(D), size=(M, K, D))
    if warmup is not None and D == N and len(warmup) >= K:
        _, feats = _front(np.asarray(warmup, dtype=np.float64), params)
        s = _slices(feats, cfg)
        seeds = rng.integers(0, 2**63, size=M)
        codebooks = np.stack([kmeans(s[:, m], K, max_iters=25, seed=int(seeds[m])).centroids for m in range(M)])
    params["codebooks"] = codebooks
    return DpqModel(cfg, params)


# -- forward / backward -------------------------------------------------------


def _as_batch(x, cfg: QuantizerConfig) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ValueError(f"expected input dimension {cfg.input_dim}, got shape {x.shape}")
    return x


def _normalize_rows(v: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(norms > 0, norms, 1.0)


def forward(x, model: DpqModel) -> ForwardTrace:
    cfg, P = model.config, model.params
    X = _as_batch(x, cfg)
    B, M = X.shape[0], cfg.M
    front_pre, feats = _front(X, P)
    s = _slices(feats, cfg)
    h_pre = np.einsum("bmn,mnh->bmh", s, P["w1"]) + P["b1"]
    h = np.maximum(h_pre, 0.0)
    logits = np.einsum("bmh,mhk->bmk", h, P["w2"]) + P["b2"]
    p = softmax(logits)
    kstar = np.argmax(p, axis=2)
    e = np.zeros_like(p)
    np.put_along_axis(e, kstar[..., None], 1.0, axis=2)
    Cb = P["codebooks"]
    soft = np.einsum("bmk,mkd->bmd", p, Cb)
    hard = Cb[np.arange(M), kstar]
    if model.normalized:
        soft = _normalize_rows(soft)
    soft, hard = soft.reshape(B, -1), hard.reshape(B, -1)
    pred_soft = soft @ P["cls_w"] + P["cls_b"]
    pred_hard = hard @ P["cls_w"] + P["cls_b"]
    return ForwardTrace(X, front_pre, s, h_pre, logits, p, kstar, e, soft, hard, pred_soft, pred_hard)


def backprop_probs(model: DpqModel, trace: ForwardTrace, g_p: np.ndarray) -> dict:
    """Gradients of the slice MLPs (and front layer) given d(loss)/d(p)."""
    P, cfg = model.params, model.config
    p = trace.p
    g_logits = p * (g_p - np.sum(p * g_p, axis=2, keepdims=True))
    h = np.maximum(trace.h_pre, 0.0)
    grads = {
        "w2": np.einsum("bmh,bmk->mhk", h, g_logits),
        "b2": g_logits.sum(axis=0),
    }
    g_h = np.einsum("bmk,mhk->bmh", g_logits, P["w2"]) * (trace.h_pre > 0)
    grads["w1"] = np.einsum("bmn,bmh->mnh", trace.s, g_h)
    grads["b1"] = g_h.sum(axis=0)
    if "front_w" in P:
        B = p.shape[0]
        g_feats = np.zeros((B, cfg.front_dim))
        g_feats[:, : cfg.M * cfg.slice_dim] = np.einsum("bmh,mnh->bmn", g_h, P["w1"]).reshape(B, -1)
        g_feats *= trace.front_pre > 0
        grads["front_w"] = trace.x.T @ g_feats
        grads["front_b"] = g_feats.sum(axis=0)
    return grads


def total_loss(
    model: DpqModel,
    x,
    labels,
    weights: Optional[LossWeights] = None,
    *,
    hard_path: bool = True,
    straight_through: bool = True,
    trace: Optional[ForwardTrace] = None,
) -> tuple[LossTerms, dict]:
    """Batch-averaged training objective and gradients for every parameter.

    ``hard_path=False`` drops both hard-path terms (softmax on pred_hard and
    the hard half of the joint central loss). ``straight_through=False``
    differentiates the argmax as the piecewise-constant function it is,
    which yields the exact gradient finite differences see.
    """
    if model.normalized:
        raise ValueError("cannot train an intra-normalized model")
    w = weights or model.config.weights
    P = model.params
    if trace is None:
        trace = forward(x, model)
    y = np.asarray(labels, dtype=np.int64)
    B, C = trace.pred_soft.shape
    if y.shape != (B,) or B == 0:
        raise ValueError(f"need {B} labels for a non-empty batch, got shape {y.shape}")
    if y.min() < 0 or y.max() >= C:
        raise ValueError(f"labels must lie in [0, {C})")
    M, D = model.M, model.D
    onehot = np.eye(C)[y]
    hp = 1.0 if hard_path else 0.0

    ce_soft = float(-_log_softmax(trace.pred_soft)[np.arange(B), y].mean())
    ce_hard = float(-_log_softmax(trace.pred_hard)[np.arange(B), y].mean())
    O = P["centers"][y]
    r_soft, r_hard = trace.soft - O, trace.hard - O
    central = float(0.5 * np.mean(np.sum(r_soft**2, axis=1) + hp * np.sum(r_hard**2, axis=1)))
    pbar = trace.p.mean(axis=0)  # (M, K)
    gb = float(np.sum(pbar**2))
    gs = float(-np.sum(trace.p**2) / B)
    decay = 0.5 * sum(float(np.sum(P[k] ** 2)) for k in DECAYED_PARAMS if k in P)
    total = (
        w.softmax * (ce_soft + hp * ce_hard)
        + w.central * central
        + w.gini_batch * gb
        + w.gini_sample * gs
        + w.weight_decay * decay
    )
    terms = LossTerms(ce_soft, ce_hard, central, gb, gs, decay, float(total))
    if not math.isfinite(total):
        raise TrainingDiverged(f"non-finite loss: {terms.as_dict()}")

    g_ps = w.softmax * (softmax(trace.pred_soft) - onehot) / B
    g_ph = hp * w.softmax * (softmax(trace.pred_hard) - onehot) / B
    grads = {
        "cls_w": trace.soft.T @ g_ps + trace.hard.T @ g_ph,
        "cls_b": g_ps.sum(axis=0) + g_ph.sum(axis=0),
    }
    g_soft = g_ps @ P["cls_w"].T + w.central * r_soft / B
    g_hard = g_ph @ P["cls_w"].T + hp * w.central * r_hard / B
    g_centers = np.zeros_like(P["centers"])
    np.add.at(g_centers, y, -w.central * (r_soft + hp * r_hard) / B)
    grads["centers"] = g_centers

    g_soft, g_hard = g_soft.reshape(B, M, D), g_hard.reshape(B, M, D)
    Cb = P["codebooks"]
    grads["codebooks"] = np.einsum("bmk,bmd->mkd", trace.p, g_soft) + np.einsum("bmk,bmd->mkd", trace.e, g_hard)
    g_p = np.einsum("bmd,mkd->bmk", g_soft, Cb)
    if straight_through and hard_path:
        g_e = np.einsum("bmd,mkd->bmk", g_hard, Cb)
        g_p = g_p + st_backward(g_e)
    g_p = g_p + w.gini_batch * 2.0 * pbar[None] / B
    g_p = g_p - w.gini_sample * 2.0 * trace.p / B
    grads.update(backprop_probs(model, trace, g_p))
    for name in DECAYED_PARAMS:
        if name in P:
            grads[name] = grads[name] + w.weight_decay * P[name]
    return terms, grads


# -- training -----------------------------------------------------------------


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    learning_rate: float
    terms: LossTerms
    # (M, K) count of training points whose argmax lands in each cluster
    usage: np.ndarray = field(repr=False)

    @property
    def max_usage_fraction(self) -> float:
        return float((self.usage / self.usage.sum(axis=1, keepdims=True)).max())


def _mean_terms(items: list[tuple[LossTerms, int]]) -> LossTerms:
    n = sum(b for _, b in items)
    fields = LossTerms.__dataclass_fields__
    return LossTerms(**{f: sum(getattr(t, f) * b for t, b in items) / n for f in fields})


def train(
    data: VectorSet,
    config: QuantizerConfig,
    callback: Optional[Callable[[EpochStats], None]] = None,
) -> DpqModel:
    """Mini-batch SGD with momentum over seeded shuffles.

    Learning rate drops by 10x once two thirds of the epochs are done.
    """
    if data.labels is None:
        raise ValueError("training data must be labelled")
    if data.dim != config.input_dim:
        raise ValueError(f"data dimension {data.dim} != config input_dim {config.input_dim}")
    if len(data) == 0:
        raise ValueError("training data is empty")
    labels = data.labels
    if labels.max() >= config.num_classes:
        raise ValueError(f"label {labels.max()} outside [0, {config.num_classes})")
    missing = sorted(set(range(config.num_classes)) - set(np.unique(labels).tolist()))
    if missing:
        warnings.warn(f"classes absent from training data: {missing}", stacklevel=2)

    X = data.vectors
    rng = np.random.default_rng(config.seed)
    warm = X[rng.permutation(len(X))[: max(1024, config.K)]]
    model = init_model(config, warm)
    params = {k: v.copy() for k, v in model.params.items()}
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    decay_at = math.ceil(2 * config.epochs / 3)

    for epoch in range(config.epochs):
        lr = config.learning_rate * (0.1 if epoch >= decay_at else 1.0)
        order = rng.permutation(len(X))
        seen: list[tuple[LossTerms, int]] = []
        usage = np.zeros((config.M, config.K), dtype=np.int64)
        for start in range(0, len(X), config.batch_size):
            idx = order[start : start + config.batch_size]
            current = DpqModel(config, params)
            trace = forward(X[idx], current)
            terms, grads = total_loss(current, None, labels[idx], hard_path=config.hard_path, trace=trace)
            for m in range(config.M):
                usage[m] += np.bincount(trace.kstar[:, m], minlength=config.K)
            for name in params:
                velocity[name] = config.momentum * velocity[name] - lr * grads[name]
                params[name] = params[name] + velocity[name]
                if not np.all(np.isfinite(params[name])):
                    raise TrainingDiverged(
                        f"parameter {name} became non-finite at epoch {epoch}; last loss terms {terms.as_dict()}"
                    )
            seen.append((terms, len(idx)))
        stats = EpochStats(epoch, lr, _mean_terms(seen), usage)
        log.info(
            "epoch %d lr %.4g loss %.6f (ce %.4f/%.4f central %.4f gini %.4f/%.4f) max-usage %.3f",
            epoch,
            lr,
            stats.terms.total,
            stats.terms.softmax_soft,
            stats.terms.softmax_hard,
            stats.terms.central,
            stats.terms.gini_batch,
            stats.terms.gini_sample,
            stats.max_usage_fraction,
        )
        if callback is not None:
            callback(stats)
    return DpqModel(config, params)


# -- inference ----------------------------------------------------------------


def encode_many(x, model: DpqModel) -> np.ndarray:
    """(N, M) argmax cluster indices."""
    return forward(x, model).kstar


def encode(x, model: DpqModel) -> CompressedCode:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("encode takes a single vector; use encode_many for batches")
    return CompressedCode(tuple(encode_many(x, model)[0]), model.K)


def query_soft(x, model: DpqModel) -> np.ndarray:
    """Soft representation; per-partition L2-normalized when the model is."""
    trace = forward(x, model)
    return trace.soft[0] if np.asarray(x).ndim == 1 else trace.soft


def intra_normalize(model: DpqModel) -> DpqModel:
    """L2-normalize every codebook row and mark soft outputs for normalization."""
    cb = model.params["codebooks"]
    norms = np.linalg.norm(cb, axis=2)
    zero = np.argwhere(norms == 0)
    if zero.size:
        m, k = zero[0]
        raise ValueError(f"codebook row {k} of partition {m} has zero norm")
    return DpqModel(model.config, {**model.params, "codebooks": cb / norms[..., None]}, normalized=True)


# -- presets ------------------------------------------------------------------


def preset(name: str, input_dim: int, num_classes: int, **overrides) -> QuantizerConfig:
    """``cifar-style``: per-slice 128-unit MLP, K=64, D = input_dim // M.
    ``crossdomain-style``: 2048-unit front layer, M=8, K=256, D=64."""
    if name == "cifar-style":
        base = dict(M=4, K=64, hidden_dim=128, front_dim=0)
    elif name == "crossdomain-style":
        base = dict(M=8, K=256, D=64, hidden_dim=256, front_dim=2048)
    else:
        raise ValueError(f"unknown preset {name!r}")
    base.update(overrides)
    return QuantizerConfig(input_dim=input_dim, num_classes=num_classes, **base)


# -- DPQM file format ---------------------------------------------------------

# config block: M, K, D, L, hidden, C (u32), five loss weights (f32),
# then front_dim (u32) and flags (u32, bit 0 = intra-normalized, bit 1 = soft-only)
_CONFIG_FMT = "<6I5f2I"


def save_model(path: PathLike, model: DpqModel) -> None:
    path = Path(path)
    path.write_bytes(model_to_bytes(model))


def model_to_bytes(model: DpqModel) -> bytes:
    cfg = model.config
    flags = int(model.normalized) | (0 if cfg.hard_path else 2)
    out = bytearray(MODEL_MAGIC)
    out += struct.pack("<I", MODEL_VERSION)
    out += struct.pack(
        _CONFIG_FMT,
        cfg.M,
        cfg.K,
        cfg.centroid_dim,
        cfg.input_dim,
        cfg.hidden_dim,
        cfg.num_classes,
        *cfg.weights.as_tuple(),
        cfg.front_dim,
        flags,
    )
    for name in PARAM_ORDER:
        if name not in model.params:
            continue
        arr = model.params[name]
        out += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return bytes(out)


def load_model(path: PathLike) -> DpqModel:
    return model_from_bytes(Path(path).read_bytes())


def model_from_bytes(buf: bytes) -> DpqModel:
    if buf[:4] != MODEL_MAGIC:
        raise FormatError("not a DPQM file")
    try:
        (version,) = struct.unpack_from("<I", buf, 4)
        if version != MODEL_VERSION:
            raise FormatError(f"unsupported DPQM version {version}")
        off = 8
        M, K, D, L, H, C, *rest = struct.unpack_from(_CONFIG_FMT, buf, off)
    except struct.error as exc:
        raise FormatError("truncated DPQM header") from exc
    ws, front_dim, flags = rest[:5], rest[5], rest[6]
    off += struct.calcsize(_CONFIG_FMT)
    cfg = QuantizerConfig(
        M=M,
        K=K,
        D=D,
        input_dim=L,
        hidden_dim=H,
        num_classes=C,
        front_dim=front_dim,
        weights=LossWeights(*(float(v) for v in ws)),
        hard_path=not flags & 2,
    )
    params = {}
    for name in PARAM_ORDER:
        if name.startswith("front") and not front_dim:
            continue
        try:
            (rank,) = struct.unpack_from("<I", buf, off)
            shape = struct.unpack_from(f"<{rank}I", buf, off + 4)
        except struct.error as exc:
            raise FormatError(f"truncated DPQM file at tensor {name}") from exc
        off += 4 + 4 * rank
        count = int(np.prod(shape))
        if off + 4 * count > len(buf):
            raise FormatError(f"truncated DPQM file at tensor {name}")
        params[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=off).reshape(shape).astype(np.float64)
        off += 4 * count
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes in DPQM file")
    return DpqModel(cfg, params, normalized=bool(flags & 1))
