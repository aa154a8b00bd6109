"""Shared fixtures for model-level tests."""

import numpy as np

from dpq.codec import LossWeights, QuantizerConfig
from dpq.model import forward, init_model, total_loss

ALL_ON = LossWeights(softmax=1.0, central=0.7, gini_batch=0.3, gini_sample=0.4, weight_decay=0.05)


def toy_model(seed, front_dim=0, M=2, K=4, D=3, C=3, L=6, hidden=5, scale=3.0):
    cfg = QuantizerConfig(M=M, K=K, D=D, input_dim=L, num_classes=C, hidden_dim=hidden, front_dim=front_dim, seed=seed)
    model = init_model(cfg)
    rng = np.random.default_rng(seed + 1000)
    # sharpen logits and give centers/biases non-trivial values
    params = {k: v * scale if k in ("w2",) else v for k, v in model.params.items()}
    params["centers"] = rng.normal(size=params["centers"].shape)
    params["cls_b"] = rng.normal(size=params["cls_b"].shape)
    params["b1"] = rng.normal(scale=0.3, size=params["b1"].shape)
    return model.with_params(**params)


def finite_difference(model, x, y, weights, name, h=1e-5):
    base = model.params[name]
    grad = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        vals = []
        for sign in (1, -1):
            p = base.copy()
            p[idx] += sign * h
            vals.append(total_loss(model.with_params(**{name: p}), x, y, weights)[0].total)
        grad[idx] = (vals[0] - vals[1]) / (2 * h)
    return grad


def near_argmax_boundary(model, x, gap=1e-3):
    p = np.sort(forward(x, model).p, axis=2)
    return np.any(p[..., -1] - p[..., -2] < gap)


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def upstream_grads(model, tr, y, w_central):
    """d(loss)/d(soft) and d(loss)/d(hard) for softmax + joint central loss, shaped (B, M, D)."""
    P = model.params
    B, C = tr.pred_soft.shape
    onehot = np.eye(C)[y]

    def probs(z):
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    out = []
    for pred, rep in ((tr.pred_soft, tr.soft), (tr.pred_hard, tr.hard)):
        g = ((probs(pred) - onehot) / B) @ P["cls_w"].T + w_central * (rep - P["centers"][y]) / B
        out.append(g.reshape(B, model.M, model.D))
    return out
