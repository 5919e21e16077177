"""Central finite-difference gradient checks for every differentiable op.

Each case builds leaf tensors from a seed and a scalar loss
``sum(R * op(leaves))`` with a fixed random weighting ``R``. The analytic
gradient from ``backward`` is compared element-wise with
``(L(x + h) - L(x - h)) / 2h``.

Relative error is ``|a - n| / max(|a|, |n|, REL_FLOOR)``: gradients smaller
than the floor are judged on absolute error instead, since their central
difference carries roundoff of order eps * |L| / h regardless of size.

Inputs that are pooled by a standard deviation are redrawn until every pooled
slice has spread >= MIN_SPREAD. Near-constant slices make sqrt(var + eps)
so sharply curved that the h = 1e-5 central difference itself is off by more
than the tolerance, while the analytic gradient stays exact.

The end-to-end model case is redrawn the same way, and also until every ReLU
pre-activation and every max-pooling top-2 gap is at least KINK_MARGIN. A
perturbation of h that crosses a kink makes the central difference average
two one-sided slopes, which is a defect of the probe, not of the gradient.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from types import SimpleNamespace
from typing import Callable

import numpy as np

from . import attention as A
from . import tensor as T
from .backbones import Tdnn, stats_pool
from .nn import BatchNorm, Linear
from .objectives import AmSoftmaxConfig, am_softmax, cross_entropy
from .tensor import Tensor

H_STEP = 1e-5
REL_FLOOR = 1e-6
TOL = 1e-4
MIN_SPREAD = 0.05
KINK_MARGIN = 1e-3


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_grads(loss_fn: Callable[[], float], leaves: list[Tensor], h: float = H_STEP) -> list[np.ndarray]:
    out = []
    for leaf in leaves:
        g = np.zeros_like(leaf.data)
        flat = leaf.data.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            gf[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def check_gradients(build_loss: Callable[[], Tensor], leaves: list[Tensor], h: float = H_STEP) -> float:
    """Max element-wise relative error between backward and central differences."""
    for leaf in leaves:
        leaf.grad = None
    build_loss().backward()
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]

    def scalar():
        with T.no_grad():
            return build_loss().item()

    numeric = numeric_grads(scalar, leaves, h)
    return max(float(rel_error(a, n).max()) for a, n in zip(analytic, numeric))


def _leaf(rng, shape, lo=-2.0, hi=2.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _weighted(rng, fn, leaves):
    """Loss = sum(R * fn(*leaves)) with R drawn once per case."""
    R = {}

    def build():
        out = fn(*leaves)
        if "r" not in R:
            R["r"] = rng.uniform(-1.0, 1.0, size=out.shape)
        return T.tsum(out * R["r"])

    return build


def _op_case(fn, *shapes, lo=-2.0, hi=2.0):
    def make(rng):
        leaves = [_leaf(rng, s, lo, hi) for s in shapes]
        return _weighted(rng, fn, leaves), leaves

    return make


def _spread_leaf(rng, shape, axes) -> Tensor:
    while True:
        x = rng.uniform(-2.0, 2.0, size=shape)
        if all(x.std(axis=a).min() >= MIN_SPREAD for a in axes):
            return Tensor(x, requires_grad=True)


def _freq_params(rng, F, K):
    return SimpleNamespace(W0c=_leaf(rng, (F, K), -1, 1), b0c=_leaf(rng, (1, K), -1, 1), W1c=_leaf(rng, (K, F), -1, 1))


def _time_params(rng, F):
    return SimpleNamespace(W0=_leaf(rng, (F, F), -1, 1), b0=_leaf(rng, (1, F), -1, 1), W1=_leaf(rng, (F, 1), -1, 1))


def _dims(rng):
    return int(rng.integers(2, 7)), int(rng.integers(2, 6)), int(rng.integers(1, 4))


def _attention_case(kind: str):
    def make(rng):
        Tn, F, K = _dims(rng)
        H = _spread_leaf(rng, (Tn, F), [0])
        fp, tp = _freq_params(rng, F, K), _time_params(rng, F)
        if kind == "freq_weights":
            fn, leaves = (lambda H: A.freq_attention_weights(H, fp)), [H, fp.W0c, fp.b0c, fp.W1c]
        elif kind == "time_weights":
            fn, leaves = (lambda H: A.time_attention_weights(H, tp)), [H, tp.W0, tp.b0, tp.W1]
        else:
            gamma = float(rng.uniform(0, 1)) if kind == "parallel" else None
            cfg = A.AttentionConfig(A.Scenario(kind), gamma, K)
            fn = lambda H: A.compose(H, cfg, fp, tp)  # noqa: E731
            leaves = [H] + ([fp.W0c, fp.b0c, fp.W1c] if cfg.uses_freq else []) + ([tp.W0, tp.b0, tp.W1] if cfg.uses_time else [])
        return _weighted(rng, lambda *_: fn(H), leaves), leaves

    return make


def _cnn_case(kind: str):
    def make(rng):
        Tn, F, C = int(rng.integers(2, 5)), int(rng.integers(2, 4)), int(rng.integers(1, 3))
        K = int(rng.integers(1, 4))
        H = _spread_leaf(rng, (Tn, F, C), [0, (1, 2)])
        fp = _freq_params(rng, F * C, min(K, F * C))
        tp2 = _freq_params(rng, Tn, min(K, Tn))
        gamma = float(rng.uniform(0, 1)) if kind == "parallel" else None
        cfg = A.AttentionConfig(A.Scenario(kind), gamma, K)
        leaves = [H, fp.W0c, fp.b0c, fp.W1c, tp2.W0c, tp2.b0c, tp2.W1c]
        return _weighted(rng, lambda *_: A.cnn_two_stage(H, cfg, fp, tp2), leaves), leaves

    return make


def _std_case(rng):
    x = _spread_leaf(rng, (5, 4), [0])
    return _weighted(rng, lambda x: T.std(x, axis=0), [x]), [x]


def _stats_pool_case(rng):
    H = _spread_leaf(rng, (int(rng.integers(2, 7)), int(rng.integers(1, 6))), [0])
    return _weighted(rng, stats_pool, [H]), [H]


def _ce_case(rng):
    B, C = int(rng.integers(1, 5)), int(rng.integers(2, 6))
    logits = _leaf(rng, (B, C))
    y = rng.integers(0, C, size=B)
    return (lambda: cross_entropy(logits, y)), [logits]


def _am_case(rng):
    B, C, D = int(rng.integers(1, 5)), int(rng.integers(2, 5)), int(rng.integers(2, 5))
    emb, W = _leaf(rng, (B, D)), _leaf(rng, (C, D))
    y = rng.integers(0, C, size=B)
    # a smaller scale keeps the loss O(1) so central differences stay well conditioned
    cfg = AmSoftmaxConfig(margin=0.3, scale=float(rng.uniform(1.0, 5.0)))
    return (lambda: am_softmax(emb, y, W, cfg)), [emb, W]


def _batchnorm_case(rng):
    bn = BatchNorm(3)
    bn.gamma.data = rng.uniform(0.5, 1.5, size=3)
    bn.beta.data = rng.uniform(-1, 1, size=3)
    x = _spread_leaf(rng, (8, 3), [0])
    x = Tensor(x.data.reshape(2, 4, 3), requires_grad=True)
    return _weighted(rng, lambda x: bn(x), [x]), [x, bn.gamma, bn.beta]


def _conv_case(rng):
    x = _leaf(rng, (2, 5, 4, 2))
    w = _leaf(rng, (3, 3, 2, 3), -1, 1)
    stride = int(rng.integers(1, 3))
    return _weighted(rng, lambda x, w: T.conv2d(x, w, stride, 1), [x, w]), [x, w]


def _far_from_kinks(pre: np.ndarray) -> bool:
    return bool(np.abs(pre).min() >= KINK_MARGIN)


def _max_gap_ok(x: np.ndarray, axis: int) -> bool:
    top2 = np.sort(x, axis=axis).take([-1, -2], axis=axis)
    return bool(np.abs(np.diff(top2, axis=axis)).min() >= KINK_MARGIN)


def _tiny_model_conditioned(tdnn, att, fc1, X) -> bool:
    """True when the draw keeps every kink and near-constant pooled slice out of h's reach."""
    h = X.data
    for layer in tdnn.layers:
        with T.no_grad():
            pre = layer.affine(layer.splice(Tensor(h))).data
        if not _far_from_kinks(pre):
            return False
        h = np.maximum(pre, 0.0)
    fp, tp = att.fp, att.tp
    if not _max_gap_ok(h, axis=-2) or h.std(axis=-2).min() < MIN_SPREAD:
        return False
    h_stat = h.mean(axis=-2, keepdims=True) + h.std(axis=-2, keepdims=True)
    for v in (h.max(axis=-2, keepdims=True), h_stat):
        if not _far_from_kinks(v @ fp.W0c.data + fp.b0c.data):
            return False
    with T.no_grad():
        hf = A.apply_freq_attention(Tensor(h), A.freq_attention_weights(Tensor(h), fp)).data
        if not _far_from_kinks(hf @ tp.W0.data + tp.b0.data):
            return False
        out = att(Tensor(h)).data
        if out.std(axis=-2).min() < MIN_SPREAD:
            return False
        pooled = stats_pool(Tensor(out)).data.reshape(X.shape[0], -1)
        return _far_from_kinks(fc1(Tensor(pooled)).data)


def _tiny_model_case(rng):
    """2 TDNN layers (width 4) -> FT attention -> stats pooling -> FC -> FC -> cross-entropy."""
    F_in, width, emb_dim, n_cls = 3, 4, 4, 3
    while True:
        tdnn = Tdnn(F_in, (width, width), ((-1, 0, 1), (-2, 0, 2)), rng, batchnorm=False)
        att = A.TwoStageAttention(width, A.AttentionConfig(A.Scenario.FT, K=2), rng)
        fc1, head = Linear(2 * width, emb_dim, rng), Linear(emb_dim, n_cls, rng)
        for mod in (fc1, head):
            mod.bias.data = rng.uniform(-0.5, 0.5, size=mod.bias.shape)
        att.fp.b0c.data = rng.uniform(-0.5, 0.5, size=att.fp.b0c.shape)
        att.tp.b0.data = rng.uniform(-0.5, 0.5, size=att.tp.b0.shape)
        X = Tensor(rng.uniform(-2, 2, size=(2, 9, F_in)))
        if _tiny_model_conditioned(tdnn, att, fc1, X):
            break
    y = rng.integers(0, n_cls, size=2)

    def build():
        pooled = stats_pool(att(tdnn(X)))
        emb = fc1(T.reshape(pooled, (2, 2 * width)))
        return cross_entropy(head(T.relu(emb)), y)

    leaves = tdnn.parameters() + att.parameters() + fc1.parameters() + head.parameters()
    return build, leaves


CASES: dict[str, Callable] = {
    "matmul": _op_case(T.matmul, (4, 3), (3, 2)),
    "add_broadcast": _op_case(T.add, (2, 3), (1, 3)),
    "sub_broadcast": _op_case(T.sub, (3, 1), (3, 4)),
    "mul_broadcast": _op_case(T.mul, (2, 3, 4), (3, 1)),
    "div": _op_case(T.div, (3, 4), (3, 4), lo=0.5, hi=2.0),
    "relu": _op_case(T.relu, (4, 5)),
    "sigmoid": _op_case(T.sigmoid, (4, 5)),
    "exp": _op_case(T.exp, (3, 4)),
    "log": _op_case(T.log, (3, 4), lo=0.2, hi=2.0),
    "sqrt": _op_case(T.sqrt, (3, 4), lo=0.2, hi=2.0),
    "softmax": _op_case(lambda x: T.softmax(x, axis=0), (5, 3)),
    "log_softmax": _op_case(lambda x: T.log_softmax(x, axis=-1), (3, 5)),
    "sum": _op_case(lambda x: T.tsum(x, axis=1), (3, 4)),
    "mean": _op_case(lambda x: T.mean(x, axis=0), (3, 4)),
    "max": _op_case(lambda x: T.tmax(x, axis=0), (5, 4)),
    "std": _std_case,
    "reshape_transpose": _op_case(lambda x: T.transpose(T.reshape(x, (4, 3)), (1, 0)), (2, 6)),
    "slice_concat": _op_case(lambda x: T.concat([x[1:3], x[0:2]], axis=1), (4, 3)),
    "conv2d": _conv_case,
    "batchnorm": _batchnorm_case,
    "freq_attention": _attention_case("freq_weights"),
    "time_attention": _attention_case("time_weights"),
    "compose_freq": _attention_case("freq"),
    "compose_time": _attention_case("time"),
    "compose_ft": _attention_case("ft"),
    "compose_tf": _attention_case("tf"),
    "compose_parallel": _attention_case("parallel"),
    "cnn_ft": _cnn_case("ft"),
    "cnn_tf": _cnn_case("tf"),
    "cnn_parallel": _cnn_case("parallel"),
    "stats_pool": _stats_pool_case,
    "cross_entropy": _ce_case,
    "am_softmax": _am_case,
    "tiny_model": _tiny_model_case,
}


@dataclass
class CaseResult:
    name: str
    seeds: int
    max_rel_error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOL


def run_case(name: str, seeds: int = 100, base_seed: int = 0) -> CaseResult:
    make = CASES[name]
    worst = 0.0
    t0 = time.perf_counter()
    for s in range(seeds):
        rng = np.random.default_rng([base_seed, s, sum(map(ord, name))])
        build, leaves = make(rng)
        worst = max(worst, check_gradients(build, leaves))
    return CaseResult(name, seeds, worst, time.perf_counter() - t0)


def run_suite(seeds: int = 100, base_seed: int = 0, names=None) -> list[CaseResult]:
    return [run_case(n, seeds, base_seed) for n in (names or CASES)]
