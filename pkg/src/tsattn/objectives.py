"""Training losses and evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Tensor

NORM_EPS = 1e-12


@dataclass(frozen=True)
class AmSoftmaxConfig:
    margin: float = 0.3
    scale: float = 35.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"AM-Softmax scale must be positive, got {self.scale}")
        if not 0.0 <= self.margin < 1.0:
            raise ValueError(f"AM-Softmax margin must lie in [0, 1), got {self.margin}")


def _check_labels(labels, n_classes: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes}), got range [{y.min()}, {y.max()}]")
    return y


def _one_hot(y: np.ndarray, n: int, dtype) -> np.ndarray:
    out = np.zeros((y.size, n), dtype=dtype)
    out[np.arange(y.size), y] = 1.0
    return out


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    if logits.ndim != 2:
        raise T.ShapeError(f"logits must be (B, C), got {logits.shape}")
    B, C = logits.shape
    y = _check_labels(labels, C)
    if y.size != B:
        raise T.ShapeError(f"{y.size} labels for a batch of {B}")
    logp = T.log_softmax(logits, axis=-1)
    return -(T.tsum(logp * _one_hot(y, C, logits.dtype)) / B)


def l2_normalize(x: Tensor, eps: float = NORM_EPS) -> Tensor:
    return x / T.sqrt(T.tsum(x * x, axis=-1, keepdims=True) + eps)


def cosine_logits(embeddings: Tensor, class_weights: Tensor) -> Tensor:
    if embeddings.shape[-1] != class_weights.shape[-1]:
        raise T.ShapeError(f"embedding width {embeddings.shape} does not match class weights {class_weights.shape}")
    return l2_normalize(embeddings) @ T.transpose(l2_normalize(class_weights))


def am_softmax(embeddings: Tensor, labels, class_weights: Tensor, cfg: AmSoftmaxConfig = AmSoftmaxConfig()) -> Tensor:
    """Additive-margin softmax: cross-entropy on s*(cos - m*onehot)."""
    cos = cosine_logits(embeddings, class_weights)
    B, C = cos.shape
    y = _check_labels(labels, C)
    margin = cfg.margin * _one_hot(y, C, cos.dtype)
    return cross_entropy((cos - margin) * cfg.scale, y)


def top1(logits, labels) -> float:
    """Fraction of rows whose argmax (lowest index on ties) equals the label."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    data = np.atleast_2d(data)
    y = np.asarray(labels).reshape(-1)
    if data.shape[0] == 0:
        raise ValueError("top1 needs at least one row")
    return float(np.mean(np.argmax(data, axis=1) == y))


def cosine_score(a, b, eps: float = NORM_EPS) -> float:
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64).reshape(-1)
    b = np.asarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64).reshape(-1)
    return float(a @ b / max(np.linalg.norm(a) * np.linalg.norm(b), eps))


def eer(scores, labels=None) -> float:
    """Equal error rate over verification trials.

    ``scores`` is either a list of ``(score, label)`` pairs or an array with
    ``labels`` given separately; label 1 / True means same speaker. At each
    distinct threshold t, FAR(t) = share of different-speaker trials scoring
    >= t and FRR(t) = share of same-speaker trials scoring < t. A sentinel
    threshold above every score closes the curve (FAR 0, FRR 1). The EER is
    read where FAR - FRR first reaches zero, interpolating linearly between
    the two thresholds that bracket the crossing.
    """
    if labels is None:
        pairs = list(scores)
        s = np.array([p[0] for p in pairs], dtype=np.float64)
        y = np.array([bool(p[1]) for p in pairs])
    else:
        s = np.asarray(scores, dtype=np.float64).reshape(-1)
        y = np.asarray(labels).astype(bool).reshape(-1)
    n_same, n_diff = int(y.sum()), int((~y).sum())
    if n_same == 0 or n_diff == 0:
        raise ValueError("EER undefined: trials need both same- and different-speaker labels")
    thresholds = np.unique(s)
    same_sorted = np.sort(s[y])
    diff_sorted = np.sort(s[~y])
    frr = np.searchsorted(same_sorted, thresholds, side="left") / n_same
    far = 1.0 - np.searchsorted(diff_sorted, thresholds, side="left") / n_diff
    far = np.append(far, 0.0)
    frr = np.append(frr, 1.0)
    gap = far - frr
    i = int(np.argmax(gap <= 0))
    if gap[i] == 0 or i == 0:
        return float(far[i])
    lam = gap[i - 1] / (gap[i - 1] - gap[i])
    return float(far[i - 1] + lam * (far[i] - far[i - 1]))


@dataclass(frozen=True)
class Trial:
    same: bool
    utt_a: str
    utt_b: str


def read_trials(path) -> list[Trial]:
    """``<label 0|1> <path_a> <path_b>`` per line."""
    trials = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3 or parts[0] not in ("0", "1"):
            raise ValueError(f"{path}:{lineno}: expected '<0|1> <path_a> <path_b>', got {line!r}")
        trials.append(Trial(parts[0] == "1", parts[1], parts[2]))
    labels = {t.same for t in trials}
    if labels != {True, False}:
        raise ValueError(f"{path}: trial list needs both same- and different-speaker pairs")
    return trials


def write_trials(path, trials) -> None:
    lines = [f"{int(t.same)} {t.utt_a} {t.utt_b}" for t in trials]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
