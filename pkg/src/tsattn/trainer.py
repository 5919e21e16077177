"""Adam training loop: cross-entropy pre-training, optional AM-Softmax fine-tuning.

Learning rate decays geometrically per epoch: ``lr(e) = lr0 * decay**e``
(``finetune_lr`` replaces ``lr0`` in the fine-tune phase). The metrics log is
append-only, one ``epoch=.. phase=.. loss=.. top1=.. lr=..`` line per epoch,
and a checkpoint holding model, optimizer moments and loop position is
written after every epoch so a run can resume bit-identically.
"""

from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import checkpoint as ckpt
from .backbones import SpeakerModel
from .dataset import Manifest, make_batches, prefetch
from .features import FeatureMatrix
from .objectives import AmSoftmaxConfig, am_softmax, cosine_logits, cross_entropy, top1
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

PHASES = ("CE", "AMS")
# parameters downstream of the embedding; unused by the AM-Softmax phase
_CLASSIFIER_ONLY = ("fc2.", "bn1.", "bn2.", "head.")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class OptimizerState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: "OrderedDict[str, Tensor]", st: OptimizerState) -> None:
    """One bias-corrected Adam update of every parameter from its ``.grad``."""
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise ValueError(f"adam_step: no gradient for {missing[:5]}")
    st.step += 1
    t = st.step
    c1 = 1.0 - st.beta1**t
    c2 = 1.0 - st.beta2**t
    for name, p in params.items():
        g = p.grad.astype(p.data.dtype, copy=False)
        m = st.m.get(name)
        v = st.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = st.beta1 * m + (1.0 - st.beta1) * g
        v = st.beta2 * v + (1.0 - st.beta2) * (g * g)
        st.m[name], st.v[name] = m, v
        update = st.lr * (m / c1) / (np.sqrt(v / c2) + st.eps)
        p.data = (p.data - update).astype(p.data.dtype, copy=False)


def clip_grad_norm(params, max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params.values()))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params.values():
            p.grad = p.grad * scale
    return total


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    lr0: float = 1e-4
    decay: float = 0.95
    finetune_lr: float = 5e-5
    finetune_epochs: int = 0
    seed: int = 0
    crop_frames: int = 200
    grad_clip: float | None = None
    am_margin: float = 0.3
    am_scale: float = 35.0
    prefetch: int = 2

    def __post_init__(self):
        if self.epochs < 0 or self.finetune_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")

    def lr(self, epoch: int, phase: str = "CE") -> float:
        base = self.lr0 if phase == "CE" else self.finetune_lr
        return base * self.decay**epoch

    @property
    def am(self) -> AmSoftmaxConfig:
        return AmSoftmaxConfig(self.am_margin, self.am_scale)

    def schedule(self) -> list[tuple[str, int]]:
        return [("CE", e) for e in range(self.epochs)] + [("AMS", e) for e in range(self.finetune_epochs)]


def phase_parameters(model: SpeakerModel, phase: str) -> "OrderedDict[str, Tensor]":
    params = model.named_parameters()
    if phase == "CE":
        return OrderedDict((k, v) for k, v in params.items() if k != "ams_weight")
    return OrderedDict((k, v) for k, v in params.items() if not k.startswith(_CLASSIFIER_ONLY))


def batch_loss(model: SpeakerModel, X: np.ndarray, y: np.ndarray, phase: str, cfg: TrainConfig):
    X = Tensor(X.astype(model.config.np_dtype, copy=False))
    if phase == "CE":
        logits = model.logits(X)
        return cross_entropy(logits, y), logits
    emb = model.embed(X)
    loss = am_softmax(emb, y, model.ams_weight, cfg.am)
    with no_grad():
        logits = cosine_logits(emb, model.ams_weight)
    return loss, logits


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    loss: float
    top1: float
    lr: float

    def line(self) -> str:
        return f"epoch={self.epoch} phase={self.phase} loss={self.loss:.6f} top1={self.top1:.6f} lr={self.lr:.6e}"


def _opt_blobs(st: OptimizerState) -> "OrderedDict[str, np.ndarray]":
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for name in st.m:
        out[f"adam.m:{name}"] = st.m[name]
        out[f"adam.v:{name}"] = st.v[name]
    return out


def save_training_state(path, model: SpeakerModel, st: OptimizerState, position: int, phase: str) -> None:
    extra = {
        "train.position": str(position),
        "train.phase": phase,
        "train.step": str(st.step),
        "has_ams": "true" if model.ams_weight is not None else "false",
    }
    ckpt.save_model(path, model, extra, _opt_blobs(st))


def load_training_state(path, cfg: TrainConfig) -> tuple[SpeakerModel, OptimizerState, int]:
    """Returns the model, optimizer state and the index of the next epoch in ``cfg.schedule()``."""
    model, extra, blobs = ckpt.load_model(path)
    position = int(extra.get("train.position", "0"))
    phase = extra.get("train.phase", "CE")
    st = OptimizerState(lr=cfg.lr(0, phase), step=int(extra.get("train.step", "0")))
    dtype = model.config.np_dtype
    for key, arr in blobs.items():
        kind, name = key.split(":", 1)
        target = st.m if kind == "adam.m" else st.v if kind == "adam.v" else None
        if target is not None:
            target[name] = arr.astype(dtype)
    return model, st, position


def train(
    model: SpeakerModel,
    manifest: Manifest,
    loader: Callable[[str], FeatureMatrix],
    cfg: TrainConfig,
    out_dir=None,
    resume_from=None,
    log_path=None,
) -> tuple[SpeakerModel, list[EpochRecord]]:
    """Run the configured schedule; returns the trained model and per-epoch records."""
    if model.config.feature_kind is not loader(manifest.split("train")[0].path).kind:
        raise ValueError("feature kind of the data does not match the model backbone")
    schedule = cfg.schedule()
    start = 0
    st = None
    if resume_from is not None:
        model, st, start = load_training_state(resume_from, cfg)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = log_path or out_dir / "metrics.log"
    history: list[EpochRecord] = []
    for position in range(start, len(schedule)):
        phase, epoch = schedule[position]
        if phase == "AMS" and epoch == 0:
            # fresh class weights and optimizer for the new loss geometry
            model.reset_ams_head(np.random.default_rng([cfg.seed, 7]))
            st = None
        if st is None:
            st = OptimizerState(lr=cfg.lr(epoch, phase))
        st.lr = cfg.lr(epoch, phase)
        params = phase_parameters(model, phase)
        model.train()
        losses, correct, seen = [], 0, 0
        batches = make_batches(manifest, loader, cfg.batch_size, cfg.seed, cfg.crop_frames, epoch=position)
        if cfg.prefetch:
            batches = prefetch(batches, cfg.prefetch)
        for bi, batch in enumerate(batches):
            loss, logits = batch_loss(model, batch.features, batch.labels, phase, cfg)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch} ({phase}), batch {bi}, lr {st.lr:.3e}")
            loss.backward()
            if cfg.grad_clip is not None:
                clip_grad_norm(params, cfg.grad_clip)
            adam_step(params, st)
            model.zero_grad()
            losses.append(value * len(batch.labels))
            correct += top1(logits, batch.labels) * len(batch.labels)
            seen += len(batch.labels)
        rec = EpochRecord(epoch, phase, sum(losses) / max(seen, 1), correct / max(seen, 1), st.lr)
        history.append(rec)
        log.info(rec.line())
        if log_path is not None:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(rec.line() + "\n")
        if out_dir is not None:
            save_training_state(out_dir / f"epoch{position + 1:03d}.ckpt", model, st, position + 1, phase)
    model.eval()
    return model, history
