"""Frequency and time attention gates and their cascade/parallel compositions.

Feature maps are laid out ``(..., T, F)``: time on the second-to-last axis,
features on the last. Any leading axes (batch) broadcast through.

Frequency gate: a per-feature sigmoid weight from max-pooled and
(mean + std)-pooled descriptors sent through a shared ReLU bottleneck.
Time gate (TDNN path): a per-frame softmax weight from a small scoring
network. In the CNN path the time gate reuses the frequency-gate machinery
on the transposed map, so it is a sigmoid rather than a softmax.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import Module, glorot, zeros
from .tensor import Tensor


class Scenario(str, Enum):
    NONE = "none"
    TIME = "time"
    FREQ = "freq"
    FT = "ft"
    TF = "tf"
    PARALLEL = "parallel"


@dataclass(frozen=True)
class AttentionConfig:
    scenario: Scenario = Scenario.NONE
    gamma: float | None = None
    K: int = 100

    def __post_init__(self):
        try:
            object.__setattr__(self, "scenario", Scenario(self.scenario))
        except ValueError:
            raise ConfigError(f"unknown attention scenario {self.scenario!r}") from None
        if self.scenario is Scenario.PARALLEL:
            if self.gamma is None:
                object.__setattr__(self, "gamma", 0.5)
            if not 0.0 <= self.gamma <= 1.0:
                raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        elif self.gamma is not None:
            raise ConfigError(f"gamma is only meaningful for the parallel scenario, not {self.scenario.value}")
        if self.K < 1:
            raise ConfigError(f"bottleneck K must be >= 1, got {self.K}")

    @property
    def uses_freq(self) -> bool:
        return self.scenario in (Scenario.FREQ, Scenario.FT, Scenario.TF, Scenario.PARALLEL)

    @property
    def uses_time(self) -> bool:
        return self.scenario in (Scenario.TIME, Scenario.FT, Scenario.TF, Scenario.PARALLEL)


class FreqAttentionParams(Module):
    """Bottleneck gate over a width-``F`` axis: W0c (F, K), b0c (1, K), W1c (K, F).

    ``K`` is clamped to ``F`` when the attended width is narrower.
    """

    def __init__(self, F: int, K: int, rng: np.random.Generator, dtype=np.float64):
        K = min(K, F)
        self.F, self.K = F, K
        self.W0c = glorot(rng, F, K, (F, K), dtype)
        self.b0c = zeros((1, K), dtype)
        self.W1c = glorot(rng, K, F, (K, F), dtype)


class TimeAttentionParams(Module):
    """Frame scorer: W0 (F, F), b0 (1, F), W1 (F, 1)."""

    def __init__(self, F: int, rng: np.random.Generator, dtype=np.float64):
        self.F = F
        self.W0 = glorot(rng, F, F, (F, F), dtype)
        self.b0 = zeros((1, F), dtype)
        self.W1 = glorot(rng, F, 1, (F, 1), dtype)


def _check_width(H: Tensor, width: int, what: str) -> None:
    if H.ndim < 2:
        raise ShapeError(f"{what} expects a (..., T, F) map, got shape {H.shape}")
    if H.shape[-2] < 1:
        raise ShapeError(f"{what} needs at least one frame, got shape {H.shape}")
    if H.shape[-1] != width:
        raise ShapeError(f"{what}: map width {H.shape[-1]} does not match parameter width {width} (shape {H.shape})")


def freq_attention_weights(H: Tensor, p: FreqAttentionParams) -> Tensor:
    """Sigmoid gate of shape (..., 1, F); every entry lies in (0, 1)."""
    _check_width(H, p.W0c.shape[0], "frequency attention")
    h_max = T.tmax(H, axis=-2, keepdims=True)
    h_stat = T.mean(H, axis=-2, keepdims=True) + T.std(H, axis=-2, keepdims=True)
    s_max = T.relu(h_max @ p.W0c + p.b0c) @ p.W1c
    s_stat = T.relu(h_stat @ p.W0c + p.b0c) @ p.W1c
    return T.sigmoid(s_stat + s_max)


def apply_freq_attention(H: Tensor, w: Tensor) -> Tensor:
    if w.shape[-1] != H.shape[-1] or w.shape[-2] != 1:
        raise ShapeError(f"frequency weights {w.shape} cannot gate a map of shape {H.shape}")
    return H * w


def time_attention_weights(H: Tensor, p: TimeAttentionParams) -> Tensor:
    """Softmax over frames, shape (..., T, 1)."""
    _check_width(H, p.W0.shape[0], "time attention")
    scores = T.relu(H @ p.W0 + p.b0) @ p.W1
    return T.softmax(scores, axis=-2)


def time_gate_weights(H: Tensor, p: FreqAttentionParams) -> Tensor:
    """Sigmoid time gate (..., T, 1) computed by the frequency-gate recipe on the transposed map."""
    if H.ndim < 2:
        raise ShapeError(f"time gate expects a (..., T, D) map, got shape {H.shape}")
    axes = list(range(H.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    w = freq_attention_weights(T.transpose(H, axes), p)
    return T.transpose(w, axes)


def compose(H: Tensor, cfg: AttentionConfig, fp=None, tp=None, time_weights=time_attention_weights) -> Tensor:
    """Apply the configured attention scenario; the output has H's shape."""
    sc = cfg.scenario
    if cfg.uses_freq and fp is None:
        raise ConfigError(f"scenario {sc.value} needs frequency attention parameters")
    if cfg.uses_time and tp is None:
        raise ConfigError(f"scenario {sc.value} needs time attention parameters")
    if sc is Scenario.NONE:
        return H
    if sc is Scenario.FREQ:
        return apply_freq_attention(H, freq_attention_weights(H, fp))
    if sc is Scenario.TIME:
        return H * time_weights(H, tp)
    if sc is Scenario.FT:
        H1 = apply_freq_attention(H, freq_attention_weights(H, fp))
        return H1 * time_weights(H1, tp)
    if sc is Scenario.TF:
        H1 = H * time_weights(H, tp)
        return apply_freq_attention(H1, freq_attention_weights(H1, fp))
    g = cfg.gamma
    combined = freq_attention_weights(H, fp) * g + time_weights(H, tp) * (1.0 - g)
    return combined * H


def cnn_two_stage(Hk: Tensor, cfg: AttentionConfig, fp=None, tp2=None) -> Tensor:
    """Attention on a (..., Tk, Fk, Ck) block output via the (..., Tk, Fk*Ck) view."""
    if Hk.ndim < 3 or min(Hk.shape[-3:]) < 1:
        raise ShapeError(f"CNN attention expects a (..., T, F, C) map, got shape {Hk.shape}")
    lead = Hk.shape[:-3]
    Tk, Fk, Ck = Hk.shape[-3:]
    flat = T.reshape(Hk, lead + (Tk, Fk * Ck))
    out = compose(flat, cfg, fp, tp2, time_weights=time_gate_weights)
    return T.reshape(out, Hk.shape)


class TwoStageAttention(Module):
    """Attention on a (..., T, F) map; holds only the parameters its scenario uses."""

    def __init__(self, F: int, cfg: AttentionConfig, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        self.fp = FreqAttentionParams(F, cfg.K, rng, dtype) if cfg.uses_freq else None
        self.tp = TimeAttentionParams(F, rng, dtype) if cfg.uses_time else None

    def __call__(self, H: Tensor) -> Tensor:
        return compose(H, self.cfg, self.fp, self.tp)


class CnnTwoStageAttention(Module):
    """Per-block attention for a (..., Tk, Fk, Ck) map.

    The time gate's bottleneck maps a length-Tk descriptor, so the block's
    time extent is fixed at construction; its width is min(K, Tk).
    """

    def __init__(self, Tk: int, Fk: int, Ck: int, cfg: AttentionConfig, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        self.Tk = Tk
        self.fp = FreqAttentionParams(Fk * Ck, cfg.K, rng, dtype) if cfg.uses_freq else None
        self.tp2 = FreqAttentionParams(Tk, cfg.K, rng, dtype) if cfg.uses_time else None

    def __call__(self, Hk: Tensor) -> Tensor:
        if self.tp2 is not None and Hk.shape[-3] != self.Tk:
            raise ShapeError(f"CNN time gate built for {self.Tk} frames, got map of shape {Hk.shape}")
        return cnn_two_stage(Hk, self.cfg, self.fp, self.tp2)
