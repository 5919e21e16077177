"""Frame-level extractors, statistics pooling and the full speaker model.

TDNN path: five context-spliced layers (x-vector layout, valid convolution,
so 14 frames of receptive field are consumed), attention applied once on the
frame-level output, then statistics pooling and two FC layers.

CNN path: a reduced residual network on 257-bin spectrograms with attention
at the end of every residual block, just before the skip addition.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensor as T
from .attention import AttentionConfig, CnnTwoStageAttention, Scenario, TwoStageAttention
from .errors import ConfigError, ShapeError
from .features import FeatureKind, FeatureMatrix
from .nn import BatchNorm, Linear, Module, glorot
from .tensor import Tensor

XVECTOR_CONTEXTS = ((-2, -1, 0, 1, 2), (-2, 0, 2), (-3, 0, 3), (0,), (0,))
FULL_TDNN_WIDTHS = (512, 512, 512, 512, 1500)
TOY_TDNN_WIDTHS = (64, 64, 64, 64, 64)
RESNET34_BLOCKS = (3, 4, 6, 3)


@dataclass(frozen=True)
class TdnnLayerSpec:
    context_offsets: tuple[int, ...]
    in_dim: int
    out_dim: int

    def __post_init__(self):
        offs = tuple(self.context_offsets)
        if not offs or list(offs) != sorted(set(offs)):
            raise ConfigError(f"context offsets must be sorted and unique, got {offs}")
        object.__setattr__(self, "context_offsets", offs)

    @property
    def span(self) -> int:
        return self.context_offsets[-1] - self.context_offsets[0]


def tdnn_receptive_field(contexts=XVECTOR_CONTEXTS) -> int:
    return 1 + sum(c[-1] - c[0] for c in contexts)


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to rebuild a SpeakerModel; serialises to key=value text."""

    backbone: str = "tdnn"
    n_speakers: int = 2
    embed_dim: int = 512
    scenario: str = "none"
    gamma: float | None = None
    K: int = 100
    batchnorm: bool = True
    tdnn_widths: tuple[int, ...] = FULL_TDNN_WIDTHS
    tdnn_contexts: tuple[tuple[int, ...], ...] = XVECTOR_CONTEXTS
    resnet_blocks: tuple[int, ...] = (2, 2, 2, 2)
    resnet_channels: tuple[int, ...] = (16, 32, 64, 128)
    resnet_stem: int = 16
    frames: int = 200
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.backbone not in ("tdnn", "resnet"):
            raise ConfigError(f"unknown backbone {self.backbone!r}")
        if len(self.tdnn_widths) != len(self.tdnn_contexts):
            raise ConfigError("tdnn_widths and tdnn_contexts must have the same length")
        if len(self.resnet_blocks) != len(self.resnet_channels):
            raise ConfigError("resnet_blocks and resnet_channels must have the same length")
        if self.n_speakers < 1 or self.embed_dim < 1:
            raise ConfigError("n_speakers and embed_dim must be positive")
        self.attention  # validates scenario/gamma

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig(Scenario(self.scenario), self.gamma, self.K)

    @property
    def feature_kind(self) -> FeatureKind:
        return FeatureKind.LOGMEL40 if self.backbone == "tdnn" else FeatureKind.SPEC257

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def replace(self, **kw) -> "ModelConfig":
        d = asdict(self)
        d.update(kw)
        return ModelConfig(**d)

    def to_text(self) -> str:
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            lines.append(f"{f.name}={_fmt(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        raw = dict(line.split("=", 1) for line in text.splitlines() if line.strip())
        kw = {}
        for f in fields(cls):
            if f.name in raw:
                kw[f.name] = _parse(f.name, raw[f.name])
        return cls(**kw)


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ";".join(",".join(str(i) for i in t) for t in v)
        return ",".join(str(i) for i in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(name: str, s: str):
    s = s.strip()
    if name == "gamma":
        return None if s == "none" else float(s)
    if name == "batchnorm":
        return s == "true"
    if name == "tdnn_contexts":
        return tuple(tuple(int(i) for i in part.split(",")) for part in s.split(";"))
    if name in ("tdnn_widths", "resnet_blocks", "resnet_channels"):
        return tuple(int(i) for i in s.split(","))
    if name in ("n_speakers", "embed_dim", "K", "resnet_stem", "frames", "seed"):
        return int(s)
    return s


# -- TDNN -------------------------------------------------------------------------------


class TdnnLayer(Module):
    def __init__(self, spec: TdnnLayerSpec, rng, batchnorm: bool = True, dtype=np.float64):
        self.spec = spec
        self.affine = Linear(len(spec.context_offsets) * spec.in_dim, spec.out_dim, rng, dtype)
        self.bn = BatchNorm(spec.out_dim, dtype=dtype) if batchnorm else None

    def splice(self, x: Tensor) -> Tensor:
        offs = self.spec.context_offsets
        n_out = x.shape[-2] - self.spec.span
        if n_out < 1:
            raise ShapeError(f"layer with offsets {offs} needs more than {x.shape[-2]} frames")
        lo = offs[0]
        if len(offs) == 1:
            return x
        parts = [x[..., o - lo : o - lo + n_out, :] for o in offs]
        return T.concat(parts, axis=-1)

    def __call__(self, x: Tensor) -> Tensor:
        h = T.relu(self.affine(self.splice(x)))
        return self.bn(h) if self.bn is not None else h


class Tdnn(Module):
    def __init__(self, in_dim: int, widths, contexts, rng, batchnorm: bool = True, dtype=np.float64):
        self.layers = []
        for ctx, out_dim in zip(contexts, widths):
            self.layers.append(TdnnLayer(TdnnLayerSpec(tuple(ctx), in_dim, out_dim), rng, batchnorm, dtype))
            in_dim = out_dim
        self.receptive_field = tdnn_receptive_field(contexts)
        self.out_dim = in_dim

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-2] < self.receptive_field:
            raise ShapeError(
                f"utterance too short for receptive field: {x.shape[-2]} frames < {self.receptive_field}"
            )
        for layer in self.layers:
            x = layer(x)
        return x


def tdnn_forward(tdnn: Tdnn, X) -> Tensor:
    """Frame-level TDNN output; valid splicing shortens the sequence by the receptive field minus one."""
    if isinstance(X, FeatureMatrix):
        X = X.frames
    if not isinstance(X, Tensor):
        X = Tensor(X)
    return tdnn(X)


def stats_pool(H: Tensor) -> Tensor:
    """Mean and population std over time, concatenated: (..., T, F) -> (..., 1, 2F)."""
    if H.ndim < 2 or H.shape[-2] < 1:
        raise ShapeError(f"statistics pooling needs a (..., T, F) map with T >= 1, got {H.shape}")
    return T.concat([T.mean(H, axis=-2, keepdims=True), T.std(H, axis=-2, keepdims=True)], axis=-1)


# -- ResNetLite ------------------------------------------------------------------------------


def _ceil_half(n: int) -> int:
    return (n + 1) // 2


class Conv(Module):
    def __init__(self, cin: int, cout: int, k: int, stride: int, rng, dtype=np.float64):
        self.weight = glorot(rng, cin * k * k, cout * k * k, (k, k, cin, cout), dtype)
        self.stride = stride
        self.pad = k // 2

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.stride, self.pad)


class ResidualBlock(Module):
    """conv-bn-relu-conv-bn, attention on the main path, + skip, relu."""

    def __init__(self, cin, cout, stride, t_out, f_out, att: AttentionConfig, rng, dtype=np.float64):
        self.conv1 = Conv(cin, cout, 3, stride, rng, dtype)
        self.bn1 = BatchNorm(cout, dtype=dtype)
        self.conv2 = Conv(cout, cout, 3, 1, rng, dtype)
        self.bn2 = BatchNorm(cout, dtype=dtype)
        self.attention = (
            CnnTwoStageAttention(t_out, f_out, cout, att, rng, dtype) if att.scenario is not Scenario.NONE else None
        )
        self.proj = Conv(cin, cout, 1, stride, rng, dtype) if (stride != 1 or cin != cout) else None
        self.proj_bn = BatchNorm(cout, dtype=dtype) if self.proj is not None else None

    def __call__(self, x: Tensor) -> Tensor:
        h = T.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        if self.attention is not None:
            h = self.attention(h)
        skip = self.proj_bn(self.proj(x)) if self.proj is not None else x
        if skip.shape != h.shape:
            raise ShapeError(f"residual shapes differ: main {h.shape}, skip {skip.shape}")
        return T.relu(h + skip)


class ResNetLite(Module):
    """Stem conv + stages of residual blocks; every stage entry has stride 2."""

    def __init__(self, cfg: ModelConfig, rng, in_dim: int = 257):
        dtype = cfg.np_dtype
        self.frames = cfg.frames
        self.min_frames = 2 ** len(cfg.resnet_blocks)
        if cfg.frames < self.min_frames:
            raise ConfigError(f"ResNetLite with {len(cfg.resnet_blocks)} stages needs >= {self.min_frames} frames")
        self.stem = Conv(1, cfg.resnet_stem, 3, 1, rng, dtype)
        self.stem_bn = BatchNorm(cfg.resnet_stem, dtype=dtype)
        self.blocks = []
        cin, t, f = cfg.resnet_stem, cfg.frames, in_dim
        for n_blocks, cout in zip(cfg.resnet_blocks, cfg.resnet_channels):
            for b in range(n_blocks):
                stride = 2 if b == 0 else 1
                if stride == 2:
                    t, f = _ceil_half(t), _ceil_half(f)
                self.blocks.append(ResidualBlock(cin, cout, stride, t, f, cfg.attention, rng, dtype))
                cin = cout
        self.out_shape = (t, f, cin)

    def __call__(self, x: Tensor) -> Tensor:
        """(B, T, 257) -> (B, Tk, Fk, Ck)."""
        if x.shape[-2] < self.min_frames:
            raise ShapeError(f"input of {x.shape[-2]} frames too short for receptive field (need >= {self.min_frames})")
        h = T.reshape(x, x.shape + (1,))
        h = T.relu(self.stem_bn(self.stem(h)))
        for block in self.blocks:
            h = block(h)
        return h


# -- full model ------------------------------------------------------------------------------


class SpeakerModel(Module):
    """backbone -> attention -> stats pooling -> FC1 (embedding) -> FC2 -> speaker head."""

    def __init__(self, cfg: ModelConfig):
        self.config = cfg
        rng = np.random.default_rng(cfg.seed)
        dtype = cfg.np_dtype
        kind = cfg.feature_kind
        if cfg.backbone == "tdnn":
            self.tdnn = Tdnn(kind.dim, cfg.tdnn_widths, cfg.tdnn_contexts, rng, cfg.batchnorm, dtype)
            width = self.tdnn.out_dim
            self.attention = (
                TwoStageAttention(width, cfg.attention, rng, dtype) if cfg.attention.scenario is not Scenario.NONE else None
            )
        else:
            self.resnet = ResNetLite(cfg, rng, kind.dim)
            t, f, c = self.resnet.out_shape
            width = f * c
        self.fc1 = Linear(2 * width, cfg.embed_dim, rng, dtype)
        self.bn1 = BatchNorm(cfg.embed_dim, dtype=dtype) if cfg.batchnorm else None
        self.fc2 = Linear(cfg.embed_dim, cfg.embed_dim, rng, dtype)
        self.bn2 = BatchNorm(cfg.embed_dim, dtype=dtype) if cfg.batchnorm else None
        self.head = Linear(cfg.embed_dim, cfg.n_speakers, rng, dtype)
        self.ams_weight: Tensor | None = None

    # -- input handling
    def _input(self, X) -> tuple[Tensor, bool]:
        kind = self.config.feature_kind
        if isinstance(X, FeatureMatrix):
            if X.kind is not kind:
                raise ConfigError(f"{self.config.backbone} model expects {kind.value} features, got {X.kind.value}")
            X = X.frames
        if not isinstance(X, Tensor):
            X = Tensor(np.asarray(X, dtype=self.config.np_dtype))
        if X.shape[-1] != kind.dim:
            raise ShapeError(f"{self.config.backbone} model expects feature width {kind.dim}, got shape {X.shape}")
        if X.ndim == 2:
            return T.reshape(X, (1,) + X.shape), False
        if X.ndim != 3:
            raise ShapeError(f"features must be (T, L) or (B, T, L), got {X.shape}")
        return X, True

    def frame_level(self, X: Tensor) -> Tensor:
        """(B, T, L) -> attended frame-level map (B, T', F)."""
        if self.config.backbone == "tdnn":
            H = self.tdnn(X)
            return self.attention(H) if self.attention is not None else H
        Hk = self.resnet(X)
        B, t, f, c = Hk.shape
        return T.reshape(Hk, (B, t, f * c))

    def embed(self, X) -> Tensor:
        """Embedding (first FC output, pre-activation): (1, D) for one utterance, (B, D) for a batch."""
        X, _ = self._input(X)
        pooled = stats_pool(self.frame_level(X))
        pooled = T.reshape(pooled, (pooled.shape[0], pooled.shape[-1]))
        return self.fc1(pooled)

    def segment(self, emb: Tensor) -> Tensor:
        h = T.relu(emb)
        if self.bn1 is not None:
            h = self.bn1(h)
        h = T.relu(self.fc2(h))
        if self.bn2 is not None:
            h = self.bn2(h)
        return h

    def logits(self, X) -> Tensor:
        return self.head(self.segment(self.embed(X)))

    def forward(self, X) -> tuple[Tensor, Tensor]:
        emb = self.embed(X)
        return emb, self.head(self.segment(emb))

    __call__ = forward

    def reset_ams_head(self, rng: np.random.Generator | None = None) -> Tensor:
        """Fresh (C, D) class weights for additive-margin fine-tuning."""
        rng = rng if rng is not None else np.random.default_rng(self.config.seed + 1)
        cfg = self.config
        self.ams_weight = glorot(rng, cfg.embed_dim, cfg.n_speakers, (cfg.n_speakers, cfg.embed_dim), cfg.np_dtype)
        return self.ams_weight

    # -- utterance-level helpers
    def windows(self, X: np.ndarray) -> np.ndarray:
        """Fixed-length CNN windows (hop = half a window) covering an utterance: (W, frames, L)."""
        n, w = X.shape[0], self.config.frames
        if n < w:
            raise ShapeError(f"utterance of {n} frames shorter than the CNN input length {w}")
        starts = list(range(0, n - w + 1, max(1, w // 2)))
        if starts[-1] != n - w:
            starts.append(n - w)
        return np.stack([X[s : s + w] for s in starts])

    def utterance_outputs(self, fm: FeatureMatrix) -> tuple[np.ndarray, np.ndarray]:
        """(embedding (D,), logits (C,)) for a whole utterance, no gradient tracking.

        The CNN model has a fixed input length, so it averages over windows.
        """
        if isinstance(fm, FeatureMatrix):
            self._input(fm)
            fm = fm.frames
        X = np.asarray(fm, dtype=self.config.np_dtype)
        X = self.windows(X) if self.config.backbone == "resnet" else X[None]
        with T.no_grad():
            emb, logits = self.forward(X)
        return emb.data.mean(axis=0), logits.data.mean(axis=0)


def build_model(cfg: ModelConfig) -> SpeakerModel:
    return SpeakerModel(cfg)
