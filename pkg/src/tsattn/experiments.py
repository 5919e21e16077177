"""Experiment plumbing shared by the CLI and the scripts in ``scripts/``.

Config files are flat ``key = value`` text, one pair per line, ``#`` starts a
comment. Keys are the fields of ``ModelConfig`` and ``TrainConfig`` plus
``train_noise`` (noise kind used for training augmentation, or ``none``) and
``augment_copies`` (noisy copies per training utterance).

Noisy utterances are addressed by virtual paths ``<path>@<kind>:<snr>:<seed>``
so that a manifest can list clean and corrupted versions side by side without
writing audio to disk.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .backbones import ModelConfig, SpeakerModel, _parse
from .dataset import Manifest, ManifestEntry, make_trials
from .errors import ConfigError
from .evaluate import identification_top1, verification_eer
from .features import FeatureKind, FeatureMatrix, extract, read_feature_cache, read_wav, write_feature_cache
from .noise import SNR_GRID, MixSpec, NoiseKind, NoiseSource, mix, resolve_source
from .trainer import TrainConfig, train

GAMMA_GRID = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
_EXTRA_KEYS = {"train_noise": "none", "augment_copies": "1"}


# -- config files ---------------------------------------------------------------------


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key in out:
            raise ConfigError(f"config line {lineno}: duplicate key {key!r}")
        out[key] = val
    return out


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    train_noise: str = "none"
    augment_copies: int = 1


def _train_value(name: str, s: str):
    if name in ("epochs", "batch_size", "finetune_epochs", "seed", "crop_frames", "prefetch"):
        return int(s)
    if name == "grad_clip":
        return None if s == "none" else float(s)
    return float(s)


def build_run_config(pairs: dict[str, str], overrides: dict | None = None) -> RunConfig:
    pairs = dict(pairs)
    for k, v in (overrides or {}).items():
        if v is not None:
            pairs[k] = str(v)
    model_names = {f.name for f in fields(ModelConfig)}
    train_names = {f.name for f in fields(TrainConfig)}
    unknown = set(pairs) - model_names - train_names - set(_EXTRA_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for required in ("epochs", "batch_size"):
        if required not in pairs:
            raise ConfigError(f"config must set {required!r}; no default is assumed")
    model_kw = {k: _parse(k, v) for k, v in pairs.items() if k in model_names}
    train_kw = {k: _train_value(k, v) for k, v in pairs.items() if k in train_names and k not in model_names}
    # one seed drives both model init and data order
    if "seed" in pairs:
        train_kw["seed"] = int(pairs["seed"])
    if model_kw.get("scenario") != "parallel":
        model_kw.setdefault("gamma", None)
    elif "gamma" not in model_kw:
        model_kw["gamma"] = 0.5
    if model_kw.get("gamma") is not None and model_kw.get("scenario", "none") != "parallel":
        raise ConfigError("gamma is only valid with scenario = parallel")
    return RunConfig(
        ModelConfig(**model_kw),
        TrainConfig(**train_kw),
        pairs.get("train_noise", _EXTRA_KEYS["train_noise"]),
        int(pairs.get("augment_copies", _EXTRA_KEYS["augment_copies"])),
    )


def load_run_config(path, overrides: dict | None = None) -> RunConfig:
    return build_run_config(parse_config_text(Path(path).read_text(encoding="utf-8")), overrides)


# -- noisy feature loading -------------------------------------------------------------


def utterance_seed(seed: int, path: str, salt: int = 0) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(path.encode("utf-8")), salt]).generate_state(1, np.uint64)[0] >> 1)


def noisy_path(path: str, kind: NoiseKind | str, snr: float, seed: int) -> str:
    return f"{path}@{NoiseKind(kind).value}:{snr:g}:{seed}"


class NoisyLoader:
    """path (possibly virtual ``path@kind:snr:seed``) -> FeatureMatrix, memoised."""

    def __init__(self, manifest: Manifest, kind, noise_manifest: dict | None = None, cache_dir=None, allow_standin: bool = True):
        self.manifest = manifest
        self.allow_standin = allow_standin
        self.kind = FeatureKind(kind)
        self.noise_manifest = noise_manifest or {}
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self._mem: dict[str, FeatureMatrix] = {}
        self._sources: dict[NoiseKind, NoiseSource] = {}

    def source(self, kind) -> NoiseSource:
        kind = NoiseKind(kind)
        if kind not in self._sources:
            self._sources[kind] = resolve_source(kind, self.noise_manifest, self.allow_standin)
        return self._sources[kind]

    def waveform(self, path: str):
        base, _, tag = path.partition("@")
        w = read_wav(self.manifest.resolve(base))
        if tag:
            kind, snr, seed = tag.split(":")
            w = mix(w, self.source(kind), MixSpec(float(snr), NoiseKind(kind), int(seed)))
        return w

    def __call__(self, path: str) -> FeatureMatrix:
        fm = self._mem.get(path)
        if fm is not None:
            return fm
        cache = None
        if self.cache_dir is not None:
            cache = self.cache_dir / (path.replace("/", "__").replace("@", "__").replace(":", "_") + f".{self.kind.value}.feat")
            if cache.exists():
                fm = read_feature_cache(cache)
        if fm is None:
            fm = extract(self.waveform(path), self.kind)
            if cache is not None:
                cache.parent.mkdir(parents=True, exist_ok=True)
                write_feature_cache(cache, fm)
        self._mem[path] = fm
        return fm


def augment_manifest(manifest: Manifest, noise_kind, seed: int, copies: int = 1) -> Manifest:
    """Training split plus ``copies`` noisy versions of each training utterance at random grid SNRs."""
    kind = NoiseKind(noise_kind)
    extra = []
    for e in manifest.split("train"):
        for c in range(copies):
            rng = np.random.default_rng(utterance_seed(seed, e.path, 1000 + c))
            spec = MixSpec.training(kind, rng)
            extra.append(ManifestEntry(noisy_path(e.path, kind, spec.snr_db, spec.rng_seed), e.speaker, "train"))
    return Manifest(manifest.entries + extra, manifest.root)


def corrupt_split(manifest: Manifest, noise_kind, snr: float, seed: int, split: str = "test") -> Manifest:
    """Replace every ``split`` utterance with its noisy version at a fixed SNR."""
    if noise_kind in (None, "none"):
        return manifest
    kind = NoiseKind(noise_kind)
    entries = []
    for e in manifest.entries:
        if e.split == split:
            e = ManifestEntry(noisy_path(e.path, kind, snr, utterance_seed(seed, e.path, int(round(snr * 100)))), e.speaker, split)
        entries.append(e)
    return Manifest(entries, manifest.root)


# -- TSV results --------------------------------------------------------------------------


def format_value(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def write_tsv(columns: Sequence[str], rows: Sequence[Sequence]) -> str:
    lines = ["\t".join(columns)]
    lines += ["\t".join(format_value(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def parse_tsv(text: str) -> tuple[list[str], list[list[str]]]:
    lines = [ln for ln in text.splitlines() if ln]
    return lines[0].split("\t"), [ln.split("\t") for ln in lines[1:]]


# -- experiment runs ------------------------------------------------------------------------


def prepare_training(manifest: Manifest, run: RunConfig) -> Manifest:
    if run.train_noise in ("none", ""):
        return manifest
    return augment_manifest(manifest, run.train_noise, run.train.seed, run.augment_copies)


def train_model(manifest: Manifest, run: RunConfig, loader: NoisyLoader, out_dir=None) -> SpeakerModel:
    model_cfg = run.model.replace(n_speakers=len(manifest.speakers))
    model = SpeakerModel(model_cfg)
    model, _ = train(model, prepare_training(manifest, run), loader, run.train, out_dir=out_dir)
    return model


def evaluate_condition(
    model: SpeakerModel,
    manifest: Manifest,
    loader: NoisyLoader,
    noise_kind: str,
    snr: float | None,
    seed: int,
    task: str = "verify",
    trials=None,
) -> tuple[float, float]:
    """(top1, eer) on the test split corrupted with ``noise_kind`` at ``snr`` (clean when kind is none)."""
    noisy = corrupt_split(manifest, noise_kind, snr if snr is not None else 0.0, seed)
    acc = identification_top1(model, noisy, loader)
    if task != "verify":
        return acc, float("nan")
    if trials is None:
        trials = make_trials(manifest, "test", seed=seed)
    mapping = {e.path: n.path for e, n in zip(manifest.entries, noisy.entries)}
    remapped = [type(t)(t.same, mapping.get(t.utt_a, t.utt_a), mapping.get(t.utt_b, t.utt_b)) for t in trials]
    return acc, verification_eer(model, remapped, loader)


def sweep_gamma(manifest: Manifest, run: RunConfig, loader: NoisyLoader, noise_kind: str, snr: float, seed: int, gammas=GAMMA_GRID):
    rows = []
    for g in gammas:
        cfg = RunConfig(run.model.replace(scenario="parallel", gamma=float(g)), run.train, run.train_noise, run.augment_copies)
        model = train_model(manifest, cfg, loader)
        top1, err = evaluate_condition(model, manifest, loader, noise_kind, snr, seed)
        rows.append([f"{g:.1f}", top1, err])
    return rows


__all__ = [
    "GAMMA_GRID",
    "SNR_GRID",
    "RunConfig",
    "parse_config_text",
    "build_run_config",
    "load_run_config",
    "NoisyLoader",
    "augment_manifest",
    "corrupt_split",
    "write_tsv",
    "parse_tsv",
    "train_model",
    "evaluate_condition",
    "sweep_gamma",
]
