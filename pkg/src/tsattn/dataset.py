"""Manifests, a deterministic synthetic speaker corpus, and crop batching."""

from __future__ import annotations

import logging
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from . import synth
from .features import SAMPLE_RATE, FeatureKind, FeatureMatrix, Waveform, extract, read_feature_cache, read_wav, write_feature_cache, write_wav
from .objectives import Trial

log = logging.getLogger(__name__)

SPLITS = ("train", "test")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    speaker: str
    split: str


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        for e in self.entries:
            if e.split not in SPLITS:
                raise ValueError(f"unknown split {e.split!r} for {e.path}")

    @property
    def speakers(self) -> list[str]:
        return sorted({e.speaker for e in self.entries})

    @property
    def speaker_index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.speakers)}

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def resolve(self, entry_or_path) -> Path:
        p = Path(entry_or_path.path if isinstance(entry_or_path, ManifestEntry) else entry_or_path)
        return p if p.is_absolute() else self.root / p

    def check_identification(self) -> None:
        """Every test speaker must also be a training speaker, and no file may sit in both splits."""
        train_spk = {e.speaker for e in self.split("train")}
        missing = {e.speaker for e in self.split("test")} - train_spk
        if missing:
            raise ValueError(f"test speakers absent from training split: {sorted(missing)}")
        train_paths = {e.path for e in self.split("train")}
        leaked = train_paths & {e.path for e in self.split("test")}
        if leaked:
            raise ValueError(f"utterances in both splits: {sorted(leaked)[:5]}")

    def __len__(self) -> int:
        return len(self.entries)


def read_manifest(path) -> Manifest:
    """``<path> <speaker_id> <split>`` per line, ``#`` comments; paths relative to the manifest."""
    path = Path(path)
    entries = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected '<path> <speaker_id> <split>', got {raw!r}")
        if parts[2] not in SPLITS:
            raise ValueError(f"{path}:{lineno}: split must be one of {SPLITS}, got {parts[2]!r}")
        entries.append(ManifestEntry(*parts))
    return Manifest(entries, path.parent)


def write_manifest(path, manifest: Manifest) -> None:
    lines = ["# path speaker split"] + [f"{e.path} {e.speaker} {e.split}" for e in manifest.entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- synthetic corpus -----------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpeakerSpec:
    n_speakers: int
    utts_per_speaker: int
    duration_s: float
    seed: int
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.n_speakers < 2:
            raise ValueError(f"need at least 2 speakers, got {self.n_speakers}")
        if self.utts_per_speaker < 1 or self.duration_s <= 0:
            raise ValueError("utts_per_speaker and duration_s must be positive")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ValueError(f"test_fraction must lie in [0, 1), got {self.test_fraction}")


@dataclass(frozen=True)
class PseudoSpeaker:
    name: str
    f0: float
    formants: tuple[float, float, float]
    bandwidths: tuple[float, float, float]


def make_speakers(spec: SyntheticSpeakerSpec) -> list[PseudoSpeaker]:
    """f0 stratified over [90, 280] Hz on a log scale so no two speakers share a band."""
    rng = np.random.default_rng([spec.seed, 0])
    lo, hi = np.log(90.0), np.log(280.0)
    width = (hi - lo) / spec.n_speakers
    slots = rng.permutation(spec.n_speakers)
    speakers = []
    for i in range(spec.n_speakers):
        f0 = float(np.exp(lo + (slots[i] + rng.uniform(0.2, 0.8)) * width))
        formants, bws = synth.random_vocal_tract(rng)
        speakers.append(PseudoSpeaker(f"spk{i:03d}", f0, tuple(map(float, formants)), tuple(map(float, bws))))
    return speakers


def synth_utterance(spk: PseudoSpeaker, duration_s: float, seed) -> Waveform:
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * SAMPLE_RATE))
    sig = synth.voice(n, spk.f0, spk.formants, spk.bandwidths, rng, jitter=0.03)
    sig = sig / (np.max(np.abs(sig)) + 1e-12) * rng.uniform(0.3, 0.9)
    return Waveform(sig)


def generate_synthetic_corpus(spec: SyntheticSpeakerSpec, out_dir) -> Manifest:
    """Write one WAV per utterance under ``out_dir/wav`` and ``out_dir/manifest.txt``."""
    out_dir = Path(out_dir)
    speakers = make_speakers(spec)
    n_test = int(round(spec.utts_per_speaker * spec.test_fraction))
    entries = []
    for si, spk in enumerate(speakers):
        spk_dir = out_dir / "wav" / spk.name
        spk_dir.mkdir(parents=True, exist_ok=True)
        for j in range(spec.utts_per_speaker):
            w = synth_utterance(spk, spec.duration_s, [spec.seed, 1, si, j])
            rel = f"wav/{spk.name}/utt{j:03d}.wav"
            write_wav(out_dir / rel, w)
            split = "test" if j >= spec.utts_per_speaker - n_test else "train"
            entries.append(ManifestEntry(rel, spk.name, split))
    manifest = Manifest(entries, out_dir)
    write_manifest(out_dir / "manifest.txt", manifest)
    return manifest


def make_trials(manifest: Manifest, split: str = "test", per_utt: int = 4, seed: int = 0) -> list[Trial]:
    """Balanced same/different pairs: for each utterance, ``per_utt`` of each kind."""
    rng = np.random.default_rng(seed)
    entries = manifest.split(split)
    by_spk: dict[str, list[ManifestEntry]] = {}
    for e in entries:
        by_spk.setdefault(e.speaker, []).append(e)
    trials = []
    for e in entries:
        same = [o for o in by_spk[e.speaker] if o.path != e.path]
        diff = [o for o in entries if o.speaker != e.speaker]
        for pool, flag in ((same, True), (diff, False)):
            if not pool:
                continue
            for k in rng.choice(len(pool), size=min(per_utt, len(pool)), replace=False):
                trials.append(Trial(flag, e.path, pool[int(k)].path))
    return trials


# -- features and batching ----------------------------------------------------------------


class FeatureStore:
    """Memoised path -> FeatureMatrix, optionally backed by an on-disk cache."""

    def __init__(self, manifest: Manifest, kind, cache_dir=None, transform: Callable[[str, Waveform], Waveform] | None = None):
        self.manifest = manifest
        self.kind = FeatureKind(kind)
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.transform = transform
        self._mem: dict[str, FeatureMatrix] = {}

    def _cache_path(self, rel: str) -> Path:
        return self.cache_dir / (rel.replace("/", "__") + f".{self.kind.value}.feat")

    def __call__(self, path: str) -> FeatureMatrix:
        if path in self._mem:
            return self._mem[path]
        fm = None
        if self.cache_dir is not None and self.transform is None:
            cp = self._cache_path(path)
            if cp.exists():
                fm = read_feature_cache(cp)
        if fm is None:
            w = read_wav(self.manifest.resolve(path))
            if self.transform is not None:
                w = self.transform(path, w)
            fm = extract(w, self.kind)
            if self.cache_dir is not None and self.transform is None:
                self.cache_dir.mkdir(parents=True, exist_ok=True)
                write_feature_cache(self._cache_path(path), fm)
        self._mem[path] = fm
        return fm


@dataclass
class Batch:
    features: np.ndarray  # (B, crop, L)
    labels: np.ndarray  # (B,)
    paths: list[str]


def make_batches(
    manifest: Manifest,
    loader: Callable[[str], FeatureMatrix],
    batch_size: int,
    seed: int,
    crop_frames: int,
    epoch: int = 0,
    split: str = "train",
    entries: list[ManifestEntry] | None = None,
) -> Iterator[Batch]:
    """One epoch of shuffled, randomly cropped, equal-length batches; the last partial batch is kept."""
    if crop_frames < 15:
        raise ValueError(f"crop_frames must cover the TDNN receptive field (>= 15), got {crop_frames}")
    entries = manifest.split(split) if entries is None else entries
    if not entries:
        raise ValueError(f"manifest has no {split!r} utterances")
    index = manifest.speaker_index
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(len(entries))
    feats, labels, paths = [], [], []
    for i in order:
        e = entries[int(i)]
        fm = loader(e.path)
        if fm.T < crop_frames:
            log.warning("skipping %s: %d frames < crop of %d", e.path, fm.T, crop_frames)
            continue
        start = int(rng.integers(0, fm.T - crop_frames + 1))
        feats.append(fm.frames[start : start + crop_frames])
        labels.append(index[e.speaker])
        paths.append(e.path)
        if len(feats) == batch_size:
            yield Batch(np.stack(feats), np.array(labels), paths)
            feats, labels, paths = [], [], []
    if feats:
        yield Batch(np.stack(feats), np.array(labels), paths)


_DONE = object()


def prefetch(batches: Iterable, maxsize: int = 4) -> Iterator:
    """Produce ``batches`` on a worker thread through a bounded queue; the producer blocks when full."""
    q: queue.Queue = queue.Queue(maxsize=maxsize)
    stop = threading.Event()

    def worker():
        try:
            for item in batches:
                if stop.is_set():
                    return
                q.put(item)
        except BaseException as exc:  # re-raised on the consumer side
            q.put(exc)
            return
        q.put(_DONE)

    t = threading.Thread(target=worker, daemon=True)
    t.start()
    try:
        while True:
            item = q.get()
            if item is _DONE:
                return
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()
        while t.is_alive():
            try:
                q.get_nowait()
            except queue.Empty:
                t.join(timeout=0.01)
