"""Additive noise at an exact signal-to-noise ratio.

SNR is the ratio of full-utterance mean powers (no voice-activity weighting).
The mix is ``speech + g * noise`` with ``g`` chosen so that
``10 log10(P_speech / P(g * noise)) == snr_db``; if the sum would clip, both
components are scaled together, which leaves the SNR untouched.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import synth
from .errors import AudioError
from .features import Waveform, read_wav

log = logging.getLogger(__name__)

SNR_GRID = (0.0, 5.0, 10.0, 15.0, 20.0)
PEAK_LIMIT = 0.999


class NoiseKind(str, Enum):
    NOISE = "noise"
    MUSIC = "music"
    BABBLE = "babble"
    SYNTH_WHITE = "white"
    SYNTH_BABBLE = "synth-babble"
    SYNTH_MUSIC = "synth-music"

    @property
    def synthetic(self) -> bool:
        return self in (NoiseKind.SYNTH_WHITE, NoiseKind.SYNTH_BABBLE, NoiseKind.SYNTH_MUSIC)


# manifest section header -> kind
MANIFEST_SECTIONS = {"noise": NoiseKind.NOISE, "music": NoiseKind.MUSIC, "speech": NoiseKind.BABBLE}


@dataclass
class NoiseSource:
    kind: NoiseKind
    clips: list[Waveform] = field(default_factory=list)

    def __post_init__(self):
        self.kind = NoiseKind(self.kind)
        if not self.kind.synthetic and not self.clips:
            raise AudioError(f"noise source {self.kind.value!r} needs at least one clip")


@dataclass(frozen=True)
class MixSpec:
    snr_db: float
    noise_kind: NoiseKind
    rng_seed: int

    def __post_init__(self):
        if not math.isfinite(self.snr_db):
            raise ValueError("SNR must be finite; use the clean signal instead of mixing at infinite SNR")

    @classmethod
    def training(cls, noise_kind, rng: np.random.Generator) -> "MixSpec":
        """Random SNR from the evaluation grid and a fresh seed, both from ``rng``."""
        snr = float(SNR_GRID[rng.integers(len(SNR_GRID))])
        return cls(snr, NoiseKind(noise_kind), int(rng.integers(2**63 - 1)))


def power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def snr_db(signal: np.ndarray, noise: np.ndarray) -> float:
    return 10.0 * math.log10(power(signal) / power(noise))


def _noise_segment(source: NoiseSource, n: int, rng: np.random.Generator) -> np.ndarray:
    sub_seed = int(rng.integers(2**63 - 1))
    duration = n / 16000.0
    if source.kind is NoiseKind.SYNTH_WHITE:
        return synth.white_noise(duration, sub_seed).samples[:n]
    if source.kind is NoiseKind.SYNTH_BABBLE:
        return synth.synth_babble(duration, 6, sub_seed).samples[:n]
    if source.kind is NoiseKind.SYNTH_MUSIC:
        return synth.synth_music(duration, sub_seed).samples[:n]
    clip = source.clips[int(rng.integers(len(source.clips)))].samples
    offset = int(rng.integers(clip.size))
    return clip[(offset + np.arange(n)) % clip.size]


def mix_components(speech: Waveform, noise: NoiseSource, spec: MixSpec) -> tuple[np.ndarray, np.ndarray]:
    """The speech part and the scaled noise part whose sum is the mixed signal."""
    s = speech.samples
    p_speech = power(s)
    if p_speech == 0.0:
        raise AudioError("cannot define SNR for silent signal")
    rng = np.random.default_rng(spec.rng_seed)
    n = _noise_segment(noise, s.size, rng)
    p_noise = power(n)
    if p_noise == 0.0:
        raise AudioError("noise segment is silent; cannot reach the target SNR")
    gain = math.sqrt(p_speech / (p_noise * 10.0 ** (spec.snr_db / 10.0)))
    scaled = gain * n
    peak = np.max(np.abs(s + scaled))
    if peak > 1.0:
        k = PEAK_LIMIT / peak
        return s * k, scaled * k
    return s, scaled


def mix(speech: Waveform, noise: NoiseSource, spec: MixSpec) -> Waveform:
    s, n = mix_components(speech, noise, spec)
    return Waveform(s + n, speech.sample_rate)


def read_noise_manifest(path) -> dict[NoiseKind, NoiseSource]:
    """Parse ``[noise]``/``[music]``/``[speech]`` sections of WAV paths (relative to the manifest)."""
    path = Path(path)
    clips: dict[NoiseKind, list[Waveform]] = {}
    current = None
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip().lower()
            if name not in MANIFEST_SECTIONS:
                raise ValueError(f"{path}:{lineno}: unknown noise section [{name}]")
            current = MANIFEST_SECTIONS[name]
            clips.setdefault(current, [])
            continue
        if current is None:
            raise ValueError(f"{path}:{lineno}: clip listed before any section header")
        clip_path = Path(line)
        if not clip_path.is_absolute():
            clip_path = path.parent / clip_path
        if not clip_path.exists():
            raise FileNotFoundError(f"{path}:{lineno}: noise clip {clip_path} not found")
        clips[current].append(read_wav(clip_path))
    return {kind: NoiseSource(kind, c) for kind, c in clips.items() if c}


# generated stand-ins for the file-backed kinds when no clips are available
SYNTHETIC_STANDIN = {NoiseKind.NOISE: NoiseKind.SYNTH_WHITE, NoiseKind.MUSIC: NoiseKind.SYNTH_MUSIC, NoiseKind.BABBLE: NoiseKind.SYNTH_BABBLE}


def resolve_source(kind, manifest: dict[NoiseKind, NoiseSource] | None = None, allow_standin: bool = False) -> NoiseSource:
    """Clips for ``kind`` from ``manifest``; with ``allow_standin`` a missing file-backed kind
    falls back to its generated counterpart (logged as a warning)."""
    kind = NoiseKind(kind)
    if kind.synthetic:
        return NoiseSource(kind)
    if manifest and kind in manifest:
        return manifest[kind]
    if allow_standin:
        standin = SYNTHETIC_STANDIN[kind]
        log.warning("no %r clips in the noise manifest; using generated %r instead", kind.value, standin.value)
        return NoiseSource(standin)
    raise AudioError(
        f"noise kind {kind.value!r} needs clips from a noise manifest (--noise-manifest), "
        f"or use the generated kind {SYNTHETIC_STANDIN[kind].value!r}"
    )
