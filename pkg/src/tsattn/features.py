"""Waveform I/O and the two acoustic front ends.

* ``log_mel``: 40 triangular mel filters (20-7600 Hz) over a 512-point power
  spectrum, natural log with a 1e-10 floor, per-utterance mean normalisation.
* ``spectrogram``: 257-bin magnitude spectrum (DC included), log(mag + 1e-6),
  per-utterance mean/variance normalisation.

Both frame at 25 ms / 10 ms (400 / 160 samples at 16 kHz) with a Hamming
window, dropping the incomplete tail frame. Normalisation is per utterance.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import AudioError

SAMPLE_RATE = 16000
WIN_LEN = 400
HOP_LEN = 160
N_FFT = 512
N_MELS = 40
MEL_FMIN = 20.0
MEL_FMAX = 7600.0
LOG_FLOOR = 1e-10
MAG_FLOOR = 1e-6


class FeatureKind(str, Enum):
    LOGMEL40 = "logmel40"
    SPEC257 = "spec257"

    @property
    def dim(self) -> int:
        return N_MELS if self is FeatureKind.LOGMEL40 else N_FFT // 2 + 1


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise AudioError(f"waveform must be a non-empty mono signal, got shape {self.samples.shape}")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class FeatureMatrix:
    frames: np.ndarray
    kind: FeatureKind
    frame_shift_ms: float = 10.0
    frame_len_ms: float = 25.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = FeatureKind(self.kind)
        if self.frames.ndim != 2 or self.frames.shape[1] != self.kind.dim:
            raise AudioError(f"{self.kind.value} features must be T x {self.kind.dim}, got {self.frames.shape}")

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def L(self) -> int:
        return self.frames.shape[1]


# -- WAV I/O -----------------------------------------------------------------------


def read_wav(path) -> Waveform:
    """Read mono 16-bit PCM WAV; anything else is rejected."""
    try:
        with wave.open(str(path), "rb") as w:
            nch, width, rate, n = w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes()
            comp = w.getcomptype()
            raw = w.readframes(n)
    except wave.Error as exc:
        raise AudioError(f"{path}: not a PCM WAV file ({exc})") from exc
    if comp != "NONE" or width != 2:
        raise AudioError(f"{path}: expected 16-bit PCM, got {8 * width}-bit {comp}")
    if nch != 1:
        raise AudioError(f"{path}: expected mono audio, got {nch} channels")
    if rate != SAMPLE_RATE:
        raise AudioError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate} Hz")
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    return Waveform(pcm / 32768.0, rate)


def write_wav(path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(pcm.tobytes())


# -- framing and spectra -----------------------------------------------------------


def num_frames(n_samples: int, win: int = WIN_LEN, hop: int = HOP_LEN) -> int:
    if n_samples < win:
        return 0
    return 1 + (n_samples - win) // hop


def frame_signal(w: Waveform, window: bool = True) -> np.ndarray:
    """(T, 400) frames with hop 160, Hamming-windowed unless ``window=False``."""
    if w.sample_rate != SAMPLE_RATE:
        raise AudioError(f"expected {SAMPLE_RATE} Hz audio, got {w.sample_rate} Hz")
    n = num_frames(len(w))
    if n == 0:
        raise AudioError(f"utterance shorter than one frame ({len(w)} < {WIN_LEN} samples)")
    view = np.lib.stride_tricks.sliding_window_view(w.samples, WIN_LEN)[::HOP_LEN][:n]
    frames = np.array(view)
    if window:
        frames *= np.hamming(WIN_LEN)
    return frames


def power_spectrum(frames: np.ndarray) -> np.ndarray:
    """One-sided periodogram; each row sums to the frame's energy."""
    spec = np.abs(np.fft.rfft(frames, n=N_FFT, axis=-1)) ** 2 / N_FFT
    spec[..., 1:-1] *= 2.0
    return spec


def magnitude_spectrum(frames: np.ndarray) -> np.ndarray:
    return np.abs(np.fft.rfft(frames, n=N_FFT, axis=-1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_edges(n_mels: int = N_MELS, fmin: float = MEL_FMIN, fmax: float = MEL_FMAX) -> np.ndarray:
    """n_mels + 2 band edges in Hz; filter i spans edges[i]..edges[i+2], peak at edges[i+1]."""
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))


def mel_filterbank(n_mels: int = N_MELS, fmin: float = MEL_FMIN, fmax: float = MEL_FMAX) -> np.ndarray:
    edges = mel_edges(n_mels, fmin, fmax)
    freqs = np.arange(N_FFT // 2 + 1) * SAMPLE_RATE / N_FFT
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


_FBANK = mel_filterbank()


def _center(feats: np.ndarray) -> np.ndarray:
    # shift by the first frame first so constant columns come out exactly zero
    shifted = feats - feats[:1]
    return shifted - shifted.mean(axis=0, keepdims=True)


def log_mel(w: Waveform, normalize: bool = True) -> FeatureMatrix:
    energies = power_spectrum(frame_signal(w)) @ _FBANK.T
    feats = np.log(np.maximum(energies, LOG_FLOOR))
    if normalize:
        feats = _center(feats)
    return FeatureMatrix(feats, FeatureKind.LOGMEL40)


def spectrogram(w: Waveform, normalize: bool = True) -> FeatureMatrix:
    feats = np.log(magnitude_spectrum(frame_signal(w)) + MAG_FLOOR)
    if normalize:
        feats = _center(feats)
        feats = feats / np.maximum(feats.std(axis=0, keepdims=True), 1e-8)
    return FeatureMatrix(feats, FeatureKind.SPEC257)


def extract(w: Waveform, kind: FeatureKind | str) -> FeatureMatrix:
    kind = FeatureKind(kind)
    return log_mel(w) if kind is FeatureKind.LOGMEL40 else spectrogram(w)


# -- feature cache -----------------------------------------------------------------
# layout: b"TSAF1" | kind u8 | T u32 | L u32 | T*L float32, all little-endian

_CACHE_MAGIC = b"TSAF1"
_KIND_CODES = {FeatureKind.LOGMEL40: 0, FeatureKind.SPEC257: 1}


def write_feature_cache(path, fm: FeatureMatrix) -> None:
    header = _CACHE_MAGIC + struct.pack("<BII", _KIND_CODES[fm.kind], fm.T, fm.L)
    Path(path).write_bytes(header + fm.frames.astype("<f4").tobytes())


def read_feature_cache(path) -> FeatureMatrix:
    blob = Path(path).read_bytes()
    if blob[:5] != _CACHE_MAGIC:
        raise AudioError(f"{path}: not a feature cache file")
    code, n, dim = struct.unpack_from("<BII", blob, 5)
    kinds = {v: k for k, v in _KIND_CODES.items()}
    if code not in kinds:
        raise AudioError(f"{path}: unknown feature kind code {code}")
    body = np.frombuffer(blob, dtype="<f4", offset=5 + 9)
    if body.size != n * dim:
        raise AudioError(f"{path}: truncated cache ({body.size} of {n * dim} values)")
    return FeatureMatrix(body.astype(np.float32).reshape(n, dim), kinds[code])
