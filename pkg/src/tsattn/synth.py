"""Signal generators for desk-scale experiments: pseudo-voices, babble, music, white noise."""

from __future__ import annotations

import numpy as np

from .features import SAMPLE_RATE, Waveform

MAX_HARMONIC_HZ = 4000.0


def phrase_envelope(n: int, rng: np.random.Generator, sr: int = SAMPLE_RATE) -> np.ndarray:
    """Syllable-like bursts (80-300 ms) separated by short pauses, raised-cosine edges."""
    env = np.zeros(n)
    pos = int(rng.uniform(0.0, 0.1) * sr)
    while pos < n:
        length = int(rng.uniform(0.08, 0.3) * sr)
        seg = np.hanning(length) ** 0.5 * rng.uniform(0.5, 1.0)
        end = min(n, pos + length)
        env[pos:end] = seg[: end - pos]
        pos = end + int(rng.uniform(0.02, 0.12) * sr)
    return env


def formant_gain(freqs: np.ndarray, formants, bandwidths) -> np.ndarray:
    gain = np.full_like(freqs, 0.02, dtype=np.float64)
    for fc, bw in zip(formants, bandwidths):
        gain += 1.0 / (1.0 + ((freqs - fc) / bw) ** 2)
    return gain


def voice(
    n: int,
    f0: float,
    formants,
    bandwidths,
    rng: np.random.Generator,
    jitter: float = 0.03,
    sr: int = SAMPLE_RATE,
) -> np.ndarray:
    """Harmonic pseudo-voice: jittered f0, formant-shaped harmonics, phrase envelope."""
    base = f0 * (1.0 + rng.uniform(-jitter, jitter))
    # slow intonation drift, at most +-2% around the utterance f0
    knots = rng.uniform(-0.02, 0.02, size=max(2, n // (sr // 4) + 2))
    drift = np.interp(np.arange(n), np.linspace(0, n, knots.size), knots)
    inst_f0 = base * (1.0 + drift)
    phase = 2.0 * np.pi * np.cumsum(inst_f0) / sr + rng.uniform(0, 2 * np.pi)
    n_harm = max(1, int(MAX_HARMONIC_HZ // base))
    k = np.arange(1, n_harm + 1)
    amps = formant_gain(k * base, formants, bandwidths) / np.sqrt(k)
    sig = np.zeros(n)
    for kk, a in zip(k, amps):
        sig += a * np.sin(kk * phase)
    sig += 0.01 * np.max(amps) * rng.standard_normal(n)
    return sig * phrase_envelope(n, rng, sr)


def random_vocal_tract(rng: np.random.Generator):
    formants = (rng.uniform(300, 900), rng.uniform(900, 2300), rng.uniform(2300, 3500))
    bandwidths = (rng.uniform(60, 120), rng.uniform(80, 160), rng.uniform(120, 220))
    return formants, bandwidths


def _peak_normalize(x: np.ndarray, peak: float = 0.9) -> np.ndarray:
    m = np.max(np.abs(x))
    return x * (peak / m) if m > 0 else x


def synth_babble(duration_s: float, n_talkers: int, seed: int, sr: int = SAMPLE_RATE) -> Waveform:
    """Overlapping pseudo-talkers, each with its own f0, formants and envelope."""
    if n_talkers < 2:
        raise ValueError(f"babble needs at least 2 talkers, got {n_talkers}")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sr))
    mix = np.zeros(n)
    for _ in range(n_talkers):
        formants, bws = random_vocal_tract(rng)
        v = voice(n, rng.uniform(90, 280), formants, bws, rng)
        mix += v / (np.sqrt(np.mean(v**2)) + 1e-12)
    return Waveform(_peak_normalize(mix), sr)


def synth_music(duration_s: float, seed: int, sr: int = SAMPLE_RATE) -> Waveform:
    """Sequence of decaying harmonic chords on an equal-tempered scale."""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sr))
    out = np.zeros(n)
    t = np.arange(n) / sr
    pos = 0
    while pos < n:
        length = int(rng.uniform(0.2, 0.6) * sr)
        end = min(n, pos + length)
        tt = t[: end - pos]
        root = 110.0 * 2.0 ** (rng.integers(0, 24) / 12.0)
        for interval in (0, 4, 7):
            f = root * 2.0 ** (interval / 12.0)
            for h in range(1, 6):
                if f * h < sr / 2:
                    out[pos:end] += np.sin(2 * np.pi * f * h * tt) / h * np.exp(-3.0 * tt)
        pos = end
    return Waveform(_peak_normalize(out), sr)


def white_noise(duration_s: float, seed: int, sr: int = SAMPLE_RATE) -> Waveform:
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sr))
    return Waveform(_peak_normalize(rng.standard_normal(n)), sr)
