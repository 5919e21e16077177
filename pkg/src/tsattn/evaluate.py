"""Identification (top-1) and verification (cosine-scored EER) on a manifest."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .backbones import SpeakerModel
from .dataset import Manifest
from .features import FeatureMatrix
from .objectives import Trial, cosine_score, eer


def utterance_outputs(model: SpeakerModel, paths: Sequence[str], loader: Callable[[str], FeatureMatrix]):
    model.eval()
    embs, logits = {}, {}
    for p in paths:
        if p in embs:
            continue
        e, lg = model.utterance_outputs(loader(p))
        embs[p], logits[p] = e, lg
    return embs, logits


def identification_top1(model: SpeakerModel, manifest: Manifest, loader, split: str = "test") -> float:
    entries = manifest.split(split)
    index = manifest.speaker_index
    _, logits = utterance_outputs(model, [e.path for e in entries], loader)
    hits = [int(np.argmax(logits[e.path])) == index[e.speaker] for e in entries]
    return float(np.mean(hits))


def verification_eer(model: SpeakerModel, trials: Sequence[Trial], loader) -> float:
    paths = sorted({t.utt_a for t in trials} | {t.utt_b for t in trials})
    embs, _ = utterance_outputs(model, paths, loader)
    scored = [(cosine_score(embs[t.utt_a], embs[t.utt_b]), t.same) for t in trials]
    return eer(scored)
