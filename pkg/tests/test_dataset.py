import time

import numpy as np
import pytest

from tsattn.features import log_mel, read_wav
from tsattn.dataset import (
    FeatureStore,
    Manifest,
    ManifestEntry,
    SyntheticSpeakerSpec,
    generate_synthetic_corpus,
    make_batches,
    make_trials,
    make_speakers,
    prefetch,
    read_manifest,
    write_manifest,
)


def test_corpus_counts_and_splits(toy_corpus):
    assert len(toy_corpus) == 400 and len(toy_corpus.speakers) == 8
    assert len(list((toy_corpus.root / "wav").rglob("*.wav"))) == 400
    assert len(toy_corpus.split("test")) == 80
    toy_corpus.check_identification()
    assert read_manifest(toy_corpus.root / "manifest.txt").entries == toy_corpus.entries


def test_corpus_is_byte_identical_under_seed(toy_corpus, tmp_path):
    again = generate_synthetic_corpus(SyntheticSpeakerSpec(8, 50, 2.0, seed=7), tmp_path)
    for e in toy_corpus.entries:
        assert (toy_corpus.root / e.path).read_bytes() == (tmp_path / e.path).read_bytes()
    assert (toy_corpus.root / "manifest.txt").read_bytes() == (tmp_path / "manifest.txt").read_bytes()


def test_corpus_is_learnable_by_nearest_centroid(toy_corpus):
    store = FeatureStore(toy_corpus, "logmel40")
    # raw (unnormalised) spectral envelope: per-utterance mean normalisation would erase it
    def vec(e):
        return log_mel(read_wav(toy_corpus.resolve(e)), normalize=False).frames.mean(axis=0)

    train = toy_corpus.split("train")
    index = toy_corpus.speaker_index
    X = np.stack([vec(e) for e in train])
    y = np.array([index[e.speaker] for e in train])
    cents = np.stack([X[y == k].mean(axis=0) for k in range(8)])
    pred = np.argmin(((X[:, None, :] - cents[None]) ** 2).sum(-1), axis=1)
    assert np.mean(pred == y) >= 0.9
    assert store(train[0].path) is store(train[0].path)


def test_speaker_f0_stratified():
    spk = make_speakers(SyntheticSpeakerSpec(8, 1, 1.0, seed=0))
    f0 = sorted(s.f0 for s in spk)
    assert 90 <= f0[0] and f0[-1] <= 280
    assert np.all(np.diff(np.log(f0)) > 0)


def test_manifest_parsing(tmp_path):
    (tmp_path / "m.txt").write_text("# header\na.wav s1 train\nb.wav s1 test  # trailing\n")
    m = read_manifest(tmp_path / "m.txt")
    assert [e.split for e in m.entries] == ["train", "test"] and m.root == tmp_path
    (tmp_path / "bad.txt").write_text("a.wav s1 dev\n")
    with pytest.raises(ValueError, match="split"):
        read_manifest(tmp_path / "bad.txt")
    leak = Manifest([ManifestEntry("a", "s", "train"), ManifestEntry("a", "s", "test")])
    with pytest.raises(ValueError, match="both splits"):
        leak.check_identification()
    unseen = Manifest([ManifestEntry("a", "s", "train"), ManifestEntry("b", "t", "test")])
    with pytest.raises(ValueError, match="absent"):
        unseen.check_identification()
    write_manifest(tmp_path / "w.txt", m)
    assert read_manifest(tmp_path / "w.txt").entries == m.entries


def test_batches(toy_corpus):
    store = FeatureStore(toy_corpus, "logmel40")
    everything = toy_corpus.entries
    batches = list(make_batches(toy_corpus, store, 32, seed=1, crop_frames=100, entries=everything))
    assert [len(b.labels) for b in batches] == [32] * 12 + [16]
    assert all(b.features.shape[1:] == (100, 40) for b in batches)
    again = list(make_batches(toy_corpus, store, 32, seed=1, crop_frames=100, entries=everything))
    assert [b.paths for b in batches] == [b.paths for b in again]
    assert all(np.array_equal(a.features, b.features) for a, b in zip(batches, again))
    other = list(make_batches(toy_corpus, store, 32, seed=1, crop_frames=100, epoch=1, entries=everything))
    assert [b.paths for b in other] != [b.paths for b in batches]
    with pytest.raises(ValueError):
        next(make_batches(toy_corpus, store, 32, seed=1, crop_frames=10))


def test_short_utterances_are_skipped(small_corpus, caplog):
    store = FeatureStore(small_corpus, "logmel40")
    with caplog.at_level("WARNING"):
        batches = list(make_batches(small_corpus, store, 8, seed=0, crop_frames=500))
    assert batches == [] and "skipping" in caplog.text


def test_feature_store_disk_cache(small_corpus, tmp_path):
    a = FeatureStore(small_corpus, "logmel40", cache_dir=tmp_path)
    p = small_corpus.entries[0].path
    fm = a(p)
    assert len(list(tmp_path.iterdir())) == 1
    b = FeatureStore(small_corpus, "logmel40", cache_dir=tmp_path)
    np.testing.assert_array_equal(b(p).frames, fm.frames.astype(np.float32))


def test_trials_balanced_and_within_split(small_corpus):
    trials = make_trials(small_corpus, "test", per_utt=2, seed=0)
    test_paths = {e.path for e in small_corpus.split("test")}
    assert trials and all(t.utt_a in test_paths and t.utt_b in test_paths for t in trials)
    spk = {e.path: e.speaker for e in small_corpus.entries}
    assert all((spk[t.utt_a] == spk[t.utt_b]) == t.same for t in trials)
    assert trials == make_trials(small_corpus, "test", per_utt=2, seed=0)


def test_prefetch_preserves_order_and_bounds_queue():
    produced = []

    def gen():
        for i in range(20):
            produced.append(i)
            yield i

    it = prefetch(gen(), maxsize=2)
    assert next(it) == 0
    time.sleep(0.05)
    assert len(produced) <= 4
    assert list(it) == list(range(1, 20))


def test_prefetch_reraises():
    def gen():
        yield 1
        raise RuntimeError("boom")

    it = prefetch(gen(), 2)
    assert next(it) == 1
    with pytest.raises(RuntimeError, match="boom"):
        next(it)
