import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import eer_bruteforce
from tsattn.gradcheck import check_gradients
from tsattn.objectives import (
    AmSoftmaxConfig,
    Trial,
    am_softmax,
    cosine_logits,
    cosine_score,
    cross_entropy,
    eer,
    read_trials,
    top1,
    write_trials,
)
from tsattn.tensor import Tensor


def test_cross_entropy_examples(rng):
    assert cross_entropy(Tensor(np.zeros((3, 4))), [0, 1, 3]).item() == pytest.approx(math.log(4), abs=1e-15)
    assert cross_entropy(Tensor([[1000.0, 0.0, 0.0]]), [0]).item() == pytest.approx(0.0, abs=1e-300)
    logits = Tensor(rng.uniform(-2, 2, (4, 5)), requires_grad=True)
    assert check_gradients(lambda: cross_entropy(logits, [0, 4, 2, 2]), [logits]) < 1e-4
    with pytest.raises(ValueError):
        cross_entropy(logits, [0, 5, 1, 1])


@given(arrays(np.float64, (3, 4), elements=st.floats(-30, 30)), st.lists(st.integers(0, 3), min_size=3, max_size=3))
def test_cross_entropy_nonnegative(x, y):
    assert cross_entropy(Tensor(x), y).item() >= 0.0


def test_am_softmax_degenerates_to_ce(rng):
    e, W = Tensor(rng.normal(size=(5, 4))), Tensor(rng.normal(size=(3, 4)))
    y = [0, 2, 1, 1, 0]
    a = am_softmax(e, y, W, AmSoftmaxConfig(0.0, 1.0)).item()
    b = cross_entropy(cosine_logits(e, W), y).item()
    assert abs(a - b) < 1e-9


def test_am_softmax_hand_case():
    loss = am_softmax(Tensor([[1.0, 0.0]]), [0], Tensor(np.eye(2)), AmSoftmaxConfig(0.3, 35.0)).item()
    expected = math.log1p(math.exp(-24.5))
    assert loss == pytest.approx(expected, rel=1e-6)
    assert 2.2e-11 < loss < 2.4e-11


def test_am_softmax_gradients(rng):
    e, W = Tensor(rng.normal(size=(4, 3)), requires_grad=True), Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    cfg = AmSoftmaxConfig(0.3, 3.0)
    assert check_gradients(lambda: am_softmax(e, [0, 1, 4, 2], W, cfg), [e, W]) < 1e-4


def test_top1():
    assert top1(np.eye(3), [0, 1, 2]) == 1.0
    logits = np.array([[1, 0], [0, 1], [1, 0], [0, 1.0]])
    assert top1(logits, [0, 1, 0, 0]) == 0.75
    ties = np.array([[2.0, 2.0, 1.0], [0.0, 3.0, 3.0]])
    ref = [max(range(3), key=lambda j: (row[j], -j)) for row in ties]
    assert ref == [0, 1]
    assert top1(ties, [0, 1]) == 1.0 and top1(ties, [1, 2]) == 0.0


@given(arrays(np.float64, (4, 5), elements=st.floats(-100, 100)), st.floats(-1000, 1000))
def test_top1_shift_invariant(x, c):
    y = np.arange(4) % 5
    shifted = x + c
    # rounding in x + c can merge distinct logits into a tie; the property needs order preserved
    assume(np.array_equal(np.sign(x[:, :, None] - x[:, None, :]), np.sign(shifted[:, :, None] - shifted[:, None, :])))
    assert top1(x, y) == top1(shifted, y)


def test_cosine_score():
    a = np.array([1.0, 2.0, -1.0])
    assert cosine_score(a, a) == pytest.approx(1.0, abs=1e-15)
    assert cosine_score([1.0, 0.0], [0.0, 3.0]) == 0.0
    b = np.array([0.3, -2.0, 5.0])
    assert abs(cosine_score(2 * a, b) - cosine_score(a, b)) <= 1e-12


def test_eer_examples(rng):
    assert eer([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 0.0
    for _ in range(20):
        y = rng.integers(0, 2, 100)
        y[:2] = 0, 1
        assert eer(np.full(100, 0.3), y) == 0.5
    with pytest.raises(ValueError):
        eer([0.1, 0.2], [1, 1])


def test_eer_matches_bruteforce_on_1000_sets():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(1000):
        n = int(rng.integers(2, 200))
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        s = rng.normal(size=n) + rng.uniform(0, 3) * y
        if i % 3 == 0:
            s = np.round(s, 1)  # plenty of tied scores
        worst = max(worst, abs(eer(s, y) - eer_bruteforce(list(s), list(y))))
    assert worst < 1e-9


@settings(max_examples=100)
@given(arrays(np.int64, 30, elements=st.integers(-5000, 5000)), arrays(np.int64, 30, elements=st.integers(0, 1)))
def test_eer_range_and_monotone_invariance(grid, y):
    s = grid / 1000.0
    y[0], y[1] = 0, 1
    e = eer(s, y)
    assert 0.0 <= e <= 1.0
    assert eer(np.exp(s) * 3 + 1, y) == pytest.approx(e, abs=1e-12)


def test_trials_round_trip(tmp_path):
    trials = [Trial(True, "a.wav", "b.wav"), Trial(False, "a.wav", "c.wav")]
    write_trials(tmp_path / "t.txt", trials)
    assert read_trials(tmp_path / "t.txt") == trials
    (tmp_path / "bad.txt").write_text("2 a b\n")
    with pytest.raises(ValueError):
        read_trials(tmp_path / "bad.txt")
