import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsattn import attention as A
from tsattn import tensor as T
from tsattn.attention import AttentionConfig, Scenario
from tsattn.errors import ConfigError
from tsattn.gradcheck import check_gradients
from tsattn.tensor import ShapeError, Tensor

SCENARIOS = list(Scenario)


def params(F, K=3, seed=0, bias=True):
    rng = np.random.default_rng(seed)
    fp, tp = A.FreqAttentionParams(F, K, rng), A.TimeAttentionParams(F, rng)
    if bias:
        fp.b0c.data = rng.uniform(-0.5, 0.5, fp.b0c.shape)
        tp.b0.data = rng.uniform(-0.5, 0.5, tp.b0.shape)
    return fp, tp


def zero(p):
    for t in p.parameters():
        t.data[...] = 0.0
    return p


shapes = st.tuples(st.integers(1, 6), st.integers(1, 5))


@settings(max_examples=50, deadline=None)
@given(shapes, st.integers(0, 10**6))
def test_weight_ranges(shape, seed):
    H = Tensor(np.random.default_rng(seed).uniform(-2, 2, shape))
    fp, tp = params(shape[1], seed=seed)
    wf = A.freq_attention_weights(H, fp).data
    assert wf.shape == (1, shape[1]) and np.all((wf > 0) & (wf < 1))
    wt = A.time_attention_weights(H, tp).data
    assert wt.shape == (shape[0], 1) and np.all((wt > 0) & (wt <= 1))
    assert abs(wt.sum() - 1.0) <= 1e-9


def test_zero_params_give_half():
    H = Tensor(np.random.default_rng(0).normal(size=(4, 3)))
    np.testing.assert_array_equal(A.freq_attention_weights(H, zero(A.FreqAttentionParams(3, 2, np.random.default_rng(0)))).data, 0.5)


def test_single_frame_hand_computed():
    fp = A.FreqAttentionParams(3, 2, np.random.default_rng(0))
    fp.W0c.data = np.array([[1.0, -1.0], [0.5, 2.0], [-1.0, 0.0]])
    fp.b0c.data = np.array([[0.1, -0.2]])
    fp.W1c.data = np.array([[1.0, 0.0, -1.0], [0.5, 0.5, 0.5]])
    h = np.array([[0.3, -0.4, 0.2]])
    w = A.freq_attention_weights(Tensor(h), fp).data
    hidden = np.maximum(h @ fp.W0c.data + fp.b0c.data, 0)
    # std of one frame is sqrt(eps), so h_stat carries a 1e-5 offset
    hidden_stat = np.maximum((h + 1e-5) @ fp.W0c.data + fp.b0c.data, 0)
    expected = 1 / (1 + np.exp(-(hidden @ fp.W1c.data + hidden_stat @ fp.W1c.data)))
    np.testing.assert_allclose(w, expected, rtol=1e-12)
    np.testing.assert_allclose(w, 1 / (1 + np.exp(-2 * hidden @ fp.W1c.data)), atol=1e-4)


def test_apply_freq_attention_examples(rng):
    H = Tensor(rng.normal(size=(3, 4)))
    np.testing.assert_array_equal(A.apply_freq_attention(H, Tensor(np.ones((1, 4)))).data, H.data)
    onehot = np.zeros((1, 4))
    onehot[0, 2] = 1
    out = A.apply_freq_attention(H, Tensor(onehot)).data
    assert np.all(out[:, [0, 1, 3]] == 0) and np.array_equal(out[:, 2], H.data[:, 2])
    w = rng.uniform(size=(1, 4))
    ref = np.array([[H.data[t, f] * w[0, f] for f in range(4)] for t in range(3)])
    np.testing.assert_array_equal(A.apply_freq_attention(H, Tensor(w)).data, ref)
    with pytest.raises(ShapeError):
        A.apply_freq_attention(H, Tensor(np.ones((1, 3))))


def test_time_attention_examples(rng):
    _, tp = params(3)
    same = Tensor(np.tile(rng.normal(size=(1, 3)), (5, 1)))
    np.testing.assert_allclose(A.time_attention_weights(same, tp).data, 0.2, atol=1e-15)
    np.testing.assert_array_equal(A.time_attention_weights(Tensor(rng.normal(size=(1, 3))), tp).data, [[1.0]])
    H = rng.normal(size=(5, 3))
    s = np.maximum(H @ tp.W0.data + tp.b0.data, 0) @ tp.W1.data
    ref = np.exp(s - s.max()) / np.exp(s - s.max()).sum()
    np.testing.assert_allclose(A.time_attention_weights(Tensor(H), tp).data, ref, rtol=1e-12)


def test_time_attention_shift_invariance(rng):
    # adding c to every score s_t: raise the output bias of W1 by shifting through a constant column
    _, tp = params(3)
    H = rng.normal(size=(6, 3))
    scores = np.maximum(H @ tp.W0.data + tp.b0.data, 0) @ tp.W1.data
    a = T.softmax(Tensor(scores), axis=0).data
    b = T.softmax(Tensor(scores + 17.3), axis=0).data
    np.testing.assert_allclose(a, b, atol=1e-9)
    np.testing.assert_allclose(A.time_attention_weights(Tensor(H), tp).data, a, atol=1e-15)


@pytest.mark.parametrize("scenario", SCENARIOS)
def test_compose_preserves_shape(scenario, rng):
    cfg = AttentionConfig(scenario)
    fp, tp = params(5)
    for shape in [(1, 5), (6, 5), (2, 3, 5)]:
        assert A.compose(Tensor(rng.normal(size=shape)), cfg, fp, tp).shape == shape


def test_parallel_endpoints(rng):
    fp, tp = params(4)
    for _ in range(20):
        H = Tensor(rng.uniform(-2, 2, (6, 4)))
        freq = A.compose(H, AttentionConfig(Scenario.FREQ), fp, tp).data
        time = A.compose(H, AttentionConfig(Scenario.TIME), fp, tp).data
        assert np.max(np.abs(A.compose(H, AttentionConfig("parallel", 1.0), fp, tp).data - freq)) <= 1e-12
        assert np.max(np.abs(A.compose(H, AttentionConfig("parallel", 0.0), fp, tp).data - time)) <= 1e-12


def test_ft_equals_manual_two_step(rng):
    fp, tp = params(4)
    H = Tensor(rng.normal(size=(7, 4)))
    H1 = H.data * A.freq_attention_weights(H, fp).data
    manual = H1 * A.time_attention_weights(Tensor(H1), tp).data
    np.testing.assert_array_equal(A.compose(H, AttentionConfig("ft"), fp, tp).data, manual)


def test_tf_is_the_mirror(rng):
    fp, tp = params(4)
    H = Tensor(rng.normal(size=(7, 4)))
    H1 = H.data * A.time_attention_weights(H, tp).data
    manual = H1 * A.freq_attention_weights(Tensor(H1), fp).data
    np.testing.assert_array_equal(A.compose(H, AttentionConfig("tf"), fp, tp).data, manual)


def test_none_is_identity_and_holds_no_parameters(rng):
    H = Tensor(rng.normal(size=(3, 4)))
    assert A.compose(H, AttentionConfig()) is H
    assert A.TwoStageAttention(4, AttentionConfig(), rng).parameters() == []
    assert len(A.TwoStageAttention(4, AttentionConfig("freq"), rng).parameters()) == 3


def test_config_validation():
    assert AttentionConfig("parallel").gamma == 0.5
    with pytest.raises(ConfigError):
        AttentionConfig("ft", gamma=0.3)
    with pytest.raises(ConfigError):
        AttentionConfig("parallel", gamma=1.5)
    with pytest.raises(ConfigError):
        AttentionConfig("sideways")
    with pytest.raises(ConfigError):
        A.compose(Tensor(np.zeros((2, 3))), AttentionConfig("ft"))


def test_bottleneck_clamped_to_width(rng):
    fp = A.FreqAttentionParams(3, 100, rng)
    assert fp.W0c.shape == (3, 3)


@pytest.mark.parametrize("scenario", ["freq", "time", "ft", "tf", "parallel"])
def test_gradients_every_scenario(scenario):
    for seed in range(5):
        rng = np.random.default_rng(seed)
        Tn, F = rng.integers(2, 7), rng.integers(2, 6)
        while True:
            H = rng.uniform(-2, 2, (Tn, F))
            if H.std(axis=0).min() > 0.05:
                break
        fp, tp = params(F, K=int(rng.integers(1, 4)), seed=seed)
        cfg = AttentionConfig(scenario, 0.3 if scenario == "parallel" else None)
        Ht = Tensor(H, requires_grad=True)
        R = rng.normal(size=H.shape)
        leaves = [Ht] + fp.parameters() + tp.parameters()
        assert check_gradients(lambda: T.tsum(A.compose(Ht, cfg, fp, tp) * Tensor(R)), leaves) < 1e-4


# -- CNN form


def test_cnn_zero_params_ft_quarter(rng):
    cfg = AttentionConfig("ft")
    att = A.CnnTwoStageAttention(3, 4, 2, cfg, rng)
    zero(att)
    H = Tensor(rng.normal(size=(3, 4, 2)))
    np.testing.assert_allclose(att(H).data, 0.25 * H.data, rtol=1e-15)


@pytest.mark.parametrize("scenario", SCENARIOS)
def test_cnn_shape_round_trip(scenario, rng):
    att = A.CnnTwoStageAttention(3, 4, 2, AttentionConfig(scenario), rng)
    assert att(Tensor(rng.normal(size=(3, 4, 2)))).shape == (3, 4, 2)
    assert att(Tensor(rng.normal(size=(2, 3, 4, 2)))).shape == (2, 3, 4, 2)


@pytest.mark.parametrize("Tk,Fk,Ck", [(1, 1, 1), (2, 3, 4), (3, 4, 2), (4, 1, 3)])
def test_cnn_reshape_index_identity(Tk, Fk, Ck, rng):
    Hk = rng.normal(size=(Tk, Fk, Ck))
    flat = T.reshape(Tensor(Hk), (Tk, Fk * Ck)).data
    for t, f, c in itertools.product(range(Tk), range(Fk), range(Ck)):
        assert flat[t, f * Ck + c] == Hk[t, f, c]


def test_cnn_time_gate_is_sigmoid_not_softmax(rng):
    fp = A.FreqAttentionParams(3, 2, rng)
    w = A.time_gate_weights(Tensor(rng.normal(size=(3, 8))), fp).data
    assert w.shape == (3, 1) and np.all((w > 0) & (w < 1))


def test_cnn_time_gate_fixed_length(rng):
    att = A.CnnTwoStageAttention(3, 4, 2, AttentionConfig("time"), rng)
    with pytest.raises(ShapeError):
        att(Tensor(np.zeros((5, 4, 2))))
