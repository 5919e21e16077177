import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsattn import tensor as T
from tsattn.backbones import (
    TOY_TDNN_WIDTHS,
    XVECTOR_CONTEXTS,
    ModelConfig,
    ResNetLite,
    SpeakerModel,
    Tdnn,
    TdnnLayerSpec,
    stats_pool,
    tdnn_forward,
    tdnn_receptive_field,
)
from tsattn.errors import ConfigError
from tsattn.features import FeatureKind, FeatureMatrix
from tsattn.gradcheck import run_case
from tsattn.tensor import ShapeError, Tensor, no_grad

TOY = dict(tdnn_widths=(8, 8, 8, 8, 16), embed_dim=8, n_speakers=3, K=4)
TDNN_SMALL = Tdnn(40, (6, 6, 6, 6, 6), XVECTOR_CONTEXTS, np.random.default_rng(0), batchnorm=False)


def test_receptive_field_is_15():
    assert tdnn_receptive_field() == 15


@settings(max_examples=40, deadline=None)
@given(st.integers(15, 200))
def test_output_length_is_T_minus_14(n):
    out = tdnn_forward(TDNN_SMALL, np.zeros((n, 40)))
    assert out.shape == (n - 14, 6)


@pytest.mark.parametrize("n, expected", [(15, 1), (98, 84)])
def test_output_length_examples(n, expected):
    assert tdnn_forward(TDNN_SMALL, np.ones((n, 40))).shape[0] == expected


def test_too_short_raises():
    with pytest.raises(ShapeError, match="receptive field"):
        tdnn_forward(TDNN_SMALL, np.zeros((14, 40)))


def test_zero_weights_zero_output(rng):
    tdnn = Tdnn(40, (4, 4, 4, 4, 4), XVECTOR_CONTEXTS, rng, batchnorm=False)
    for p in tdnn.parameters():
        p.data[...] = 0.0
    assert np.all(tdnn(Tensor(rng.normal(size=(30, 40)))).data == 0.0)


def test_context_offsets_validated():
    with pytest.raises(ConfigError):
        TdnnLayerSpec((2, 0), 4, 4)
    with pytest.raises(ConfigError):
        TdnnLayerSpec((0, 0), 4, 4)


def test_stats_pool_examples(rng):
    H = np.tile([[1.0, -2.0, 3.0]], (5, 1))
    out = stats_pool(Tensor(H)).data
    np.testing.assert_allclose(out, [[1, -2, 3, 0, 0, 0]], atol=1e-5)
    one = rng.normal(size=(1, 3))
    np.testing.assert_allclose(stats_pool(Tensor(one)).data, np.concatenate([one, np.zeros((1, 3))], axis=1), atol=1e-5)
    H = rng.normal(size=(4, 3))
    ref = []
    for f in range(3):
        col = [H[t, f] for t in range(4)]
        ref.append(sum(col) / 4)
    for f in range(3):
        col = [H[t, f] for t in range(4)]
        mu = sum(col) / 4
        ref.append((sum((v - mu) ** 2 for v in col) / 4 + 1e-10) ** 0.5)
    np.testing.assert_allclose(stats_pool(Tensor(H)).data[0], ref, atol=1e-12)


def test_default_embedding_shape():
    model = SpeakerModel(ModelConfig(tdnn_widths=TOY_TDNN_WIDTHS, scenario="ft"))
    model.eval()
    with no_grad():
        emb = model.embed(np.random.default_rng(0).normal(size=(40, 40)))
    assert emb.shape == (1, 512)


def test_deterministic_embedding(rng):
    X = rng.normal(size=(2, 30, 40))
    a = SpeakerModel(ModelConfig(**TOY, scenario="tf", seed=4))
    b = SpeakerModel(ModelConfig(**TOY, scenario="tf", seed=4))
    a.eval(), b.eval()
    assert a.embed(X).data.tobytes() == b.embed(X).data.tobytes()


def test_none_scenario_is_plain_xvector(rng):
    model = SpeakerModel(ModelConfig(**TOY))
    assert model.attention is None
    assert not any("attention" in k for k in model.named_parameters())
    X = Tensor(rng.normal(size=(2, 30, 40)))
    model.eval()
    with no_grad():
        pooled = stats_pool(model.tdnn(X))
        ref = model.fc1(T.reshape(pooled, (2, -1))).data
    np.testing.assert_array_equal(model.embed(X).data, ref)


def test_embeddings_finite(rng):
    model = SpeakerModel(ModelConfig(**TOY, scenario="parallel"))
    model.eval()
    X = rng.uniform(-50, 50, size=(1000, 16, 40))
    with no_grad():
        assert np.all(np.isfinite(model.embed(X).data))


def test_feature_kind_enforced(rng):
    model = SpeakerModel(ModelConfig(**TOY))
    with pytest.raises(ConfigError):
        model.embed(FeatureMatrix(rng.normal(size=(30, 257)), FeatureKind.SPEC257))
    with pytest.raises(ShapeError):
        model.embed(rng.normal(size=(30, 39)))


def test_resnet_time_axis(rng):
    cfg = ModelConfig(backbone="resnet", frames=64, resnet_channels=(2, 2, 2, 2), resnet_blocks=(1, 1, 1, 1), resnet_stem=2, n_speakers=2, embed_dim=4)
    net = ResNetLite(cfg, rng)
    assert net.out_shape == (4, 17, 2)
    with no_grad():
        out = net(Tensor(rng.normal(size=(1, 64, 257))))
    assert out.shape == (1, 4, 17, 2)


def test_resnet_with_attention_and_projection(rng):
    base = dict(backbone="resnet", frames=16, resnet_channels=(2, 3), resnet_blocks=(2, 1), resnet_stem=2, n_speakers=2, embed_dim=4, K=3)
    for scenario in ("none", "ft", "tf", "parallel", "time"):
        model = SpeakerModel(ModelConfig(**base, scenario=scenario))
        model.eval()
        with no_grad():
            emb, logits = model(rng.normal(size=(2, 16, 257)))
        assert emb.shape == (2, 4) and logits.shape == (2, 2)
    plain = SpeakerModel(ModelConfig(**base))
    assert all(b.attention is None for b in plain.resnet.blocks)


def test_resnet_utterance_windows(rng):
    model = SpeakerModel(ModelConfig(backbone="resnet", frames=16, resnet_channels=(2,), resnet_blocks=(1,), resnet_stem=2, n_speakers=2, embed_dim=4, scenario="ft", K=2))
    assert model.windows(np.zeros((40, 257))).shape == (4, 16, 257)
    emb, logits = model.utterance_outputs(FeatureMatrix(rng.normal(size=(40, 257)), FeatureKind.SPEC257))
    assert emb.shape == (4,) and logits.shape == (2,)
    with pytest.raises(ShapeError):
        model.windows(np.zeros((10, 257)))


def test_config_text_round_trip():
    cfg = ModelConfig(**TOY, scenario="parallel", gamma=0.4, tdnn_contexts=XVECTOR_CONTEXTS, dtype="float32")
    assert ModelConfig.from_text(cfg.to_text()) == cfg
    with pytest.raises(ConfigError):
        ModelConfig(backbone="lstm")


def test_tiny_end_to_end_gradients():
    assert run_case("tiny_model", seeds=10, base_seed=99).max_rel_error < 1e-3
