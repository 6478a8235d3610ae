import numpy as np
import pytest

from basistts import acoustic, autodiff as ad
from basistts.config import ModelConfig, SpeakerEncoderConfig, TransformerBlockConfig
from basistts.errors import DataError, DimensionError
from basistts.params import ParameterStore


def tiny_cfg():
    return ModelConfig(
        vocab_size=6,
        mel_channels=4,
        basis_count=4,
        duration_hidden=4,
        encoder=SpeakerEncoderConfig(conv_channels=[2], embedding_dim=4),
        blocks=TransformerBlockConfig(hidden=8, heads=2, ffn=8,
                                      encoder_blocks=1, decoder_blocks=1),
    )


def make_store(cfg, seed=0):
    store = ParameterStore()
    acoustic.init_params(store, cfg, np.random.default_rng(seed))
    return store


def cond_vec(cfg, seed=1):
    return ad.constant(np.random.default_rng(seed).normal(size=cfg.encoder.embedding_dim))


# ---------------------------------------------------------------------------
# length regulation


def test_length_regulate_repeats_rows():
    h = ad.constant(np.array([[1.0, 2.0], [3.0, 4.0]]))
    out = acoustic.length_regulate(h, [2, 3])
    np.testing.assert_array_equal(
        out.value, [[1, 2], [1, 2], [3, 4], [3, 4], [3, 4]])


def test_length_regulate_identity_for_unit_durations():
    h = np.random.default_rng(0).normal(size=(4, 3))
    out = acoustic.length_regulate(ad.constant(h), [1, 1, 1, 1])
    assert np.array_equal(out.value, h)


def test_length_regulate_rejects_zero_and_mismatched_durations():
    h = ad.constant(np.zeros((2, 3)))
    with pytest.raises(DataError):
        acoustic.length_regulate(h, [3, 0])
    with pytest.raises(DimensionError):
        acoustic.length_regulate(h, [1, 1, 1])


# ---------------------------------------------------------------------------
# utterance validation


def test_utterance_validates_lengths():
    mel = np.zeros((5, 4))
    acoustic.Utterance("u", 0, [1, 2], [2, 3], mel)  # ok
    with pytest.raises(DataError):
        acoustic.Utterance("u", 0, [1, 2, 3], [2, 3], mel)
    with pytest.raises(DataError):
        acoustic.Utterance("u", 0, [1, 2], [2, 2], mel)


# ---------------------------------------------------------------------------
# duration predictor


def test_zero_initialized_predictor_emits_unit_durations():
    cfg = tiny_cfg()
    store = make_store(cfg)
    enc = acoustic.encode_tokens([0, 3, 5], cond_vec(cfg), store.constants(), cfg)
    log_dur = acoustic.predict_durations(enc, store.constants())
    assert np.array_equal(log_dur.value, np.zeros(3))  # W2, b2 start at zero
    assert np.array_equal(acoustic.durations_from_log(log_dur.value), [1, 1, 1])


def test_durations_from_log_rounding():
    logs = np.log([0.2, 1.0, 2.4, 2.6])
    np.testing.assert_array_equal(acoustic.durations_from_log(logs), [1, 1, 2, 3])


def test_duration_predictor_can_fit_targets():
    """A few SGD steps on the duration loss alone reach near-exact log targets."""
    cfg = tiny_cfg()
    store = make_store(cfg, seed=2)
    tokens, durations = [1, 4, 2], [2, 5, 3]
    e = cond_vec(cfg)
    for _ in range(400):
        leaves = store.leaves()
        enc = acoustic.encode_tokens(tokens, e, leaves, cfg)
        loss = acoustic.duration_loss(acoustic.predict_durations(enc, leaves), durations)
        ad.backward(loss)
        for name in ("backbone.dur.W1", "backbone.dur.b1",
                     "backbone.dur.W2", "backbone.dur.b2"):
            store[name] = store[name] - 0.2 * ad.grad_of(leaves[name])
    enc = acoustic.encode_tokens(tokens, e, store.constants(), cfg)
    log_dur = acoustic.predict_durations(enc, store.constants()).value
    assert np.array_equal(acoustic.durations_from_log(log_dur), durations)


# ---------------------------------------------------------------------------
# synthesis


def test_synthesize_frame_count_and_determinism():
    cfg = tiny_cfg()
    store = make_store(cfg, seed=3)
    tokens, durations = [0, 1, 2, 3], [2, 1, 3, 2]
    out = acoustic.synthesize(tokens, durations, cond_vec(cfg), store.constants(), cfg)
    assert out.value.shape == (8, cfg.mel_channels)
    again = acoustic.synthesize(tokens, durations, cond_vec(cfg), store.constants(), cfg)
    assert np.array_equal(out.value, again.value)


def test_synthesize_with_predicted_durations_matches_rounding():
    cfg = tiny_cfg()
    store = make_store(cfg, seed=4)
    mel, durations = acoustic.synthesize_with_predicted_durations(
        [1, 2, 3], cond_vec(cfg), store.constants(), cfg)
    assert np.all(durations >= 1)
    assert mel.value.shape == (int(durations.sum()), cfg.mel_channels)


def test_out_of_vocabulary_token_rejected():
    cfg = tiny_cfg()
    store = make_store(cfg)
    with pytest.raises(DataError):
        acoustic.encode_tokens([0, 6], cond_vec(cfg), store.constants(), cfg)
    with pytest.raises(DataError):
        acoustic.encode_tokens([-1], cond_vec(cfg), store.constants(), cfg)


# ---------------------------------------------------------------------------
# losses


def test_reconstruction_loss_zero_for_exact_match():
    x = np.random.default_rng(5).normal(size=(4, 3))
    assert float(acoustic.reconstruction_loss(ad.constant(x), x).value) == 0.0


def test_reconstruction_loss_unit_offset():
    x = np.zeros((4, 3))
    loss = acoustic.reconstruction_loss(ad.constant(x + 1.0), x)
    assert float(loss.value) == 1.0


def test_reconstruction_loss_against_numpy_oracle():
    rng = np.random.default_rng(17)
    a, b = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    expected = np.abs(a - b).mean()
    got = float(acoustic.reconstruction_loss(ad.constant(a), b).value)
    np.testing.assert_allclose(got, expected, rtol=1e-14)


def test_reconstruction_loss_shape_mismatch():
    with pytest.raises(DimensionError):
        acoustic.reconstruction_loss(ad.constant(np.zeros((3, 2))), np.zeros((2, 3)))


def test_duration_loss_zero_when_exact():
    durations = [2, 5, 3]
    pred = ad.constant(np.log(np.asarray(durations, dtype=np.float64)))
    assert float(acoustic.duration_loss(pred, durations).value) == 0.0
