import numpy as np
import pytest

from basistts import corpus as corpus_mod, evaluate, training
from basistts.corpus import Corpus
from tests.test_training import tiny_train_cfg


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("eval")
    corpus_mod.generate_corpus(root / "corp", num_speakers=4, utts_per_speaker=3,
                               heldout_speakers=2, seed=2,
                               vocab_size=6, channels=4)
    corpus = Corpus(root / "corp")
    cfg = tiny_train_cfg(steps=2)
    ckpt = training.run_pipeline(cfg, corpus, root / "run", seed=0)
    return cfg, ckpt.params, corpus


def test_round_robin_covers_every_speaker():
    class U:
        def __init__(self, sid):
            self.speaker_id = sid

    utts = [U(0)] * 5 + [U(1)] * 5 + [U(2)] * 5
    sub = evaluate._round_robin_by_speaker(utts, 6)
    assert [u.speaker_id for u in sub] == [0, 1, 2, 0, 1, 2]
    assert len(evaluate._round_robin_by_speaker(utts, 100)) == 15


def test_metrics_identical_across_thread_counts(trained):
    cfg, store, corpus = trained
    one = evaluate.run_metrics(store, cfg, corpus, stage=3, threads=1)
    four = evaluate.run_metrics(store, cfg, corpus, stage=3, threads=4)
    assert one == four


def test_matching_identical_across_thread_counts_and_seeded(trained):
    cfg, store, corpus = trained
    a = evaluate.zero_shot_matching(store, cfg, corpus, seed=5, threads=1)
    b = evaluate.zero_shot_matching(store, cfg, corpus, seed=5, threads=4)
    assert a == b
    assert a["trials"] == len(corpus.heldout)
    assert a["matches"] == round(a["accuracy"] * a["trials"])


def test_zero_shot_synthesis_shapes(trained):
    cfg, store, corpus = trained
    ref = corpus.heldout[0].mel
    mel, durations = evaluate.zero_shot_synthesize(store, cfg, ref, [0, 1, 2])
    assert mel.shape == (int(durations.sum()), cfg.mel_channels)
    assert np.all(durations >= 1)
    assert np.all(np.isfinite(mel))


def test_reference_weights_form_a_distribution(trained):
    cfg, store, corpus = trained
    s, w = evaluate.reference_weights(store, cfg, corpus.heldout[0].mel)
    assert s.shape == (cfg.encoder.embedding_dim,)
    assert w.shape == (cfg.basis_count,)
    assert np.all(w > 0)
    np.testing.assert_allclose(w.sum(), 1.0, atol=1e-12)
