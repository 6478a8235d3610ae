import numpy as np
import pytest

from basistts import corpus as corpus_mod, training
from basistts.config import (ModelConfig, SpeakerEncoderConfig, StageConfig,
                             TransformerBlockConfig)
from basistts.corpus import Corpus
from basistts.errors import ConfigurationError
from basistts.params import ParameterStore


def tiny_train_cfg(seed=0, steps=3):
    cfg = ModelConfig(
        vocab_size=6,
        mel_channels=4,
        basis_count=3,
        duration_hidden=4,
        eval_interval=50,
        encoder=SpeakerEncoderConfig(conv_channels=[2, 2], embedding_dim=4),
        blocks=TransformerBlockConfig(hidden=8, heads=2, ffn=8,
                                      encoder_blocks=1, decoder_blocks=1),
        stages={
            1: StageConfig(stage=1, steps=steps, learning_rate=0.01,
                           batch_size=2, seed=seed),
            2: StageConfig(stage=2, steps=steps, learning_rate=0.01,
                           batch_size=2, lambda_reg=0.1, seed=seed + 1),
            3: StageConfig(stage=3, steps=steps, learning_rate=0.01,
                           batch_size=2, lambda_dist=1.0, seed=seed + 2,
                           frozen_parameter_patterns=["speaker_encoder.*", "basis.*"]),
        },
    )
    cfg.validate()
    return cfg


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    corpus_mod.generate_corpus(root, num_speakers=4, utts_per_speaker=3,
                               heldout_speakers=2, seed=1,
                               vocab_size=6, channels=4)
    return Corpus(root)


def test_zero_steps_leaves_parameters_unchanged(tmp_path, tiny_corpus):
    cfg = tiny_train_cfg(steps=0)
    store = training.init_model(cfg, 0)
    before = store.copy()
    training.run_stage(1, cfg, store, tiny_corpus, tmp_path)
    assert store.equals_bitwise(before)
    assert (tmp_path / "stage1.ckpt").exists()
    assert (tmp_path / "metrics_stage1.csv").exists()


def test_freeze_everything_only_touches_bn_buffers(tmp_path, tiny_corpus):
    cfg = tiny_train_cfg(steps=2)
    cfg.stage(1).frozen_parameter_patterns = ["*"]
    store = training.init_model(cfg, 0)
    before = store.copy()
    training.run_stage(1, cfg, store, tiny_corpus, tmp_path)
    for name in store.trainable_names():
        assert np.array_equal(store[name], before[name]), name
    # batch-norm running statistics are buffers, not parameters: they move
    assert not store.equals_bitwise(before, "speaker_encoder.bn*.running_*")


def test_training_runs_are_byte_identical(tmp_path, tiny_corpus):
    cfg = tiny_train_cfg(steps=3)
    for sub in ("a", "b"):
        store = training.init_model(cfg, 0)
        training.run_stage(1, cfg, store, tiny_corpus, tmp_path / sub)
    for name in ("metrics_stage1.csv", "stage1.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == \
               (tmp_path / "b" / name).read_bytes(), name


def test_metrics_csv_layout(tmp_path, tiny_corpus):
    cfg = tiny_train_cfg(steps=2)
    store = training.init_model(cfg, 0)
    training.run_stage(1, cfg, store, tiny_corpus, tmp_path)
    lines = (tmp_path / "metrics_stage1.csv").read_text().splitlines()
    assert lines[0] == training.METRICS_VERSION_LINE
    assert lines[1] == training.METRICS_HEADER
    # stage 1 has no basis bank: basis columns are nan, others are numeric
    first = lines[2].split(",")
    assert first[0] == "0" and first[1] == "1"
    assert float(first[2]) > 0.0
    assert first[3] == "nan" and first[4] == "nan" and first[5] == "nan"
    # rows: step 0 plus the final step (eval_interval > steps)
    assert len(lines) == 4
    assert lines[3].split(",")[0] == "2"


def test_stage_2_requires_basis_init(tmp_path, tiny_corpus):
    cfg = tiny_train_cfg(steps=1)
    store = training.init_model(cfg, 0)
    with pytest.raises(ConfigurationError, match="init-basis"):
        training.run_stage(2, cfg, store, tiny_corpus, tmp_path)


def test_unconfigured_stage_rejected(tmp_path, tiny_corpus):
    cfg = tiny_train_cfg(steps=1)
    del cfg.stages[2]
    store = training.init_model(cfg, 0)
    with pytest.raises(ConfigurationError):
        training.run_stage(2, cfg, store, tiny_corpus, tmp_path)


def test_basis_init_shapes_and_count_guard(tiny_corpus):
    cfg = tiny_train_cfg()
    store = training.init_model(cfg, 0)
    training.init_basis_from_store(store, cfg, tiny_corpus, 3, seed=0)
    assert store["basis.B"].shape == (3, cfg.encoder.embedding_dim)
    for name in ("basis.W_q", "basis.W_k", "basis.W_v"):
        assert store[name].shape == (4, 4)

    store2 = training.init_model(cfg, 0)
    with pytest.raises(ConfigurationError):
        training.init_basis_from_store(store2, cfg, tiny_corpus,
                                       len(tiny_corpus.train) + 1, seed=0)


def test_random_basis_differs_from_kmeans(tiny_corpus):
    cfg = tiny_train_cfg()
    a = training.init_model(cfg, 0)
    training.init_basis_from_store(a, cfg, tiny_corpus, 3, seed=0, use_kmeans=True)
    b = training.init_model(cfg, 0)
    training.init_basis_from_store(b, cfg, tiny_corpus, 3, seed=0, use_kmeans=False)
    assert not np.array_equal(a["basis.B"], b["basis.B"])
    # projections are seeded identically either way
    assert np.array_equal(a["basis.W_q"], b["basis.W_q"])


def test_stage3_freezes_extraction_path(tmp_path, tiny_corpus):
    cfg = tiny_train_cfg(steps=2)
    store = training.init_model(cfg, 0)
    training.run_stage(1, cfg, store, tiny_corpus, tmp_path)
    training.init_basis_from_store(store, cfg, tiny_corpus, 3, seed=0)
    training.run_stage(2, cfg, store, tiny_corpus, tmp_path)
    before = store.copy()
    training.run_stage(3, cfg, store, tiny_corpus, tmp_path)
    assert store.equals_bitwise(before, "speaker_encoder.*")
    assert store.equals_bitwise(before, "basis.*")
    assert not store.equals_bitwise(before, "backbone.*")


def test_sgd_momentum_and_freeze_patterns():
    store = ParameterStore()
    store.add("w.free", np.array([1.0]))
    store.add("w.frozen", np.array([1.0]))
    store.add("buf", np.array([1.0]), trainable=False)
    opt = training.SGD(store, learning_rate=0.1, frozen_patterns=["w.frozen"])
    assert opt.updatable == ["w.free"]

    from basistts import autodiff as ad
    g = np.array([2.0])
    for expected_v in (-0.1 * g, 0.9 * (-0.1 * g) - 0.1 * g):
        leaves = store.leaves()
        node = leaves["w.free"]
        node.grad = g  # constant gradient, isolates the momentum arithmetic
        opt.step(leaves)
        np.testing.assert_allclose(opt.velocity["w.free"], expected_v, rtol=1e-15)
    assert store["w.frozen"] == 1.0 and store["buf"] == 1.0


def test_pipeline_produces_all_artifacts(tmp_path, tiny_corpus):
    cfg = tiny_train_cfg(steps=2)
    ckpt = training.run_pipeline(cfg, tiny_corpus, tmp_path, seed=0)
    for n in (1, 2, 3):
        assert (tmp_path / f"stage{n}.ckpt").exists()
        assert (tmp_path / f"metrics_stage{n}.csv").exists()
    assert ckpt.stage == 3
    assert "basis.B" in ckpt.params
