"""Three-stage training schedule, SGD updates, and the metrics log.

Stage 1 pre-trains speaker encoder + backbone with reconstruction loss,
conditioning CLN on the raw speaker embedding (no basis bank yet).
Stage 2 adds the basis bank (k-means initialized elsewhere) and the
dissimilarity regularizer, training everything. Stage 3 freezes the
extraction path and adds the KL distribution loss computed by re-encoding
the generated mel through the frozen path.
"""

from __future__ import annotations

import fnmatch
from pathlib import Path

import numpy as np

from . import acoustic, autodiff as ad, basis, conditioning, evaluate, speaker_encoder, supervision
from .autodiff import Node, backward, grad_of
from .checkpoint import Checkpoint
from .config import ModelConfig, StageConfig
from .corpus import Corpus
from .errors import ConfigurationError, EvaluationError
from .params import ParameterStore

METRICS_HEADER = "step,stage,recon_mae,l_reg,l_dist,basis_cos,heldout_kl,heldout_emb_cos"
METRICS_VERSION_LINE = "# basistts-metrics v1"


def init_model(cfg: ModelConfig, seed: int) -> ParameterStore:
    """Fresh speaker encoder + backbone parameters (no basis bank yet)."""
    store = ParameterStore()
    rng = np.random.default_rng([seed, 100])
    speaker_encoder.init_params(store, cfg.encoder, cfg.mel_channels, rng)
    acoustic.init_params(store, cfg, rng)
    return store


def init_basis_from_store(store: ParameterStore, cfg: ModelConfig,
                          corpus: Corpus, n: int, seed: int,
                          use_kmeans: bool = True) -> None:
    """Embed the training corpus and install the basis bank.

    ``use_kmeans=False`` (the no-kmeans ablation) draws B from a Gaussian
    matched to the embedding cloud's scale instead of the cluster centers.
    """
    if n > len(corpus.train):
        raise ConfigurationError(
            f"cannot make {n} clusters from {len(corpus.train)} training utterances")
    pairs = [(u.utterance_id, u.mel) for u in corpus.train]
    embs = np.array([e for _, e in
                     speaker_encoder.embed_corpus(pairs, cfg.encoder, store)])
    if use_kmeans:
        b_init = basis.kmeans_init(embs, n, max_iters=100, seed=seed)
    else:
        b_init = random_basis(embs, n, seed)
    basis.init_params(store, b_init, np.random.default_rng([seed, 201]))


def random_basis(embeddings: np.ndarray, n: int, seed: int) -> np.ndarray:
    """Gaussian bank moment-matched per dimension to the embedding cloud.

    This is the no-kmeans initialization and the comparison point for the
    k-means init: same location and scale as the real embeddings, but with
    no cluster structure.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    rng = np.random.default_rng([seed, 202])
    return rng.normal(embeddings.mean(axis=0), embeddings.std(axis=0) + 1e-8,
                      (n, embeddings.shape[1]))


class SGD:
    """Gradient descent with momentum 0.9 and glob-based freeze patterns."""

    def __init__(self, store: ParameterStore, learning_rate: float,
                 frozen_patterns: list[str], momentum: float = 0.9):
        self.store = store
        self.lr = learning_rate
        self.momentum = momentum
        self.frozen = frozen_patterns
        self.velocity: dict[str, np.ndarray] = {}
        self.updatable = [
            n for n in store.trainable_names()
            if not any(fnmatch.fnmatchcase(n, p) for p in frozen_patterns)
        ]

    def step(self, leaves: dict[str, Node]) -> None:
        for name in self.updatable:
            g = grad_of(leaves[name])
            v = self.velocity.get(name)
            v = -self.lr * g if v is None else self.momentum * v - self.lr * g
            self.velocity[name] = v
            self.store[name] = self.store[name] + v


def _conditioning_vector(utt, leaves, store, cfg: ModelConfig, stage: int,
                         train_encoder: bool):
    """Return (cond, w_ref_node_or_None) for one utterance.

    Stage 1 conditions on the raw embedding S; later stages on the basis
    combination E. Stage 3 routes the extraction through constants so it
    is frozen in the graph, not just excluded from updates.
    """
    use_basis = cfg.use_basis and "basis.B" in store
    if stage == 3:
        frozen = store.constants()
        s = speaker_encoder.encode(utt.mel, cfg.encoder, frozen, mode="eval")
        if not use_basis:
            return s, None, s
        e, w = basis.extract_representation(s, frozen)
        return e, w, s
    mode = "train_running" if train_encoder else "eval"
    s = speaker_encoder.encode(utt.mel, cfg.encoder, leaves, mode=mode, store=store)
    if stage == 1 or not use_basis:
        return s, None, s
    e, w = basis.extract_representation(s, leaves)
    return e, w, s


def batch_loss(utts, leaves, store, cfg: ModelConfig, st: StageConfig) -> Node:
    """Mean per-utterance loss plus the stage's extra terms."""
    terms = []
    for utt in utts:
        cond, w_ref, s_ref = _conditioning_vector(utt, leaves, store, cfg,
                                                  st.stage, train_encoder=True)
        enc = acoustic.encode_tokens(utt.token_ids, cond, leaves, cfg)
        pred = acoustic.decode_frames(enc, utt.durations, cond, leaves, cfg)
        loss = acoustic.reconstruction_loss(pred, utt.mel)
        log_dur = acoustic.predict_durations(enc, leaves)
        loss = loss + cfg.lambda_dur * acoustic.duration_loss(log_dur, utt.durations)
        if st.stage == 3:
            if st.lambda_dist > 0.0 and w_ref is not None:
                w_gen = supervision.generated_weights(pred, store, cfg.encoder)
                loss = loss + st.lambda_dist * supervision.distribution_loss(
                    ad.constant(w_ref.value), w_gen, cfg.supervision)
            if st.lambda_cos > 0.0:
                frozen = store.constants()
                s_gen = speaker_encoder.encode(pred, cfg.encoder, frozen, mode="eval")
                loss = loss + st.lambda_cos * supervision.cosine_embedding_loss(
                    ad.constant(s_ref.value), s_gen)
        terms.append(loss)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    total = total * (1.0 / len(terms))
    if st.stage == 2 and st.lambda_reg > 0.0 and "basis.B" in store:
        total = total + st.lambda_reg * basis.regularization_loss(leaves["basis.B"])
    return total


class MetricsLog:
    def __init__(self, path):
        self.path = Path(path)
        self.rows = [METRICS_VERSION_LINE, METRICS_HEADER]

    def append(self, step: int, stage: int, values: dict) -> None:
        cols = [str(step), str(stage)] + [
            _fmt(values.get(k)) for k in
            ("recon_mae", "l_reg", "l_dist", "basis_cos", "heldout_kl",
             "heldout_emb_cos")]
        self.rows.append(",".join(cols))

    def write(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("\n".join(self.rows) + "\n")


def _fmt(v) -> str:
    if v is None:
        return "nan"
    return f"{v:.12g}"


def run_stage(stage_n: int, cfg: ModelConfig, store: ParameterStore,
              corpus: Corpus, out_dir, threads: int = 1) -> Checkpoint:
    """Train one stage in place and write checkpoint + metrics CSV."""
    st = cfg.stage(stage_n)
    if st.stage != stage_n:
        raise ConfigurationError(f"stage config mismatch: {st.stage} != {stage_n}")
    if stage_n >= 2 and cfg.use_basis and "basis.B" not in store:
        raise ConfigurationError("stage 2/3 needs a basis-initialized checkpoint "
                                 "(run init-basis first)")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    opt = SGD(store, st.learning_rate, st.frozen_parameter_patterns)
    log = MetricsLog(out_dir / f"metrics_stage{stage_n}.csv")
    train = corpus.train

    def record(step):
        m = evaluate.run_metrics(store, cfg, corpus, stage_n, threads=threads)
        log.append(step, stage_n, m)

    record(0)
    for step in range(1, st.steps + 1):
        frac = step / st.steps
        opt.lr = st.learning_rate * (1.0 - (1.0 - st.lr_final_fraction) * frac)
        rng = np.random.default_rng([st.seed, 300, step])
        idx = rng.integers(0, len(train), st.batch_size)
        leaves = store.leaves()
        loss = batch_loss([train[i] for i in idx], leaves, store, cfg, st)
        if not np.isfinite(loss.value):
            raise EvaluationError(f"non-finite loss at stage {stage_n} step {step}")
        backward(loss)
        opt.step(leaves)
        if step % cfg.eval_interval == 0 or step == st.steps:
            record(step)
    log.write()
    ckpt = Checkpoint(stage=stage_n, step=st.steps, config=cfg, params=store)
    ckpt.save(out_dir / f"stage{stage_n}.ckpt")
    return ckpt


def run_pipeline(cfg: ModelConfig, corpus: Corpus, out_dir, seed: int,
                 threads: int = 1, use_kmeans: bool = True) -> Checkpoint:
    """Full schedule: stage 1, basis init, stage 2, stage 3."""
    out_dir = Path(out_dir)
    store = init_model(cfg, seed)
    run_stage(1, cfg, store, corpus, out_dir, threads)
    if cfg.use_basis:
        init_basis_from_store(store, cfg, corpus, cfg.basis_count, seed,
                              use_kmeans=use_kmeans)
    run_stage(2, cfg, store, corpus, out_dir, threads)
    return run_stage(3, cfg, store, corpus, out_dir, threads)
