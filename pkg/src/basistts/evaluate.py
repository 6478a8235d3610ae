"""Frozen-parameter evaluation: metrics rows, zero-shot synthesis, and the
held-out speaker matching proxy.

Everything here treats the parameter store as read-only, so utterances can
fan out over threads; results are reduced in corpus order, which keeps the
aggregates identical no matter the thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import acoustic, basis, speaker_encoder
from .autodiff import Node, constant
from .config import ModelConfig
from .corpus import Corpus
from .params import ParameterStore
from .supervision import kl_value

TRAIN_EVAL_UTTS = 8
HELDOUT_EVAL_UTTS = 16


def _round_robin_by_speaker(utts, limit: int):
    """Interleave speakers so a truncated subset still covers all of them."""
    by_speaker: dict[int, list] = {}
    for u in utts:
        by_speaker.setdefault(u.speaker_id, []).append(u)
    groups = [by_speaker[s] for s in sorted(by_speaker)]
    out = []
    i = 0
    while len(out) < limit and any(i < len(g) for g in groups):
        for g in groups:
            if i < len(g) and len(out) < limit:
                out.append(g[i])
        i += 1
    return out


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def reference_weights(store: ParameterStore, cfg: ModelConfig, mel):
    """(S, w) for a mel through the frozen extraction path; w None without basis."""
    nodes = store.constants()
    s = speaker_encoder.encode(mel, cfg.encoder, nodes, mode="eval")
    if cfg.use_basis and "basis.B" in store:
        _, w = basis.extract_representation(s, nodes)
        return s.value.copy(), w.value.copy()
    return s.value.copy(), None


def conditioning_vector(store: ParameterStore, cfg: ModelConfig, mel,
                        stage: int) -> np.ndarray:
    nodes = store.constants()
    s = speaker_encoder.encode(mel, cfg.encoder, nodes, mode="eval")
    if stage >= 2 and cfg.use_basis and "basis.B" in store:
        e, _ = basis.extract_representation(s, nodes)
        return e.value.copy()
    return s.value.copy()


def synthesize_mel(store: ParameterStore, cfg: ModelConfig, token_ids,
                   durations, cond: np.ndarray) -> np.ndarray:
    nodes = store.constants()
    out = acoustic.synthesize(token_ids, durations, constant(cond), nodes, cfg)
    return out.value.copy()


def zero_shot_synthesize(store: ParameterStore, cfg: ModelConfig,
                         reference_mel, token_ids,
                         stage: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Clone the reference speaker onto new tokens with predicted durations."""
    cond = conditioning_vector(store, cfg, reference_mel, stage)
    nodes = store.constants()
    mel, durations = acoustic.synthesize_with_predicted_durations(
        token_ids, constant(cond), nodes, cfg)
    return mel.value.copy(), durations


def _utterance_kl(store, cfg, stage, utt):
    """(recon_mae, kl or nan, emb_cos) for one utterance, teacher-forced."""
    s_ref, w_ref = reference_weights(store, cfg, utt.mel)
    cond = conditioning_vector(store, cfg, utt.mel, stage)
    pred = synthesize_mel(store, cfg, utt.token_ids, utt.durations, cond)
    mae = float(np.abs(pred - utt.mel).mean())
    s_gen, w_gen = reference_weights(store, cfg, pred)
    denom = np.linalg.norm(s_ref) * np.linalg.norm(s_gen)
    emb_cos = float(s_ref @ s_gen / denom) if denom > 0 else np.nan
    kl = kl_value(w_ref, w_gen, cfg.supervision.kl_floor) if w_ref is not None else np.nan
    return mae, kl, emb_cos


def run_metrics(store: ParameterStore, cfg: ModelConfig, corpus: Corpus,
                stage: int, threads: int = 1) -> dict:
    train_sub = _round_robin_by_speaker(corpus.train, TRAIN_EVAL_UTTS)
    held_sub = _round_robin_by_speaker(corpus.heldout, HELDOUT_EVAL_UTTS)
    fn = lambda u: _utterance_kl(store, cfg, stage, u)
    train_rows = _map(fn, train_sub, threads)
    held_rows = _map(fn, held_sub, threads)

    has_basis = cfg.use_basis and "basis.B" in store
    basis_cos = basis.mean_pairwise_cosine(store["basis.B"]) if has_basis else None
    return {
        "recon_mae": float(np.mean([r[0] for r in train_rows])),
        "l_reg": basis_cos,
        "l_dist": float(np.mean([r[1] for r in train_rows])) if has_basis else None,
        "basis_cos": basis_cos,
        "heldout_kl": (float(np.mean([r[1] for r in held_rows]))
                       if has_basis and held_rows else None),
        "heldout_emb_cos": (float(np.mean([r[2] for r in held_rows]))
                            if held_rows else None),
    }


def zero_shot_matching(store: ParameterStore, cfg: ModelConfig, corpus: Corpus,
                       seed: int = 0, threads: int = 1) -> dict:
    """Held-out speaker-similarity proxy.

    For every held-out utterance used as the cloning reference: synthesize
    new tokens, re-extract the generated weights, and check they are
    KL-closer to the reference's weights than to a reference from a
    different held-out speaker. Returns trial count and match accuracy.
    """
    held = corpus.heldout
    by_speaker: dict[int, list] = {}
    for u in held:
        by_speaker.setdefault(u.speaker_id, []).append(u)
    speakers = sorted(by_speaker)
    if len(speakers) < 2:
        raise ValueError("matching proxy needs at least two held-out speakers")

    rng = np.random.default_rng([seed, 400])
    trials = []
    for u in held:
        tokens = corpus.train[rng.integers(len(corpus.train))].token_ids
        others = [s for s in speakers if s != u.speaker_id]
        mismatch_speaker = others[rng.integers(len(others))]
        mismatch = by_speaker[mismatch_speaker][
            rng.integers(len(by_speaker[mismatch_speaker]))]
        trials.append((u, tokens, mismatch))

    def run(trial):
        u, tokens, mismatch = trial
        _, w_ref = reference_weights(store, cfg, u.mel)
        _, w_mis = reference_weights(store, cfg, mismatch.mel)
        gen, _ = zero_shot_synthesize(store, cfg, u.mel, tokens)
        _, w_gen = reference_weights(store, cfg, gen)
        floor = cfg.supervision.kl_floor
        return kl_value(w_ref, w_gen, floor) < kl_value(w_mis, w_gen, floor)

    outcomes = _map(run, trials, threads)
    return {"trials": len(outcomes),
            "matches": int(np.sum(outcomes)),
            "accuracy": float(np.mean(outcomes))}
