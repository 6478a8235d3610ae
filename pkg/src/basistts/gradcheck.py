"""Finite-difference verification of the full composite loss.

Builds a deliberately tiny model (the sizes are chosen so checking every
trainable scalar stays under a minute), wires reconstruction, basis
dissimilarity and distribution losses into one live differentiable graph,
and compares every tape gradient against central differences at 64-bit.
"""

from __future__ import annotations

import numpy as np

from . import acoustic, autodiff as ad, basis, speaker_encoder, supervision, training
from .config import (ModelConfig, SpeakerEncoderConfig, SupervisionConfig,
                     TransformerBlockConfig)
from .params import ParameterStore


def tiny_config(d: int = 8, n_basis: int = 4, blocks: int = 2) -> ModelConfig:
    cfg = ModelConfig(
        vocab_size=6,
        mel_channels=4,
        basis_count=n_basis,
        duration_hidden=4,
        encoder=SpeakerEncoderConfig(conv_channels=[2, 2], embedding_dim=d),
        blocks=TransformerBlockConfig(hidden=8, heads=2, ffn=8,
                                      encoder_blocks=blocks, decoder_blocks=blocks),
        supervision=SupervisionConfig(),
    )
    cfg.validate()
    return cfg


def build_problem(seed: int = 42, d: int = 8, n_basis: int = 4):
    """Tiny model, basis bank, and one random utterance."""
    cfg = tiny_config(d=d, n_basis=n_basis)
    store = training.init_model(cfg, seed)
    rng = np.random.default_rng([seed, 500])
    basis.init_params(store, rng.normal(0.0, 1.0, (n_basis, d)),
                      np.random.default_rng([seed, 501]))
    tokens = rng.integers(0, cfg.vocab_size, 3)
    durations = rng.integers(1, 3, 3)
    mel = rng.normal(0.0, 1.0, (int(durations.sum()), cfg.mel_channels))
    return cfg, store, tokens, durations, mel


def composite_loss(cfg: ModelConfig, tokens, durations, mel,
                   lambda_reg: float = 0.1, lambda_dist: float = 1.0,
                   lambda_dur: float = 0.1):
    """Loss closure over named leaves: recon + L_reg + L_dist, fully live.

    Eval-mode encoding keeps the closure a pure function of the leaves
    (train-mode batch norm would mutate running statistics between the
    finite-difference evaluations).
    """

    def loss_fn(leaves):
        s = speaker_encoder.encode(mel, cfg.encoder, leaves, mode="eval")
        e, w_ref = basis.extract_representation(s, leaves)
        enc = acoustic.encode_tokens(tokens, e, leaves, cfg)
        pred = acoustic.decode_frames(enc, durations, e, leaves, cfg)
        loss = acoustic.reconstruction_loss(pred, mel)
        loss = loss + lambda_dur * acoustic.duration_loss(
            acoustic.predict_durations(enc, leaves), durations)
        loss = loss + lambda_reg * basis.regularization_loss(leaves["basis.B"])
        s_gen = speaker_encoder.encode(pred, cfg.encoder, leaves, mode="eval")
        w_gen = basis.attention_weights(s_gen, leaves)
        loss = loss + lambda_dist * supervision.distribution_loss(
            w_ref, w_gen, cfg.supervision)
        return loss

    return loss_fn


def check_composite(seed: int = 42, step: float = 1e-4,
                    tolerance: float = 1e-4) -> ad.GradCheckReport:
    """Run the full check over every trainable tensor."""
    cfg, store, tokens, durations, mel = build_problem(seed=seed)
    loss_fn = composite_loss(cfg, tokens, durations, mel)
    tensors = {n: store[n] for n in store.trainable_names()}
    return ad.check_gradients(_with_buffers(loss_fn, store), tensors,
                              step=step, tolerance=tolerance)


def _with_buffers(loss_fn, store: ParameterStore):
    """Inject the non-trainable buffers (bn running stats) as constants."""
    buffers = {n: ad.constant(store[n]) for n in store.tensors
               if not store.trainable[n]}

    def wrapped(leaves):
        full = dict(buffers)
        full.update(leaves)
        return loss_fn(full)

    return wrapped
