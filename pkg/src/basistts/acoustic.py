"""Miniature non-autoregressive acoustic model.

token embedding -> CLN-conditioned encoder blocks -> duration-based
length regulation -> CLN-conditioned decoder blocks -> linear mel head.
Durations are teacher-forced during training and predicted at inference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad, conditioning
from .autodiff import Node
from .config import ModelConfig
from .errors import DataError, DimensionError
from .params import ParameterStore

PREFIX = "backbone"


@dataclass
class Utterance:
    utterance_id: str
    speaker_id: int
    token_ids: list[int]
    durations: list[int]
    mel: np.ndarray = field(repr=False)

    def __post_init__(self):
        if len(self.durations) != len(self.token_ids):
            raise DataError("durations and token_ids must have equal length")
        if self.mel.shape[0] != int(np.sum(self.durations)):
            raise DataError(
                f"mel has {self.mel.shape[0]} frames but durations sum to "
                f"{int(np.sum(self.durations))}")


def init_params(store: ParameterStore, cfg: ModelConfig,
                rng: np.random.Generator) -> None:
    h = cfg.blocks.hidden
    d = cfg.encoder.embedding_dim
    store.add(f"{PREFIX}.embed", rng.normal(0.0, np.sqrt(1.0 / h),
                                            (cfg.vocab_size, h)))
    for i in range(cfg.blocks.encoder_blocks):
        conditioning.init_block(store, f"{PREFIX}.enc{i}", cfg.blocks, d, rng)
    for i in range(cfg.blocks.decoder_blocks):
        conditioning.init_block(store, f"{PREFIX}.dec{i}", cfg.blocks, d, rng)
    dh = cfg.duration_hidden
    store.add(f"{PREFIX}.dur.W1", rng.normal(0.0, np.sqrt(1.0 / h), (h, dh)))
    store.add(f"{PREFIX}.dur.b1", np.zeros(dh))
    store.add(f"{PREFIX}.dur.W2", np.zeros((dh, 1)))
    store.add(f"{PREFIX}.dur.b2", np.zeros(1))
    store.add(f"{PREFIX}.out.w", rng.normal(0.0, np.sqrt(1.0 / h),
                                            (h, cfg.mel_channels)))
    store.add(f"{PREFIX}.out.b", np.zeros(cfg.mel_channels))


def length_regulate(hidden: Node, durations) -> Node:
    """Repeat row i of the hidden sequence durations[i] times."""
    durations = np.asarray(durations, dtype=np.int64)
    if durations.ndim != 1 or durations.shape[0] != hidden.value.shape[0]:
        raise DimensionError(
            f"need one duration per row: {durations.shape} vs {hidden.value.shape}")
    if np.any(durations < 1):
        raise DataError("durations must all be >= 1")
    return ad.repeat_rows(hidden, durations)


def encode_tokens(token_ids, e: Node, nodes: dict[str, Node],
                  cfg: ModelConfig) -> Node:
    token_ids = np.asarray(token_ids, dtype=np.int64)
    if np.any(token_ids < 0) or np.any(token_ids >= cfg.vocab_size):
        raise DataError(f"token id out of vocabulary [0, {cfg.vocab_size})")
    seq = ad.gather_rows(nodes[f"{PREFIX}.embed"], token_ids)
    seq = seq + conditioning.sinusoidal_positions(len(token_ids), cfg.blocks.hidden)
    for i in range(cfg.blocks.encoder_blocks):
        seq = conditioning.conditioned_block(seq, e, nodes, f"{PREFIX}.enc{i}",
                                             cfg.blocks, cfg.ln_eps)
    return seq


def predict_durations(hidden: Node, nodes: dict[str, Node]) -> Node:
    """Position-wise two-layer net emitting one log-duration per row."""
    x = ad.relu(ad.matmul(hidden, nodes[f"{PREFIX}.dur.W1"]) + nodes[f"{PREFIX}.dur.b1"])
    out = ad.matmul(x, nodes[f"{PREFIX}.dur.W2"]) + nodes[f"{PREFIX}.dur.b2"]
    return ad.reshape(out, (hidden.value.shape[0],))


def durations_from_log(log_durations: np.ndarray) -> np.ndarray:
    """Inference rounding: max(1, round(exp(prediction)))."""
    return np.maximum(1, np.round(np.exp(log_durations))).astype(np.int64)


def decode_frames(enc_out: Node, durations, e: Node, nodes: dict[str, Node],
                  cfg: ModelConfig) -> Node:
    seq = length_regulate(enc_out, durations)
    seq = seq + conditioning.sinusoidal_positions(seq.value.shape[0],
                                                  cfg.blocks.hidden)
    for i in range(cfg.blocks.decoder_blocks):
        seq = conditioning.conditioned_block(seq, e, nodes, f"{PREFIX}.dec{i}",
                                             cfg.blocks, cfg.ln_eps)
    return ad.matmul(seq, nodes[f"{PREFIX}.out.w"]) + nodes[f"{PREFIX}.out.b"]


def synthesize(token_ids, durations, e: Node, nodes: dict[str, Node],
               cfg: ModelConfig) -> Node:
    """Full forward pass with given durations; returns the T x C mel node."""
    enc = encode_tokens(token_ids, e, nodes, cfg)
    return decode_frames(enc, durations, e, nodes, cfg)


def synthesize_with_predicted_durations(token_ids, e: Node,
                                        nodes: dict[str, Node],
                                        cfg: ModelConfig) -> tuple[Node, np.ndarray]:
    enc = encode_tokens(token_ids, e, nodes, cfg)
    durations = durations_from_log(predict_durations(enc, nodes).value)
    return decode_frames(enc, durations, e, nodes, cfg), durations


def reconstruction_loss(predicted: Node, target) -> Node:
    """Mean absolute error over all frames and channels."""
    tv = target.value if isinstance(target, Node) else np.asarray(target)
    if predicted.value.shape != tv.shape:
        raise DimensionError(
            f"mel shapes differ: {predicted.value.shape} vs {tv.shape}")
    return ad.mean(ad.absolute(predicted - tv))


def duration_loss(log_pred: Node, durations) -> Node:
    """Squared error against log of the true durations."""
    target = np.log(np.asarray(durations, dtype=np.float64))
    diff = log_pred - target
    return ad.mean(diff * diff)
