"""Reference-speech encoder: strided conv stack -> pooled speaker embedding.

Six 3x3 stride-2 conv layers at paper scale (channels 32..128), each with
per-channel batch normalization and ReLU; desk configs shrink the stack.
The spatial map is mean-pooled and linearly projected to the embedding
width, so the output length is independent of the input duration.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .config import SpeakerEncoderConfig
from .errors import ConfigurationError, EvaluationError
from .params import ParameterStore

PREFIX = "speaker_encoder"


def init_params(store: ParameterStore, cfg: SpeakerEncoderConfig,
                mel_channels: int, rng: np.random.Generator) -> None:
    cin = 1
    k = cfg.kernel
    for i, cout in enumerate(cfg.conv_channels):
        scale = np.sqrt(2.0 / (k * k * cin))
        store.add(f"{PREFIX}.conv{i}.w", rng.normal(0.0, scale, (k, k, cin, cout)))
        store.add(f"{PREFIX}.bn{i}.gamma", np.ones(cout))
        store.add(f"{PREFIX}.bn{i}.beta", np.zeros(cout))
        store.add(f"{PREFIX}.bn{i}.running_mean", np.zeros(cout), trainable=False)
        store.add(f"{PREFIX}.bn{i}.running_var", np.ones(cout), trainable=False)
        cin = cout
    d = cfg.embedding_dim
    store.add(f"{PREFIX}.proj.w", rng.normal(0.0, np.sqrt(1.0 / cin), (cin, d)))
    store.add(f"{PREFIX}.proj.b", np.zeros(d))


def encode(mel, cfg: SpeakerEncoderConfig, nodes: dict[str, Node],
           mode: str = "eval", store: ParameterStore | None = None) -> Node:
    """Map a T x C mel matrix to a length-d embedding node.

    ``nodes`` supplies the parameter graph nodes (leaves for training,
    constants for frozen evaluation). In train mode batch-norm uses the
    statistics of this input and updates the running stats in ``store``;
    eval mode reads the running stats and is a pure function.
    """
    if mode not in ("train", "train_running", "eval"):
        raise ConfigurationError(f"unknown encode mode: {mode}")
    if mode != "eval" and store is None:
        raise ConfigurationError("train-mode encode needs the parameter store for running stats")
    x = mel if isinstance(mel, Node) else ad.constant(np.asarray(mel, dtype=np.float64))
    if not np.all(np.isfinite(x.value)):
        raise EvaluationError("non-finite mel input to speaker encoder")
    if x.value.ndim != 2 or x.value.shape[0] < 1 or x.value.shape[1] < 1:
        raise EvaluationError(f"mel must be a T x C matrix with T,C >= 1, got {x.value.shape}")

    h = ad.reshape(x, (*x.value.shape, 1))
    for i in range(len(cfg.conv_channels)):
        h = ad.conv2d(h, nodes[f"{PREFIX}.conv{i}.w"], stride=cfg.stride)
        h = _batch_norm(h, i, cfg, nodes, mode, store)
        h = ad.relu(h)
    pooled = ad.mean(h, axis=(0, 1))
    return ad.matmul(pooled, nodes[f"{PREFIX}.proj.w"]) + nodes[f"{PREFIX}.proj.b"]


def _batch_norm(x: Node, i: int, cfg: SpeakerEncoderConfig,
                nodes: dict[str, Node], mode: str, store) -> Node:
    gamma = nodes[f"{PREFIX}.bn{i}.gamma"]
    beta = nodes[f"{PREFIX}.bn{i}.beta"]
    if mode == "train":
        mu = ad.mean(x, axis=(0, 1), keepdims=True)
        xc = x - mu
        var = ad.mean(xc * xc, axis=(0, 1), keepdims=True)
        y = xc / ad.sqrt(var + cfg.bn_eps)
        _update_running(store, i, cfg, mu.value.reshape(-1), var.value.reshape(-1))
    elif mode == "train_running":
        # Per-utterance batch statistics are effectively instance norm and
        # normalize away the constant per-channel cues that identify the
        # speaker. The trainer therefore folds this input into the running
        # stats and normalizes with those, like eval mode does.
        mu_b = x.value.mean(axis=(0, 1))
        var_b = x.value.var(axis=(0, 1))
        _update_running(store, i, cfg, mu_b, var_b)
        rm = store[f"{PREFIX}.bn{i}.running_mean"]
        rv = store[f"{PREFIX}.bn{i}.running_var"]
        y = (x - rm) * (1.0 / np.sqrt(rv + cfg.bn_eps))
    else:
        rm = nodes[f"{PREFIX}.bn{i}.running_mean"].value
        rv = nodes[f"{PREFIX}.bn{i}.running_var"].value
        y = (x - rm) * (1.0 / np.sqrt(rv + cfg.bn_eps))
    return y * gamma + beta


def _update_running(store, i: int, cfg: SpeakerEncoderConfig,
                    mu: np.ndarray, var: np.ndarray) -> None:
    m = cfg.bn_momentum
    rm_name, rv_name = f"{PREFIX}.bn{i}.running_mean", f"{PREFIX}.bn{i}.running_var"
    store[rm_name] = (1 - m) * store[rm_name] + m * mu
    store[rv_name] = (1 - m) * store[rv_name] + m * var


def feature_map_shape(t: int, c: int, cfg: SpeakerEncoderConfig) -> tuple[int, int, int]:
    """Pre-pool (H, W, channels) after the conv stack; ceil-halving per layer."""
    h, w = t, c
    for _ in cfg.conv_channels:
        h = -(-h // cfg.stride)
        w = -(-w // cfg.stride)
    return h, w, cfg.conv_channels[-1]


def embed_corpus(utterances, cfg: SpeakerEncoderConfig,
                 store: ParameterStore) -> list[tuple[str, np.ndarray]]:
    """Eval-mode embedding for every (utterance_id, mel) pair, in order."""
    utterances = list(utterances)
    if not utterances:
        raise ConfigurationError("cannot embed an empty corpus")
    nodes = store.constants()
    return [(uid, encode(mel, cfg, nodes, mode="eval").value.copy())
            for uid, mel in utterances]
