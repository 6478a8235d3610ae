"""Distribution-level speaker supervision over the shared basis bank.

The training target is the KL divergence between the attention weights
extracted from reference speech and the weights re-extracted from the
generated mel. The embedding-level cosine loss exists only for the
ablation settings that compare against it.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad, basis, speaker_encoder
from .autodiff import Node
from .config import SpeakerEncoderConfig, SupervisionConfig
from .errors import DegenerateBasisError, DimensionError
from .params import ParameterStore


def distribution_loss(w_ref: Node, w_gen: Node,
                      config: SupervisionConfig | None = None) -> Node:
    """KL(reference weights || generated weights), floor-clamped in the log."""
    floor = (config or SupervisionConfig()).kl_floor
    if w_ref.value.shape != w_gen.value.shape:
        raise DimensionError(
            f"weight vectors differ in length: {w_ref.value.shape} vs {w_gen.value.shape}")
    # w * log(max(w, floor)) keeps the 0 * log 0 = 0 convention finite
    log_ref = ad.log(ad.clamp_min(w_ref, floor))
    log_gen = ad.log(ad.clamp_min(w_gen, floor))
    return ad.sum_(w_ref * (log_ref - log_gen))


def generated_weights(generated_mel: Node, store: ParameterStore,
                      enc_cfg: SpeakerEncoderConfig) -> Node:
    """Attention weights of a generated mel through the frozen extraction path.

    The extraction parameters enter the graph as constants, so gradients
    reach the generated mel (and the decoder behind it) but every named
    extraction parameter receives exactly zero gradient.
    """
    frozen = store.constants()
    s = speaker_encoder.encode(generated_mel, enc_cfg, frozen, mode="eval")
    return basis.attention_weights(s, frozen)


def cosine_embedding_loss(s_ref: Node, s_gen: Node) -> Node:
    """1 - cos(S_ref, S_gen); only used by the cosine-supervision ablations."""
    if s_ref.value.shape != s_gen.value.shape:
        raise DimensionError(
            f"embedding widths differ: {s_ref.value.shape} vs {s_gen.value.shape}")
    if not np.any(s_ref.value) or not np.any(s_gen.value):
        raise DegenerateBasisError("cosine of a zero embedding is undefined")
    dot = ad.matmul(s_ref, s_gen)
    norm = ad.sqrt(ad.matmul(s_ref, s_ref)) * ad.sqrt(ad.matmul(s_gen, s_gen))
    return 1.0 - dot / norm


def kl_value(w_ref: np.ndarray, w_gen: np.ndarray, floor: float = 1e-8) -> float:
    """Plain-numpy KL for metrics and evaluation."""
    wr = np.maximum(np.asarray(w_ref, dtype=np.float64), floor)
    wg = np.maximum(np.asarray(w_gen, dtype=np.float64), floor)
    return float(np.sum(np.asarray(w_ref) * (np.log(wr) - np.log(wg))))
