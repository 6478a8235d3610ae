"""Conditional layer normalization and the transformer blocks that use it.

Every sublayer norm in the backbone is a CLN call: scale and bias are
affine in the speaker representation E. At initialization the projections
are zero with bias (1, 0), so CLN reduces exactly to conventional layer
norm; freezing a projector at init therefore removes the conditioning
without touching the architecture (used by the CLN ablations).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .config import TransformerBlockConfig
from .errors import DimensionError
from .params import ParameterStore

CLN_SUFFIXES = (".W_gamma", ".b_gamma", ".W_beta", ".b_beta")


def init_projector(store: ParameterStore, name: str, d: int, h: int) -> None:
    """Zero weights, bias (ones, zeros): projects any E to gamma=1, beta=0."""
    store.add(f"{name}.W_gamma", np.zeros((d, h)))
    store.add(f"{name}.b_gamma", np.ones(h))
    store.add(f"{name}.W_beta", np.zeros((d, h)))
    store.add(f"{name}.b_beta", np.zeros(h))


def cln(x: Node, e: Node, nodes: dict[str, Node], name: str, eps: float) -> Node:
    """Layer norm of x with scale/bias generated from E by projector `name`."""
    w_gamma = nodes[f"{name}.W_gamma"]
    if e.value.shape != (w_gamma.value.shape[0],):
        raise DimensionError(
            f"conditioning vector shape {e.value.shape} does not match projector "
            f"input width {w_gamma.value.shape[0]}")
    if x.value.shape[-1] != w_gamma.value.shape[1]:
        raise DimensionError(
            f"activation width {x.value.shape[-1]} does not match projector "
            f"output width {w_gamma.value.shape[1]}")
    gamma = ad.matmul(e, w_gamma) + nodes[f"{name}.b_gamma"]
    beta = ad.matmul(e, nodes[f"{name}.W_beta"]) + nodes[f"{name}.b_beta"]
    return ad.layer_norm_core(x, eps) * gamma + beta


def init_block(store: ParameterStore, name: str, cfg: TransformerBlockConfig,
               d: int, rng: np.random.Generator) -> None:
    h, f = cfg.hidden, cfg.ffn
    scale = np.sqrt(1.0 / h)
    # no key bias: it shifts every logit in a row equally, so softmax cancels it
    for p in ("Wq", "Wk", "Wv", "Wo"):
        store.add(f"{name}.attn.{p}", rng.normal(0.0, scale, (h, h)))
        if p != "Wk":
            store.add(f"{name}.attn.{p[0].lower()}{p[1].lower()}_b", np.zeros(h))
    store.add(f"{name}.ffn.W1", rng.normal(0.0, scale, (h, f)))
    store.add(f"{name}.ffn.b1", np.zeros(f))
    store.add(f"{name}.ffn.W2", rng.normal(0.0, np.sqrt(1.0 / f), (f, h)))
    store.add(f"{name}.ffn.b2", np.zeros(h))
    init_projector(store, f"{name}.cln_attn", d, h)
    init_projector(store, f"{name}.cln_ffn", d, h)


def _self_attention(seq: Node, nodes: dict[str, Node], name: str,
                    cfg: TransformerBlockConfig) -> Node:
    h = cfg.hidden
    hd = h // cfg.heads
    q = ad.matmul(seq, nodes[f"{name}.Wq"]) + nodes[f"{name}.wq_b"]
    k = ad.matmul(seq, nodes[f"{name}.Wk"])
    v = ad.matmul(seq, nodes[f"{name}.Wv"]) + nodes[f"{name}.wv_b"]
    heads = []
    for i in range(cfg.heads):
        qh = ad.slice_cols(q, i * hd, (i + 1) * hd)
        kh = ad.slice_cols(k, i * hd, (i + 1) * hd)
        vh = ad.slice_cols(v, i * hd, (i + 1) * hd)
        scores = ad.matmul(qh, ad.transpose(kh)) * (1.0 / np.sqrt(hd))
        heads.append(ad.matmul(ad.softmax(scores), vh))
    out = heads[0] if len(heads) == 1 else ad.concat(heads, axis=-1)
    return ad.matmul(out, nodes[f"{name}.Wo"]) + nodes[f"{name}.wo_b"]


def conditioned_block(seq: Node, e: Node, nodes: dict[str, Node], name: str,
                      cfg: TransformerBlockConfig, eps: float) -> Node:
    """Post-norm transformer block with CLN after each sublayer residual."""
    if seq.value.ndim != 2 or seq.value.shape[1] != cfg.hidden:
        raise DimensionError(
            f"block input must be L x {cfg.hidden}, got {seq.value.shape}")
    a = cln(seq + _self_attention(seq, nodes, f"{name}.attn", cfg),
            e, nodes, f"{name}.cln_attn", eps)
    inner = ad.relu(ad.matmul(a, nodes[f"{name}.ffn.W1"]) + nodes[f"{name}.ffn.b1"])
    f = ad.matmul(inner, nodes[f"{name}.ffn.W2"]) + nodes[f"{name}.ffn.b2"]
    return cln(a + f, e, nodes, f"{name}.cln_ffn", eps)


def sinusoidal_positions(length: int, width: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(width, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * (i // 2) / width)
    enc = np.where(i % 2 == 0, np.sin(angles), np.cos(angles))
    return enc


def projector_names(store: ParameterStore) -> list[str]:
    """Distinct CLN projector prefixes present in the store."""
    found = set()
    for n in store.names("*.cln_*"):
        for suf in CLN_SUFFIXES:
            if n.endswith(suf):
                found.add(n[: -len(suf)])
    return sorted(found)
