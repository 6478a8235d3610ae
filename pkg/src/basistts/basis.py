"""Basis-vector speaker representation.

A bank of N basis vectors plus Q/K/V projections turns a speaker
embedding into attention weights over the bank and a weighted value
combination. Includes the pairwise-cosine dissimilarity loss and the
k-means initialization of the bank from pre-trained embeddings.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ConfigurationError, DegenerateBasisError, DimensionError
from .params import ParameterStore

PREFIX = "basis"


def init_params(store: ParameterStore, b_init: np.ndarray,
                rng: np.random.Generator) -> None:
    """Install basis vectors B (N x d) and fresh square Q/K/V projections."""
    b_init = np.asarray(b_init, dtype=np.float64)
    n, d = b_init.shape
    if n < 1:
        raise ConfigurationError("need at least one basis vector")
    store.add(f"{PREFIX}.B", b_init)
    scale = np.sqrt(1.0 / d)
    for name in ("W_q", "W_k", "W_v"):
        store.add(f"{PREFIX}.{name}", rng.normal(0.0, scale, (d, d)))


def attention_logits(s: Node, nodes: dict[str, Node]) -> Node:
    b = nodes[f"{PREFIX}.B"]
    d = b.value.shape[1]
    if s.value.shape != (d,):
        raise DimensionError(
            f"speaker embedding has shape {s.value.shape}, basis width is {d}")
    q = ad.matmul(s, nodes[f"{PREFIX}.W_q"])                 # (d,)
    k = ad.matmul(b, nodes[f"{PREFIX}.W_k"])                 # (N, d)
    return ad.matmul(k, q) * (1.0 / np.sqrt(d))              # (N,)


def attention_weights(s: Node, nodes: dict[str, Node]) -> Node:
    """Single-head softmax weights of the embedding over the basis bank."""
    return ad.softmax(attention_logits(s, nodes))


def extract_representation(s: Node, nodes: dict[str, Node]) -> tuple[Node, Node]:
    """Return (E, w): the weighted value combination and its weights."""
    w = attention_weights(s, nodes)
    values = ad.matmul(nodes[f"{PREFIX}.B"], nodes[f"{PREFIX}.W_v"])  # (N, d)
    return ad.matmul(w, values), w


def regularization_loss(b: Node) -> Node:
    """Mean pairwise cosine similarity over distinct basis vector pairs."""
    n = b.value.shape[0]
    if n < 2:
        raise ConfigurationError("dissimilarity loss needs at least 2 basis vectors")
    norms = np.sqrt((b.value * b.value).sum(axis=1))
    if np.any(norms == 0.0):
        raise DegenerateBasisError("zero basis vector has no cosine direction")
    inv = ad.div(1.0, ad.sqrt(ad.sum_(b * b, axis=1, keepdims=True)))
    bn = b * inv                                              # unit rows
    gram = ad.matmul(bn, ad.transpose(bn))                    # (N, N), diag == 1
    return (ad.sum_(gram) - float(n)) * (1.0 / (n * (n - 1)))


def mean_pairwise_cosine(b: np.ndarray) -> float:
    """Plain-numpy version of the dissimilarity loss, for metrics."""
    return float(regularization_loss(ad.constant(np.asarray(b, dtype=np.float64))).value)


# ---------------------------------------------------------------------------
# k-means initialization


def _kmeans_pp_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=points.dtype)
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[i] = points[rng.integers(n)]
            continue
        centers[i] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((points - centers[i]) ** 2).sum(axis=1))
    return centers


def lloyd(points: np.ndarray, k: int, max_iters: int, seed: int):
    """k-means++ seeded Lloyd iterations.

    Returns (centers, objective_history); the objective (within-cluster sum
    of squared distances) is recorded after every assignment step. Empty
    clusters are re-seeded to the point farthest from its assigned center.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < k or k < 1:
        raise ConfigurationError(
            f"k-means needs at least k={k} points, got {points.shape}")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_seed(points, k, rng)
    history = []
    assign = None
    for _ in range(max_iters):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        residual = d2[np.arange(points.shape[0]), new_assign]
        for c in range(k):
            if not np.any(new_assign == c):
                far = int(residual.argmax())
                centers[c] = points[far]
                new_assign[far] = c
                residual[far] = 0.0
        history.append(float(residual.sum()))
        if assign is not None and np.array_equal(assign, new_assign):
            break
        assign = new_assign
        for c in range(k):
            centers[c] = points[assign == c].mean(axis=0)
    return centers, history


def kmeans_init(embeddings, n_clusters: int, max_iters: int = 100,
                seed: int = 0) -> np.ndarray:
    """Cluster speaker embeddings and return the centers as the initial B."""
    points = np.asarray(embeddings, dtype=np.float64)
    centers, _ = lloyd(points, n_clusters, max_iters, seed)
    return centers
