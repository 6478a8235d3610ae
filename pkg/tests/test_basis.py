import numpy as np
import pytest

from basistts import autodiff as ad, basis
from basistts.errors import ConfigurationError, DegenerateBasisError, DimensionError
from basistts.params import ParameterStore


def make_nodes(b, w_q=None, w_k=None, w_v=None):
    d = b.shape[1]
    eye = np.eye(d)
    return {
        "basis.B": ad.constant(b),
        "basis.W_q": ad.constant(eye if w_q is None else w_q),
        "basis.W_k": ad.constant(eye if w_k is None else w_k),
        "basis.W_v": ad.constant(eye if w_v is None else w_v),
    }


# ---------------------------------------------------------------------------
# attention weights


def test_single_basis_vector_gets_weight_one():
    nodes = make_nodes(np.array([[1.0, 2.0, 3.0]]))
    w = basis.attention_weights(ad.constant([0.5, 0.5, 0.5]), nodes)
    np.testing.assert_allclose(w.value, [1.0])


def test_zero_embedding_gives_uniform_weights():
    rng = np.random.default_rng(2)
    nodes = make_nodes(rng.normal(size=(5, 4)), w_q=rng.normal(size=(4, 4)))
    w = basis.attention_weights(ad.constant(np.zeros(4)), nodes).value
    np.testing.assert_allclose(w, np.full(5, 0.2), atol=1e-12)


def test_weights_against_numpy_oracle():
    rng = np.random.default_rng(11)
    b = rng.normal(size=(6, 4))
    w_q, w_k, w_v = (rng.normal(size=(4, 4)) for _ in range(3))
    s = rng.normal(size=4)

    logits = (b @ w_k) @ (s @ w_q) / np.sqrt(4)
    e = np.exp(logits - logits.max())
    expected_w = e / e.sum()
    expected_e = expected_w @ (b @ w_v)

    nodes = make_nodes(b, w_q, w_k, w_v)
    e_node, w_node = basis.extract_representation(ad.constant(s), nodes)
    np.testing.assert_allclose(w_node.value, expected_w, atol=1e-12)
    np.testing.assert_allclose(e_node.value, expected_e, atol=1e-12)


def test_saturated_attention_reconstructs_a_basis_vector():
    # widely separated bank + identity projections: the matching row wins
    b = 10.0 * np.eye(4)
    nodes = make_nodes(b)
    e, w = basis.extract_representation(ad.constant(10.0 * np.eye(4)[0]), nodes)
    assert w.value.argmax() == 0
    np.testing.assert_allclose(e.value, b[0], atol=1e-10)


def test_representation_stays_in_convex_hull_of_values():
    rng = np.random.default_rng(13)
    b = rng.normal(size=(8, 5))
    w_v = rng.normal(size=(5, 5))
    nodes = make_nodes(b, w_v=w_v)
    values = b @ w_v
    for trial in range(20):
        s = np.random.default_rng([13, trial]).normal(size=5) * 3.0
        e, w = basis.extract_representation(ad.constant(s), nodes)
        assert abs(w.value.sum() - 1.0) < 1e-12
        assert np.all(e.value <= values.max(axis=0) + 1e-12)
        assert np.all(e.value >= values.min(axis=0) - 1e-12)


def test_embedding_width_mismatch_errors():
    nodes = make_nodes(np.zeros((3, 4)))
    with pytest.raises(DimensionError):
        basis.attention_weights(ad.constant(np.zeros(5)), nodes)


# ---------------------------------------------------------------------------
# dissimilarity regularizer


def test_regularizer_identical_rows_is_one():
    b = ad.constant(np.tile([1.0, 2.0, 0.5], (4, 1)))
    np.testing.assert_allclose(basis.regularization_loss(b).value, 1.0, atol=1e-12)


def test_regularizer_orthogonal_rows_is_zero():
    np.testing.assert_allclose(
        basis.regularization_loss(ad.constant(np.eye(3) * 2.0)).value, 0.0, atol=1e-12)


def test_regularizer_opposite_rows_is_minus_one():
    b = ad.constant(np.array([[1.0, 1.0], [-2.0, -2.0]]))
    np.testing.assert_allclose(basis.regularization_loss(b).value, -1.0, atol=1e-12)


def test_regularizer_against_double_loop_oracle():
    rng = np.random.default_rng(5)
    b = rng.normal(size=(7, 3))
    total, pairs = 0.0, 0
    for i in range(7):
        for j in range(7):
            if i == j:
                continue
            total += b[i] @ b[j] / (np.linalg.norm(b[i]) * np.linalg.norm(b[j]))
            pairs += 1
    expected = total / pairs
    np.testing.assert_allclose(basis.regularization_loss(ad.constant(b)).value,
                               expected, atol=1e-12)
    np.testing.assert_allclose(basis.mean_pairwise_cosine(b), expected, atol=1e-12)


def test_regularizer_invariant_to_row_permutation_and_positive_scale():
    rng = np.random.default_rng(6)
    b = rng.normal(size=(6, 4))
    base = basis.mean_pairwise_cosine(b)
    perm = rng.permutation(6)
    scales = rng.uniform(0.1, 10.0, size=(6, 1))
    assert abs(basis.mean_pairwise_cosine(b[perm] * scales[perm]) - base) < 1e-10


def test_regularizer_rejects_degenerate_input():
    with pytest.raises(ConfigurationError):
        basis.regularization_loss(ad.constant(np.ones((1, 3))))
    b = np.ones((3, 2))
    b[1] = 0.0
    with pytest.raises(DegenerateBasisError):
        basis.regularization_loss(ad.constant(b))


def test_regularizer_gradients_match_finite_differences():
    rng = np.random.default_rng(14)
    tensors = {"b": rng.normal(size=(5, 3))}
    report = ad.check_gradients(lambda t: basis.regularization_loss(t["b"]), tensors)
    assert report.max_error < 1e-4, dict(report)


# ---------------------------------------------------------------------------
# k-means initialization


def _blobs(seed=9, per=25, spread=0.05):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]])
    pts = np.concatenate([c + spread * rng.normal(size=(per, 2)) for c in centers])
    return pts, centers


def test_kmeans_recovers_separated_blobs():
    pts, true_centers = _blobs()
    centers, history = basis.lloyd(pts, 4, max_iters=100, seed=9)
    # each true center has a recovered center within the blob spread
    for c in true_centers:
        assert np.min(np.linalg.norm(centers - c, axis=1)) < 0.2


def test_kmeans_objective_non_increasing_and_near_best_restart():
    pts, _ = _blobs(seed=3, spread=2.0)
    _, history = basis.lloyd(pts, 4, max_iters=100, seed=9)
    assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))
    best = min(basis.lloyd(pts, 4, max_iters=100, seed=s)[1][-1] for s in range(20))
    assert history[-1] <= best * 1.01


def test_kmeans_singleton_clusters():
    pts = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
    centers, history = basis.lloyd(pts, 3, max_iters=50, seed=0)
    assert sorted(map(tuple, centers)) == sorted(map(tuple, pts))
    assert history[-1] == 0.0


def test_kmeans_handles_identical_points():
    pts = np.ones((10, 3))
    centers, _ = basis.lloyd(pts, 2, max_iters=50, seed=1)
    assert np.allclose(centers, 1.0)


def test_kmeans_is_deterministic():
    pts, _ = _blobs(seed=4, spread=1.0)
    a, ha = basis.lloyd(pts, 4, max_iters=100, seed=7)
    b, hb = basis.lloyd(pts, 4, max_iters=100, seed=7)
    assert np.array_equal(a, b)
    assert ha == hb


def test_kmeans_rejects_too_few_points():
    with pytest.raises(ConfigurationError):
        basis.lloyd(np.zeros((3, 2)), 4, max_iters=10, seed=0)


def test_init_params_installs_bank_and_projections():
    store = ParameterStore()
    b = np.random.default_rng(1).normal(size=(4, 3))
    basis.init_params(store, b, np.random.default_rng(2))
    assert np.array_equal(store["basis.B"], b)
    for name in ("basis.W_q", "basis.W_k", "basis.W_v"):
        assert store[name].shape == (3, 3)
