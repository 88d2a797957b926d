import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aptshield import gae, scenario
from aptshield.errors import DomainError, NumericError, ShapeError
from aptshield.numerics import grad_check, make_rng


def random_graph(rng, n, p=0.4, ensure_edge=True):
    A = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                A[i, j] = A[j, i] = 1.0
    if ensure_edge and A.sum() == 0:
        A[0, 1] = A[1, 0] = 1.0
    return A


def normalized_oracle(A):
    n = len(A)
    deg = [sum(A[i][j] for j in range(n)) + 1 for i in range(n)]
    return [[((A[i][j] + (i == j)) / math.sqrt(deg[i] * deg[j])) for j in range(n)] for i in range(n)]


def encode_oracle(a_norm, X, W0, W1):
    """Two explicit products per layer with ReLU in between."""
    first = a_norm @ X
    first = first @ W0
    hidden = np.maximum(first, 0.0)
    second = a_norm @ hidden
    return second @ W1


def model_for(A, d, h, k, seed):
    rng = make_rng(seed)
    return gae.GAEModel(rng.normal(size=(d, h)), rng.normal(size=(h, k)), gae.normalize_adjacency(A))


def test_normalize_examples():
    np.testing.assert_array_equal(gae.normalize_adjacency([[0.0]]), [[1.0]])
    np.testing.assert_allclose(gae.normalize_adjacency([[0, 1], [1, 0]]), [[0.5, 0.5], [0.5, 0.5]], rtol=1e-15)
    path = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    assert gae.normalize_adjacency(path)[0, 1] == pytest.approx(0.408248, abs=1e-6)


@pytest.mark.parametrize("bad", [
    [[0, 1], [0, 0]],
    [[0, 2], [2, 0]],
    [[1, 0], [0, 0]],
    [[0, 1, 0], [1, 0, 1]],
])
def test_normalize_rejects_invalid(bad):
    with pytest.raises(DomainError):
        gae.normalize_adjacency(bad)


@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_normalize_matches_scalar_oracle(n, seed):
    A = random_graph(make_rng(seed), n, ensure_edge=False)
    out = gae.normalize_adjacency(A)
    np.testing.assert_allclose(out, normalized_oracle(A.tolist()), rtol=1e-14, atol=1e-15)
    assert np.array_equal(out, out.T)


def test_encode_examples():
    one = gae.GAEModel(np.array([[1.0]]), np.array([[1.0]]), gae.normalize_adjacency([[0.0]]))
    np.testing.assert_array_equal(gae.gae_encode(one, [[1.0]]), [[1.0]])
    A = random_graph(make_rng(1), 5)
    m = model_for(A, 3, 4, 2, 1)
    m.W1 = np.zeros_like(m.W1)
    assert np.all(gae.gae_encode(m, make_rng(2).normal(size=(5, 3))) == 0.0)


def test_encode_matches_unfused_oracle():
    rng = make_rng(7)
    A = random_graph(rng, 6)
    X = rng.normal(size=(6, 4))
    m = model_for(A, 4, 5, 3, 8)
    np.testing.assert_allclose(gae.gae_encode(m, X), encode_oracle(m.a_norm, X, m.W0, m.W1), rtol=1e-13, atol=1e-13)


def test_encode_shape_error():
    A = random_graph(make_rng(1), 4)
    with pytest.raises(ShapeError):
        gae.gae_encode(model_for(A, 3, 2, 2, 0), np.zeros((4, 2)))


@given(st.integers(0, 2**32 - 1))
def test_permutation_equivariance(seed):
    rng = make_rng(seed)
    A = random_graph(rng, 5, ensure_edge=False)
    X = rng.normal(size=(5, 3))
    W0, W1 = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    perm = rng.permutation(5)
    P = np.eye(5)[perm]
    Z = gae.gae_encode(gae.GAEModel(W0, W1, gae.normalize_adjacency(A)), X)
    Ap = P @ A @ P.T
    Zp = gae.gae_encode(gae.GAEModel(W0, W1, gae.normalize_adjacency(Ap)), P @ X)
    np.testing.assert_allclose(Zp, P @ Z, rtol=0, atol=1e-12)
    A_hat = gae.gae_decode(Z)
    assert np.array_equal(A_hat, A_hat.T)
    assert np.all((A_hat > 0) & (A_hat < 1))


def test_decode_examples():
    assert np.all(gae.gae_decode(np.zeros((3, 2))) == 0.5)
    Z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    A_hat = gae.gae_decode(Z)
    assert A_hat[0, 1] == pytest.approx(0.731059, abs=1e-6)
    assert A_hat[0, 2] == 0.5
    with pytest.raises(NumericError):
        gae.gae_decode(np.array([[np.nan]]))


@given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_decode_symmetric_open_interval(n, k, seed):
    Z = make_rng(seed).normal(scale=5.0, size=(n, k))
    A_hat = gae.gae_decode(Z)
    assert np.array_equal(A_hat, A_hat.T)
    assert np.all((A_hat > 0) & (A_hat < 1))


def test_bce_examples():
    A = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]], dtype=float)
    near = np.where(A == 1, 1 - 1e-12, 1e-12)
    assert gae.reconstruction_bce(A, near) < 1e-10
    assert gae.reconstruction_bce(A, np.full((3, 3), 0.5), pos_weight=1.0) == pytest.approx(math.log(2), rel=1e-14)
    assert gae.default_pos_weight(A) == pytest.approx(4 / 2)
    with pytest.raises(DomainError):
        gae.default_pos_weight(np.zeros((3, 3)))


def test_logit_bce_matches_probability_form_and_stays_precise():
    rng = make_rng(9)
    A = random_graph(rng, 6)
    logits = rng.normal(size=(6, 6))
    logits = logits + logits.T
    assert gae.logit_bce(A, logits) == pytest.approx(gae.reconstruction_bce(A, 1 / (1 + np.exp(-logits))), rel=1e-12)
    # far in the saturated tail the probability form collapses, the logit form does not
    far = np.full((2, 2), 40.0)
    assert gae.logit_bce(np.zeros((2, 2)), far, pos_weight=1.0) == pytest.approx(40.0, rel=1e-12)


def flat_gae_loss(model, g):
    d, h = model.W0.shape
    k = model.W1.shape[1]

    def f(theta):
        m = gae.GAEModel(theta[: d * h].reshape(d, h), theta[d * h:].reshape(h, k), model.a_norm)
        loss, (g0, g1) = gae.gae_loss(m, g)
        return loss, np.concatenate([g0.ravel(), g1.ravel()])
    return f, np.concatenate([model.W0.ravel(), model.W1.ravel()])


def test_gradient_random_six_node_graph():
    rng = make_rng(21)
    A = random_graph(rng, 6)
    g = gae.GraphData(A, rng.normal(size=(6, 3)))
    f, theta = flat_gae_loss(model_for(A, 3, 4, 2, 22), g)
    assert grad_check(f, theta) < 1e-4


def test_training_examples():
    A = scenario.two_community_graph(seed=3)
    g = gae.GraphData(A, np.eye(20))
    a = gae.train_gae(g, epochs=50, seed=1)
    b = gae.train_gae(g, epochs=50, seed=1)
    assert np.array_equal(a.W0, b.W0) and np.array_equal(a.W1, b.W1)
    assert len(a.training_log) == 50
    assert a.training_log[-1][1] < a.training_log[0][1]
    with pytest.raises(DomainError):
        gae.train_gae(gae.GraphData(np.zeros((3, 3)), np.eye(3)))
    with pytest.raises(DomainError):
        gae.train_gae(g, epochs=0)


def test_graph_data_validation():
    with pytest.raises(ShapeError):
        gae.GraphData(np.zeros((3, 3)), np.zeros((2, 1)))
    with pytest.raises(DomainError):
        gae.GraphData(np.array([[0, 1], [0, 0]]), np.eye(2))


def trained_two_community(seed=0):
    A = scenario.two_community_graph(seed=seed)
    g = gae.GraphData(A, np.eye(20))
    return g, gae.train_gae(g, seed=seed)


def test_link_scores_examples():
    g, m = trained_two_community()
    (self_score,) = gae.link_scores(m, g, [(3, 3)])
    assert self_score >= 0.5
    assert gae.link_scores(m, g, [(2, 7)]) == gae.link_scores(m, g, [(7, 2)])
    iu = np.triu_indices(20, 1)
    pairs = list(zip(*iu))
    scores = np.array(gae.link_scores(m, g, pairs))
    edge = g.adjacency[iu] == 1
    assert scores[edge].mean() > scores[~edge].mean()
    with pytest.raises(DomainError):
        gae.link_scores(m, g, [(0, 20)])


def test_anomaly_score_examples():
    A = np.array([[0, 1], [1, 0]], dtype=float)
    g = gae.GraphData(A, np.eye(2))
    flat = gae.GAEModel(np.zeros((2, 1)), np.zeros((1, 1)), gae.normalize_adjacency(A))
    assert gae.node_anomaly_score(flat, g, 0) == pytest.approx(math.log(2), rel=1e-14)
    sharp = gae.GAEModel(np.full((2, 1), 10.0), np.full((1, 1), 10.0), gae.normalize_adjacency(A))
    assert gae.node_anomaly_score(sharp, g, 1) < 1e-6
    with pytest.raises(DomainError):
        gae.node_anomaly_score(flat, g, 2)


def test_planted_node_ranks_first():
    A = scenario.two_community_graph(seed=4)
    planted, v = scenario.plant_rewired_node(A, seed=4)
    g = gae.GraphData(planted, np.eye(20))
    scores = gae.node_anomaly_scores(gae.train_gae(g, seed=4), g)
    assert int(np.argmax(scores)) == v


def test_save_load_round_trip(tmp_path):
    g, m = trained_two_community(1)
    gae.save_gae(m, tmp_path / "g.model")
    assert (tmp_path / "g.model").read_text().startswith("APTSHIELD-GAE")
    loaded = gae.load_gae(tmp_path / "g.model")
    assert np.array_equal(gae.reconstruct(loaded, g), gae.reconstruct(m, g))
