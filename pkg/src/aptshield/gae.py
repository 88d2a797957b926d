"""Graph autoencoder: two-layer GCN encoder and inner-product decoder.

Embeddings are ``Z = Ã · relu(Ã · X · W0) · W1`` with Ã the symmetric
renormalised adjacency D^-1/2 (A + I) D^-1/2. The decoder reconstructs edge
probabilities as ``sigmoid(Z Zᵀ)``. Training minimises class-weighted binary
cross-entropy over all off-diagonal pairs with full-batch gradient descent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import modelio
from .errors import DomainError, NumericError, ShapeError
from .numerics import make_rng, relu, sigmoid, uniform_init

MAGIC = "APTSHIELD-GAE"


def _check_adjacency(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DomainError(f"adjacency must be square, got shape {A.shape}")
    if not np.all((A == 0.0) | (A == 1.0)):
        raise DomainError("adjacency entries must be 0 or 1")
    if not np.array_equal(A, A.T):
        raise DomainError("adjacency must be symmetric")
    if np.any(np.diag(A) != 0.0):
        raise DomainError("adjacency must have a zero diagonal")
    return A


@dataclass
class GraphData:
    adjacency: np.ndarray
    features: np.ndarray
    node_ids: list[str] | None = None

    def __post_init__(self):
        self.adjacency = _check_adjacency(self.adjacency)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] != self.adjacency.shape[0]:
            raise ShapeError(
                f"feature matrix {self.features.shape} does not have one row per node "
                f"({self.adjacency.shape[0]} nodes)"
            )

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return int(np.triu(self.adjacency, 1).sum())


def normalize_adjacency(A) -> np.ndarray:
    A = _check_adjacency(A)
    A_loop = A + np.eye(A.shape[0])
    inv_sqrt = 1.0 / np.sqrt(A_loop.sum(axis=1))
    return A_loop * inv_sqrt[:, None] * inv_sqrt[None, :]


@dataclass
class GAEModel:
    W0: np.ndarray
    W1: np.ndarray
    a_norm: np.ndarray
    training_log: list[tuple[int, float]] = field(default_factory=list)

    def __post_init__(self):
        if self.W0.shape[1] != self.W1.shape[0]:
            raise ShapeError(f"layer shapes {self.W0.shape} and {self.W1.shape} do not chain")
        if self.a_norm.shape[0] != self.a_norm.shape[1]:
            raise ShapeError("normalized adjacency must be square")


def gae_encode(model: GAEModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape != (model.a_norm.shape[0], model.W0.shape[0]):
        raise ShapeError(
            f"features of shape {X.shape} do not fit {model.a_norm.shape[0]} nodes "
            f"x {model.W0.shape[0]} inputs"
        )
    hidden = relu(model.a_norm @ X @ model.W0)
    return model.a_norm @ hidden @ model.W1


def gae_decode(Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    if not np.all(np.isfinite(Z)):
        raise NumericError("embedding contains non-finite entries")
    return sigmoid(Z @ Z.T)


def default_pos_weight(A) -> float:
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    off = ~np.eye(n, dtype=bool)
    pos = A[off].sum()
    if pos == 0:
        raise DomainError("graph has no edges; positive-class weight is undefined")
    return float((off.sum() - pos) / pos)


def reconstruction_bce(A, A_hat, pos_weight: float | None = None) -> float:
    """Weighted BCE over off-diagonal pairs (no gradient)."""
    A = np.asarray(A, dtype=np.float64)
    A_hat = np.asarray(A_hat, dtype=np.float64)
    if A.shape != A_hat.shape:
        raise ShapeError(f"adjacency {A.shape} and reconstruction {A_hat.shape} differ in shape")
    if pos_weight is None:
        pos_weight = default_pos_weight(A)
    off = ~np.eye(A.shape[0], dtype=bool)
    terms = pos_weight * A * np.log(A_hat) + (1.0 - A) * np.log(1.0 - A_hat)
    return float(-terms[off].mean())


def logit_bce(A, logits, pos_weight: float | None = None) -> float:
    """:func:`reconstruction_bce` evaluated from the pre-sigmoid scores.

    ``log(sigmoid(x)) = -log(1 + e^-x)`` keeps full precision where the
    probability form rounds ``1 - A_hat`` to a handful of ulps.
    """
    A = np.asarray(A, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    if A.shape != logits.shape:
        raise ShapeError(f"adjacency {A.shape} and logits {logits.shape} differ in shape")
    if pos_weight is None:
        pos_weight = default_pos_weight(A)
    off = ~np.eye(A.shape[0], dtype=bool)
    terms = pos_weight * A * np.logaddexp(0.0, -logits) + (1.0 - A) * np.logaddexp(0.0, logits)
    return float(terms[off].mean())


def gae_loss(model: GAEModel, g: GraphData, pos_weight: float | None = None):
    """Loss and exact gradients ``(loss, (dW0, dW1))`` through decoder and both GCN layers."""
    A, X, An = g.adjacency, g.features, model.a_norm
    if An.shape != A.shape:
        raise ShapeError("model was built for a graph of a different size")
    if pos_weight is None:
        pos_weight = default_pos_weight(A)
    n = A.shape[0]
    if n < 2:
        raise DomainError("loss needs at least two nodes")
    AX = An @ X
    pre = AX @ model.W0
    hidden = relu(pre)
    AH = An @ hidden
    Z = AH @ model.W1
    logits = Z @ Z.T
    A_hat = sigmoid(logits)
    loss = logit_bce(A, logits, pos_weight)

    n_off = n * (n - 1)
    g_logit = (-pos_weight * A * (1.0 - A_hat) + (1.0 - A) * A_hat) / n_off
    np.fill_diagonal(g_logit, 0.0)
    g_Z = (g_logit + g_logit.T) @ Z
    g_W1 = AH.T @ g_Z
    g_hidden = An.T @ g_Z @ model.W1.T
    g_pre = g_hidden * (pre > 0)
    g_W0 = AX.T @ g_pre
    return loss, (g_W0, g_W1)


def train_gae(
    g: GraphData,
    h: int = 16,
    k: int = 8,
    epochs: int = 200,
    learning_rate: float = 0.5,
    seed: int = 0,
) -> GAEModel:
    if g.n_edges == 0:
        raise DomainError("cannot train a graph autoencoder on a graph with no edges")
    if epochs < 1:
        raise DomainError(f"epochs must be at least 1, got {epochs}")
    if h < 1 or k < 1:
        raise DomainError("hidden and embedding widths must be positive")
    rng = make_rng(seed)
    d = g.features.shape[1]
    model = GAEModel(uniform_init(rng, d, h), uniform_init(rng, h, k), normalize_adjacency(g.adjacency))
    pos_weight = default_pos_weight(g.adjacency)
    log = []
    for epoch in range(1, epochs + 1):
        loss, (g0, g1) = gae_loss(model, g, pos_weight)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss during epoch {epoch}")
        log.append((epoch, float(loss)))
        model.W0 = model.W0 - learning_rate * g0
        model.W1 = model.W1 - learning_rate * g1
    model.training_log = log
    return model


def reconstruct(model: GAEModel, g: GraphData) -> np.ndarray:
    return gae_decode(gae_encode(model, g.features))


def link_scores(model: GAEModel, g: GraphData, pairs: Sequence[tuple[int, int]]) -> list[float]:
    A_hat = reconstruct(model, g)
    out = []
    for i, j in pairs:
        if not (0 <= i < g.n and 0 <= j < g.n):
            raise DomainError(f"node pair ({i}, {j}) is out of range for {g.n} nodes")
        out.append(float(A_hat[i, j]))
    return out


def node_anomaly_scores(model: GAEModel, g: GraphData) -> np.ndarray:
    """Unweighted mean BCE between each adjacency row and its reconstruction."""
    A = g.adjacency
    Z = gae_encode(model, g.features)
    if not np.all(np.isfinite(Z)):
        raise NumericError("embedding contains non-finite entries")
    logits = Z @ Z.T
    terms = A * np.logaddexp(0.0, -logits) + (1.0 - A) * np.logaddexp(0.0, logits)
    np.fill_diagonal(terms, 0.0)
    return terms.sum(axis=1) / max(g.n - 1, 1)


def node_anomaly_score(model: GAEModel, g: GraphData, i: int) -> float:
    if not 0 <= i < g.n:
        raise DomainError(f"node {i} is out of range for {g.n} nodes")
    return float(node_anomaly_scores(model, g)[i])


def save_gae(model: GAEModel, path) -> None:
    fields = {"d_in": model.W0.shape[0], "hidden": model.W0.shape[1], "embedding": model.W1.shape[1],
              "nodes": model.a_norm.shape[0]}
    modelio.write_container(path, MAGIC, fields, {"W0": model.W0, "W1": model.W1, "a_norm": model.a_norm})


def load_gae(path) -> GAEModel:
    _, arrays = modelio.read_container(path, MAGIC)
    return GAEModel(arrays["W0"], arrays["W1"], arrays["a_norm"])
