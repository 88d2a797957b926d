"""Sparse autoencoder with adaptive, per-neuron sparsity targets.

The activity of a hidden unit is the median of its activations over a batch.
Units whose activity falls below a pivot get their sparsity target shrunk by
a suppression factor; units at or above the pivot get it raised by an
excitation offset. The pivot is either the mean activity or the antilog of a
weighted lower quartile of log activities. Targets enter the loss as the
usual KL sparsity penalty and are held constant when differentiating.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import modelio
from .errors import DomainError, NumericError, ShapeError
from .numerics import make_rng, sigmoid, uniform_init

MAGIC = "APTSHIELD-AE"
THRESHOLD_MODES = ("mean_phi", "quartile_v")


@dataclass(frozen=True)
class SparsityConfig:
    suppression: float = 0.5  # multiplies activity of units below the pivot, 0 < . < 1
    excitation: float = 0.1  # added to activity of units at/above the pivot, 0 < . < 0.5
    threshold_mode: str = "quartile_v"
    beta: float = 1e-3
    clamp_eps: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.suppression < 1.0:
            raise DomainError(f"suppression constant must lie in (0, 1), got {self.suppression}")
        if not 0.0 < self.excitation < 0.5:
            raise DomainError(f"excitation constant must lie in (0, 0.5), got {self.excitation}")
        if self.threshold_mode not in THRESHOLD_MODES:
            raise DomainError(f"threshold_mode must be one of {THRESHOLD_MODES}, got {self.threshold_mode!r}")
        if not self.beta >= 0.0:
            raise DomainError(f"beta must be non-negative, got {self.beta}")
        if not 0.0 < self.clamp_eps < 0.5:
            raise DomainError(f"clamp_eps must lie in (0, 0.5), got {self.clamp_eps}")


def neuron_activity(samples: Sequence[float]) -> float:
    """Median of one hidden unit's outputs over a batch."""
    z = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    m = z.size
    if m == 0:
        raise DomainError("neuron activity needs at least one sample")
    if m % 2 == 1:
        return float(z[(m + 1) // 2 - 1])
    return float((z[m // 2 - 1] + z[m // 2]) / 2.0)


def activity_vector(hidden: np.ndarray) -> np.ndarray:
    """Per-column :func:`neuron_activity` of a (samples x units) matrix."""
    hidden = np.asarray(hidden, dtype=np.float64)
    if hidden.ndim != 2 or hidden.shape[0] == 0:
        raise DomainError("activity needs a non-empty (samples x units) matrix")
    return np.array([neuron_activity(hidden[:, j]) for j in range(hidden.shape[1])])


def mean_activity(activity: Sequence[float]) -> float:
    a = np.asarray(activity, dtype=np.float64).ravel()
    if a.size == 0:
        raise DomainError("mean activity of an empty vector is undefined")
    return float(a.mean())


def quartile_threshold(values: Sequence[float]) -> float:
    """Antilog of the 3/4-1/4 weighted lower quartile of the log values.

    With k = (n + 1) / 4 the log-space pivot is
    0.75 * a'[floor(k)] + 0.25 * a'[ceil(k)] (1-based, clamped to [1, n]).
    """
    a = np.asarray(values, dtype=np.float64).ravel()
    if a.size == 0:
        raise DomainError("quartile threshold of an empty sequence is undefined")
    bad = a[~((a > 0.0) & (a < 1.0))]
    if bad.size:
        raise DomainError(f"quartile threshold needs values strictly inside (0, 1); got {bad[0]!r}")
    logs = np.sort(np.log(a))
    n = logs.size
    k = (n + 1) / 4.0
    lo = min(max(math.floor(k), 1), n)
    hi = min(max(math.ceil(k), 1), n)
    pivot = 0.75 * logs[lo - 1] + 0.25 * logs[hi - 1]
    return float(np.exp(pivot))


def pivot(activity: np.ndarray, mode: str) -> float:
    if mode == "mean_phi":
        return mean_activity(activity)
    if mode == "quartile_v":
        return quartile_threshold(activity)
    raise DomainError(f"unknown threshold mode {mode!r}")


def raw_sparsity_vector(activity: Sequence[float], threshold: float, cfg: SparsityConfig) -> np.ndarray:
    """Targets before clamping; ties with the threshold take the excitation branch."""
    if not np.isfinite(threshold):
        raise DomainError(f"threshold must be finite, got {threshold}")
    m = np.asarray(activity, dtype=np.float64)
    return np.where(m < threshold, cfg.suppression * m, m + cfg.excitation)


def sparsity_vector(activity: Sequence[float], threshold: float, cfg: SparsityConfig) -> np.ndarray:
    p = raw_sparsity_vector(activity, threshold, cfg)
    return np.clip(p, cfg.clamp_eps, 1.0 - cfg.clamp_eps)


def sparsity_targets(hidden: np.ndarray, cfg: SparsityConfig) -> np.ndarray:
    """Batch activities -> pivot -> clamped per-unit targets."""
    act = activity_vector(hidden)
    return sparsity_vector(act, pivot(act, cfg.threshold_mode), cfg)


@dataclass
class SparseAEModel:
    W_enc: np.ndarray
    b_enc: np.ndarray
    W_dec: np.ndarray
    b_dec: np.ndarray
    config: SparsityConfig = field(default_factory=SparsityConfig)
    norm_params: np.ndarray | None = None
    training_log: list[tuple[int, float]] = field(default_factory=list)

    def __post_init__(self):
        d_in, d_hidden = self.W_enc.shape
        if self.W_dec.shape != (d_hidden, d_in):
            raise ShapeError(f"decoder shape {self.W_dec.shape} does not mirror encoder {self.W_enc.shape}")
        if self.b_enc.shape != (d_hidden,) or self.b_dec.shape != (d_in,):
            raise ShapeError("bias lengths do not match layer widths")

    @property
    def d_in(self) -> int:
        return self.W_enc.shape[0]

    @property
    def d_hidden(self) -> int:
        return self.W_enc.shape[1]

    def params(self) -> np.ndarray:
        return np.concatenate([self.W_enc.ravel(), self.b_enc, self.W_dec.ravel(), self.b_dec])

    def with_params(self, theta: np.ndarray) -> "SparseAEModel":
        d, h = self.d_in, self.d_hidden
        theta = np.asarray(theta, dtype=np.float64)
        sizes = [d * h, h, h * d, d]
        if theta.size != sum(sizes):
            raise ShapeError(f"expected {sum(sizes)} parameters, got {theta.size}")
        a, b, c, _ = np.cumsum(sizes)
        return replace(
            self,
            W_enc=theta[:a].reshape(d, h).copy(),
            b_enc=theta[a:b].copy(),
            W_dec=theta[b:c].reshape(h, d).copy(),
            b_dec=theta[c:].copy(),
            training_log=list(self.training_log),
        )


def _as_input(model: SparseAEModel, X) -> np.ndarray:
    X = getattr(X, "matrix", X)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.d_in:
        raise ShapeError(f"input of shape {X.shape} does not match encoder input width {model.d_in}")
    return X


def ae_forward(model: SparseAEModel, X) -> tuple[np.ndarray, np.ndarray]:
    X = _as_input(model, X)
    hidden = sigmoid(X @ model.W_enc + model.b_enc)
    recon = sigmoid(hidden @ model.W_dec + model.b_dec)
    return hidden, recon


def encode(model: SparseAEModel, X) -> np.ndarray:
    return ae_forward(model, X)[0]


def _kl(p: np.ndarray, rho: np.ndarray) -> np.ndarray:
    return p * np.log(p / rho) + (1.0 - p) * np.log((1.0 - p) / (1.0 - rho))


def ae_loss(
    model: SparseAEModel,
    X,
    cfg: SparsityConfig | None = None,
    targets: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Reconstruction MSE plus beta-weighted KL penalty, with its exact gradient.

    ``targets`` fixes the sparsity vector; when omitted it is recomputed from
    this batch. Either way it is a constant of the objective. The gradient is
    returned flat, in :meth:`SparseAEModel.params` order.
    """
    cfg = cfg or model.config
    X = _as_input(model, X)
    n, d = X.shape
    if n == 0:
        raise DomainError("loss over an empty batch is undefined")
    hidden, recon = ae_forward(model, X)
    if targets is None:
        targets = sparsity_targets(hidden, cfg)
    p = np.asarray(targets, dtype=np.float64)

    diff = recon - X
    mse = float(np.mean(diff**2))
    rho_raw = hidden.mean(axis=0)
    rho = np.clip(rho_raw, cfg.clamp_eps, 1.0 - cfg.clamp_eps)
    penalty = float(np.sum(_kl(p, rho)))
    loss = mse + cfg.beta * penalty

    d_out = (2.0 / (n * d)) * diff * recon * (1.0 - recon)
    g_W_dec = hidden.T @ d_out
    g_b_dec = d_out.sum(axis=0)
    d_rho = (-p / rho + (1.0 - p) / (1.0 - rho)) * ((rho_raw == rho).astype(np.float64))
    d_hidden = d_out @ model.W_dec.T + cfg.beta * d_rho / n
    d_pre = d_hidden * hidden * (1.0 - hidden)
    g_W_enc = X.T @ d_pre
    g_b_enc = d_pre.sum(axis=0)
    grad = np.concatenate([g_W_enc.ravel(), g_b_enc, g_W_dec.ravel(), g_b_dec])
    return loss, grad


def init_model(d_in: int, d_hidden: int, cfg: SparsityConfig, seed: int) -> SparseAEModel:
    rng = make_rng(seed)
    W_enc = uniform_init(rng, d_in, d_hidden)
    W_dec = uniform_init(rng, d_hidden, d_in)
    return SparseAEModel(W_enc, np.zeros(d_hidden), W_dec, np.zeros(d_in), cfg)


def train_ae(
    X,
    cfg: SparsityConfig,
    d_hidden: int,
    epochs: int,
    batch_size: int | None = None,
    learning_rate: float = 0.5,
    seed: int = 0,
) -> SparseAEModel:
    """Plain (mini-)batch gradient descent on :func:`ae_loss`.

    The log holds one ``(epoch, loss)`` row per epoch, evaluated on the full
    input after the epoch's updates.
    """
    norm_params = getattr(X, "norm_params", None)
    X = np.asarray(getattr(X, "matrix", X), dtype=np.float64)
    if d_hidden < 1:
        raise DomainError(f"d_hidden must be at least 1, got {d_hidden}")
    if epochs < 1:
        raise DomainError(f"epochs must be at least 1, got {epochs}")
    if X.ndim != 2 or X.shape[0] == 0:
        raise DomainError("training needs a non-empty (samples x features) matrix")
    if learning_rate <= 0:
        raise DomainError(f"learning_rate must be positive, got {learning_rate}")
    n = X.shape[0]
    bs = n if not batch_size or batch_size >= n else int(batch_size)

    model = init_model(X.shape[1], d_hidden, cfg, seed)
    model.norm_params = None if norm_params is None else np.array(norm_params)
    shuffle_rng = make_rng(seed + 1)
    theta = model.params()
    log: list[tuple[int, float]] = []
    for epoch in range(1, epochs + 1):
        order = np.arange(n) if bs == n else shuffle_rng.permutation(n)
        for start in range(0, n, bs):
            batch = X[order[start : start + bs]]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grad = ae_loss(model.with_params(theta), batch, cfg)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise NumericError(f"non-finite loss or gradient during epoch {epoch}")
            with np.errstate(over="ignore", invalid="ignore"):
                theta = theta - learning_rate * grad
            if not np.all(np.isfinite(theta)):
                raise NumericError(f"parameters diverged during epoch {epoch}")
        with np.errstate(over="ignore", invalid="ignore"):
            epoch_loss, _ = ae_loss(model.with_params(theta), X, cfg)
        if not np.isfinite(epoch_loss):
            raise NumericError(f"non-finite loss at the end of epoch {epoch}")
        log.append((epoch, float(epoch_loss)))
    trained = model.with_params(theta)
    trained.training_log = log
    return trained


def save_ae(model: SparseAEModel, path) -> None:
    cfg = model.config
    fields = {
        "d_in": model.d_in,
        "d_hidden": model.d_hidden,
        "suppression": repr(cfg.suppression),
        "excitation": repr(cfg.excitation),
        "threshold_mode": cfg.threshold_mode,
        "beta": repr(cfg.beta),
        "clamp_eps": repr(cfg.clamp_eps),
        "has_norm_params": int(model.norm_params is not None),
    }
    arrays = {"W_enc": model.W_enc, "b_enc": model.b_enc, "W_dec": model.W_dec, "b_dec": model.b_dec}
    if model.norm_params is not None:
        arrays["norm_params"] = model.norm_params
    modelio.write_container(path, MAGIC, fields, arrays)


def load_ae(path) -> SparseAEModel:
    fields, arrays = modelio.read_container(path, MAGIC)
    cfg = SparsityConfig(
        suppression=float(fields["suppression"]),
        excitation=float(fields["excitation"]),
        threshold_mode=fields["threshold_mode"],
        beta=float(fields["beta"]),
        clamp_eps=float(fields["clamp_eps"]),
    )
    norm = arrays.get("norm_params") if fields.get("has_norm_params") == "1" else None
    return SparseAEModel(
        arrays["W_enc"], arrays["b_enc"].ravel(), arrays["W_dec"], arrays["b_dec"].ravel(), cfg, norm
    )
