"""Dense float64 matrix helpers, activations, seeded randomness, gradient checks.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 and rank 2.
Randomness always flows through :func:`make_rng`, which wraps numpy's PCG64
bit generator. PCG64 output for a given seed is specified by the algorithm,
not by the platform, so streams are reproducible across machines.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import DomainError, NumericError, ShapeError

Matrix = np.ndarray
Rng = np.random.Generator

# Largest double below 1 and smallest positive double; keeps sigmoid strictly inside (0, 1).
_SIG_HI = np.nextafter(1.0, 0.0)
_SIG_LO = np.nextafter(0.0, 1.0)

ACTIVATIONS = ("sigmoid", "relu", "identity")


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> Matrix:
    """Coerce ``data`` to a 2-D float64 array, optionally checking its shape."""
    m = np.array(data, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1) if m.size else m.reshape(0, 0)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got array of rank {m.ndim}")
    if rows is not None and m.shape[0] != rows:
        raise ShapeError(f"expected {rows} rows, got shape {m.shape}")
    if cols is not None and m.shape[1] != cols:
        raise ShapeError(f"expected {cols} columns, got shape {m.shape}")
    return m


def check_finite(m: np.ndarray, what: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{what} contains non-finite entries")
    return m


def matmul(a: Matrix, b: Matrix) -> Matrix:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        product = a @ b
    return check_finite(product, "matmul result")


def sigmoid(x):
    return np.clip(expit(np.asarray(x, dtype=np.float64)), _SIG_LO, _SIG_HI)


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def apply_activation(m, kind: str = "sigmoid") -> np.ndarray:
    if kind == "sigmoid":
        return sigmoid(m)
    if kind == "relu":
        return relu(m)
    if kind == "identity":
        return np.array(m, dtype=np.float64)
    raise DomainError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def make_rng(seed: int) -> Rng:
    """Seeded PCG64 generator; the only source of randomness in the package."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def uniform_init(rng: Rng, fan_in: int, fan_out: int) -> Matrix:
    """Glorot-uniform weights in [-r, r] with r = sqrt(6 / (fan_in + fan_out))."""
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=(fan_in, fan_out))


def grad_check(
    loss_fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    params: Sequence[float],
    eps: float = 1e-5,
) -> float:
    """Compare an analytic gradient against central finite differences.

    ``loss_fn`` maps a flat parameter vector to ``(loss, gradient)``. Returns
    the largest per-coordinate error, scaled by
    ``max(1, |analytic|, |numeric|)``.
    """
    if eps <= 0:
        raise DomainError("eps must be positive")
    theta = np.array(params, dtype=np.float64).ravel()
    loss, analytic = loss_fn(theta.copy())
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    if not np.isfinite(loss):
        raise NumericError("loss is not finite at the base point")
    if analytic.shape != theta.shape:
        raise ShapeError(f"gradient shape {analytic.shape} != parameter shape {theta.shape}")

    worst = 0.0
    for i in range(theta.size):
        step = np.zeros_like(theta)
        step[i] = eps
        up, _ = loss_fn(theta + step)
        down, _ = loss_fn(theta - step)
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(f"loss is not finite when perturbing coordinate {i}")
        numeric = (up - down) / (2.0 * eps)
        scale = max(1.0, abs(analytic[i]), abs(numeric))
        worst = max(worst, abs(analytic[i] - numeric) / scale)
    return worst
