"""Dense float64 numeric kernel: shape-checked linear algebra, LeakyReLU,
optimizers, seeded random streams and finite-difference oracles.

All arrays are 64-bit floats and every operation validates shapes instead of
broadcasting.  All randomness in the package flows through :func:`rng_stream`;
nothing touches the global numpy state.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NonFiniteGradientError, ShapeMismatchError

Vector = np.ndarray
Matrix = np.ndarray


def as_f64(x, name: str = "array") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _require_vector(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeMismatchError(f"{name} must be 1-d, got shape {v.shape}")
    return v


def _require_matrix(m, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2-d, got shape {m.shape}")
    return m


def gemv(m: Matrix, v: Vector) -> Vector:
    """Matrix-vector product with explicit conformance check."""
    m = _require_matrix(m, "m")
    v = _require_vector(v, "v")
    if m.shape[1] != v.shape[0]:
        raise ShapeMismatchError(f"gemv: {m.shape} x {v.shape}")
    return m @ v


def dot(a: Vector, b: Vector) -> float:
    a = _require_vector(a, "a")
    b = _require_vector(b, "b")
    if a.shape != b.shape:
        raise ShapeMismatchError(f"dot: {a.shape} vs {b.shape}")
    return float(a @ b)


def axpy(alpha: float, x: Vector, y: Vector) -> Vector:
    """alpha * x + y."""
    x = _require_vector(x, "x")
    y = _require_vector(y, "y")
    if x.shape != y.shape:
        raise ShapeMismatchError(f"axpy: {x.shape} vs {y.shape}")
    return alpha * x + y


def leaky_relu(x: np.ndarray, slope: float = 0.1) -> np.ndarray:
    """Elementwise x if x > 0 else slope * x.  At exactly 0 the slope branch applies."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"slope must be in (0, 1), got {slope}")
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0.0, x, slope * x)


def leaky_relu_grad(x: np.ndarray, slope: float = 0.1) -> np.ndarray:
    """Elementwise derivative, 1 where x > 0 else slope (slope at the kink)."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"slope must be in (0, 1), got {slope}")
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0.0, 1.0, slope)


# ---------------------------------------------------------------------------
# optimizers


@dataclass
class OptimState:
    """Per-parameter optimizer state.

    ``kind`` is ``"sgd"`` (plain step) or ``"adam"`` (bias-corrected adaptive
    moments).  Moment accumulators are allocated on first use and must keep the
    parameter's shape afterwards.
    """

    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")


def sgd_state(lr: float) -> OptimState:
    return OptimState(kind="sgd", lr=lr)


def adam_state(lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> OptimState:
    return OptimState(kind="adam", lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def opt_step(state: OptimState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """One deterministic update; returns the new parameters, mutating ``state``."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ShapeMismatchError(f"opt_step: params {params.shape} vs grads {grads.shape}")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradientError("gradient contains NaN or infinity")
    state.step_count += 1
    if state.kind == "sgd":
        return params - state.lr * grads
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    if state.m.shape != params.shape:
        raise ShapeMismatchError(
            f"opt_step: accumulator {state.m.shape} vs params {params.shape}"
        )
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.step_count)
    v_hat = state.v / (1.0 - state.beta2 ** state.step_count)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# randomness


def rng_stream(seed: int, label: str) -> np.random.Generator:
    """Independent reproducible generator for (seed, label).

    The label is hashed with SHA-256 so streams are stable across platforms
    and Python hash randomization.
    """
    digest = hashlib.sha256(f"{seed}\x1f{label}".encode("utf-8")).digest()
    entropy = int.from_bytes(digest[:16], "little")
    return np.random.default_rng(np.random.SeedSequence(entropy))


# ---------------------------------------------------------------------------
# finite differences


def finite_diff(f: Callable[[np.ndarray], float], p: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if h <= 0:
        raise ValueError("h must be > 0")
    p = np.asarray(p, dtype=np.float64)
    grad = np.zeros_like(p)
    flat = grad.reshape(-1)
    pf = p.copy().reshape(-1)
    for i in range(pf.size):
        orig = pf[i]
        pf[i] = orig + h
        up = f(pf.reshape(p.shape))
        pf[i] = orig - h
        down = f(pf.reshape(p.shape))
        pf[i] = orig
        flat[i] = (up - down) / (2.0 * h)
    return grad
