"""Per-primitive linear classifiers and their probability calibration.

Primitives are represented as separating hyperplanes with the bias folded in
as the last coordinate (paired with an implicit constant +1 feature).  They
are trained one-vs-all with a Pegasos-style stochastic subgradient SVM and
optionally calibrated with a sigmoid fit so scores can be read as
probabilities.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    DegenerateFeaturesError,
    InsufficientExamplesError,
    NoConvergenceError,
    ShapeMismatchError,
    SingleClassError,
)
from .numcore import rng_stream

__all__ = [
    "Classifier",
    "PrimitiveBank",
    "PlattParams",
    "SvmConfig",
    "BankConfig",
    "train_linear_svm",
    "svm_objective",
    "train_primitive_bank",
    "calibration_holdout",
    "calibrate_bank",
    "platt_fit",
    "platt_apply",
    "platt_apply_batch",
]


@dataclass(frozen=True)
class Classifier:
    """A (D+1)-dimensional hyperplane; ``weights[-1]`` is the bias."""

    weights: np.ndarray
    source: str = "svm-primitive"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.shape[0] < 2:
            raise ShapeMismatchError(f"classifier weights must be 1-d of length >= 2, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("classifier weights contain non-finite values")
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        """Feature dimension D (weights length minus the bias)."""
        return self.weights.shape[0] - 1

    def decision(self, features: np.ndarray) -> np.ndarray:
        """Raw scores for an N x D feature matrix (or a single D vector)."""
        x = np.asarray(features, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ShapeMismatchError(f"features have dim {x.shape[-1]}, classifier wants {self.dim}")
        return x @ self.weights[:-1] + self.weights[-1]


@dataclass(frozen=True)
class PlattParams:
    """Sigmoid calibration p = 1 / (1 + exp(a*s + b)); a < 0 when larger raw
    scores mean the positive class."""

    a: float
    b: float


@dataclass
class SvmConfig:
    lam: float = 1e-4
    epochs: int = 10


@dataclass
class BankConfig:
    svm: SvmConfig = field(default_factory=SvmConfig)
    min_pos: int = 5
    min_neg: int = 5
    calibration_fraction: float = 0.1
    seed: int = 0


@dataclass
class PrimitiveBank:
    """Ordered map primitive name -> classifier, all of one dimensionality."""

    d: int
    names: tuple[str, ...]
    classifiers: dict[str, Classifier]
    platt: dict[str, PlattParams] = field(default_factory=dict)
    config_digest: str = ""
    dataset_digest: str = ""

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError("primitive names must be unique")
        for name in self.names:
            clf = self.classifiers[name]
            if clf.dim != self.d:
                raise ShapeMismatchError(
                    f"classifier {name!r} has dim {clf.dim}, bank wants {self.d}"
                )

    def __getitem__(self, name: str) -> Classifier:
        return self.classifiers[name]

    def __contains__(self, name: str) -> bool:
        return name in self.classifiers


# ---------------------------------------------------------------------------
# linear SVM (Pegasos-style stochastic subgradient, final iterate)


def svm_objective(features: np.ndarray, labels: np.ndarray, w: np.ndarray, b: float, lam: float) -> float:
    """Mean hinge loss plus (lam/2)*||w||^2; the bias is unregularized."""
    margins = labels * (features @ w + b)
    hinge = np.maximum(0.0, 1.0 - margins)
    return float(hinge.mean() + 0.5 * lam * (w @ w))


def train_linear_svm(
    features: np.ndarray,
    labels: np.ndarray,
    lam: float = 1e-4,
    epochs: int = 10,
    rng: np.random.Generator | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
    source: str = "svm-primitive",
) -> Classifier:
    """Hinge + (lam/2)*||w||^2 via stochastic subgradient, step 1/(lam*t).

    The bias is excluded from the regularizer and follows a plain 1/t step.
    One epoch is a seeded shuffled pass over all rows.  The returned weights
    are the iterate average over the last half of the epochs (suffix
    averaging), which is far more stable than the final iterate at small lam;
    ``on_epoch`` receives the full-data objective of that same suffix-averaged
    iterate after each epoch.
    """
    if lam <= 0:
        raise ValueError("lam must be > 0")
    if rng is None:
        raise ValueError("rng is required")
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ShapeMismatchError(f"features {x.shape} vs labels {y.shape}")
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise ValueError("labels must be +/-1")
    if np.all(y == y[0]):
        raise SingleClassError("both classes are required to fit an SVM")
    if np.all(x == x[0]):
        raise DegenerateFeaturesError(
            "all feature rows are identical but labels conflict"
        )

    n, d = x.shape
    w = np.zeros(d)
    b = 0.0
    t = 0
    epoch_w_sums: list[np.ndarray] = []
    epoch_b_sums: list[float] = []

    def suffix_average(upto: int) -> tuple[np.ndarray, float]:
        k = (upto + 1) // 2  # average over the last ceil(half) epochs
        w_avg = np.sum(epoch_w_sums[upto - k:upto], axis=0) / (k * n)
        b_avg = float(np.sum(epoch_b_sums[upto - k:upto])) / (k * n)
        return w_avg, b_avg

    for epoch in range(epochs):
        w_sum = np.zeros(d)
        b_sum = 0.0
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            margin = y[i] * (x[i] @ w + b)
            w *= 1.0 - 1.0 / t
            if margin < 1.0:
                w += (eta * y[i]) * x[i]
                b += y[i] / t
            w_sum += w
            b_sum += b
        epoch_w_sums.append(w_sum)
        epoch_b_sums.append(b_sum)
        if on_epoch is not None:
            w_avg, b_avg = suffix_average(epoch + 1)
            on_epoch(epoch, svm_objective(x, y, w_avg, b_avg, lam))
    w_avg, b_avg = suffix_average(epochs)
    return Classifier(np.concatenate([w_avg, [b_avg]]), source=source)


def _signed_labels(column: np.ndarray) -> np.ndarray:
    return np.where(column, 1.0, -1.0)


def calibration_holdout(config: BankConfig, train_indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split training image indices into (svm fit, calibration holdout).

    The holdout is the tail of a seeded shuffle, so training and calibration
    derive the same split from the same config.
    """
    idx = np.asarray(train_indices)
    rng = rng_stream(config.seed, "calibration-holdout")
    shuffled = idx[rng.permutation(idx.shape[0])]
    n_hold = max(1, int(round(config.calibration_fraction * idx.shape[0])))
    return shuffled[:-n_hold], shuffled[-n_hold:]


def train_primitive_bank(dataset, names, config: BankConfig, train_indices) -> PrimitiveBank:
    """One SVM per primitive over the training split minus the calibration holdout."""
    fit_idx, _ = calibration_holdout(config, train_indices)
    name_to_col = {n: j for j, n in enumerate(dataset.primitives)}
    classifiers: dict[str, Classifier] = {}
    for name in names:
        col = dataset.labels[fit_idx, name_to_col[name]]
        n_pos = int(col.sum())
        n_neg = int(col.shape[0] - n_pos)
        if n_pos < config.min_pos or n_neg < config.min_neg:
            raise InsufficientExamplesError(
                f"primitive {name!r} has {n_pos} positives / {n_neg} negatives, "
                f"needs {config.min_pos}/{config.min_neg}"
            )
        classifiers[name] = train_linear_svm(
            dataset.features[fit_idx],
            _signed_labels(col),
            lam=config.svm.lam,
            epochs=config.svm.epochs,
            rng=rng_stream(config.seed, f"svm:{name}"),
        )
    digest_src = json.dumps(
        {"lam": config.svm.lam, "epochs": config.svm.epochs, "seed": config.seed,
         "calibration_fraction": config.calibration_fraction},
        sort_keys=True,
    )
    return PrimitiveBank(
        d=dataset.features.shape[1],
        names=tuple(names),
        classifiers=classifiers,
        config_digest=hashlib.sha256(digest_src.encode()).hexdigest(),
        dataset_digest=dataset.digest,
    )


def calibrate_bank(dataset, bank: PrimitiveBank, config: BankConfig, train_indices) -> PrimitiveBank:
    """Fit per-primitive sigmoid calibration on the held-out calibration images."""
    _, hold_idx = calibration_holdout(config, train_indices)
    name_to_col = {n: j for j, n in enumerate(dataset.primitives)}
    platt: dict[str, PlattParams] = {}
    for name in bank.names:
        scores = bank[name].decision(dataset.features[hold_idx])
        labels = _signed_labels(dataset.labels[hold_idx, name_to_col[name]])
        platt[name] = platt_fit(scores, labels)
    return PrimitiveBank(
        d=bank.d,
        names=bank.names,
        classifiers=dict(bank.classifiers),
        platt=platt,
        config_digest=bank.config_digest,
        dataset_digest=bank.dataset_digest,
    )


# ---------------------------------------------------------------------------
# Platt calibration: p = 1 / (1 + exp(a*s + b))


def platt_fit(
    scores: np.ndarray,
    labels: np.ndarray,
    max_iter: int = 100,
    tol: float = 1e-10,
) -> PlattParams:
    """Regularized maximum-likelihood sigmoid fit (Newton with backtracking).

    Targets use the standard prior-smoothed values (n+1)/(n+2) and 1/(n+2) so
    fitted probabilities stay inside (0, 1).
    """
    raw = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if raw.shape != y.shape or raw.ndim != 1:
        raise ShapeMismatchError(f"scores {raw.shape} vs labels {y.shape}")
    pos = y > 0
    n1 = int(pos.sum())
    n0 = int(raw.shape[0] - n1)
    if n1 == 0 or n0 == 0:
        raise SingleClassError("calibration requires both classes")

    # fit on standardized scores for conditioning; A is rescaled on return
    scale = float(np.std(raw))
    if scale == 0.0 or not np.isfinite(scale):
        scale = 1.0
    s = raw / scale

    t = np.where(pos, (n1 + 1.0) / (n1 + 2.0), 1.0 / (n0 + 2.0))
    a = 0.0
    b = float(np.log((n0 + 1.0) / (n1 + 1.0)))
    ridge = 1e-12

    def nll(a_: float, b_: float) -> float:
        f = a_ * s + b_
        # t*f + log(1 + exp(-f)) computed stably for either sign of f
        return float(np.sum(np.maximum(f, 0.0) - (1.0 - t) * f + np.log1p(np.exp(-np.abs(f)))))

    fval = nll(a, b)
    for _ in range(max_iter):
        f = a * s + b
        ef = np.exp(-np.abs(f))
        p = np.where(f >= 0.0, ef / (1.0 + ef), 1.0 / (1.0 + ef))
        d1 = t - p
        d2 = p * (1.0 - p)
        g1 = float(np.sum(s * d1))
        g2 = float(np.sum(d1))
        if max(abs(g1), abs(g2)) < tol:
            return PlattParams(a=a / scale, b=b)
        h11 = float(np.sum(s * s * d2)) + ridge
        h22 = float(np.sum(d2)) + ridge
        h12 = float(np.sum(s * d2))
        det = h11 * h22 - h12 * h12
        da = -(h22 * g1 - h12 * g2) / det
        db = -(-h12 * g1 + h11 * g2) / det
        predicted = g1 * da + g2 * db  # negative for a descent direction
        if abs(predicted) < 1e-12 * (1.0 + abs(fval)):
            # decrease is below float measurability; take the Newton step as is
            a += da
            b += db
            fval = nll(a, b)
            continue
        step = 1.0
        while step >= 1e-10:
            cand = nll(a + step * da, b + step * db)
            if cand < fval + 1e-4 * step * predicted or cand <= fval:
                a += step * da
                b += step * db
                fval = cand
                break
            step *= 0.5
        else:
            raise NoConvergenceError("calibration line search failed")
    raise NoConvergenceError(f"calibration did not converge in {max_iter} iterations")


def platt_apply(params: PlattParams, score: float) -> float:
    """Calibrated probability, strictly inside (0, 1)."""
    return float(platt_apply_batch(params, np.asarray([score]))[0])


def platt_apply_batch(params: PlattParams, scores: np.ndarray) -> np.ndarray:
    f = params.a * np.asarray(scores, dtype=np.float64) + params.b
    p = np.where(f >= 0.0, np.exp(-np.maximum(f, 0.0)) / (1.0 + np.exp(-np.abs(f))),
                 1.0 / (1.0 + np.exp(-np.abs(f))))
    # keep products of calibrated probabilities away from exact 0/1
    return np.clip(p, 1e-12, 1.0 - 1e-12)
