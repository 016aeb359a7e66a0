"""Globally pooled ranking metrics, baselines and evaluation drivers.

Metrics pool every (expression, image) pair of a protocol into one ranking so
rare expressions weigh in proportionally.  MAP uses a strict ordering with
ties broken by (expression id, image id); AUC is the Mann-Whitney statistic
with ties counted 0.5; EER linearly interpolates the ROC between adjacent
operating points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .algebra import CompositionNet, compose, score_batch
from .datakit import Dataset, expr_label
from .errors import (
    InsufficientExamplesError,
    MissingCalibrationError,
    NoPositivesError,
    SingleClassError,
    UnknownExpressionError,
    UnknownPrimitiveError,
)
from .exprlang import And, Expression, Not, Or, Primitive, random_cnf_from_clauses, unparse
from .numcore import rng_stream
from .primitives import (
    PlattParams,
    PrimitiveBank,
    SvmConfig,
    platt_apply_batch,
    train_linear_svm,
)

__all__ = [
    "ScoredPair",
    "PairSet",
    "MetricsReport",
    "global_map",
    "global_auc",
    "global_eer",
    "baseline_chance",
    "baseline_supervised",
    "baseline_independent",
    "independent_probability",
    "ComposedScorer",
    "IndependentScorer",
    "SupervisedScorer",
    "ChanceScorer",
    "evaluate",
    "complexity_sweep",
    "SweepRow",
]


@dataclass(frozen=True)
class ScoredPair:
    expr_id: int
    image_id: int
    score: float
    label: bool


class PairSet:
    """Column-oriented set of scored (expression, image) pairs."""

    def __init__(self, expr_ids, image_ids, scores, labels):
        self.expr_ids = np.asarray(expr_ids, dtype=np.int64)
        self.image_ids = np.asarray(image_ids, dtype=np.int64)
        self.scores = np.asarray(scores, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=bool)
        n = self.scores.shape[0]
        if not (self.expr_ids.shape[0] == self.image_ids.shape[0] == self.labels.shape[0] == n):
            raise ValueError("pair column lengths disagree")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("pair scores must be finite")

    def __len__(self) -> int:
        return self.scores.shape[0]

    @classmethod
    def from_pairs(cls, pairs: Iterable[ScoredPair]) -> "PairSet":
        rows = list(pairs)
        return cls(
            [p.expr_id for p in rows],
            [p.image_id for p in rows],
            [p.score for p in rows],
            [p.label for p in rows],
        )


def _as_pairset(pairs) -> PairSet:
    return pairs if isinstance(pairs, PairSet) else PairSet.from_pairs(pairs)


@dataclass
class MetricsReport:
    map: float
    auc: float
    eer: float
    pairs: int
    positives: int

    def to_dict(self) -> dict:
        return {"map": self.map, "auc": self.auc, "eer": self.eer,
                "pairs": self.pairs, "positives": self.positives}


# ---------------------------------------------------------------------------
# metrics


def global_map(pairs) -> float:
    """Average precision of the pooled descending-score ranking.

    Ties are broken by ascending (expression id, image id), making the
    ranking a documented strict order.
    """
    ps = _as_pairset(pairs)
    n_pos = int(ps.labels.sum())
    if n_pos == 0:
        raise NoPositivesError("average precision needs at least one positive pair")
    order = np.lexsort((ps.image_ids, ps.expr_ids, -ps.scores))
    hits = ps.labels[order]
    ranks = np.arange(1, len(ps) + 1)
    precision_at_hit = np.cumsum(hits)[hits] / ranks[hits]
    return float(precision_at_hit.mean())


def global_auc(pairs) -> float:
    """Mann-Whitney statistic: P(score_pos > score_neg) with ties counted 0.5."""
    ps = _as_pairset(pairs)
    n_pos = int(ps.labels.sum())
    n_neg = len(ps) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("AUC needs both classes")
    _, inverse, counts = np.unique(ps.scores, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    starts = ends - counts
    avg_ranks = (starts + ends + 1) / 2.0  # mean of ranks start+1 .. end
    ranks = avg_ranks[inverse]
    pos_rank_sum = float(ranks[ps.labels].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _roc_points(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(fpr, fnr) at thresholds descending from above-max; one point per distinct score."""
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    tp = np.cumsum(sorted_labels)
    fp = np.cumsum(~sorted_labels)
    # keep only the last index of each run of equal scores
    boundary = np.nonzero(np.diff(sorted_scores))[0]
    keep = np.concatenate([boundary, [len(sorted_scores) - 1]])
    fpr = np.concatenate([[0.0], fp[keep] / n_neg])
    fnr = np.concatenate([[1.0], 1.0 - tp[keep] / n_pos])
    return fpr, fnr


def global_eer(pairs) -> float:
    """Error rate where FPR = FNR, linearly interpolated between ROC points."""
    ps = _as_pairset(pairs)
    n_pos = int(ps.labels.sum())
    if n_pos == 0 or n_pos == len(ps):
        raise SingleClassError("EER needs both classes")
    fpr, fnr = _roc_points(ps.scores, ps.labels)
    diff = fnr - fpr  # starts at +1, ends at -1 (or 0); find the sign change
    k = int(np.argmax(diff <= 0.0))
    if diff[k] == 0.0:
        return float(fpr[k])
    t = diff[k - 1] / (diff[k - 1] - diff[k])
    return float(fpr[k - 1] + t * (fpr[k] - fpr[k - 1]))


# ---------------------------------------------------------------------------
# scorers


class Scorer(Protocol):
    name: str

    def score_matrix(self, expr: Expression, features: np.ndarray) -> np.ndarray: ...


class ComposedScorer:
    """Scores with the classifier composed by the network."""

    def __init__(self, net: CompositionNet, bank: PrimitiveBank, *,
                 or_net: CompositionNet | None = None, renormalize: bool = False,
                 name: str = "composed"):
        self.net = net
        self.bank = bank
        self.or_net = or_net
        self.renormalize = renormalize
        self.name = name

    def score_matrix(self, expr: Expression, features: np.ndarray) -> np.ndarray:
        w, _ = compose(self.net, self.bank, expr, or_net=self.or_net,
                       renormalize=self.renormalize)
        return score_batch(w, features)


class IndependentScorer:
    """Probability rules over calibrated primitive scores (independence assumed)."""

    def __init__(self, bank: PrimitiveBank, platt: Mapping[str, PlattParams] | None = None,
                 name: str = "independent"):
        self.bank = bank
        self.platt = dict(platt) if platt is not None else dict(bank.platt)
        self.name = name

    def _leaf(self, name: str, features: np.ndarray) -> np.ndarray:
        if name not in self.bank:
            raise UnknownPrimitiveError(f"no classifier for primitive {name!r}")
        if name not in self.platt:
            raise MissingCalibrationError(f"primitive {name!r} has no calibration")
        return platt_apply_batch(self.platt[name], self.bank[name].decision(features))

    def _prob(self, expr: Expression, features: np.ndarray) -> np.ndarray:
        if isinstance(expr, Primitive):
            return self._leaf(expr.name, features)
        if isinstance(expr, Not):
            return 1.0 - self._prob(expr.child, features)
        pa = self._prob(expr.left, features)
        pb = self._prob(expr.right, features)
        if isinstance(expr, And):
            return pa * pb
        if isinstance(expr, Or):
            return pa + pb - pa * pb
        raise TypeError(f"not an expression node: {expr!r}")

    def score_matrix(self, expr: Expression, features: np.ndarray) -> np.ndarray:
        return self._prob(expr, features)


class SupervisedScorer:
    """Per-expression SVMs; defined only for the expressions it was trained on."""

    def __init__(self, classifiers: Mapping[Expression, object], name: str = "supervised"):
        self.classifiers = dict(classifiers)
        self.name = name

    def score_matrix(self, expr: Expression, features: np.ndarray) -> np.ndarray:
        if expr not in self.classifiers:
            raise UnknownExpressionError(f"no supervised classifier for {unparse(expr)}")
        return self.classifiers[expr].decision(features)


class ChanceScorer:
    """Uniform random scores, deterministic per seed and call order."""

    def __init__(self, seed: int, name: str = "chance"):
        self.rng = rng_stream(seed, "chance")
        self.name = name

    def score_matrix(self, expr: Expression, features: np.ndarray) -> np.ndarray:
        return self.rng.uniform(size=features.shape[0])


# ---------------------------------------------------------------------------
# baselines (spec-level operations behind the scorers)


def baseline_chance(pairs, rng: np.random.Generator) -> PairSet:
    """Same pairs rescored with uniform random values."""
    ps = _as_pairset(pairs)
    return PairSet(ps.expr_ids, ps.image_ids, rng.uniform(size=len(ps)), ps.labels)


def baseline_supervised(
    dataset: Dataset,
    expressions: Sequence[Expression],
    train_indices: np.ndarray,
    svm_config: SvmConfig | None = None,
    seed: int = 0,
    min_pos: int = 5,
    min_neg: int = 5,
) -> SupervisedScorer:
    """One SVM per expression on expression-level labels over the training split."""
    cfg = svm_config or SvmConfig()
    train_indices = np.asarray(train_indices)
    classifiers = {}
    for e in expressions:
        labels = expr_label(dataset, e)[train_indices]
        n_pos = int(labels.sum())
        n_neg = labels.shape[0] - n_pos
        if n_pos < min_pos or n_neg < min_neg:
            raise InsufficientExamplesError(
                f"expression {unparse(e)} has {n_pos} positives / {n_neg} negatives"
            )
        classifiers[e] = train_linear_svm(
            dataset.features[train_indices],
            np.where(labels, 1.0, -1.0),
            lam=cfg.lam,
            epochs=cfg.epochs,
            rng=rng_stream(seed, f"supervised:{unparse(e)}"),
            source="supervised-expression",
        )
    return SupervisedScorer(classifiers)


def independent_probability(bank: PrimitiveBank, platt: Mapping[str, PlattParams] | None,
                            expr: Expression, features: np.ndarray) -> float:
    """Probability of the expression for one image under the independence rules."""
    scorer = IndependentScorer(bank, platt)
    return float(scorer.score_matrix(expr, np.asarray(features, dtype=np.float64)[None, :])[0])


baseline_independent = independent_probability


# ---------------------------------------------------------------------------
# evaluation drivers


def evaluate(
    scorer,
    expressions: Sequence[Expression],
    dataset: Dataset,
    image_split: np.ndarray,
    macro: bool = False,
) -> MetricsReport:
    """Score every (expression, image) pair in the split and pool globally.

    ``macro=True`` instead averages per-expression metrics (expressions whose
    split lacks a class are skipped); provided for comparison only.
    """
    if len(expressions) == 0:
        raise ValueError("no expressions to evaluate")
    image_split = np.asarray(image_split)
    features = dataset.features[image_split]
    all_scores = []
    all_labels = []
    expr_ids = []
    for j, e in enumerate(expressions):
        all_scores.append(scorer.score_matrix(e, features))
        all_labels.append(expr_label(dataset, e)[image_split])
        expr_ids.append(np.full(len(image_split), j, dtype=np.int64))
    scores = np.concatenate(all_scores)
    labels = np.concatenate(all_labels)
    pairs = PairSet(
        np.concatenate(expr_ids),
        np.tile(image_split, len(expressions)),
        scores,
        labels,
    )
    if macro:
        per = []
        for j in range(len(expressions)):
            sel = pairs.expr_ids == j
            sub = PairSet(pairs.expr_ids[sel], pairs.image_ids[sel],
                          pairs.scores[sel], pairs.labels[sel])
            n_pos = int(sub.labels.sum())
            if n_pos == 0 or n_pos == len(sub):
                continue
            per.append((global_map(sub), global_auc(sub), global_eer(sub)))
        if not per:
            raise NoPositivesError("no expression had both classes in the split")
        arr = np.asarray(per)
        return MetricsReport(float(arr[:, 0].mean()), float(arr[:, 1].mean()),
                             float(arr[:, 2].mean()), len(pairs), int(labels.sum()))
    return MetricsReport(
        map=global_map(pairs),
        auc=global_auc(pairs),
        eer=global_eer(pairs),
        pairs=len(pairs),
        positives=int(labels.sum()),
    )


@dataclass
class SweepRow:
    scorer: str
    complexity: int
    report: MetricsReport


def sweep_expressions(
    clause_pool: Sequence[Expression],
    complexities: Sequence[int],
    per_complexity: int,
    seed: int,
) -> dict[int, list[Expression]]:
    """Deterministic CNF test sets per complexity, clauses drawn from the pool."""
    out: dict[int, list[Expression]] = {}
    for c in complexities:
        rng = rng_stream(seed, f"sweep:c={c}")
        exprs: list[Expression] = []
        seen: set = set()
        attempts = 0
        limit = min(per_complexity, math.comb(len(clause_pool), c)) if c <= len(clause_pool) else 0
        if limit == 0:
            raise ValueError(f"clause pool of {len(clause_pool)} cannot form complexity {c}")
        while len(exprs) < limit and attempts < 200 * per_complexity:
            attempts += 1
            e = random_cnf_from_clauses(clause_pool, c, rng)
            if e in seen:
                continue
            seen.add(e)
            exprs.append(e)
        out[c] = exprs
    return out


def complexity_sweep(
    scorers: Sequence,
    dataset: Dataset,
    clause_pool: Sequence[Expression],
    image_split: np.ndarray,
    complexities: Sequence[int] = (2, 4, 6, 8, 10),
    per_complexity: int = 100,
    seed: int = 0,
    forbidden: Iterable[Expression] | None = None,
) -> tuple[list[SweepRow], dict[int, list[Expression]]]:
    """Per-complexity reports for each scorer on generated CNF test sets.

    ``forbidden`` expressions (e.g. the finetuning set) must not appear in any
    generated test set.
    """
    exprs_by_c = sweep_expressions(clause_pool, complexities, per_complexity, seed)
    if forbidden is not None:
        banned = set(forbidden)
        for c, exprs in exprs_by_c.items():
            overlap = banned & set(exprs)
            if overlap:
                raise ValueError(
                    f"complexity-{c} test set overlaps a forbidden set: "
                    f"{[unparse(e) for e in sorted(overlap, key=unparse)][:3]}"
                )
    rows = []
    for scorer in scorers:
        for c in complexities:
            rows.append(SweepRow(
                scorer=scorer.name,
                complexity=c,
                report=evaluate(scorer, exprs_by_c[c], dataset, image_split),
            ))
    return rows, exprs_by_c
