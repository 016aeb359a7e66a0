"""Learning loop for the composition network.

The objective has three terms: hinge classification loss over sampled
(expression, image) pairs, an L2 penalty on the composed classifiers, and an
L2 penalty on the network weight matrices.  Batches hold up to 32 expressions
with 5 positive and 5 negative images each, sampled uniformly without
replacement; one epoch is one shuffled pass over all training expressions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .algebra import (
    ComposeGrads,
    CompositionNet,
    NetGrads,
    compose,
    compose_backward,
    score_batch,
)
from .datakit import Dataset, expr_label
from .errors import InsufficientExamplesError, NonFiniteLossError
from .exprlang import And, Expression, unparse, random_cnf_from_clauses
from .numcore import OptimState, adam_state, opt_step, rng_stream, sgd_state
from .primitives import Classifier, PrimitiveBank

__all__ = [
    "TrainConfig",
    "BatchItem",
    "TrainResult",
    "sample_batch",
    "hinge",
    "hinge_grad",
    "objective",
    "train",
    "finetune_cnf",
    "generate_finetune_cnfs",
]


@dataclass
class TrainConfig:
    alpha_fit: float = 1.0            # weight of the hinge term
    alpha_composed_l2: float = 1e-4   # weight of the composed-classifier L2 term
    alpha_param_l2: float = 1e-4      # weight of the network-weight L2 term
    lr: float = 1e-3
    optimizer: str = "adam"
    epochs_main: int = 50
    epochs_finetune: int = 10
    batch_expressions: int = 32
    pos_per_expr: int = 5
    neg_per_expr: int = 5
    seed: int = 0
    freeze_primitives: bool = True
    learn_or_net: bool = False
    select_best_epoch: bool = False
    finetune_expressions: int = 200
    finetune_complexity: int = 4

    def __post_init__(self):
        if min(self.alpha_fit, self.alpha_composed_l2, self.alpha_param_l2) < 0:
            raise ValueError("alpha weights must be >= 0")
        if min(self.batch_expressions, self.pos_per_expr, self.neg_per_expr,
               self.epochs_main, self.epochs_finetune) < 1:
            raise ValueError("counts must be >= 1")


@dataclass
class BatchItem:
    expr: Expression
    pos: np.ndarray  # image indices satisfying the expression
    neg: np.ndarray


@dataclass
class TrainResult:
    net: CompositionNet
    or_net: CompositionNet | None
    bank: PrimitiveBank
    history: list[dict]
    exprs: list[Expression] = field(default_factory=list)


def sample_batch(
    dataset: Dataset,
    exprs: Sequence[Expression],
    split_indices: np.ndarray,
    rng: np.random.Generator,
    pos_per_expr: int = 5,
    neg_per_expr: int = 5,
    label_cache: dict | None = None,
) -> list[BatchItem]:
    """Uniform without-replacement positives/negatives per expression."""
    split_indices = np.asarray(split_indices)
    items = []
    for e in exprs:
        if label_cache is not None and e in label_cache:
            labels = label_cache[e]
        else:
            labels = expr_label(dataset, e)
            if label_cache is not None:
                label_cache[e] = labels
        in_split = labels[split_indices]
        pos_pool = split_indices[in_split]
        neg_pool = split_indices[~in_split]
        if len(pos_pool) < pos_per_expr or len(neg_pool) < neg_per_expr:
            raise InsufficientExamplesError(
                f"expression {unparse(e)} has {len(pos_pool)} positives / "
                f"{len(neg_pool)} negatives in the split"
            )
        pos = rng.choice(pos_pool, size=pos_per_expr, replace=False)
        neg = rng.choice(neg_pool, size=neg_per_expr, replace=False)
        items.append(BatchItem(expr=e, pos=pos, neg=neg))
    return items


def hinge(s: float, y: float) -> float:
    """max(0, 1 - y*s)."""
    return max(0.0, 1.0 - y * s)


def hinge_grad(s: float, y: float) -> float:
    """Subgradient w.r.t. s: -y when 1 - y*s > 0, else 0 (0 at the kink)."""
    return -y if 1.0 - y * s > 0.0 else 0.0


@dataclass
class ObjectiveGrads:
    net: NetGrads
    or_net: NetGrads | None
    leaves: dict[str, np.ndarray]


def objective(
    net: CompositionNet,
    bank: PrimitiveBank,
    dataset: Dataset,
    batch: Sequence[BatchItem],
    config: TrainConfig,
    or_net: CompositionNet | None = None,
) -> tuple[float, ObjectiveGrads, dict]:
    """Batch loss and exact parameter gradients.

    loss = alpha_fit * mean_pairs(hinge)
         + (alpha_composed_l2 / 2) * mean_exprs ||w_e||^2
         + alpha_param_l2 * (||W1||^2 + ||W2||^2)            [biases excluded]
    """
    n_pairs = sum(len(item.pos) + len(item.neg) for item in batch)
    n_exprs = len(batch)
    grads = ObjectiveGrads(
        net=NetGrads.zeros_like(net),
        or_net=NetGrads.zeros_like(or_net) if or_net is not None else None,
        leaves={},
    )
    fit_sum = 0.0
    wnorm_sum = 0.0
    for item in batch:
        w_e, trace = compose(net, bank, item.expr, or_net=or_net)
        idx = np.concatenate([item.pos, item.neg])
        y = np.concatenate([np.ones(len(item.pos)), -np.ones(len(item.neg))])
        x = dataset.features[idx]
        s = score_batch(w_e, x)
        margins = 1.0 - y * s
        active = margins > 0.0
        fit_sum += float(margins[active].sum())
        wnorm_sum += float(w_e.weights @ w_e.weights)
        # d loss / d s, folded with the global averaging factors
        ds = np.where(active, -y, 0.0) * (config.alpha_fit / n_pairs)
        g_we = np.concatenate([x.T @ ds, [ds.sum()]])
        g_we += (config.alpha_composed_l2 / n_exprs) * w_e.weights
        contrib = compose_backward(net, trace, g_we, or_net=or_net)
        grads.net.add(contrib.net)
        if grads.or_net is not None:
            grads.or_net.add(contrib.or_net)
        if not config.freeze_primitives:
            for name, g in contrib.leaves.items():
                if name in grads.leaves:
                    grads.leaves[name] += g
                else:
                    grads.leaves[name] = g.copy()
    param_norm = float((net.w1 * net.w1).sum() + (net.w2 * net.w2).sum())
    if or_net is not None:
        param_norm += float((or_net.w1 * or_net.w1).sum() + (or_net.w2 * or_net.w2).sum())
    terms = {
        "fit": config.alpha_fit * fit_sum / n_pairs,
        "composed_l2": 0.5 * config.alpha_composed_l2 * wnorm_sum / n_exprs,
        "param_l2": config.alpha_param_l2 * param_norm,
    }
    grads.net.w1 += 2.0 * config.alpha_param_l2 * net.w1
    grads.net.w2 += 2.0 * config.alpha_param_l2 * net.w2
    if or_net is not None:
        grads.or_net.w1 += 2.0 * config.alpha_param_l2 * or_net.w1
        grads.or_net.w2 += 2.0 * config.alpha_param_l2 * or_net.w2
    loss = terms["fit"] + terms["composed_l2"] + terms["param_l2"]
    return loss, grads, terms


def _make_states(config: TrainConfig, names: Sequence[str]) -> dict[str, OptimState]:
    maker = adam_state if config.optimizer == "adam" else sgd_state
    return {name: maker(lr=config.lr) for name in names}


def _run_epochs(
    net: CompositionNet,
    bank: PrimitiveBank,
    dataset: Dataset,
    exprs: Sequence[Expression],
    split_indices: np.ndarray,
    config: TrainConfig,
    epochs: int,
    rng: np.random.Generator,
    or_net: CompositionNet | None,
    val_metrics: Callable[[CompositionNet], dict] | None,
) -> TrainResult:
    if not exprs:
        raise ValueError("training requires a non-empty expression set")
    net = net.copy()
    or_net = or_net.copy() if or_net is not None else None
    classifiers = dict(bank.classifiers)
    states = _make_states(config, ["w1", "b1", "w2", "b2"])
    or_states = _make_states(config, ["w1", "b1", "w2", "b2"]) if or_net is not None else None
    leaf_states: dict[str, OptimState] = {}
    label_cache: dict = {}
    history: list[dict] = []
    best: tuple[float, CompositionNet, CompositionNet | None] | None = None

    for epoch in range(epochs):
        order = rng.permutation(len(exprs))
        batch_losses = []
        term_sums = {"fit": 0.0, "composed_l2": 0.0, "param_l2": 0.0}
        for start in range(0, len(order), config.batch_expressions):
            chosen = [exprs[int(i)] for i in order[start:start + config.batch_expressions]]
            live_bank = PrimitiveBank(
                d=bank.d, names=bank.names, classifiers=classifiers,
                platt=bank.platt, config_digest=bank.config_digest,
                dataset_digest=bank.dataset_digest,
            ) if not config.freeze_primitives else bank
            batch = sample_batch(
                dataset, chosen, split_indices, rng,
                config.pos_per_expr, config.neg_per_expr, label_cache,
            )
            loss, grads, terms = objective(net, live_bank, dataset, batch, config, or_net=or_net)
            if not math.isfinite(loss):
                raise NonFiniteLossError(
                    "non-finite loss on batch: " + ", ".join(unparse(e) for e in chosen)
                )
            for name, state in states.items():
                new = opt_step(state, getattr(net, name), getattr(grads.net, name))
                setattr(net, name, new)
            if or_net is not None:
                for name, state in or_states.items():
                    new = opt_step(state, getattr(or_net, name), getattr(grads.or_net, name))
                    setattr(or_net, name, new)
            if not config.freeze_primitives:
                for pname, g in sorted(grads.leaves.items()):
                    if pname not in leaf_states:
                        maker = adam_state if config.optimizer == "adam" else sgd_state
                        leaf_states[pname] = maker(lr=config.lr)
                    new_w = opt_step(leaf_states[pname], classifiers[pname].weights, g)
                    classifiers[pname] = Classifier(new_w, source=classifiers[pname].source)
            batch_losses.append(loss)
            for k in term_sums:
                term_sums[k] += terms[k]
        record = {
            "epoch": epoch,
            "loss": float(np.mean(batch_losses)),
            **{k: term_sums[k] / len(batch_losses) for k in term_sums},
        }
        if val_metrics is not None:
            record.update(val_metrics(net))
            if config.select_best_epoch and "val_auc" in record:
                if best is None or record["val_auc"] > best[0]:
                    best = (record["val_auc"], net.copy(), or_net.copy() if or_net else None)
        history.append(record)

    if config.select_best_epoch and best is not None:
        net = best[1]
        or_net = best[2]
    out_bank = bank if config.freeze_primitives else PrimitiveBank(
        d=bank.d, names=bank.names, classifiers=classifiers, platt=bank.platt,
        config_digest=bank.config_digest, dataset_digest=bank.dataset_digest,
    )
    return TrainResult(net=net, or_net=or_net, bank=out_bank, history=history, exprs=list(exprs))


def train(
    net: CompositionNet,
    bank: PrimitiveBank,
    dataset: Dataset,
    train_exprs: Sequence[Expression],
    split_indices: np.ndarray,
    config: TrainConfig,
    *,
    or_net: CompositionNet | None = None,
    val_metrics: Callable[[CompositionNet], dict] | None = None,
) -> TrainResult:
    """Main training stage: ``epochs_main`` shuffled passes over the expressions."""
    rng = rng_stream(config.seed, "train")
    return _run_epochs(
        net, bank, dataset, train_exprs, split_indices, config,
        config.epochs_main, rng, or_net, val_metrics,
    )


def generate_finetune_cnfs(
    dataset: Dataset,
    known_disjunctions: Sequence[Expression],
    split_indices: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator,
) -> list[Expression]:
    """Seeded CNFs of the finetune complexity built from known disjunctive clauses.

    Only expressions with enough positives and negatives in the training split
    to feed the batch sampler are kept.
    """
    c = config.finetune_complexity
    if len(known_disjunctions) < c:
        raise InsufficientExamplesError(
            f"need at least {c} known disjunctions, have {len(known_disjunctions)}"
        )
    target = min(config.finetune_expressions, math.comb(len(known_disjunctions), c))
    out: list[Expression] = []
    seen: set = set()
    attempts = 0
    max_attempts = 200 * target
    while len(out) < target and attempts < max_attempts:
        attempts += 1
        e = random_cnf_from_clauses(known_disjunctions, c, rng)
        if e in seen:
            continue
        seen.add(e)
        labels = expr_label(dataset, e)[np.asarray(split_indices)]
        n_pos = int(labels.sum())
        if n_pos < config.pos_per_expr or labels.shape[0] - n_pos < config.neg_per_expr:
            continue
        out.append(e)
    if not out:
        raise InsufficientExamplesError(
            "no feasible finetuning expression found; the training split cannot "
            f"support complexity {c} over the known disjunctions"
        )
    return out


def finetune_cnf(
    net: CompositionNet,
    bank: PrimitiveBank,
    dataset: Dataset,
    known_disjunctions: Sequence[Expression],
    split_indices: np.ndarray,
    config: TrainConfig,
    *,
    or_net: CompositionNet | None = None,
    test_exprs: Sequence[Expression] | None = None,
    val_metrics: Callable[[CompositionNet], dict] | None = None,
) -> TrainResult:
    """Finetuning stage on generated CNFs of known disjunctions.

    ``test_exprs`` (when given) is checked for overlap with the generated set;
    any overlap is an error since finetune and test sets must stay disjoint.
    """
    rng = rng_stream(config.seed, "finetune")
    exprs = generate_finetune_cnfs(dataset, known_disjunctions, split_indices, config, rng)
    if test_exprs is not None:
        overlap = set(exprs) & set(test_exprs)
        if overlap:
            raise ValueError(
                f"finetune expressions overlap the test set: {[unparse(e) for e in overlap]}"
            )
    return _run_epochs(
        net, bank, dataset, exprs, split_indices, config,
        config.epochs_finetune, rng, or_net, val_metrics,
    )
