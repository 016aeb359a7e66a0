"""Composition of classifiers along boolean expression trees.

Conjunction is a learned two-layer network mapping a pair of classifiers to
the classifier of their conjunction; negation flips the hyperplane exactly;
disjunction is derived from those two (``-g_and(-a, -b)``) and shares the
conjunction's parameters.  Composing an arbitrary expression is a post-order
walk applying these maps, and :func:`compose_backward` runs exact
reverse-mode differentiation through the shared-parameter recursion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatchError, TraceMismatchError, UnknownPrimitiveError
from .exprlang import And, Expression, Not, Or, Primitive
from .numcore import leaky_relu, leaky_relu_grad
from .primitives import Classifier, PrimitiveBank

__all__ = [
    "CompositionNet",
    "NetGrads",
    "ComposeGrads",
    "CompositionTrace",
    "hidden_size",
    "init_composition_net",
    "g_and",
    "g_not",
    "g_or",
    "compose",
    "compose_backward",
    "score",
    "score_batch",
    "symmetry_statistic",
]


def hidden_size(d: int) -> int:
    """Hidden width: round(1.5 * (d + 1))."""
    return int(round(1.5 * (d + 1)))


@dataclass
class CompositionNet:
    """Two affine layers with a LeakyReLU in between and linear output.

    Input is a concatenated pair of (d+1)-dim classifiers, output is one
    (d+1)-dim classifier.  Shapes: w1 (h, 2*(d+1)), b1 (h,), w2 (d+1, h),
    b2 (d+1,) with h = hidden_size(d).
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    slope: float = 0.1

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64)
        h, two_dp1 = self.w1.shape
        dp1 = self.w2.shape[0]
        if two_dp1 != 2 * dp1 or self.w2.shape[1] != h:
            raise ShapeMismatchError(f"inconsistent layer shapes {self.w1.shape} / {self.w2.shape}")
        if self.b1.shape != (h,) or self.b2.shape != (dp1,):
            raise ShapeMismatchError("bias shapes do not match layer widths")
        if not 0.0 < self.slope < 1.0:
            raise ValueError(f"slope must be in (0, 1), got {self.slope}")

    @property
    def d(self) -> int:
        return self.w2.shape[0] - 1

    @property
    def h(self) -> int:
        return self.w1.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def copy(self) -> "CompositionNet":
        return CompositionNet(
            self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy(), self.slope
        )


def init_composition_net(d: int, rng: np.random.Generator, slope: float = 0.1) -> CompositionNet:
    """Kaiming-uniform fan-in init for both layers, zero biases."""
    h = hidden_size(d)
    fan1 = 2 * (d + 1)
    fan2 = h
    gain = np.sqrt(2.0 / (1.0 + slope * slope))
    bound1 = gain * np.sqrt(3.0 / fan1)
    bound2 = np.sqrt(3.0 / fan2)
    w1 = rng.uniform(-bound1, bound1, size=(h, fan1))
    w2 = rng.uniform(-bound2, bound2, size=(d + 1, h))
    return CompositionNet(w1, np.zeros(h), w2, np.zeros(d + 1), slope)


@dataclass
class NetGrads:
    """Gradient accumulator matching a CompositionNet's parameters."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def zeros_like(cls, net: CompositionNet) -> "NetGrads":
        return cls(
            np.zeros_like(net.w1), np.zeros_like(net.b1),
            np.zeros_like(net.w2), np.zeros_like(net.b2),
        )

    def add(self, other: "NetGrads", scale: float = 1.0) -> None:
        self.w1 += scale * other.w1
        self.b1 += scale * other.b1
        self.w2 += scale * other.w2
        self.b2 += scale * other.b2

    def scaled(self, scale: float) -> "NetGrads":
        return NetGrads(scale * self.w1, scale * self.b1, scale * self.w2, scale * self.b2)

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass
class ComposeGrads:
    """Gradients of one composition: network parameters plus leaf classifiers."""

    net: NetGrads
    or_net: NetGrads | None
    leaves: dict[str, np.ndarray]


@dataclass
class _TraceNode:
    kind: str  # "leaf" | "not" | "and" | "or"
    left: int = -1
    right: int = -1
    name: str | None = None
    sign: float = 1.0
    net_id: str = "and"  # which network was applied ("and" or "or")
    u: np.ndarray | None = None
    z: np.ndarray | None = None


@dataclass
class CompositionTrace:
    """Cached per-node inputs and pre-activations of one compose() call."""

    d: int
    nodes: list[_TraceNode] = field(default_factory=list)
    uses_or_net: bool = False
    renormalized: bool = False

    @property
    def num_net_applications(self) -> int:
        return sum(1 for n in self.nodes if n.kind in ("and", "or"))


def _mlp(net: CompositionNet, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    z = net.w1 @ u + net.b1
    return net.w2 @ leaky_relu(z, net.slope) + net.b2, z


def _pair_check(wa: np.ndarray, wb: np.ndarray, net: CompositionNet) -> None:
    dp1 = net.d + 1
    if wa.shape != (dp1,) or wb.shape != (dp1,):
        raise ShapeMismatchError(
            f"classifier shapes {wa.shape} / {wb.shape} do not match net dim {dp1}"
        )


def _weights(w) -> np.ndarray:
    return w.weights if isinstance(w, Classifier) else np.asarray(w, dtype=np.float64)


def g_and(net: CompositionNet, wa, wb) -> Classifier:
    """Learned conjunction of two classifiers."""
    a, b = _weights(wa), _weights(wb)
    _pair_check(a, b, net)
    out, _ = _mlp(net, np.concatenate([a, b]))
    return Classifier(out, source="composed")


def g_not(w) -> Classifier:
    """Exact negation: every coordinate (bias included) flips sign."""
    return Classifier(-_weights(w), source="composed")


def g_or(net: CompositionNet, wa, wb) -> Classifier:
    """Derived disjunction: -g_and(-a, -b); no parameters of its own."""
    a, b = _weights(wa), _weights(wb)
    _pair_check(a, b, net)
    out, _ = _mlp(net, np.concatenate([-a, -b]))
    return Classifier(-out, source="composed")


def compose(
    net: CompositionNet,
    bank: PrimitiveBank,
    expr: Expression,
    *,
    or_net: CompositionNet | None = None,
    renormalize: bool = False,
) -> tuple[Classifier, CompositionTrace]:
    """Classifier for an expression by post-order application of g_and/g_or/g_not.

    The trace records every network application (disjunctions included) for
    :func:`compose_backward`.  ``or_net``, if given, replaces the derived
    disjunction with a separately-parameterized network.  ``renormalize``
    rescales every composed intermediate to unit norm before it feeds the next
    composition (forward only; such traces cannot be differentiated).
    """
    if net.d != bank.d:
        raise ShapeMismatchError(f"net dim {net.d} vs bank dim {bank.d}")
    if or_net is not None and or_net.d != net.d:
        raise ShapeMismatchError(f"or_net dim {or_net.d} vs net dim {net.d}")
    trace = CompositionTrace(d=net.d, uses_or_net=or_net is not None, renormalized=renormalize)
    nodes = trace.nodes

    def rec(e: Expression) -> tuple[int, np.ndarray]:
        if isinstance(e, Primitive):
            if e.name not in bank:
                raise UnknownPrimitiveError(f"no classifier for primitive {e.name!r}")
            nodes.append(_TraceNode(kind="leaf", name=e.name))
            return len(nodes) - 1, bank[e.name].weights
        if isinstance(e, Not):
            ci, cv = rec(e.child)
            nodes.append(_TraceNode(kind="not", left=ci))
            return len(nodes) - 1, -cv
        if isinstance(e, (And, Or)):
            li, lv = rec(e.left)
            ri, rv = rec(e.right)
            if isinstance(e, And):
                kind, sign, net_id, applied = "and", 1.0, "and", net
            elif or_net is not None:
                kind, sign, net_id, applied = "or", 1.0, "or", or_net
            else:
                kind, sign, net_id, applied = "or", -1.0, "and", net
            u = np.concatenate([sign * lv, sign * rv])
            out, z = _mlp(applied, u)
            out = sign * out
            if renormalize:
                norm = float(np.linalg.norm(out))
                if norm > 0.0:
                    out = out / norm
            nodes.append(_TraceNode(kind=kind, left=li, right=ri, sign=sign, net_id=net_id, u=u, z=z))
            return len(nodes) - 1, out
        raise TypeError(f"not an expression node: {e!r}")

    _, value = rec(expr)
    return Classifier(value, source="composed"), trace


def compose_backward(
    net: CompositionNet,
    trace: CompositionTrace,
    grad_wrt_output: np.ndarray,
    *,
    or_net: CompositionNet | None = None,
) -> ComposeGrads:
    """Exact reverse-mode gradients of compose() w.r.t. parameters and leaves.

    Parameters are shared across all applications in the tree, so per-node
    contributions accumulate.  Raises :class:`TraceMismatchError` when the
    trace does not match the networks or the gradient shape.
    """
    if trace.renormalized:
        raise TraceMismatchError("trace was built with renormalize=True; not differentiable")
    if trace.uses_or_net != (or_net is not None):
        raise TraceMismatchError("trace and call disagree about a separate disjunction net")
    if not trace.nodes:
        raise TraceMismatchError("empty trace")
    if net.d != trace.d or (or_net is not None and or_net.d != trace.d):
        raise TraceMismatchError(f"trace dim {trace.d} does not match network")
    g = np.asarray(grad_wrt_output, dtype=np.float64)
    dp1 = trace.d + 1
    if g.shape != (dp1,):
        raise TraceMismatchError(f"gradient shape {g.shape}, expected ({dp1},)")

    grads = {"and": NetGrads.zeros_like(net)}
    nets = {"and": net}
    if or_net is not None:
        grads["or"] = NetGrads.zeros_like(or_net)
        nets["or"] = or_net
    leaves: dict[str, np.ndarray] = {}
    node_grads: list[np.ndarray | None] = [None] * len(trace.nodes)
    node_grads[-1] = g.copy()

    for i in range(len(trace.nodes) - 1, -1, -1):
        gi = node_grads[i]
        if gi is None:
            raise TraceMismatchError("trace has an unreachable node")
        node = trace.nodes[i]
        if node.kind == "leaf":
            if node.name in leaves:
                leaves[node.name] += gi
            else:
                leaves[node.name] = gi.copy()
            continue
        if node.kind == "not":
            _accumulate(node_grads, node.left, -gi)
            continue
        applied = nets[node.net_id]
        acc = grads[node.net_id]
        gm = node.sign * gi
        hidden = leaky_relu(node.z, applied.slope)
        acc.w2 += np.outer(gm, hidden)
        acc.b2 += gm
        gz = (applied.w2.T @ gm) * leaky_relu_grad(node.z, applied.slope)
        acc.w1 += np.outer(gz, node.u)
        acc.b1 += gz
        gu = applied.w1.T @ gz
        _accumulate(node_grads, node.left, node.sign * gu[:dp1])
        _accumulate(node_grads, node.right, node.sign * gu[dp1:])

    return ComposeGrads(net=grads["and"], or_net=grads.get("or"), leaves=leaves)


def _accumulate(node_grads: list, idx: int, value: np.ndarray) -> None:
    if node_grads[idx] is None:
        node_grads[idx] = value.copy()
    else:
        node_grads[idx] += value


def score(w, features: np.ndarray) -> float:
    """Compatibility score: dot(w, [features; 1])."""
    wv = _weights(w)
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != wv.shape[0] - 1:
        raise ShapeMismatchError(f"features shape {x.shape} vs classifier dim {wv.shape[0] - 1}")
    return float(x @ wv[:-1] + wv[-1])


def score_batch(w, features: np.ndarray) -> np.ndarray:
    """Scores for an N x D feature matrix."""
    wv = _weights(w)
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != wv.shape[0] - 1:
        raise ShapeMismatchError(f"features shape {x.shape} vs classifier dim {wv.shape[0] - 1}")
    return x @ wv[:-1] + wv[-1]


def symmetry_statistic(net: CompositionNet, wa, wb) -> float:
    """||g(a,b) - g(b,a)|| / ||g(a,b)||, measuring operand-order sensitivity."""
    ab = g_and(net, wa, wb).weights
    ba = g_and(net, wb, wa).weights
    denom = float(np.linalg.norm(ab))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(ab - ba)) / denom


def flatten_params(net: CompositionNet) -> np.ndarray:
    """All parameters as one vector, in (w1, b1, w2, b2) order."""
    return np.concatenate([net.w1.ravel(), net.b1, net.w2.ravel(), net.b2])


def flatten_grads(grads: NetGrads) -> np.ndarray:
    return np.concatenate([grads.w1.ravel(), grads.b1, grads.w2.ravel(), grads.b2])


def assign_params(net: CompositionNet, flat: np.ndarray) -> None:
    """Inverse of :func:`flatten_params`, writing into the net's arrays."""
    h, dp1 = net.h, net.d + 1
    sizes = [h * 2 * dp1, h, dp1 * h, dp1]
    if flat.shape != (sum(sizes),):
        raise ShapeMismatchError(f"parameter vector has shape {flat.shape}, expected ({sum(sizes)},)")
    offs = np.cumsum([0] + sizes)
    net.w1 = flat[offs[0]:offs[1]].reshape(h, 2 * dp1).copy()
    net.b1 = flat[offs[1]:offs[2]].copy()
    net.w2 = flat[offs[2]:offs[3]].reshape(dp1, h).copy()
    net.b2 = flat[offs[3]:offs[4]].copy()
