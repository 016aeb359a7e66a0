import numpy as np
import pytest

from boolclf.algebra import (
    CompositionNet,
    assign_params,
    compose,
    compose_backward,
    flatten_grads,
    flatten_params,
    g_and,
    g_not,
    g_or,
    hidden_size,
    init_composition_net,
    score,
    score_batch,
    symmetry_statistic,
)
from boolclf.errors import ShapeMismatchError, TraceMismatchError, UnknownPrimitiveError
from boolclf.exprlang import And, Not, Or, Primitive, parse, random_expression
from boolclf.numcore import finite_diff, leaky_relu, rng_stream
from boolclf.primitives import Classifier, PrimitiveBank

D = 5


def _net(seed=0, d=D):
    return init_composition_net(d, rng_stream(seed, "net"))


def _bank(seed=11, d=D, names=("a", "b", "c", "d_")):
    rng = rng_stream(seed, "bank")
    return PrimitiveBank(
        d=d, names=tuple(names),
        classifiers={n: Classifier(rng.standard_normal(d + 1)) for n in names},
    )


def _naive_mlp(net, u):
    """Loop-based reimplementation of the two-layer forward pass."""
    h = np.zeros(net.h)
    for i in range(net.h):
        acc = net.b1[i]
        for j in range(len(u)):
            acc += net.w1[i, j] * u[j]
        h[i] = acc if acc > 0 else net.slope * acc
    out = np.zeros(net.d + 1)
    for i in range(net.d + 1):
        acc = net.b2[i]
        for j in range(net.h):
            acc += net.w2[i, j] * h[j]
        out[i] = acc
    return out


# ---------------------------------------------------------------------------
# architecture


def test_hidden_size_follows_convention():
    assert hidden_size(D) == round(1.5 * (D + 1))
    assert hidden_size(4096) == round(1.5 * 4097)


def test_init_shapes_and_determinism():
    net = _net(3)
    assert net.w1.shape == (hidden_size(D), 2 * (D + 1))
    assert net.w2.shape == (D + 1, hidden_size(D))
    assert np.all(net.b1 == 0) and np.all(net.b2 == 0)
    assert net.slope == 0.1
    again = _net(3)
    assert np.array_equal(net.w1, again.w1) and np.array_equal(net.w2, again.w2)


def test_net_shape_validation():
    with pytest.raises(ShapeMismatchError):
        CompositionNet(np.ones((9, 11)), np.zeros(9), np.ones((6, 9)), np.zeros(6))


# ---------------------------------------------------------------------------
# composition functions


def test_g_and_output_shape():
    net, bank = _net(), _bank()
    out = g_and(net, bank["a"], bank["b"])
    assert out.weights.shape == (D + 1,)
    assert out.source == "composed"


def test_g_and_degenerate_net_returns_constant():
    net = _net()
    net.w2 = np.zeros_like(net.w2)
    net.b2 = np.arange(D + 1, dtype=float)
    bank = _bank()
    assert np.array_equal(g_and(net, bank["a"], bank["b"]).weights, net.b2)
    assert np.array_equal(g_or(net, bank["a"], bank["b"]).weights, -net.b2)


def test_g_and_matches_naive_oracle():
    net, bank = _net(7), _bank(8)
    wa, wb = bank["a"].weights, bank["b"].weights
    expected = _naive_mlp(net, np.concatenate([wa, wb]))
    got = g_and(net, wa, wb).weights
    assert np.max(np.abs(got - expected)) < 1e-12


def test_g_or_matches_naive_oracle():
    net, bank = _net(9), _bank(10)
    wa, wb = bank["a"].weights, bank["b"].weights
    expected = -_naive_mlp(net, np.concatenate([-wa, -wb]))
    got = g_or(net, wa, wb).weights
    assert np.max(np.abs(got - expected)) < 1e-12


def test_g_not_involution_and_linearity():
    rng = rng_stream(2, "gnot")
    w = Classifier(rng.standard_normal(D + 1))
    assert np.array_equal(g_not(g_not(w)).weights, w.weights)
    x = rng.standard_normal(D)
    assert score(g_not(w), x) == -score(w, x)
    zero = Classifier(np.zeros(D + 1))
    assert np.array_equal(g_not(zero).weights, np.zeros(D + 1))


def test_g_or_de_morgan_identity_bit_exact():
    net = _net(4)
    rng = rng_stream(5, "demorgan")
    for _ in range(100):
        wa, wb = rng.standard_normal(D + 1), rng.standard_normal(D + 1)
        via_derived = g_or(net, wa, wb).weights
        via_identity = g_not(g_and(net, g_not(wa), g_not(wb))).weights
        assert np.array_equal(via_derived, via_identity)


def test_pair_shape_check():
    net = _net()
    with pytest.raises(ShapeMismatchError):
        g_and(net, np.ones(D + 2), np.ones(D + 1))


# ---------------------------------------------------------------------------
# compose


def test_compose_leaf_is_bank_lookup():
    net, bank = _net(), _bank()
    w, trace = compose(net, bank, Primitive("a"))
    assert np.array_equal(w.weights, bank["a"].weights)
    assert trace.num_net_applications == 0


def test_compose_unknown_primitive():
    net, bank = _net(), _bank()
    with pytest.raises(UnknownPrimitiveError):
        compose(net, bank, Primitive("zzz"))


def test_compose_double_negation_exact():
    net, bank = _net(1), _bank(2)
    rng = rng_stream(3, "ddneg")
    for _ in range(50):
        e = random_expression(bank.names, rng, max_depth=4)
        w1, _ = compose(net, bank, e)
        w2, _ = compose(net, bank, Not(Not(e)))
        assert np.array_equal(w1.weights, w2.weights)


def test_compose_socks_applies_net_three_times():
    net = _net()
    names = ("S", "B", "R", "H")
    bank = _bank(names=names)
    expr = parse("S & (B | R) & !H")
    _, trace = compose(net, bank, expr)
    assert trace.num_net_applications == 3


def test_compose_matches_manual_application():
    net, bank = _net(6), _bank(7)
    expr = parse("(a & b) | !c")
    left = g_and(net, bank["a"], bank["b"])
    right = g_not(bank["c"])
    expected = g_or(net, left, right).weights
    got, _ = compose(net, bank, expr)
    assert np.array_equal(got.weights, expected)


def test_compose_is_pure():
    net, bank = _net(1), _bank(1)
    e = parse("(a | b) & !(c & d_)")
    w1, _ = compose(net, bank, e)
    w2, _ = compose(net, bank, e)
    assert np.array_equal(w1.weights, w2.weights)


def test_compose_renormalize_unit_norm_and_no_backward():
    net, bank = _net(1), _bank(1)
    e = parse("(a & b) | c")
    w, trace = compose(net, bank, e, renormalize=True)
    assert abs(np.linalg.norm(w.weights) - 1.0) < 1e-12
    with pytest.raises(TraceMismatchError):
        compose_backward(net, trace, np.ones(D + 1))


# ---------------------------------------------------------------------------
# score


def test_score_bias_only_classifier():
    w = np.zeros(D + 1)
    w[-1] = 1.0
    rng = rng_stream(4, "score")
    for _ in range(10):
        assert score(w, rng.standard_normal(D)) == 1.0


def test_score_matches_naive_loop():
    rng = rng_stream(5, "score2")
    w = rng.standard_normal(D + 1)
    x = rng.standard_normal(D)
    expected = sum(w[i] * x[i] for i in range(D)) + w[D]
    assert abs(score(w, x) - expected) < 1e-12


def test_score_batch_consistent_with_score():
    rng = rng_stream(6, "score3")
    w = rng.standard_normal(D + 1)
    xs = rng.standard_normal((8, D))
    batch = score_batch(w, xs)
    for i in range(8):
        assert abs(batch[i] - score(w, xs[i])) < 1e-12
    with pytest.raises(ShapeMismatchError):
        score_batch(w, np.ones((3, D + 2)))


# ---------------------------------------------------------------------------
# backward


def test_backward_single_leaf():
    net, bank = _net(), _bank()
    _, trace = compose(net, bank, Primitive("a"))
    g = np.arange(1.0, D + 2)
    grads = compose_backward(net, trace, g)
    assert np.all(grads.net.w1 == 0) and np.all(grads.net.b2 == 0)
    assert np.array_equal(grads.leaves["a"], g)


def test_backward_linearity_in_output_grad():
    net, bank = _net(3), _bank(4)
    _, trace = compose(net, bank, parse("(a & b) | !c"))
    g = rng_stream(7, "probe").standard_normal(D + 1)
    g1 = compose_backward(net, trace, g)
    g2 = compose_backward(net, trace, 2.0 * g)
    assert np.array_equal(flatten_grads(g2.net), 2.0 * flatten_grads(g1.net))
    for name in g1.leaves:
        assert np.array_equal(g2.leaves[name], 2.0 * g1.leaves[name])


def _check_gradients(expr_text_or_expr, seed, rel_tol=1e-6):
    net, bank = _net(seed), _bank(seed + 100)
    expr = parse(expr_text_or_expr) if isinstance(expr_text_or_expr, str) else expr_text_or_expr
    probe = rng_stream(seed, "probe").standard_normal(D + 1)
    _, trace = compose(net, bank, expr)
    analytic = flatten_grads(compose_backward(net, trace, probe).net)

    def f(flat):
        trial = net.copy()
        assign_params(trial, flat)
        w, _ = compose(trial, bank, expr)
        return float(probe @ w.weights)

    numeric = finite_diff(f, flatten_params(net), h=1e-4)
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    assert np.linalg.norm(analytic - numeric) / denom < rel_tol


@pytest.mark.parametrize("expr", [
    "a & b",
    "a | b",
    "!(a & b)",
    "(a & b) | (c & d_)",
    "((a | b) & !c) & d_",
    "!((a | b) | (c & !d_))",
])
def test_backward_matches_finite_differences(expr):
    _check_gradients(expr, seed=13)


def test_backward_random_depth3_expressions():
    rng = rng_stream(17, "exprs")
    names = ("a", "b", "c", "d_")
    for trial in range(10):
        e = random_expression(names, rng, max_depth=3)
        _check_gradients(e, seed=20 + trial)


def test_backward_leaf_gradients_match_finite_differences():
    net, bank = _net(23), _bank(24)
    expr = parse("(a & b) | !a")
    probe = rng_stream(25, "probe").standard_normal(D + 1)
    _, trace = compose(net, bank, expr)
    grads = compose_backward(net, trace, probe)

    base = bank["a"].weights.copy()

    def f(wa):
        mutated = PrimitiveBank(
            d=D, names=bank.names,
            classifiers={**bank.classifiers, "a": Classifier(wa)},
        )
        w, _ = compose(net, mutated, expr)
        return float(probe @ w.weights)

    numeric = finite_diff(f, base, h=1e-4)
    analytic = grads.leaves["a"]
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    assert np.linalg.norm(analytic - numeric) / denom < 1e-6


def test_backward_trace_mismatch_checks():
    net, bank = _net(), _bank()
    _, trace = compose(net, bank, parse("a & b"))
    with pytest.raises(TraceMismatchError):
        compose_backward(net, trace, np.ones(D + 2))
    other = init_composition_net(D + 1, rng_stream(0, "other"))
    with pytest.raises(TraceMismatchError):
        compose_backward(other, trace, np.ones(D + 2))


# ---------------------------------------------------------------------------
# separate disjunction network (ablation path)


def test_compose_with_or_net_differs_and_backward_checks():
    net, bank = _net(30), _bank(31)
    or_net = init_composition_net(D, rng_stream(32, "ornet"))
    e = parse("a | b")
    w_derived, _ = compose(net, bank, e)
    w_learned, trace = compose(net, bank, e, or_net=or_net)
    assert not np.array_equal(w_derived.weights, w_learned.weights)
    probe = rng_stream(33, "probe").standard_normal(D + 1)
    grads = compose_backward(net, trace, probe, or_net=or_net)
    assert grads.or_net is not None
    # the main net was never applied on a pure disjunction
    assert np.all(grads.net.w1 == 0)
    with pytest.raises(TraceMismatchError):
        compose_backward(net, trace, probe)  # trace carries or_net state


def test_or_net_gradients_match_finite_differences():
    net, bank = _net(40), _bank(41)
    or_net = init_composition_net(D, rng_stream(42, "ornet"))
    expr = parse("(a | b) & !(c | d_)")
    probe = rng_stream(43, "probe").standard_normal(D + 1)
    _, trace = compose(net, bank, expr, or_net=or_net)
    grads = compose_backward(net, trace, probe, or_net=or_net)
    analytic = flatten_grads(grads.or_net)

    def f(flat):
        trial = or_net.copy()
        assign_params(trial, flat)
        w, _ = compose(net, bank, expr, or_net=trial)
        return float(probe @ w.weights)

    numeric = finite_diff(f, flatten_params(or_net), h=1e-4)
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    assert np.linalg.norm(analytic - numeric) / denom < 1e-6


# ---------------------------------------------------------------------------
# symmetry statistic


def test_symmetry_statistic_zero_for_symmetric_input():
    net, bank = _net(), _bank()
    assert symmetry_statistic(net, bank["a"], bank["a"]) == 0.0
    stat = symmetry_statistic(net, bank["a"], bank["b"])
    assert stat >= 0.0
