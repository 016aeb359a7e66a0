import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boolclf.errors import (
    ExprSyntaxError,
    InsufficientPrimitivesError,
    MissingPrimitiveError,
    SizeExceededError,
)
from boolclf.exprlang import (
    And,
    Not,
    Or,
    Primitive,
    cnf_clauses,
    eval_bool_columns,
    eval_truth,
    is_cnf,
    load_expressions,
    parse,
    post_order,
    primitive_names,
    random_binary_expressions,
    random_cnf,
    random_cnf_from_clauses,
    random_expression,
    save_expressions,
    to_cnf,
    to_nnf,
    truth_table,
    unparse,
)
from boolclf.numcore import rng_stream

A, B, C, H, R, S = (Primitive(n) for n in "ABCHRS")
SOCKS = And(And(S, Or(B, R)), Not(H))


# ---------------------------------------------------------------------------
# parsing


def test_parse_single_operator():
    assert parse("A & B") == And(A, B)


def test_parse_socks_expression():
    assert parse("S & (B | R) & !H") == SOCKS


def test_parse_double_negation_kept():
    assert parse("!!A") == Not(Not(A))


def test_parse_precedence_not_and_or():
    assert parse("A | B & C") == Or(A, And(B, C))
    assert parse("!A & B") == And(Not(A), B)
    assert parse("!(A & B)") == Not(And(A, B))


def test_parse_left_associative_chains():
    assert parse("A & B & C") == And(And(A, B), C)
    assert parse("A | B | C") == Or(Or(A, B), C)


def test_parse_word_operators_case_insensitive():
    assert parse("a AND b") == And(Primitive("a"), Primitive("b"))
    assert parse("Not x oR y") == Or(Not(Primitive("x")), Primitive("y"))


def test_parse_whitespace_insensitive():
    assert parse("  A&B ") == parse("A & B")


@pytest.mark.parametrize(
    "text,offset",
    [
        ("", 0),
        ("   ", 0),
        ("A &", 3),
        ("& A", 0),
        ("(A", 0),
        ("A)", 1),
        ("A $ B", 2),
        ("A B", 2),
    ],
)
def test_parse_errors_carry_byte_offsets(text, offset):
    with pytest.raises(ExprSyntaxError) as err:
        parse(text)
    assert err.value.offset == offset


def test_parse_error_offset_is_bytes_not_chars():
    with pytest.raises(ExprSyntaxError) as err:
        parse("A & ¬B")  # U+00AC is 2 bytes in UTF-8
    assert err.value.offset == 4


# ---------------------------------------------------------------------------
# printing


def test_unparse_examples():
    assert unparse(And(A, B)) == "(A & B)"
    assert unparse(Not(Or(A, B))) == "(!(A | B))"
    assert unparse(SOCKS) == "((S & (B | R)) & (!H))"


def _expressions(names=("A", "B", "C", "D")):
    leaf = st.sampled_from([Primitive(n) for n in names])
    return st.recursive(
        leaf,
        lambda inner: st.one_of(
            st.builds(Not, inner),
            st.builds(And, inner, inner),
            st.builds(Or, inner, inner),
        ),
        max_leaves=25,
    )


@settings(max_examples=300, deadline=None)
@given(_expressions())
def test_parse_unparse_roundtrip(expr):
    assert parse(unparse(expr)) == expr


def test_roundtrip_over_seeded_generator():
    rng = rng_stream(3, "roundtrip")
    names = [f"p{i}" for i in range(6)]
    for _ in range(1000):
        e = random_expression(names, rng, max_depth=7)
        assert parse(unparse(e)) == e


# ---------------------------------------------------------------------------
# traversal


def test_post_order_leaf():
    assert post_order(A) == [A]


def test_post_order_binary():
    assert post_order(And(A, B)) == [A, B, And(A, B)]


def test_post_order_socks_subterm_sequence():
    nodes = post_order(SOCKS)
    internal = [n for n in nodes if not isinstance(n, Primitive)]
    assert internal == [Or(B, R), And(S, Or(B, R)), Not(H), SOCKS]
    assert len(nodes) == 8


@settings(max_examples=100, deadline=None)
@given(_expressions())
def test_post_order_children_precede_parents(expr):
    nodes = post_order(expr)
    seen_at = {}
    for i, n in enumerate(nodes):
        seen_at.setdefault(id(n), i)
    for i, n in enumerate(nodes):
        if isinstance(n, Not):
            assert seen_at[id(n.child)] < i
        elif isinstance(n, (And, Or)):
            assert seen_at[id(n.left)] < i
            assert seen_at[id(n.right)] < i


# ---------------------------------------------------------------------------
# truth evaluation


def test_eval_truth_basics():
    assert eval_truth(And(A, B), {"A": True, "B": False}) is False
    assert eval_truth(Or(A, Not(A)), {"A": True}) is True
    assert eval_truth(Or(A, Not(A)), {"A": False}) is True


def test_eval_truth_requires_total_assignment():
    with pytest.raises(MissingPrimitiveError):
        eval_truth(And(A, B), {"A": True})


def test_socks_truth_table_matches_hand_oracle():
    names = ["B", "H", "R", "S"]
    for bits in itertools.product([False, True], repeat=4):
        a = dict(zip(names, bits))
        expected = a["S"] and (a["B"] or a["R"]) and not a["H"]
        assert eval_truth(SOCKS, a) == expected


def test_truth_table_matches_scalar_eval():
    rng = rng_stream(5, "truth-table")
    names = [f"q{i}" for i in range(5)]
    for _ in range(50):
        e = random_expression(names, rng, max_depth=5)
        used = primitive_names(e)
        table = truth_table(e, used)
        for i in range(2 ** len(used)):
            a = {n: bool((i >> j) & 1) for j, n in enumerate(used)}
            assert bool(table[i]) == eval_truth(e, a)


def test_eval_bool_columns_vectorizes():
    cols = {"A": np.array([1, 1, 0, 0], bool), "B": np.array([1, 0, 1, 0], bool)}
    out = eval_bool_columns(And(A, Not(B)), cols)
    assert out.tolist() == [False, True, False, False]


# ---------------------------------------------------------------------------
# normal forms


def test_nnf_de_morgan_and_involution():
    assert to_nnf(Not(And(A, B))) == Or(Not(A), Not(B))
    assert to_nnf(Not(Not(A))) == A
    assert to_nnf(Not(Or(A, B))) == And(Not(A), Not(B))


def _assert_equivalent(e1, e2):
    names = sorted(set(primitive_names(e1)) | set(primitive_names(e2)))
    assert np.array_equal(truth_table(e1, names), truth_table(e2, names))


def test_nnf_preserves_truth_on_random_expressions():
    rng = rng_stream(9, "nnf")
    names = [f"v{i}" for i in range(8)]
    for _ in range(500):
        e = random_expression(names, rng, max_depth=6)
        nnf = to_nnf(e)
        _assert_equivalent(e, nnf)
        for node in post_order(nnf):
            if isinstance(node, Not):
                assert isinstance(node.child, Primitive)


def test_cnf_single_distribution():
    assert to_cnf(Or(And(A, B), C)) == And(Or(A, C), Or(B, C))


def test_cnf_of_cnf_is_equivalent():
    e = And(Or(A, B), Or(Not(C), B))
    out = to_cnf(e)
    assert is_cnf(out)
    _assert_equivalent(e, out)


def test_cnf_preserves_truth_on_random_expressions():
    rng = rng_stream(13, "cnf")
    names = [f"v{i}" for i in range(8)]
    checked = 0
    for _ in range(300):
        e = random_expression(names, rng, max_depth=6)
        try:
            cnf = to_cnf(e, max_clauses=512)
        except SizeExceededError:
            continue
        checked += 1
        assert is_cnf(cnf)
        _assert_equivalent(e, cnf)
    assert checked > 250


def test_cnf_clause_budget():
    # ((A & B) | (C & H)) distributes to 4 clauses
    e = Or(And(A, B), And(C, H))
    assert len(cnf_clauses(to_cnf(e, max_clauses=4))) == 4
    with pytest.raises(SizeExceededError):
        to_cnf(e, max_clauses=3)
    with pytest.raises(ValueError):
        to_cnf(e, max_clauses=0)


# ---------------------------------------------------------------------------
# random generators


def test_random_cnf_shape_and_determinism():
    names = [f"p{i}" for i in range(8)]
    e1 = random_cnf(names, c=4, clause_width=2, rng=rng_stream(21, "cnf-gen"))
    e2 = random_cnf(names, c=4, clause_width=2, rng=rng_stream(21, "cnf-gen"))
    assert e1 == e2
    clauses = cnf_clauses(e1)
    assert len(clauses) == 4
    clause_sets = [frozenset(primitive_names(cl)) for cl in clauses]
    assert len(set(clause_sets)) == 4
    assert all(len(s) == 2 for s in clause_sets)


def test_random_cnf_c1_is_single_disjunction():
    e = random_cnf(["x", "y", "z"], c=1, clause_width=2, rng=rng_stream(1, "c1"))
    assert isinstance(e, Or)


def test_random_cnf_negations_only_when_allowed():
    names = [f"p{i}" for i in range(6)]
    rng = rng_stream(2, "neg")
    e = random_cnf(names, c=5, clause_width=2, allow_negation=False, rng=rng)
    assert not any(isinstance(n, Not) for n in post_order(e))
    found_neg = any(
        isinstance(n, Not)
        for _ in range(20)
        for n in post_order(random_cnf(names, c=5, clause_width=2, allow_negation=True, rng=rng))
    )
    assert found_neg


def test_random_cnf_insufficient_primitives():
    with pytest.raises(InsufficientPrimitivesError):
        random_cnf(["a", "b"], c=2, clause_width=2, rng=rng_stream(0, "x"))


def test_random_cnf_from_clauses():
    pool = [Or(Primitive(f"u{i}"), Primitive(f"v{i}")) for i in range(6)]
    e = random_cnf_from_clauses(pool, 4, rng_stream(4, "pool"))
    assert set(cnf_clauses(e)) <= set(pool)
    assert len(cnf_clauses(e)) == 4
    with pytest.raises(InsufficientPrimitivesError):
        random_cnf_from_clauses(pool, 7, rng_stream(4, "pool"))


def test_random_binary_expressions_exhaustive():
    exprs = random_binary_expressions(["A", "B", "C"], "and", 3, rng_stream(6, "pairs"))
    assert set(exprs) == {And(A, B), And(A, C), And(B, C)}


def test_random_binary_expressions_errors_and_determinism():
    with pytest.raises(InsufficientPrimitivesError):
        random_binary_expressions(["A", "B", "C"], "or", 4, rng_stream(0, "x"))
    e1 = random_binary_expressions([f"p{i}" for i in range(10)], "or", 5, rng_stream(8, "det"))
    e2 = random_binary_expressions([f"p{i}" for i in range(10)], "or", 5, rng_stream(8, "det"))
    assert e1 == e2


# ---------------------------------------------------------------------------
# expression files


def test_expression_file_roundtrip(tmp_path):
    exprs = [SOCKS, And(A, B), Not(C)]
    path = tmp_path / "exprs.txt"
    save_expressions(path, exprs)
    assert load_expressions(path) == exprs


def test_expression_file_skips_comments_and_blanks(tmp_path):
    path = tmp_path / "exprs.txt"
    path.write_text("# header\n\nA & B\n  # another\n!C\n", encoding="utf-8")
    assert load_expressions(path) == [And(A, B), Not(C)]
