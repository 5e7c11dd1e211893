import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dlpersist.errors import ParseError
from dlpersist.syntax import (
    Atom, Cmp, Const, Neg, PersistenceAssertion, Pos, Rule, TypeDeclaration, Var,
    canonical_text, canonicalize, normalize, parse_clause, parse_program, parse_query,
    parse_rule, render_item, render_rule, rename_rule,
)

import oracle
import strategies as S


def test_fact_parses_to_ground_rule():
    [item] = parse_program("mother(grace,amy).")
    assert item == Rule(Atom("mother", (Const("grace"), Const("amy"))))


def test_disjunctive_body_is_one_rule():
    [item] = parse_program("parent(X,Y) :- father(X,Y) ; mother(X,Y).")
    assert len(item.body) == 1 and len(item.body[0]) == 2


def test_empty_input():
    assert parse_program("") == []
    assert parse_program("  % only a comment\n") == []


def test_directives():
    t, p = parse_program(":-type(mother(mother:string,child:string)).\n:-persistent(ancestor/2,mysql).")
    assert isinstance(t, TypeDeclaration) and t.spec.columns[0][0] == "mother"
    assert isinstance(p, PersistenceAssertion) and p.connection == "mysql" and p.spec.arity == 2


def test_typed_assertion_without_connection():
    a = parse_clause(":-persistent(p(a:int))")
    assert a.connection is None and str(a.spec.columns[0][1]) == "int"


def test_string_size_and_quotes():
    t = parse_clause(":-type(t(s:string(20)))")
    assert t.spec.columns[0][1].size == 20
    r = parse_rule("p('it''s', 'Tom').")
    assert r.head.args == (Const("it's"), Const("Tom"))


def test_negation_comparison_and_is():
    r = parse_rule("p(X,Z) :- q(X), not r(X), X >= 2, Z is X*2+1.")
    kinds = [type(l).__name__ for l in r.literals]
    assert kinds == ["Pos", "Neg", "Cmp", "Is"]


def test_negative_numbers_and_floats():
    r = parse_rule("p(-1, 2.5, -0.25).")
    assert [a.value for a in r.head.args] == [-1, 2.5, -0.25]


@pytest.mark.parametrize("text", ["p(X :- q.", "p(X) :- .", "p(X) q(X).", ":-persistent(p/x)."])
def test_syntax_errors_carry_position(text):
    with pytest.raises(ParseError) as e:
        parse_program(text)
    assert "line" in str(e.value)


def test_query_groups():
    groups = parse_query("t(X), t(Y)")
    assert len(groups) == 2


def test_normalize_splits_disjunction():
    [r] = parse_program("parent(X,Y) :- father(X,Y) ; mother(X,Y).")
    out = [canonical_text(x) for x in normalize(r)]
    assert out == ["parent(A,B):-father(A,B).", "parent(A,B):-mother(A,B)."]


def test_normalize_cross_product():
    r = parse_rule("p(X) :- (q(X);r(X)), (s(X);t(X)).")
    out = [canonical_text(x) for x in normalize(r)]
    assert out == ["p(A):-q(A),s(A).", "p(A):-q(A),t(A).", "p(A):-r(A),s(A).", "p(A):-r(A),t(A)."]


def test_normalize_fact_is_identity():
    f = parse_rule("mother(grace,amy).")
    assert normalize(f) == [f]


def test_canonical_text_examples():
    assert canonical_text(parse_rule("parent(X,Y):-father(X,Y)")) == "parent(A,B):-father(A,B)."
    assert canonical_text(parse_rule("mother(grace,amy)")) == "mother(grace,amy)."
    assert canonical_text(parse_rule("p(X,Z) :- q(X), not r(X), Z is X+1")) == "p(A,B):-q(A),not(r(A)),B is A+1."


@given(S.rules)
@settings(max_examples=300)
def test_parse_render_round_trip(rule):
    assert parse_rule(render_rule(rule)) == rule


@given(S.normalized_rules)
@settings(max_examples=300)
def test_canonical_text_round_trip(rule):
    back = parse_rule(canonical_text(rule))
    assert canonicalize(back) == canonicalize(rule)


@given(S.normalized_rules, st.permutations(S.VAR_NAMES))
@settings(max_examples=200)
def test_canonical_text_ignores_variable_names(rule, names):
    mapping = {Var(a): Var(b + "q") for a, b in zip(S.VAR_NAMES, names)}
    assert canonical_text(rename_rule(rule, mapping)) == canonical_text(rule)


@given(S.normalized_rules, S.normalized_rules)
@settings(max_examples=300)
def test_canonical_text_is_injective_up_to_renaming(r1, r2):
    same_text = canonical_text(r1) == canonical_text(r2)
    assert same_text == (canonicalize(r1) == canonicalize(r2))


@given(st.lists(S.rules, max_size=4))
@settings(max_examples=100)
def test_program_round_trip(rules):
    text = "\n".join(render_item(r) for r in rules)
    assert parse_program(text) == rules


# ---------------------------------------------------------------- normalization soundness


_X, _Y = Var("X"), Var("Y")


def _disjunctive_rules():
    """Rules whose disjuncts are atoms or comparisons over variables bound earlier."""
    atom = st.builds(lambda p, a, b: Pos(Atom(p, (a, b))), st.sampled_from(("e", "f")),
                     st.sampled_from((_X, _Y, Const(1))), st.sampled_from((_X, _Y, Const(2))))
    first = st.builds(lambda p: Pos(Atom(p, (_X, _Y))), st.sampled_from(("e", "f")))
    test = st.one_of(
        atom,
        st.builds(lambda op, c: Cmp(op, _X, Const(c)), st.sampled_from(("<", ">=", "=", "\\=")), st.integers(0, 3)),
        st.builds(lambda p: Neg(Atom(p, (_Y, _X))), st.sampled_from(("e", "f"))),
    )
    group = st.lists(st.lists(test, min_size=1, max_size=2).map(tuple), min_size=1, max_size=3).map(tuple)
    return st.builds(lambda f, gs: Rule(Atom("h", (_X, _Y)), (((f,),),) + tuple(gs)),
                     first, st.lists(group, min_size=1, max_size=3))


def _eval_disjunctive(rule, rel):
    """Evaluate the original rule: each group is an OR over its conjunctive alternatives."""
    envs = [{}]
    for group in rule.body:
        nxt = []
        for env in envs:
            for alt in group:
                nxt.extend(oracle._substitutions(list(alt), rel, env))
        envs = nxt
    return {tuple(e[v.name] for v in rule.head.args) for e in envs}


edb = st.fixed_dictionaries({
    ("e", 2): st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), max_size=10),
    ("f", 2): st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), max_size=10),
})


@given(_disjunctive_rules(), edb)
@settings(max_examples=300)
def test_normalization_preserves_meaning(rule, facts):
    rel = lambda k: facts.get(k, ())
    expanded = set(itertools.chain.from_iterable(oracle.derivations(r, rel) for r in normalize(rule)))
    assert expanded == _eval_disjunctive(rule, rel)
