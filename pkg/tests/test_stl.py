import math

import pytest

from stl_splitter.stl import (
    INF,
    Always,
    And,
    Eventually,
    Historically,
    Implies,
    Interval,
    Not,
    Once,
    Or,
    Pred,
    STLSyntaxError,
    TrueF,
    Until,
    conjunction,
    desugar,
    format_formula,
    iter_nodes,
    parse_formula,
    predicate_names,
    subformulas,
    time_horizon,
)

P, Q, R = Pred("p"), Pred("q"), Pred("r")


class TestInterval:
    def test_bounds_are_validated(self):
        with pytest.raises(ValueError):
            Interval(3, 1)
        with pytest.raises(ValueError):
            Interval(-1, 2)
        with pytest.raises(TypeError):
            Interval(0.5, 2)

    def test_unbounded(self):
        iv = Interval(2)
        assert iv.hi == INF and not iv.bounded
        assert str(iv) == "[2,inf]"

    def test_seconds_conversion_is_exact(self):
        assert Interval.from_seconds(0, 3.0, 0.1) == Interval(0, 30)
        assert Interval.from_seconds(0.3, INF, 0.1) == Interval(3, INF)

    def test_seconds_conversion_rejects_fractions(self):
        with pytest.raises(ValueError, match="whole number"):
            Interval.from_seconds(0, 0.25, 0.1)


class TestParser:
    @pytest.mark.parametrize(
        "text, expected",
        [
            ("p", P),
            ("true", TrueF()),
            ("not p", Not(P)),
            ("p and q or r", Or(And(P, Q), R)),
            ("p -> q -> r", Implies(P, Implies(Q, R))),
            ("G[0,inf] p", Always(Interval(0, INF), P)),
            ("F[1,3] p", Eventually(Interval(1, 3), P)),
            ("H[0,2] p", Historically(Interval(0, 2), P)),
            ("O[1,inf] p", Once(Interval(1, INF), P)),
            ("p U[0,4] q", Until(Interval(0, 4), P, Q)),
            ("G[0,inf] (p -> F[0,2] q)", Always(Interval(0, INF), Implies(P, Eventually(Interval(0, 2), Q)))),
        ],
    )
    def test_parses(self, text, expected):
        assert parse_formula(text) == expected

    @pytest.mark.parametrize(
        "text",
        [
            "G[0,inf] (p -> F[1,3] (q U[0,2] r)) and not H[0,2] O[1,inf] p",
            "not (p and q) -> r",
            "(p U[0,1] q) U[2,3] r",
            "F[0,0] true",
        ],
    )
    def test_format_round_trip(self, text):
        f = parse_formula(text)
        assert parse_formula(format_formula(f)) == f

    @pytest.mark.parametrize(
        "text, col",
        [("p and", 6), ("G[3,1] p", 2), ("G[0.5,2] p", 3), ("F p", 3), ("(p", 3), ("p q", 3)],
    )
    def test_syntax_errors_carry_position(self, text, col):
        with pytest.raises(STLSyntaxError) as info:
            parse_formula(text)
        assert info.value.line == 1 and info.value.column == col

    def test_unknown_predicate_against_table(self):
        with pytest.raises(STLSyntaxError, match="unknown predicate 'x'"):
            parse_formula("x and p", ["p"])
        assert parse_formula("p", {"p": None}) == P


def test_time_horizon():
    assert time_horizon(P) == 0
    assert time_horizon(Eventually(Interval(1, 3), Always(Interval(0, 2), P))) == 5
    assert time_horizon(Until(Interval(0, 4), P, Eventually(Interval(0, 1), Q))) == 5
    assert time_horizon(Always(Interval(0, INF), P)) == math.inf
    # past operators do not look ahead
    assert time_horizon(Historically(Interval(0, 9), P)) == 0


def test_predicate_names_and_nodes():
    f = parse_formula("G[0,inf] (p -> F[1,3] (q U[0,2] r))")
    assert predicate_names(f) == {"p", "q", "r"}
    assert len(list(iter_nodes(f))) == 7


def test_subformulas_post_order_keeps_duplicates():
    f = And(P, Not(P))
    order = subformulas(f)
    assert [k for k, _ in order] == list(range(4))
    assert [node for _, node in order] == [P, P, Not(P), f]


def test_desugar_implies():
    assert desugar(Implies(P, Q)) == Not(And(P, Not(Q)))


def test_conjunction():
    assert conjunction([]) == TrueF()
    assert conjunction([P]) == P
    assert conjunction([P, Q, R]) == And(P, And(Q, R))
