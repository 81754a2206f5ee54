from fractions import Fraction

import pytest
from hypothesis import given, settings

from qslkit.expectation import (
    EMP, Add, Allocated, BigSepMul, Const, Emp, EqExpr, ExpectationError, ExpectationRangeError,
    GuardedWand, InfVal, Iverson, Max, Mul, Or, Pow, PointsTo, SepMul, Subst, SupVal, check_well_formed,
    counterexample, entails, equivalent, eval_exp, evaluator, fmt_exp, fv_exp, is_precise,
    is_qualitative, parse_exp, states_for,
)
from qslkit.state import DomainBounds, Heap, ProgState, Stack, enumerate_heaps, enumerate_stacks
from qslkit.syntax import BinOp, Num, Var
from strategies import LAW_BOUNDS, expectations, qualitative as qualitative_exps

X, Y, R = Var("x"), Var("y"), Var("r")
B = DomainBounds(vars=("x", "y"), values=(-1, 1), locations=(1, 2), heap_cap=2)
RB = DomainBounds(vars=("r",), values=(-1, 1), locations=(1,), heap_cap=1)


def all_states(bounds, vs):
    for s in enumerate_stacks(vs, bounds):
        for h in enumerate_heaps(bounds):
            yield s, h


def test_sepmul_with_emp_is_neutral_on_example():
    e = Mul(Const(Fraction(1, 2)), Iverson(PointsTo(X, (Y,))))
    assert equivalent(SepMul(EMP, e), e, B)


# F = [x |-> -] ** ([x |-> y] -* 1/2 * [x |-> -]) and Y = 1/2 * [x |-> -]
F = SepMul(Iverson(Allocated(X)), GuardedWand(Iverson(PointsTo(X, (Y,))), Mul(Const(Fraction(1, 2)), Iverson(Allocated(X)))))
HALF_ALLOC = Mul(Const(Fraction(1, 2)), Iverson(Allocated(X)))


def test_worked_example_f_equals_y():
    ev = evaluator(B)
    for s, h in all_states(B, {"x", "y"}):
        assert ev(F, s, h) == ev(HALF_ALLOC, s, h)


def test_worked_example_z_below_f():
    assert entails(Mul(Const(Fraction(1, 2)), Iverson(PointsTo(X, (Y,)))), F, B)


def test_wand_without_extension_is_one():
    s = Stack.of(("x",), {"x": 1})
    v = eval_exp(GuardedWand(Iverson(PointsTo(X, (Num(0),))), Const(0)), ProgState(s, Heap({1: 0})), B)
    assert v == 1


def test_wand_with_non_qualitative_guard_is_rejected():
    with pytest.raises(ExpectationError):
        check_well_formed(GuardedWand(Const(Fraction(1, 2)), Const(1)), B)


def test_qualitative_examples():
    assert is_qualitative(Iverson(PointsTo(R, (Num(-1),))), RB)
    assert not is_qualitative(Const(Fraction(1, 2)), RB)
    assert is_qualitative(Max(Iverson(PointsTo(R, (Num(0),))), Iverson(PointsTo(R, (Num(-1),)))), RB)


def test_precise_examples():
    assert is_precise(EMP, B)
    assert is_precise(Max(Iverson(PointsTo(R, (Num(0),))), Iverson(PointsTo(R, (Num(-1),)))), RB)
    assert not is_precise(Iverson(Or(Allocated(X), Emp())), B)


def test_entailment_examples():
    assert entails(Const(0), F, B)
    w = counterexample(Const(Fraction(3, 5)), Const(Fraction(1, 2)), B)
    assert w is not None and (w.lhs, w.rhs) == (Fraction(3, 5), Fraction(1, 2))


def test_add_above_one_is_rejected():
    with pytest.raises(ExpectationRangeError):
        check_well_formed(Add(Const(Fraction(2, 3)), Const(Fraction(2, 3))), B)
    check_well_formed(Add(Mul(Iverson(EqExpr(X, Num(0))), Const(1)), Mul(Iverson(EqExpr(X, Num(1))), Const(1))), B)


def test_constants_stay_in_range():
    with pytest.raises(ExpectationRangeError):
        Const(Fraction(3, 2))


def test_substitution():
    ev = evaluator(B)
    e = Subst(Iverson(EqExpr(X, Num(0))), "x", Num(0))
    assert all(ev(e, s, h) == 1 for s, h in all_states(B, {"x"}))
    g = Iverson(PointsTo(Y, (Num(1),)))
    vac = Subst(g, "x", Num(1))
    assert all(ev(vac, s, h) == ev(g, s, h) for s, h in all_states(B, {"x", "y"}))


def test_free_variables_are_syntactic():
    e = Iverson(PointsTo(BinOp("+", Var("z2"), Var("i")), (Num(0),)))
    assert fv_exp(e) == {"z2", "i"}
    assert fv_exp(SupVal("y", Iverson(EqExpr(X, Y)))) == {"x"}


def test_quantifiers():
    ev = evaluator(B)
    s = Stack.of(("x", "y"), {"x": 1})
    h = Heap({1: -1})
    assert ev(SupVal("y", Iverson(PointsTo(X, (Y,)))), s, h) == 1
    assert ev(InfVal("y", Iverson(PointsTo(X, (Y,)))), s, h) == 0
    locs = SupVal("y", Iverson(PointsTo(Y, (Num(-1),))), over="locations")
    assert ev(locs, s, h) == 1


def test_power_and_bigstar():
    ev = evaluator(B)
    s = Stack.of(("x", "y"), {"x": 1})
    assert ev(Pow(Const(Fraction(1, 2)), X), s, Heap()) == Fraction(1, 2)
    assert ev(Pow(Const(0), Num(0)), s, Heap()) == 1
    cells = BigSepMul("y", Num(1), Num(2), Iverson(PointsTo(Y, (Num(0),))))
    assert ev(cells, s, Heap({1: 0, 2: 0})) == 1
    assert ev(cells, s, Heap({1: 0})) == 0
    assert ev(BigSepMul("y", Num(2), Num(1), Const(0)), s, Heap()) == 1


def test_parse_examples():
    assert parse_exp("max([r |-> 0], [r |-> -1])") == Max(Iverson(PointsTo(R, (Num(0),))), Iverson(PointsTo(R, (Num(-1),))))
    assert parse_exp("emp ** 1/2") == SepMul(EMP, Const(Fraction(1, 2)))
    assert parse_exp("[x |-> -]") == Iverson(Allocated(X))
    assert parse_exp("[x |-> y] -* 1") == GuardedWand(Iverson(PointsTo(X, (Y,))), Const(1))


@settings(max_examples=200)
@given(expectations)
def test_format_parse_round_trip(e):
    assert parse_exp(fmt_exp(e)) == e


@settings(max_examples=100)
@given(expectations)
def test_values_stay_in_unit_interval(e):
    ev = evaluator(LAW_BOUNDS)
    for s, h in states_for([e], LAW_BOUNDS):
        assert 0 <= ev(e, s, h) <= 1


def test_wand_superdistribution_over_plus_fails_without_extensions():
    # phi = [x |-> 0] has no disjoint extension of {1: 0} at x = 1, so every wand is 1
    phi = Iverson(PointsTo(X, (Num(0),)))
    half = Const(Fraction(1, 2))
    ev = evaluator(B)
    s, h = Stack.of(("x", "y"), {"x": 1}), Heap({1: 0})
    lhs = ev(GuardedWand(phi, Add(half, half)), s, h)
    rhs = ev(GuardedWand(phi, half), s, h) + ev(GuardedWand(phi, half), s, h)
    assert (lhs, rhs) == (1, 2)


@settings(max_examples=100)
@given(qualitative_exps, expectations, expectations)
def test_wand_superdistribution_over_plus_truncated(phi, Y, Z):
    ev = evaluator(LAW_BOUNDS)
    Yh, Zh = Mul(Const(Fraction(1, 2)), Y), Mul(Const(Fraction(1, 2)), Z)
    for s, h in states_for([phi, Y, Z], LAW_BOUNDS):
        lhs = ev(GuardedWand(phi, Add(Yh, Zh)), s, h)
        assert lhs >= min(1, ev(GuardedWand(phi, Yh), s, h) + ev(GuardedWand(phi, Zh), s, h))
