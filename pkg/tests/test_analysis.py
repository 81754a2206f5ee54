from fractions import Fraction

import pytest
from hypothesis import assume, given, settings

from qslkit.analysis import (
    check_ast, prefer, scheduler_value, wlp_bracket, wlp_brackets, wlp_exact, wslp_n, wslp_value,
)
from qslkit.expectation import EMP, Const, NonQualitativeError, Mul, parse_exp
from qslkit.library import (
    RUNNING_INVARIANT, jones_bounds, jones_program, running_bounds, running_program, running_state,
)
from qslkit.state import Heap, ProgState, Stack
from qslkit.syntax import parse_program, size
from strategies import PROG_BOUNDS, programs

HALF = Fraction(1, 2)
Y0 = parse_exp("[y = 0]")


def zero_x():
    return ProgState(Stack.of(("x",), {}), Heap())


def test_jones_values():
    b = jones_bounds()
    assert wlp_exact(jones_program(), parse_exp("[x = 0]"), zero_x(), b) == HALF
    assert wlp_exact(jones_program(), parse_exp("[x = 1]"), zero_x(), b) == HALF
    assert wlp_exact(jones_program(), parse_exp("[x = 0] + [x = 1]"), zero_x(), b) == 1


def test_running_example_values():
    b = running_bounds()
    assert wlp_exact(running_program(), Y0, running_state(), b) == HALF
    assert wlp_exact(running_program(), Y0, running_state(heap={}), b) == 0


def test_diverge_is_liberal_one():
    b = jones_bounds()
    br = wlp_bracket(parse_program("diverge"), Const(0), zero_x(), b)
    assert br.exact and br.lower == 1
    assert str(br) == "1\t1\texact"


def test_unsnapped_bracket_contains_exact_value():
    b = running_bounds()
    br = wlp_bracket(running_program(), Y0, running_state(), b, snap=False)
    assert br.lower <= HALF <= br.upper
    assert br.width <= Fraction(1, 10 ** 6)


def test_trace_is_monotone():
    run = wlp_brackets(running_program(), Y0, [running_state()], running_bounds(), snap=False)
    lows = [t[1] for t in run.trace]
    ups = [t[2] for t in run.trace]
    assert lows == sorted(lows) and ups == sorted(ups, reverse=True)


def test_frontier_widens_bracket():
    c = parse_program("x := 0; x := 1; x := 0")
    br = wlp_bracket(c, parse_exp("[x = 0]"), zero_x(), jones_bounds(), step_cap=1)
    assert br.frontier and not br.exact


def test_ast_examples():
    b = jones_bounds()
    assert check_ast(jones_program(), b).ast
    assert not check_ast(parse_program("diverge"), b).ast
    r = check_ast(running_program(), running_bounds(), [running_state()])
    assert not r.ast and r.witness


def test_scheduler_values():
    b = running_bounds()
    assert scheduler_value(running_program(), Y0, running_state(), b, prefer("C2")) == 1
    assert scheduler_value(running_program(), Y0, running_state(), b, prefer("C1")) == HALF


def test_wslp_with_emp_is_antitone_and_above_wlp():
    b = running_bounds()
    vals = [wslp_value(running_program(), Y0, EMP, running_state(), b, n) for n in range(0, 12)]
    assert vals == sorted(vals, reverse=True)
    assert all(v >= HALF for v in vals)
    assert vals[0] == 1


def test_wslp_with_resource_invariant():
    b = running_bounds()
    I = parse_exp(RUNNING_INVARIANT)
    st0 = ProgState(Stack.of(("r", "y"), {"r": 1}), Heap())
    # the invariant supplies the shared cell, so the program never aborts
    tbl = wslp_n(running_program(), Y0, I, b, 8, states=[st0])
    assert tbl[st0] >= HALF


def test_wslp_rejects_quantitative_invariant():
    with pytest.raises(NonQualitativeError):
        wslp_n(jones_program(), Const(1), Const(HALF), jones_bounds(), 1)


def _one_state(c, X):
    vs = sorted(set(PROG_BOUNDS.vars))
    return ProgState(Stack.of(vs, {}), Heap())


@settings(max_examples=20)
@given(programs(max_leaves=5))
def test_lower_bracket_below_memoryless_schedulers(c):
    assume(size(c) <= 8)
    X = parse_exp("[x = 0]")
    st0 = _one_state(c, X)
    br = wlp_bracket(c, X, st0, PROG_BOUNDS, step_cap=None, node_cap=20_000)
    for pol in (prefer("C1"), prefer("C2")):
        v = scheduler_value(c, X, st0, PROG_BOUNDS, pol, node_cap=20_000)
        assert br.lower <= v


@settings(max_examples=20)
@given(programs(max_leaves=5))
def test_monotone_in_post(c):
    assume(size(c) <= 8)
    st0 = _one_state(c, None)
    lo = wlp_bracket(c, parse_exp("1/2 * [x = 0]"), st0, PROG_BOUNDS)
    hi = wlp_bracket(c, parse_exp("max([x = 0], [y = 1])"), st0, PROG_BOUNDS)
    assert lo.lower <= hi.upper


@settings(max_examples=20)
@given(programs(max_leaves=5, loops=False))
def test_superlinear_on_terminating_programs(c):
    assume(size(c) <= 8)
    st0 = _one_state(c, None)
    assume(check_ast(c, PROG_BOUNDS, [st0]).ast)
    X, Y = parse_exp("1/2 * [x = 0]"), parse_exp("1/2 * [y = 1]")
    both = wlp_exact(c, parse_exp("1/2 * [x = 0] + 1/2 * [y = 1]"), st0, PROG_BOUNDS)
    assert both >= wlp_exact(c, X, st0, PROG_BOUNDS) + wlp_exact(c, Y, st0, PROG_BOUNDS)
