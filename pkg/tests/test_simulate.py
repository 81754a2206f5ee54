from fractions import Fraction

import pytest

from qslkit.expectation import Const, parse_exp
from qslkit.library import jones_bounds, jones_program, running_bounds, running_program, running_state
from qslkit.simulate import (
    FixedPriority, RoundRobinThreads, UniformRandom, estimate_liberal, make_policy, sample_run, thread_of,
)
from qslkit.state import Heap, ProgState, Stack
from qslkit.syntax import parse_program

Y0 = parse_exp("[y = 0]")


def test_thread_of_label():
    assert thread_of("C1,C2,assign") == "C1,C2"
    assert thread_of("assign") == ""


def test_same_seed_same_result():
    a = estimate_liberal(running_program(), Y0, running_state(), UniformRandom(3), 200, 100, 11, running_bounds())
    b = estimate_liberal(running_program(), Y0, running_state(), UniformRandom(3), 200, 100, 11, running_bounds())
    assert a.scores == b.scores and a.mean == b.mean


def test_trials_do_not_depend_on_order():
    pol = RoundRobinThreads(5)
    runs = [sample_run(running_program(), running_state(), pol, 4, 100, running_bounds(), trial=t) for t in range(5)]
    assert sample_run(running_program(), running_state(), pol, 4, 100, running_bounds(), trial=3) == runs[3]


def test_starving_thread_one_scores_one():
    est = estimate_liberal(running_program(), Y0, running_state(), FixedPriority(("C2",)), 20, 50, 0, running_bounds())
    assert est.mean == 1 and est.cutoff == 20


def test_jones_near_half():
    st0 = ProgState(Stack.of(("x",), {}), Heap())
    est = estimate_liberal(jones_program(), parse_exp("[x = 0]"), st0, UniformRandom(0), 4000, 10, 7, jones_bounds())
    assert abs(float(est.mean) - 0.5) < 4 * est.stderr + 1e-9


def test_outcome_kinds():
    st0 = ProgState(Stack.of(("x",), {}), Heap())
    b = jones_bounds()
    assert sample_run(parse_program("diverge"), st0, UniformRandom(0), 0, 25, b).kind == "cutoff"
    assert sample_run(parse_program("x := <x>"), st0, UniformRandom(0), 0, 25, b).kind == "aborted"
    est = estimate_liberal(parse_program("x := <x>"), Const(1), st0, UniformRandom(0), 5, 25, 0, b)
    assert est.mean == 0 and est.aborted == 5


def test_estimate_tsv_and_unpacking():
    st0 = ProgState(Stack.of(("x",), {}), Heap())
    est = estimate_liberal(parse_program("skip"), Const(Fraction(1, 2)), st0, UniformRandom(0), 3, 5, 0, jones_bounds())
    mean, se = est
    assert mean == Fraction(1, 2) and se == 0
    assert est.tsv().split("\t")[:2] == ["3", "0.500000"]


def test_policy_names():
    assert isinstance(make_policy("left"), FixedPriority)
    with pytest.raises(ValueError):
        make_policy("nope")
    with pytest.raises(ValueError):
        estimate_liberal(parse_program("skip"), Const(1), None, UniformRandom(0), 0, 5, 0, jones_bounds())
