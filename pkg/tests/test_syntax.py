from fractions import Fraction

import pytest
from hypothesis import given, settings

from qslkit.syntax import (
    Alloc, Assign, Atomic, Concurrent, Diverge, Free, IfThenElse, Lookup, Mutate, Num, ParseError,
    ProbChoice, ProbLit, Seq, Terminated, Var, While, free_vars_cmd, is_probabilistic, is_tame,
    is_terminating_atom, parse_guard, parse_program, parse_prob, pretty, size, subcommands,
    written_vars, SKIP,
)
from strategies import programs


def test_diverge_keyword():
    assert parse_program("diverge") == Diverge()


def test_probabilistic_choice_literal():
    c = parse_program("{r := 0} [0.5] {r := 1}")
    assert c == ProbChoice(Assign("r", Num(0)), ProbLit(Fraction(1, 2)), Assign("r", Num(1)))


def test_incomplete_parallel_is_an_error():
    with pytest.raises(ParseError):
        parse_program("x := 1 |||")


def test_parse_error_has_location():
    with pytest.raises(ParseError) as exc:
        parse_program("x := 1;\ny := ;")
    assert "2:" in str(exc.value)


def test_reserved_word_cannot_be_assigned():
    with pytest.raises(ParseError):
        parse_program("while := 1")


def test_if_without_else_is_sugar_for_skip():
    c = parse_program("if (x = 0) { x := 1 }")
    assert c == IfThenElse(parse_guard("x = 0"), Assign("x", Num(1)), SKIP)


def test_sequence_is_right_associative():
    c = parse_program("a := 1; b := 2; c := 3")
    assert isinstance(c, Seq) and isinstance(c.second, Seq)


def test_parallel_composition_needs_braces_and_nests_right():
    c = parse_program("{a := 1} ||| {b := 2} ||| {c := 3}")
    assert isinstance(c, Concurrent) and isinstance(c.right, Concurrent)


def test_heap_commands():
    c = parse_program("x := new(1, 2); <x + 1> := 3; y := <x>; free(x)")
    cmds = [c.first, c.second.first, c.second.second.first, c.second.second.second]
    assert isinstance(cmds[0], Alloc) and len(cmds[0].args) == 2
    assert isinstance(cmds[1], Mutate)
    assert isinstance(cmds[2], Lookup)
    assert isinstance(cmds[3], Free)


def test_skip_is_terminated():
    assert parse_program("skip") == Terminated()


def test_probability_case_split():
    p = parse_prob("1/3")
    assert p == ProbLit(Fraction(1, 3))


def test_running_example_shape():
    c = parse_program("<r> := -1; {{<r> := 0} [1/2] {<r> := 1}} ||| {y := <r>; while (y = -1) {y := <r>}}")
    assert isinstance(c.first, Mutate)
    par = c.second
    assert isinstance(par, Concurrent)
    assert isinstance(par.left, ProbChoice)
    assert isinstance(par.right.second, While)


def test_written_and_free_variables():
    c = parse_program("x := <z + y>; w := new(x); {<w> := q} [1/2] {skip}")
    assert written_vars(c) == {"x", "w"}
    assert free_vars_cmd(c) == {"x", "y", "z", "w", "q"}


def test_terminating_atoms():
    assert is_terminating_atom(parse_program("<r> := -1"))
    assert is_terminating_atom(parse_program("x := new(0)"))
    assert not is_terminating_atom(parse_program("x := 1; y := 1"))
    assert not is_terminating_atom(Diverge())


def test_tame():
    assert is_tame(parse_program("while (x = 0) { {x := 1} [1/2] {x := 0} }"))
    assert not is_tame(parse_program("x := new(0)"))
    assert not is_tame(parse_program("{x := 1} ||| {y := 1}"))


def test_probabilistic_flag():
    assert is_probabilistic(parse_program("{x := 1} [1/2] {x := 0}"))
    assert not is_probabilistic(parse_program("x := 1; while (x = 0) { y := <x> }"))
    # an atomic block may resolve to a distribution, so it counts conservatively
    assert is_probabilistic(parse_program("x := 1; atomic { y := 2 }"))


def test_atomic_keyword():
    assert isinstance(parse_program("atomic { x := 1 }"), Atomic)


@settings(max_examples=200)
@given(programs(max_leaves=6))
def test_pretty_parse_round_trip(c):
    assert parse_program(pretty(c)) == c


@settings(max_examples=200)
@given(programs(max_leaves=6))
def test_written_subset_of_free(c):
    assert written_vars(c) <= free_vars_cmd(c)


@settings(max_examples=200)
@given(programs(max_leaves=6))
def test_tameness_closed_under_subterms(c):
    if is_tame(c):
        assert all(is_tame(d) for d in subcommands(c))


def test_size_counts_nodes():
    assert size(parse_program("x := 1; y := 2")) == 3
