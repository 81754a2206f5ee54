import json
from fractions import Fraction

import pytest

from qslkit.analysis import default_states, wlp_exact, WSLP
from qslkit.expectation import evaluator, parse_exp
from qslkit.library import (
    ProdCons, check_producer_consumer, running_bounds, running_proof, running_proof_spec, _n,
)
from qslkit.proofcheck import (
    ASTUnverified, EntailmentFails, NonPreciseInvariant, NotTame, NotTerminatingAtom, ProofSchemaError,
    SideConditionFails, build, check, dump_proof, load_proof, walk,
)
from qslkit.state import DomainBounds

B = DomainBounds(vars=("x", "y"), values=(0, 1), locations=(1,), heap_cap=1)


def ok(spec, bounds=B):
    return check(build(spec), bounds)


def test_running_proof_certifies():
    cert = check(running_proof(), running_bounds())
    text = cert.render()
    assert text.startswith("certified: ")
    assert "share" in text and "concur" in text


def test_overclaimed_running_proof_fails_with_replayable_witness():
    with pytest.raises(EntailmentFails) as exc:
        check(running_proof("3/5"), running_bounds())
    e = exc.value
    assert e.witness.lhs > e.witness.rhs
    assert e.replay(running_bounds()) == (e.witness.lhs, e.witness.rhs)


def test_running_proof_nodes_are_sound_for_small_depths():
    """Each wrlp node's pre stays below wslp_n of its post at every bounded state."""
    b = running_bounds()
    ev = evaluator(b)
    for node in walk(running_proof()):
        j = node.judgement
        if j.kind != "wrlp":
            continue
        w = WSLP(j.post, j.invariant, b)
        for st in default_states(j.cmd, [j.pre, j.post, j.invariant], b):
            pre = ev(j.pre, st.stack, st.heap)
            for n in range(7):
                assert pre <= w.value(n, j.cmd, st), (node.rule, st, n)


def test_assign_and_term():
    ok(_n("assign", "[y = 1]", "[x = 1]", cmd="x := y"))
    with pytest.raises(EntailmentFails):
        ok(_n("assign", "1", "[x = 1]", cmd="x := y"))
    ok(_n("term", "[x = 0]", "[x = 0]", cmd="skip"))


def test_heap_rules():
    ok(_n("mut", "[x |-> -]", "[x |-> 1]", cmd="<x> := 1"))
    ok(_n("disp", "[x |-> -]", "emp", cmd="free(x)"))
    ok(_n("look", "[x |-> 1]", "[y = 1] * [x |-> 1]", cmd="y := <x>"))
    ok(_n("alloc", "emp", "[x |-> 0]", cmd="x := new(0)"))
    with pytest.raises(EntailmentFails):
        ok(_n("mut", "1", "1", cmd="<x> := 1"))


def test_if_and_seq():
    ok(_n("if", "1", "[y = 1]",
          _n("assign", "1", "[y = 1]"), _n("assign", "1", "[y = 1]"),
          cmd="if (x = 0) { y := 1 } else { y := 1 }"))
    ok(_n("seq", "1", "[y = 1]", _n("assign", "1", "[x = 1]"), _n("assign", "[x = 1]", "[y = 1]"),
          cmd="x := 1; y := x"))


def test_p_choice_and_div():
    ok(_n("p-choice", "1/2", "[x = 1]", _n("assign", "1", "[x = 1]"), _n("assign", "0", "[x = 1]"),
          cmd="{x := 1} [1/2] {x := 0}"))
    ok(_n("div", "1", "0", cmd="diverge"))


def test_missing_premise_is_a_schema_error():
    with pytest.raises(ProofSchemaError):
        build(_n("seq", "1", "1", _n("assign", "1", "1"), cmd="x := 1; y := 1"))
    with pytest.raises(ProofSchemaError):
        build(_n("bogus", "1", "1", cmd="skip"))
    with pytest.raises(ProofSchemaError):
        load_proof("{not json")


def test_concur_side_condition():
    # thread 1 writes y while thread 2's post mentions y
    spec = _n("concur", "1", "[y = 1]",
              _n("assign", "1", "1"), _n("assign", "1", "[y = 1]"),
              cmd="{y := 1} ||| {x := 1}")
    with pytest.raises(SideConditionFails):
        ok(spec)


def test_frame():
    ok(_n("frame", "[x |-> -] ** [y = 1]", "[x |-> 1] ** [y = 1]",
          _n("mut", "[x |-> -]", "[x |-> 1]"), cmd="<x> := 1", frame="[y = 1]"))
    with pytest.raises(SideConditionFails):
        ok(_n("frame", "[x |-> -] ** [y = 1]", "[x |-> 1] ** [y = 1]",
              _n("assign", "[x |-> -]", "[x |-> 1]"), cmd="y := 0", frame="[y = 1]"))


def test_max_min_convex():
    a = _n("assign", "[y = 0]", "[x = 0]")
    b = _n("assign", "[y = 1]", "[x = 1]")
    ok(_n("max", "max([y = 0], [y = 1])", "max([x = 0], [x = 1])", a, b, cmd="x := y"))
    ok(_n("min", "min([y = 0], [y = 1])", "min([x = 0], [x = 1])", a, b, cmd="x := y"))
    ok(_n("convex", "1/2 * [y = 0] + 1/2 * [y = 1]", "1/2 * [x = 0] + 1/2 * [x = 1]", a, b,
          cmd="x := y", weight="1/2"))
    with pytest.raises(NonPreciseInvariant):
        ok(_n("min", "0", "0", _n("assign", "0", "0"), _n("assign", "0", "0"),
              cmd="x := y", invariant="[(x |-> - || emp)]"))


def test_atomic_and_atom():
    ok(_n("atomic", "1/2", "[x = 1]",
          _n("p-choice", "1/2", "[x = 1]", _n("assign", "1", "[x = 1]"), _n("assign", "0", "[x = 1]")),
          cmd="atomic { {x := 1} [1/2] {x := 0} }"))
    with pytest.raises(NotTame):
        ok(_n("atomic", "1", "1", _n("alloc", "1", "1"), cmd="atomic { x := new(0) }"))
    with pytest.raises(NotTerminatingAtom):
        ok(_n("atom", "1", "1", _n("seq", "1", "1", _n("assign", "1", "1"), _n("assign", "1", "1")),
              cmd="x := 1; y := 1"))


def test_superlin_needs_termination():
    prem = lambda pre, post: _n("wlp-wrlp", pre, post, _n("assign", pre, post))
    spec = _n("superlin", "[y = 1]", "1/2 * [x = 1] + 1/2 * [x = 1]",
              prem("1/2 * [y = 1]", "1/2 * [x = 1]"), prem("1/2 * [y = 1]", "1/2 * [x = 1]"),
              cmd="x := y", a="1")
    ok(spec)
    bad = _n("superlin", "0", "0",
             _n("wlp-wrlp", "0", "0", _n("div", "0", "0")), _n("wlp-wrlp", "0", "0", _n("div", "0", "0")),
             cmd="diverge", a="1")
    with pytest.raises(ASTUnverified):
        ok(bad)
    bad["payload"]["ast"] = "assert"
    assert "ASSERTED" in ok(bad).render()


def test_json_round_trip():
    node = running_proof()
    again = load_proof(dump_proof(node))
    assert dump_proof(again) == dump_proof(node)
    assert check(again, running_bounds()).conclusion == node.judgement


def test_producer_consumer_smallest_instance():
    res = check_producer_consumer(0, Fraction(1, 2), [0])
    assert res.value_at_zero == Fraction(1, 2)
    inst = ProdCons(0, Fraction(1, 2), [0])
    assert wlp_exact(inst.program(), inst.post(), inst.zero_state(), inst.bounds()) >= res.value_at_zero
