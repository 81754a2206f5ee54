"""Checker for derivations of resource-safe wlp judgements ``I |= {X} C {Y}``.

A derivation is an explicit tree of ``ProofNode`` objects. Each node names a
rule, carries its judgement and rule payload, and has premise subtrees. Every
inequality side condition is discharged by exhaustive evaluation over the
bounded states, so a certificate is relative to the bounds it was checked at.

Each rule also allows consequence at its boundary: the node's pre may be below
the pre the rule derives and premise posts may be below the node's post. This
is exactly what an extra ``monotonic`` step would add, so it saves writing one
around every rule application.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Optional, Union

from .expectation import (
    EMP, Allocated, Expectation, ExpectationError, GuardedWand, InfVal,
    Iverson, NonQualitativeError, PointsTo, SepMul, Subst, SupVal, Witness,
    evaluator, fmt_exp, fv_exp, is_precise, is_pure, is_qualitative, iv,
    parse_exp, prob_to_exp, states_for,
)
from .state import DomainBounds, eval_prob
from .syntax import (
    Alloc, Assign, Atomic, Command, Concurrent, Diverge, Free, IfThenElse,
    Lookup, Mutate, Negate, ProbChoice, Seq, Terminated, Var, While,
    arith_vars, free_vars_cmd, is_tame, is_terminating_atom, parse_program,
    pretty, written_vars,
)

RULES = (
    "term", "assign", "look", "alloc", "mut", "disp", "seq", "if", "while",
    "div", "p-choice", "atomic", "share", "concur", "superlin", "wlp-wrlp",
    "frame", "atom", "monotonic", "max", "min", "convex",
)
ARITY = {
    "term": 0, "assign": 0, "look": 0, "alloc": 0, "mut": 0, "disp": 0,
    "seq": 2, "if": 2, "while": 1, "div": 0, "p-choice": 2, "atomic": 1,
    "share": 1, "concur": 2, "superlin": 2, "wlp-wrlp": 1, "frame": 1,
    "atom": 1, "monotonic": 1, "max": 2, "min": 2, "convex": 2,
}
WLP_RULES = ("superlin", "wlp-wrlp", "monotonic")


# ---------------------------------------------------------------------------
# errors


class ProofSchemaError(ValueError):
    """Malformed proof document or tree (wrong arity, command mismatch, bad payload)."""


class CheckError(Exception):
    pass


class EntailmentFails(CheckError):
    def __init__(self, location: str, condition: str, lhs, rhs, witness: Witness):
        super().__init__(f"{location}: {condition} fails at {witness}")
        self.location = location
        self.condition = condition
        self.lhs = lhs
        self.rhs = rhs
        self.witness = witness

    def replay(self, bounds: DomainBounds) -> tuple:
        """Re-evaluate both sides at the witness state."""
        ev = evaluator(bounds)
        s, h = self.witness.stack, self.witness.heap
        return _value(ev, self.lhs, s, h), _value(ev, self.rhs, s, h)


class SideConditionFails(CheckError):
    def __init__(self, location: str, rule: str, condition: str, witness):
        super().__init__(f"{location}: {rule}: {condition} (witness: {witness})")
        self.location = location
        self.rule = rule
        self.condition = condition
        self.witness = witness


class NonQualitativeInvariant(CheckError):
    pass


class NonPreciseInvariant(CheckError):
    pass


class NotTame(CheckError):
    pass


class NotTerminatingAtom(CheckError):
    pass


class ASTUnverified(CheckError):
    pass


# ---------------------------------------------------------------------------
# trees


@dataclass(frozen=True)
class Judgement:
    pre: Expectation
    cmd: Command
    post: Expectation
    invariant: Expectation = EMP
    kind: str = "wrlp"  # "wrlp": I |= {pre} cmd {post}; "wlp": pre <= wlp(cmd, post)

    def __str__(self):
        if self.kind == "wlp":
            return f"{fmt_exp(self.pre)} <= wlp({pretty(self.cmd)}, {fmt_exp(self.post)})"
        return f"{fmt_exp(self.invariant)} |= {{{fmt_exp(self.pre)}}} {pretty(self.cmd)} {{{fmt_exp(self.post)}}}"


@dataclass(frozen=True)
class ProofNode:
    rule: str
    judgement: Judgement
    premises: tuple = ()
    payload: dict = field(default_factory=dict)

    def __hash__(self):
        return id(self)


@dataclass
class CertEntry:
    location: str
    rule: str
    condition: str


@dataclass
class Certificate:
    conclusion: Judgement
    entries: list
    ast: list  # (location, "VERIFIED" | "ASSERTED")
    bounds: DomainBounds

    def render(self) -> str:
        lines = [f"certified: {self.conclusion}", f"bounds: {_fmt_bounds(self.bounds)}"]
        for e in self.entries:
            lines.append(f"  {e.location}\t{e.rule}\t{e.condition}")
        for loc, status in self.ast:
            lines.append(f"  {loc}\tAST {status}")
        return "\n".join(lines)


def _fmt_bounds(b: DomainBounds) -> str:
    pins = ",".join(f"{x}={v}" for x, v in b.pinned)
    extra = f" pinned {pins}" if pins else ""
    return (f"values {b.values[0]}..{b.values[1]} locs {','.join(map(str, b.locations))} "
            f"heap-cap {b.heap_cap}{extra}")


# ---------------------------------------------------------------------------
# pointwise combinations that are not expectations themselves


class Comb:
    """Pointwise sum of weighted expectations; weights are rationals, pure expectations, or 1 - pure."""

    def __init__(self, terms: Iterable, text: str):
        self.terms = tuple(terms)
        self.text = text
        fv = frozenset()
        for w, e in self.terms:
            fv |= fv_exp(e)
            if isinstance(w, tuple):
                fv |= fv_exp(w[1])
        self.fv = fv
        self.exprs = [e for _, e in self.terms] + [w[1] for w, _ in self.terms if isinstance(w, tuple)]

    def value(self, ev, s, h) -> Fraction:
        acc = Fraction(0)
        for w, e in self.terms:
            if isinstance(w, tuple):
                kind, we = w
                q = Fraction(ev.ev(we, s, h))
                if kind == "co":
                    q = 1 - q
            else:
                q = Fraction(w)
            if q:
                acc += q * ev.ev(e, s, h)
        return acc

    def __str__(self):
        return self.text


def _value(ev, side, s, h) -> Fraction:
    if isinstance(side, Comb):
        return side.value(ev, s, h)
    return Fraction(ev.ev(side, s, h))


def _exprs(side) -> list:
    return side.exprs if isinstance(side, Comb) else [side]


def _text(side) -> str:
    return str(side) if isinstance(side, Comb) else fmt_exp(side)


# ---------------------------------------------------------------------------
# checking


class Checker:
    def __init__(self, bounds: DomainBounds, verify_ast: bool = True):
        self.bounds = bounds
        self.verify_ast = verify_ast
        self.ev = evaluator(bounds)
        self.entries: list = []
        self.ast: list = []
        self._qual: dict = {}
        self._precise: dict = {}
        self._leq_cache: dict = {}

    # oracles
    def leq(self, lhs, rhs, loc: str, rule: str, what: str) -> None:
        cond = f"{what}: {_text(lhs)} <= {_text(rhs)}"
        if not isinstance(lhs, Comb) and not isinstance(rhs, Comb):
            if lhs == rhs:
                self.entries.append(CertEntry(loc, rule, cond + " (syntactic)"))
                return
            key = (lhs, rhs)
            if key in self._leq_cache:
                self.entries.append(CertEntry(loc, rule, cond))
                return
        ev = self.ev
        try:
            for s, h in states_for(_exprs(lhs) + _exprs(rhs), self.bounds):
                a = _value(ev, lhs, s, h)
                if a == 0:
                    continue
                b = _value(ev, rhs, s, h)
                if a > b:
                    raise EntailmentFails(loc, f"{rule}: {what}", lhs, rhs, Witness(s, h, a, b))
        except ExpectationError as exc:
            raise SideConditionFails(loc, rule, f"{what}: ill-formed expectation", str(exc)) from exc
        if not isinstance(lhs, Comb) and not isinstance(rhs, Comb):
            self._leq_cache[(lhs, rhs)] = True
        self.entries.append(CertEntry(loc, rule, cond))

    def equivalent(self, a: Expectation, b: Expectation, loc: str, rule: str, what: str) -> None:
        if a == b:
            self.entries.append(CertEntry(loc, rule, f"{what}: syntactically equal"))
            return
        self.leq(a, b, loc, rule, what + " (<=)")
        self.leq(b, a, loc, rule, what + " (>=)")

    def qualitative(self, I: Expectation, loc: str) -> None:
        r = self._qual.get(I)
        if r is None:
            try:
                r = I == EMP or is_qualitative(I, self.bounds)
            except ExpectationError:
                r = False
            self._qual[I] = r
        if not r:
            raise NonQualitativeInvariant(f"{loc}: resource invariant {fmt_exp(I)} is not qualitative")

    def precise(self, I: Expectation, loc: str, rule: str) -> None:
        r = self._precise.get(I)
        if r is None:
            r = is_precise(I, self.bounds)
            self._precise[I] = r
        if not r:
            raise NonPreciseInvariant(f"{loc}: {rule} needs a precise resource invariant, {fmt_exp(I)} is not")
        self.entries.append(CertEntry(loc, rule, f"invariant precise: {fmt_exp(I)}"))

    def disjoint(self, wr: frozenset, fv: frozenset, loc: str, rule: str, what: str) -> None:
        clash = sorted(wr & fv)
        if clash:
            raise SideConditionFails(loc, rule, f"{what} (syntactic free variables)", ",".join(clash))
        self.entries.append(CertEntry(loc, rule, f"{what}: written {sorted(wr)} vs free {sorted(fv)}"))

    # tree walk
    def check(self, node: ProofNode, loc: str = "root") -> None:
        j = node.judgement
        rule = node.rule
        if rule not in RULES:
            raise ProofSchemaError(f"{loc}: unknown rule {rule!r}")
        if len(node.premises) != ARITY[rule]:
            raise ProofSchemaError(f"{loc}: rule {rule} takes {ARITY[rule]} premises, got {len(node.premises)}")
        if j.kind == "wlp" and rule not in WLP_RULES:
            raise ProofSchemaError(f"{loc}: rule {rule} does not conclude a wlp bound")
        if j.kind == "wrlp" and rule in ("superlin", "wlp-wrlp"):
            raise ProofSchemaError(f"{loc}: rule {rule} concludes a wlp bound, not a wrlp judgement")
        if j.kind == "wrlp":
            self.qualitative(j.invariant, loc)
        here = f"{loc} ({rule})"
        getattr(self, "_r_" + rule.replace("-", "_"))(node, j, here)
        for k, p in enumerate(node.premises):
            self.check(p, f"{loc}/{k}")

    def _premise(self, node, k, cmd, inv, loc, kind="wrlp") -> Judgement:
        p = node.premises[k].judgement
        if p.cmd != cmd:
            raise ProofSchemaError(f"{loc}: premise {k} is about {pretty(p.cmd)!r}, expected {pretty(cmd)!r}")
        if p.kind != kind:
            raise ProofSchemaError(f"{loc}: premise {k} must be a {kind} judgement")
        if kind == "wrlp" and inv is not None and p.invariant != inv:
            raise ProofSchemaError(f"{loc}: premise {k} has invariant {fmt_exp(p.invariant)}, expected {fmt_exp(inv)}")
        return p

    def _cmd(self, j, types, loc):
        if not isinstance(j.cmd, types):
            raise ProofSchemaError(f"{loc}: rule does not apply to {pretty(j.cmd)!r}")
        return j.cmd

    # basic commands
    def _r_term(self, node, j, loc):
        self._cmd(j, Terminated, loc)
        self.leq(j.pre, j.post, loc, "term", "pre below post")

    def _r_assign(self, node, j, loc):
        c = self._cmd(j, Assign, loc)
        self.leq(j.pre, Subst(j.post, c.var, c.expr), loc, "assign", "pre below post[x/e]")

    def _r_look(self, node, j, loc):
        c = self._cmd(j, Lookup, loc)
        v = _fresh(fv_exp(j.post) | arith_vars(c.addr) | {c.var})
        cell = Iverson(PointsTo(c.addr, (Var(v),)))
        rhs = SupVal(v, SepMul(cell, GuardedWand(cell, Subst(j.post, c.var, Var(v)))))
        self.leq(j.pre, rhs, loc, "look", "pre below sup v. (e |-> v) ** ((e |-> v) -* post[x/v])")

    def _r_alloc(self, node, j, loc):
        c = self._cmd(j, Alloc, loc)
        v = _fresh(fv_exp(j.post) | {c.var} | frozenset().union(*(arith_vars(a) for a in c.args)))
        block = Iverson(PointsTo(Var(v), c.args))
        rhs = InfVal(v, GuardedWand(block, Subst(j.post, c.var, Var(v))), over="locations")
        self.leq(j.pre, rhs, loc, "alloc", "pre below inf v. (v |-> es) -* post[x/v]")

    def _r_mut(self, node, j, loc):
        c = self._cmd(j, Mutate, loc)
        rhs = SepMul(Iverson(Allocated(c.addr)), GuardedWand(Iverson(PointsTo(c.addr, (c.value,))), j.post))
        self.leq(j.pre, rhs, loc, "mut", "pre below (e |-> -) ** ((e |-> e') -* post)")

    def _r_disp(self, node, j, loc):
        c = self._cmd(j, Free, loc)
        self.leq(j.pre, SepMul(j.post, Iverson(Allocated(c.addr))), loc, "disp", "pre below post ** (e |-> -)")

    # control flow
    def _r_seq(self, node, j, loc):
        c = self._cmd(j, Seq, loc)
        p1 = self._premise(node, 0, c.first, j.invariant, loc)
        p2 = self._premise(node, 1, c.second, j.invariant, loc)
        self.leq(j.pre, p1.pre, loc, "seq", "pre below first pre")
        mid = node.payload.get("mid")
        if mid is not None:
            self.leq(p1.post, mid, loc, "seq", "first post below intermediate")
            self.leq(mid, p2.pre, loc, "seq", "intermediate below second pre")
        else:
            self.leq(p1.post, p2.pre, loc, "seq", "first post below second pre")
        self.leq(p2.post, j.post, loc, "seq", "second post below post")

    def _r_if(self, node, j, loc):
        c = self._cmd(j, IfThenElse, loc)
        p1 = self._premise(node, 0, c.then, j.invariant, loc)
        p2 = self._premise(node, 1, c.orelse, j.invariant, loc)
        g = iv(c.guard)
        ng = iv(Negate(c.guard))
        rhs = Comb([(1, _mul(g, p1.pre)), (1, _mul(ng, p2.pre))], f"[B] * {fmt_exp(p1.pre)} + [!B] * {fmt_exp(p2.pre)}")
        self.leq(j.pre, rhs, loc, "if", "pre below [B] * X1 + [!B] * X2")
        self.leq(p1.post, j.post, loc, "if", "then-branch post below post")
        self.leq(p2.post, j.post, loc, "if", "else-branch post below post")

    def _r_while(self, node, j, loc):
        c = self._cmd(j, While, loc)
        J = node.payload.get("invariant")
        if J is None:
            raise ProofSchemaError(f"{loc}: while needs a loop invariant payload")
        p = self._premise(node, 0, c.body, j.invariant, loc)
        g = iv(c.guard)
        ng = iv(Negate(c.guard))
        self.leq(j.pre, J, loc, "while", "pre below loop invariant")
        rhs = Comb([(1, _mul(g, p.pre)), (1, _mul(ng, j.post))], f"[B] * {fmt_exp(p.pre)} + [!B] * {fmt_exp(j.post)}")
        self.leq(J, rhs, loc, "while", "J <= [B] * X + [!B] * Y")
        self.leq(p.post, J, loc, "while", "body post below loop invariant")

    def _r_div(self, node, j, loc):
        self._cmd(j, Diverge, loc)
        self.entries.append(CertEntry(loc, "div", "axiom"))

    def _r_p_choice(self, node, j, loc):
        c = self._cmd(j, ProbChoice, loc)
        p1 = self._premise(node, 0, c.left, j.invariant, loc)
        p2 = self._premise(node, 1, c.right, j.invariant, loc)
        ep = prob_to_exp(c.prob)
        rhs = Comb([(("exp", ep), p1.pre), (("co", ep), p2.pre)],
                   f"p * {fmt_exp(p1.pre)} + (1 - p) * {fmt_exp(p2.pre)}")
        self.leq(j.pre, rhs, loc, "p-choice", "pre below p * X1 + (1 - p) * X2")
        self.leq(p1.post, j.post, loc, "p-choice", "left post below post")
        self.leq(p2.post, j.post, loc, "p-choice", "right post below post")

    def _r_atomic(self, node, j, loc):
        c = self._cmd(j, Atomic, loc)
        if not is_tame(c.body):
            raise NotTame(f"{loc}: atomic body {pretty(c.body)!r} is not tame")
        p = self._premise(node, 0, c.body, EMP, loc)
        self.leq(j.pre, p.pre, loc, "atomic", "pre below body pre")
        self.leq(p.post, SepMul(j.post, j.invariant), loc, "atomic", "body post below post ** I")

    def _r_share(self, node, j, loc):
        pi = node.payload.get("pi")
        if pi is None:
            raise ProofSchemaError(f"{loc}: share needs a shared expectation payload")
        p = self._premise(node, 0, j.cmd, None, loc)
        self.qualitative(p.invariant, loc)
        self.equivalent(p.invariant, _sep(j.invariant, pi), loc, "share", "premise invariant is I ** pi")
        self.leq(j.pre, SepMul(p.pre, pi), loc, "share", "pre below X ** pi")
        self.leq(SepMul(p.post, pi), j.post, loc, "share", "Y ** pi below post")

    def _r_concur(self, node, j, loc):
        c = self._cmd(j, Concurrent, loc)
        p1 = self._premise(node, 0, c.left, j.invariant, loc)
        p2 = self._premise(node, 1, c.right, j.invariant, loc)
        fvI = fv_exp(j.invariant)
        self.disjoint(written_vars(c.left), free_vars_cmd(c.right) | fv_exp(p2.post) | fvI, loc, "concur",
                      "wr(C1) disjoint from fv(C2, Y2, I)")
        self.disjoint(written_vars(c.right), free_vars_cmd(c.left) | fv_exp(p1.post) | fvI, loc, "concur",
                      "wr(C2) disjoint from fv(C1, Y1, I)")
        self.leq(j.pre, SepMul(p1.pre, p2.pre), loc, "concur", "pre below X1 ** X2")
        self.leq(SepMul(p1.post, p2.post), j.post, loc, "concur", "Y1 ** Y2 below post")

    # auxiliary rules
    def _r_superlin(self, node, j, loc):
        a = node.payload.get("a")
        if a is None or Fraction(a) < 0:
            raise ProofSchemaError(f"{loc}: superlin needs a scalar a >= 0")
        a = Fraction(a)
        p1 = self._premise(node, 0, j.cmd, None, loc, kind="wlp")
        p2 = self._premise(node, 1, j.cmd, None, loc, kind="wlp")
        mode = node.payload.get("ast", "verify")
        if mode == "assert":
            self.ast.append((loc, "ASSERTED"))
        else:
            from .analysis import check_ast
            res = check_ast(j.cmd, self.bounds)
            if not res.ast:
                raise ASTUnverified(f"{loc}: {pretty(j.cmd)!r} is not AST over the bounds "
                                    f"({len(res.witness)} configurations can avoid termination)")
            self.ast.append((loc, "VERIFIED"))
        self.leq(j.pre, Comb([(a, p1.pre), (1, p2.pre)], f"{a} * {fmt_exp(p1.pre)} + {fmt_exp(p2.pre)}"),
                 loc, "superlin", "pre below a * X' + Y'")
        self.leq(Comb([(a, p1.post), (1, p2.post)], f"{a} * {fmt_exp(p1.post)} + {fmt_exp(p2.post)}"),
                 j.post, loc, "superlin", "a * X + Y below post")

    def _r_wlp_wrlp(self, node, j, loc):
        p = self._premise(node, 0, j.cmd, EMP, loc)
        self.leq(j.pre, p.pre, loc, "wlp-wrlp", "pre below premise pre")
        self.leq(p.post, j.post, loc, "wlp-wrlp", "premise post below post")

    def _r_frame(self, node, j, loc):
        Z = node.payload.get("frame")
        if Z is None:
            raise ProofSchemaError(f"{loc}: frame needs a frame expectation payload")
        p = self._premise(node, 0, j.cmd, j.invariant, loc)
        self.disjoint(written_vars(j.cmd), fv_exp(Z), loc, "frame", "wr(C) disjoint from fv(Z)")
        self.leq(j.pre, SepMul(p.pre, Z), loc, "frame", "pre below X ** Z")
        self.leq(SepMul(p.post, Z), j.post, loc, "frame", "Y ** Z below post")

    def _r_atom(self, node, j, loc):
        if not is_terminating_atom(j.cmd):
            raise NotTerminatingAtom(f"{loc}: {pretty(j.cmd)!r} is not a terminating atom")
        p = self._premise(node, 0, j.cmd, EMP, loc)
        self.leq(SepMul(j.pre, j.invariant), p.pre, loc, "atom", "pre ** I below premise pre")
        self.leq(p.post, SepMul(j.post, j.invariant), loc, "atom", "premise post below post ** I")

    def _r_monotonic(self, node, j, loc):
        p = self._premise(node, 0, j.cmd, j.invariant, loc, kind=j.kind)
        self.leq(j.pre, p.pre, loc, "monotonic", "pre below premise pre")
        self.leq(p.post, j.post, loc, "monotonic", "premise post below post")

    def _two(self, node, j, loc):
        p1 = self._premise(node, 0, j.cmd, j.invariant, loc)
        p2 = self._premise(node, 1, j.cmd, j.invariant, loc)
        return p1, p2

    def _r_max(self, node, j, loc):
        from .expectation import Max
        p1, p2 = self._two(node, j, loc)
        self.leq(j.pre, Max(p1.pre, p2.pre), loc, "max", "pre below max(X, X')")
        self.leq(Max(p1.post, p2.post), j.post, loc, "max", "max(Y, Y') below post")

    def _r_min(self, node, j, loc):
        from .expectation import Min
        p1, p2 = self._two(node, j, loc)
        self.precise(j.invariant, loc, "min")
        self.leq(j.pre, Min(p1.pre, p2.pre), loc, "min", "pre below min(X, X')")
        self.leq(Min(p1.post, p2.post), j.post, loc, "min", "min(Y, Y') below post")

    def _r_convex(self, node, j, loc):
        E = node.payload.get("weight")
        if E is None:
            raise ProofSchemaError(f"{loc}: convex needs a weight payload")
        if not is_pure(E):
            raise SideConditionFails(loc, "convex", "weight must depend on the stack only", fmt_exp(E))
        p1, p2 = self._two(node, j, loc)
        self.precise(j.invariant, loc, "convex")
        self.disjoint(written_vars(j.cmd), fv_exp(E), loc, "convex", "wr(C) disjoint from fv(E)")
        try:
            for s, h in states_for([E], self.bounds):
                self.ev.ev(E, s, h)
        except ExpectationError as exc:
            raise SideConditionFails(loc, "convex", "weight outside [0,1]", str(exc)) from exc
        self.entries.append(CertEntry(loc, "convex", f"weight in [0,1]: {fmt_exp(E)}"))
        self.leq(j.pre, Comb([(("exp", E), p1.pre), (("co", E), p2.pre)], "E * X + (1 - E) * X'"),
                 loc, "convex", "pre below E * X + (1 - E) * X'")
        self.leq(Comb([(("exp", E), p1.post), (("co", E), p2.post)], "E * Y + (1 - E) * Y'"),
                 j.post, loc, "convex", "E * Y + (1 - E) * Y' below post")


def _fresh(used) -> str:
    k = 0
    while f"v{k}" in used:
        k += 1
    return f"v{k}"


def _mul(a: Expectation, b: Expectation) -> Expectation:
    from .expectation import Mul
    return Mul(a, b)


def _sep(I: Expectation, pi: Expectation) -> Expectation:
    return pi if I == EMP else SepMul(I, pi)


def check(node: ProofNode, bounds: DomainBounds, verify_ast: bool = True) -> Certificate:
    """Check a derivation; returns a certificate or raises a CheckError / ProofSchemaError."""
    c = Checker(bounds, verify_ast)
    c.check(node)
    return Certificate(node.judgement, c.entries, c.ast, bounds)


# ---------------------------------------------------------------------------
# building trees with inferred premise commands and invariants


def _premise_context(rule: str, cmd: Command, inv: Expectation, kind: str, payload: dict, loc: str) -> list:
    """(cmd, invariant, kind) for each premise, determined by the conclusion."""
    def need(types):
        if not isinstance(cmd, types):
            raise ProofSchemaError(f"{loc}: rule {rule} does not apply to {pretty(cmd)!r}")
    if rule == "seq":
        need(Seq)
        return [(cmd.first, inv, kind), (cmd.second, inv, kind)]
    if rule == "if":
        need(IfThenElse)
        return [(cmd.then, inv, kind), (cmd.orelse, inv, kind)]
    if rule == "while":
        need(While)
        return [(cmd.body, inv, kind)]
    if rule == "p-choice":
        need(ProbChoice)
        return [(cmd.left, inv, kind), (cmd.right, inv, kind)]
    if rule == "concur":
        need(Concurrent)
        return [(cmd.left, inv, kind), (cmd.right, inv, kind)]
    if rule == "atomic":
        need(Atomic)
        return [(cmd.body, EMP, kind)]
    if rule == "share":
        pi = payload.get("pi")
        if pi is None:
            raise ProofSchemaError(f"{loc}: share needs a shared expectation payload")
        return [(cmd, _sep(inv, pi), kind)]
    if rule == "atom":
        return [(cmd, EMP, kind)]
    if rule == "wlp-wrlp":
        return [(cmd, EMP, "wrlp")]
    if rule == "superlin":
        return [(cmd, EMP, "wlp"), (cmd, EMP, "wlp")]
    if rule in ("frame", "monotonic"):
        return [(cmd, inv, kind)]
    if rule in ("max", "min", "convex"):
        return [(cmd, inv, kind), (cmd, inv, kind)]
    return []


_PAYLOAD_EXPS = {"while": "invariant", "share": "pi", "frame": "frame", "convex": "weight", "seq": "mid"}


class _Defs:
    """Named macros usable as $NAME in expectation and command texts."""

    def __init__(self, defs: Optional[dict] = None):
        self.raw = dict(defs or {})

    def expand(self, text: str, wrap: str) -> str:
        import re
        for _ in range(50):
            new = re.sub(r"\$([A-Za-z_][A-Za-z0-9_]*)", lambda m: self._lookup(m.group(1), wrap), text)
            if new == text:
                return new
            text = new
        raise ProofSchemaError("macro expansion does not terminate")

    def _lookup(self, name: str, wrap: str) -> str:
        if name not in self.raw:
            raise ProofSchemaError(f"undefined macro ${name}")
        body = self.raw[name]
        return "{" + body + "}" if wrap == "cmd" else "(" + body + ")"


def _as_exp(x, defs: _Defs, what: str) -> Expectation:
    if isinstance(x, Expectation):
        return x
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        x = str(Fraction(str(x)))
    if not isinstance(x, str):
        raise ProofSchemaError(f"{what}: expected an expectation text")
    from .syntax import ParseError
    try:
        return parse_exp(defs.expand(x, "exp"))
    except (ParseError, ValueError) as exc:
        raise ProofSchemaError(f"{what}: {exc}") from exc


def _as_cmd(x, defs: _Defs, what: str) -> Command:
    if isinstance(x, Command):
        return x
    if not isinstance(x, str):
        raise ProofSchemaError(f"{what}: expected a program text")
    from .syntax import ParseError
    try:
        return parse_program(defs.expand(x, "cmd"))
    except (ParseError, ValueError) as exc:
        raise ProofSchemaError(f"{what}: {exc}") from exc


def build(spec: dict, cmd: Optional[Command] = None, inv: Optional[Expectation] = None,
          kind: Optional[str] = None, defs: Optional[dict] = None, loc: str = "root") -> ProofNode:
    """Turn a nested dict (parsed JSON or built in Python) into a ProofNode.

    Premise commands and invariants are inferred from the conclusion when omitted;
    if given they must agree with the inferred ones.
    """
    d = defs if isinstance(defs, _Defs) else _Defs(defs)
    if not isinstance(spec, dict):
        raise ProofSchemaError(f"{loc}: proof node must be an object")
    unknown = set(spec) - {"rule", "judgement", "payload", "premises", "note"}
    if unknown:
        raise ProofSchemaError(f"{loc}: unknown fields {sorted(unknown)}")
    rule = spec.get("rule")
    if rule not in RULES:
        raise ProofSchemaError(f"{loc}: unknown or missing rule {rule!r}")
    jd = spec.get("judgement")
    if not isinstance(jd, dict):
        raise ProofSchemaError(f"{loc}: missing judgement")
    unknown = set(jd) - {"pre", "cmd", "post", "invariant", "kind"}
    if unknown:
        raise ProofSchemaError(f"{loc}: unknown judgement fields {sorted(unknown)}")
    for key in ("pre", "post"):
        if key not in jd:
            raise ProofSchemaError(f"{loc}: judgement lacks {key!r}")
    given_cmd = _as_cmd(jd["cmd"], d, f"{loc}.cmd") if "cmd" in jd else None
    if given_cmd is not None and cmd is not None and given_cmd != cmd:
        raise ProofSchemaError(f"{loc}: judgement command {pretty(given_cmd)!r} differs from {pretty(cmd)!r}")
    cmd = given_cmd if given_cmd is not None else cmd
    if cmd is None:
        raise ProofSchemaError(f"{loc}: cannot infer the command; give judgement.cmd")
    kind = jd.get("kind", kind or ("wlp" if rule in ("superlin", "wlp-wrlp") else "wrlp"))
    if kind not in ("wrlp", "wlp"):
        raise ProofSchemaError(f"{loc}: kind must be 'wrlp' or 'wlp'")
    given_inv = _as_exp(jd["invariant"], d, f"{loc}.invariant") if "invariant" in jd else None
    if given_inv is not None and inv is not None and kind == "wrlp" and given_inv != inv:
        raise ProofSchemaError(f"{loc}: invariant {fmt_exp(given_inv)} differs from inferred {fmt_exp(inv)}")
    inv = given_inv if given_inv is not None else (inv if inv is not None else EMP)
    if kind == "wlp":
        inv = EMP
    pre = _as_exp(jd["pre"], d, f"{loc}.pre")
    post = _as_exp(jd["post"], d, f"{loc}.post")
    raw_payload = spec.get("payload") or {}
    if not isinstance(raw_payload, dict):
        raise ProofSchemaError(f"{loc}: payload must be an object")
    payload = dict(raw_payload)
    for key in ("invariant", "pi", "frame", "weight", "mid"):
        if key in payload:
            payload[key] = _as_exp(payload[key], d, f"{loc}.payload.{key}")
    if "a" in payload:
        try:
            payload["a"] = Fraction(str(payload["a"]))
        except ValueError as exc:
            raise ProofSchemaError(f"{loc}: bad scalar a") from exc
    if "ast" in payload and payload["ast"] not in ("verify", "assert"):
        raise ProofSchemaError(f"{loc}: ast must be 'verify' or 'assert'")
    prem_specs = spec.get("premises") or []
    if not isinstance(prem_specs, list):
        raise ProofSchemaError(f"{loc}: premises must be a list")
    if len(prem_specs) != ARITY[rule]:
        raise ProofSchemaError(f"{loc}: rule {rule} takes {ARITY[rule]} premises, got {len(prem_specs)}")
    ctx = _premise_context(rule, cmd, inv, kind, payload, loc)
    premises = tuple(build(ps, c, i, k, d, f"{loc}/{n}") for n, (ps, (c, i, k)) in enumerate(zip(prem_specs, ctx)))
    return ProofNode(rule, Judgement(pre, cmd, post, inv, kind), premises, payload)


def load_proof(text: str) -> ProofNode:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProofSchemaError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ProofSchemaError("proof document must be a JSON object")
    if "proof" in doc:
        return build(doc["proof"], defs=doc.get("defs"))
    return build(doc)


def to_json(node: ProofNode, root: bool = True) -> dict:
    """Serialize a tree; premises omit the command and invariant (they are inferred)."""
    j = node.judgement
    jd: dict = {"pre": fmt_exp(j.pre), "post": fmt_exp(j.post)}
    if root:
        jd["cmd"] = pretty(j.cmd)
        jd["kind"] = j.kind
        if j.kind == "wrlp":
            jd["invariant"] = fmt_exp(j.invariant)
    out: dict = {"rule": node.rule, "judgement": jd}
    if node.payload:
        pl = {}
        for k, v in node.payload.items():
            if isinstance(v, Expectation):
                pl[k] = fmt_exp(v)
            elif isinstance(v, Fraction):
                pl[k] = str(v)
            else:
                pl[k] = v
        out["payload"] = pl
    if node.premises:
        out["premises"] = [to_json(p, False) for p in node.premises]
    return out


def dump_proof(node: ProofNode) -> str:
    return json.dumps({"proof": to_json(node)}, indent=1, ensure_ascii=False)


def walk(node: ProofNode) -> Iterable[ProofNode]:
    yield node
    for p in node.premises:
        yield from walk(p)
