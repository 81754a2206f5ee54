"""Ready-made programs, bounds and derivations used by tests, the CLI and the report.

* the shared-cell example: one thread writes 0 or 1 with probability 1/2 into
  a cell initialised to -1, the other spins until it reads a non-(-1) value;
* the Jones program ``{x := 0} [1/2] {x := 1}``;
* the producer / lossy channel / consumer pipeline, parametrised by the
  array bound k, the transmission probability p and the set J of indices
  that must arrive.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional

from .expectation import Expectation, evaluator, fmt_exp, parse_exp
from .proofcheck import Certificate, ProofNode, build, check
from .state import DomainBounds, Heap, ProgState
from .syntax import Command, fmt_rational, parse_program

# ---------------------------------------------------------------------------
# shared cell with a randomised writer and a spinning reader

CELL = 1  # the location held in r

RUNNING_PROGRAM = (
    "<r> := -1; {{<r> := 0} [1/2] {<r> := 1}} ||| {y := <r>; while (y = -1) {y := <r>}}"
)
RUNNING_INVARIANT = "max([r |-> 0], [r |-> -1])"
RUNNING_LOOP_INV = "max([y = 0], [y = -1])"


def running_program() -> Command:
    return parse_program(RUNNING_PROGRAM)


def running_bounds() -> DomainBounds:
    return DomainBounds(vars=("r", "y"), values=(-1, 1), locations=(CELL,), heap_cap=1)


def running_state(heap: Optional[dict] = None, r: int = CELL) -> ProgState:
    b = running_bounds()
    h = Heap({CELL: -1}) if heap is None else Heap(heap)
    return ProgState(b.stack({"r": r}), h)


def _n(rule: str, pre, post, *premises, cmd=None, invariant=None, kind=None, loop=None, **payload) -> dict:
    jd = {"pre": pre, "post": post}
    if cmd is not None:
        jd["cmd"] = cmd
    if invariant is not None:
        jd["invariant"] = invariant
    if kind is not None:
        jd["kind"] = kind
    out = {"rule": rule, "judgement": jd}
    if loop is not None:
        payload["invariant"] = loop
    if payload:
        out["payload"] = payload
    if premises:
        out["premises"] = list(premises)
    return out


def _atom_mut(pre: str, post: str, inv: str) -> dict:
    """atom rule around a heap mutation; premise pre/post are the ones the atom rule demands."""
    return _n("atom", pre, post, _n("mut", f"({pre}) ** ({inv})", f"({post}) ** ({inv})"))


def _atom_look(pre: str, post: str, inv: str) -> dict:
    return _n("atom", pre, post, _n("look", f"({pre}) ** ({inv})", f"({post}) ** ({inv})"))


def running_proof_spec(half: str = "1/2") -> dict:
    """Derivation of (half ** I) <= wlp(C, [y = 0]); with half = 1/2 it is valid."""
    I = RUNNING_INVARIANT
    J = RUNNING_LOOP_INV
    thread1 = _n(
        "p-choice", half, "1",
        _atom_mut("1", "1", I),
        _atom_mut("0", "1", I),
    )
    thread2 = _n(
        "seq", "1", "[y = 0]",
        _atom_look("1", J, I),
        _n("while", J, "[y = 0]", _atom_look("1", J, I), loop=J),
    )
    body = _n(
        "seq", half, "[y = 0]",
        _atom_mut(half, f"{half} ** 1", I),
        _n("concur", f"{half} ** 1", "1 ** [y = 0]", thread1, thread2),
    )
    shared = _n("share", f"{half} ** ({I})", f"[y = 0] ** ({I})", body, pi=I)
    mono = _n("monotonic", f"{half} ** ({I})", "[y = 0]", shared, kind="wrlp", invariant="emp")
    return _n("wlp-wrlp", f"{half} ** ({I})", "[y = 0]", mono, cmd=RUNNING_PROGRAM, kind="wlp")


def running_proof(half: str = "1/2") -> ProofNode:
    return build(running_proof_spec(half))


# ---------------------------------------------------------------------------
# Jones program

JONES_PROGRAM = "{x := 0} [1/2] {x := 1}"


def jones_program() -> Command:
    return parse_program(JONES_PROGRAM)


def jones_bounds() -> DomainBounds:
    return DomainBounds(vars=("x",), values=(0, 1), locations=(1,), heap_cap=1)


# ---------------------------------------------------------------------------
# producer / lossy channel / consumer


@dataclass(frozen=True)
class ProdCons:
    k: int
    p: Fraction
    J: frozenset

    @property
    def z1(self) -> int:
        return 0

    @property
    def z2(self) -> int:
        return self.k + 1

    @property
    def Jk(self) -> list:
        """J restricted to the array range [0, k]."""
        return sorted(v for v in self.J if 0 <= v <= self.k)

    def mass(self, v: int) -> str:
        """p^|[0,v] & J| * (1-p)^|[0,v] - J| as text; 1 below 0."""
        if v < 0:
            return "1"
        a = sum(1 for i in range(v + 1) if i in self.J)
        b = v + 1 - a
        p, q = fmt_rational(self.p), fmt_rational(1 - self.p)
        return f"(({p}) ^ {a}) * (({q}) ^ {b})"

    def mass_value(self, v: int) -> Fraction:
        if v < 0:
            return Fraction(1)
        a = sum(1 for i in range(v + 1) if i in self.J)
        return self.p ** a * (1 - self.p) ** (v + 1 - a)

    # program
    def producer(self) -> str:
        return "while (y1 >= 0) { {x1 := 1} [1/2] {x1 := 2}; <z1 + y1> := x1; y1 := y1 - 1 }"

    def channel(self) -> str:
        p = fmt_rational(self.p)
        return ("while (y2 >= 0) { x2 := <z1 + y2>; if (x2 != 0) "
                f"{{ {{<z2 + y2> := x2}} [{p}] {{<z2 + y2> := -1}}; y2 := y2 - 1 }} }}")

    def consumer(self) -> str:
        return ("while (y3 >= 0) { x3 := <z2 + y3>; if (x3 != 0) "
                "{ if (x3 != -1) { l := l + 1 }; y3 := y3 - 1 } }")

    def program_text(self) -> str:
        k = self.k
        return (f"l := 0; y1 := {k}; y2 := {k}; y3 := {k}; "
                f"{{{self.producer()}}} ||| {{{{{self.channel()}}} ||| {{{self.consumer()}}}}}")

    def program(self) -> Command:
        return parse_program(self.program_text())

    def bounds(self) -> DomainBounds:
        k = self.k
        return DomainBounds(
            vars=("l", "x1", "x2", "x3", "y1", "y2", "y3", "z1", "z2"),
            values=(-1, 2), locations=tuple(range(2 * k + 2)), heap_cap=2 * k + 2,
            pinned=(("z1", (self.z1,)), ("z2", (self.z2,))),
        )

    # expectations
    def resource_invariant(self) -> str:
        k = self.k
        parts = [f"(bigstar i in [0, {k}]. max(max([z1 + i |-> 0], [z1 + i |-> 1]), [z1 + i |-> 2]))"]
        for v in range(k + 1):
            if v in self.J:
                parts.append(f"max(max([z2 + {v} |-> 0], [z2 + {v} |-> 1]), [z2 + {v} |-> 2])")
            else:
                parts.append(f"max([z2 + {v} |-> 0], [z2 + {v} |-> -1])")
        return " ** ".join(parts)

    def target(self) -> str:
        return f"[l = {len(self.Jk)}]"

    def bound_pre(self) -> str:
        return f"[0 <= {self.k}] * {self.mass(self.k)}"

    @staticmethod
    def _sum(terms: list) -> str:
        return " + ".join(terms) if terms else "0"

    def channel_texts(self) -> dict:
        k = self.k
        rng = range(k + 1)
        Xb = self._sum([f"[y2 = {v}] * {self.mass(v)}" for v in rng])
        I2 = f"{Xb} + [y2 < 0]"
        Q = self._sum([f"[y2 = {v}] * {self.mass(v - 1)}" for v in range(1, k + 2)]) + " + [y2 < 1]"
        L = self._sum([f"[y2 = {v}] * [1 <= x2 && x2 <= 2] * {self.mass(v - 1)}" for v in rng if v in self.J])
        R = self._sum([f"[y2 = {v}] * {self.mass(v - 1)}" for v in rng if v not in self.J])
        p, q = fmt_rational(self.p), fmt_rational(1 - self.p)
        T = f"({p}) * ({L}) + ({q}) * ({R})"
        F = f"[x2 != 0] * ({T}) + [x2 = 0] * ({I2})"
        return dict(Xb=Xb, I2=I2, Q=Q, L=L, R=R, T=T, F=F)

    def consumer_texts(self) -> dict:
        k = self.k
        Jk = set(self.Jk)
        full = len(Jk)

        def c(v):
            return sum(1 for i in Jk if v + 1 <= i <= k)

        Xb = self._sum([f"[y3 = {v}] * [l = {c(v)}]" for v in range(k + 1)])
        I3 = f"{Xb} + [y3 < 0] * [l = {full}]"
        Q = self._sum([f"[y3 = {v}] * [l = {c(v - 1)}]" for v in range(1, k + 2)]) + f" + [y3 < 1] * [l = {full}]"
        G = f"[x3 != -1] * ({Q})[l := l + 1] + [x3 = -1] * ({Q})"
        F = f"[x3 != 0] * ({G}) + [x3 = 0] * ({I3})"
        return dict(Xb=Xb, I3=I3, Q=Q, G=G, F=F, Qinc=f"({Q})[l := l + 1]")

    # derivation
    def producer_proof(self, R: str) -> dict:
        k = self.k
        J1 = f"[y1 <= {k}]"
        Xb = f"[0 <= y1 && y1 <= {k}]"
        M = f"[0 <= y1 && y1 <= {k}] * [1 <= x1 && x1 <= 2]"
        N = f"[y1 <= {k + 1}]"
        body = _n(
            "seq", Xb, J1,
            _n("p-choice", Xb, M, _n("assign", Xb, M), _n("assign", Xb, M)),
            _n("seq", M, J1, _atom_mut(M, N, R), _n("assign", N, J1)),
        )
        return _n("while", J1, "1", body, loop=J1)

    def channel_proof(self, R: str) -> dict:
        t = self.channel_texts()
        then = _n(
            "seq", t["T"], t["I2"],
            _n("p-choice", t["T"], t["Q"], _atom_mut(t["L"], t["Q"], R), _atom_mut(t["R"], t["Q"], R)),
            _n("assign", t["Q"], t["I2"]),
        )
        body = _n(
            "seq", t["Xb"], t["I2"],
            _atom_look(t["Xb"], t["F"], R),
            _n("if", t["F"], t["I2"], then, _n("term", t["I2"], t["I2"])),
        )
        return _n("while", t["I2"], "1", body, loop=t["I2"])

    def consumer_proof(self, R: str) -> dict:
        t = self.consumer_texts()
        inner = _n(
            "if", t["G"], t["Q"],
            _n("assign", t["Qinc"], t["Q"]),
            _n("term", t["Q"], t["Q"]),
        )
        then = _n("seq", t["G"], t["I3"], inner, _n("assign", t["Q"], t["I3"]))
        body = _n(
            "seq", t["Xb"], t["I3"],
            _atom_look(t["Xb"], t["F"], R),
            _n("if", t["F"], t["I3"], then, _n("term", t["I3"], t["I3"])),
        )
        return _n("while", t["I3"], self.target(), body, loop=t["I3"])

    def proof_spec(self) -> dict:
        k = self.k
        R = self.resource_invariant()
        I1 = f"[y1 <= {k}]"
        I2 = self.channel_texts()["I2"]
        I3 = self.consumer_texts()["I3"]
        goal = self.target()
        inner = _n("concur", f"({I2}) ** ({I3})", f"1 ** {goal}",
                   self.channel_proof(R), self.consumer_proof(R))
        par = _n("concur", f"({I1}) ** (({I2}) ** ({I3}))", f"1 ** (1 ** {goal})",
                 self.producer_proof(R), inner)
        # the prelude l := 0; y1 := k; y2 := k; y3 := k by the assignment rule, backwards
        pre_y3 = f"(({I1}) ** (({I2}) ** ({I3})))[y3 := {k}]"
        pre_y2 = f"({pre_y3})[y2 := {k}]"
        pre_y1 = f"({pre_y2})[y1 := {k}]"
        pre_l = f"({pre_y1})[l := 0]"
        post = f"1 ** (1 ** {goal})"
        chain = _n(
            "seq", self.bound_pre(), goal,
            _n("assign", pre_l, pre_y1),
            _n("seq", pre_y1, goal,
               _n("assign", pre_y1, pre_y2),
               _n("seq", pre_y2, goal,
                  _n("assign", pre_y2, pre_y3),
                  _n("seq", pre_y3, goal, _n("assign", pre_y3, f"({I1}) ** (({I2}) ** ({I3}))"),
                     par))))
        shared = _n("share", f"({self.bound_pre()}) ** ({R})", f"{goal} ** ({R})", chain, pi=R)
        return _n("wlp-wrlp", f"({self.bound_pre()}) ** ({R})", f"{goal} ** ({R})", shared,
                  cmd=self.program_text(), kind="wlp")

    def proof(self) -> ProofNode:
        return build(self.proof_spec())

    def certified_pre(self) -> Expectation:
        return parse_exp(f"({self.bound_pre()}) ** ({self.resource_invariant()})")

    def post(self) -> Expectation:
        return parse_exp(f"{self.target()} ** ({self.resource_invariant()})")

    def zero_state(self) -> ProgState:
        b = self.bounds()
        return ProgState(self.initial_stack(b), Heap({loc: 0 for loc in b.locations}))

    def initial_stack(self, b: Optional[DomainBounds] = None):
        b = b if b is not None else self.bounds()
        return b.stack({"z1": self.z1, "z2": self.z2})

    def invariant_states(self) -> list:
        """Initial states (zero stack, pinned arrays) whose heap satisfies RI_J ** true."""
        from .state import enumerate_heaps
        b = self.bounds()
        R = parse_exp(self.resource_invariant())
        ev = evaluator(b)
        s = self.initial_stack(b)
        out = []
        for h in enumerate_heaps(b):
            if ev.upmax(R, s, h) == 1:
                out.append(ProgState(s, h))
        return out


@dataclass
class ProdConsResult:
    instance: ProdCons
    certificate: Certificate
    bound: Expectation
    value_at_zero: Fraction


def check_producer_consumer(k: int, p, J: Iterable[int], bounds: Optional[DomainBounds] = None) -> ProdConsResult:
    """Build and check the pipeline derivation; returns the certified lower bound."""
    inst = ProdCons(k, Fraction(p), frozenset(J))
    b = bounds if bounds is not None else inst.bounds()
    cert = check(inst.proof(), b)
    bound = cert.conclusion.pre
    z = inst.zero_state()
    val = evaluator(b)(bound, z.stack, z.heap)
    return ProdConsResult(inst, cert, bound, val)
