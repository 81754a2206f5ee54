"""Quantitative separation logic expectations over bounded stack/heap states.

Expectations are immutable trees. ``Evaluator`` computes their exact rational
value at a state, taking suprema over heap splits for ``SepMul`` and infima over
bounded disjoint extensions for ``GuardedWand``. Both searches are pruned by a
*support* analysis: a superset of the subheaps on which an operand can be
nonzero, so most splits are never visited.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Optional

from .state import (
    EMPTY_HEAP, DomainBounds, Heap, ProgState, Stack, enumerate_heaps,
    enumerate_stacks, eval_arith, eval_guard, heap_disjoint, heap_union,
    heap_universe, subheaps,
)
from .syntax import (
    ArithExpr, BoolLit, Cmp, Guard, Negate, Num, Parser, ParseError, ProbCase,
    ProbExpr, ProbLit, arith_vars, as_arith, check_var, fmt_arith, fmt_guard,
    fmt_rational, guard_vars, node,
)

ONE = Fraction(1)
ZERO = Fraction(0)


class ExpectationError(ValueError):
    pass


class ExpectationRangeError(ExpectationError):
    pass


class NonQualitativeError(ExpectationError):
    pass


# ---------------------------------------------------------------------------
# predicates


class Predicate:
    __slots__ = ()


@node
class Emp(Predicate):
    pass


@node
class PointsTo(Predicate):
    addr: ArithExpr
    values: tuple

    def __post_init__(self):
        vals = tuple(as_arith(v) for v in self.values)
        if not vals:
            raise ValueError("points-to needs at least one value")
        object.__setattr__(self, "values", vals)


@node
class Allocated(Predicate):
    addr: ArithExpr


@node
class EqExpr(Predicate):
    left: ArithExpr
    right: ArithExpr


@node
class StackGuard(Predicate):
    guard: Guard


@node
class And(Predicate):
    left: Predicate
    right: Predicate


@node
class Or(Predicate):
    left: Predicate
    right: Predicate


@node
class Not(Predicate):
    arg: Predicate


def pred_vars(p: Predicate) -> frozenset:
    if isinstance(p, PointsTo):
        out = arith_vars(p.addr)
        for v in p.values:
            out |= arith_vars(v)
        return out
    if isinstance(p, Allocated):
        return arith_vars(p.addr)
    if isinstance(p, EqExpr):
        return arith_vars(p.left) | arith_vars(p.right)
    if isinstance(p, StackGuard):
        return guard_vars(p.guard)
    if isinstance(p, (And, Or)):
        return pred_vars(p.left) | pred_vars(p.right)
    if isinstance(p, Not):
        return pred_vars(p.arg)
    return frozenset()


def eval_pred(p: Predicate, s: Stack, h: Heap) -> bool:
    if isinstance(p, PointsTo):
        base = eval_arith(p.addr, s)
        if len(h) != len(p.values):
            return False
        for i, v in enumerate(p.values):
            if h.get(base + i) != eval_arith(v, s):
                return False
        return True
    if isinstance(p, Emp):
        return len(h) == 0
    if isinstance(p, Allocated):
        return len(h) == 1 and eval_arith(p.addr, s) in h
    if isinstance(p, EqExpr):
        return eval_arith(p.left, s) == eval_arith(p.right, s)
    if isinstance(p, StackGuard):
        return eval_guard(p.guard, s)
    if isinstance(p, And):
        return eval_pred(p.left, s, h) and eval_pred(p.right, s, h)
    if isinstance(p, Or):
        return eval_pred(p.left, s, h) or eval_pred(p.right, s, h)
    if isinstance(p, Not):
        return not eval_pred(p.arg, s, h)
    raise TypeError(f"not a predicate: {p!r}")


# ---------------------------------------------------------------------------
# expectations


class Expectation:
    __slots__ = ()


@node
class Const(Expectation):
    value: Fraction

    def __post_init__(self):
        v = Fraction(self.value)
        if not 0 <= v <= 1:
            raise ExpectationRangeError(f"constant {v} outside [0,1]")
        object.__setattr__(self, "value", v)


@node
class Iverson(Expectation):
    pred: Predicate


@node
class Add(Expectation):
    left: Expectation
    right: Expectation


@node
class Mul(Expectation):
    left: Expectation
    right: Expectation


@node
class Max(Expectation):
    left: Expectation
    right: Expectation


@node
class Min(Expectation):
    left: Expectation
    right: Expectation


@node
class Pow(Expectation):
    base: Expectation
    exponent: ArithExpr


@node
class SepMul(Expectation):
    left: Expectation
    right: Expectation


@node
class GuardedWand(Expectation):
    guard: Expectation
    body: Expectation


@node
class SupVal(Expectation):
    var: str
    body: Expectation
    over: str = "values"  # or "locations"

    def __post_init__(self):
        check_var(self.var)
        if self.over not in ("values", "locations"):
            raise ValueError("quantifier domain must be 'values' or 'locations'")


@node
class InfVal(Expectation):
    var: str
    body: Expectation
    over: str = "values"

    def __post_init__(self):
        check_var(self.var)
        if self.over not in ("values", "locations"):
            raise ValueError("quantifier domain must be 'values' or 'locations'")


@node
class Subst(Expectation):
    body: Expectation
    var: str
    expr: ArithExpr

    def __post_init__(self):
        check_var(self.var)


@node
class BigSepMul(Expectation):
    var: str
    lo: ArithExpr
    hi: ArithExpr
    body: Expectation

    def __post_init__(self):
        check_var(self.var)


TRUE = Const(1)
FALSE = Const(0)
EMP = Iverson(Emp())


def iv(p) -> Iverson:
    """Iverson bracket of a predicate or a guard."""
    if isinstance(p, Guard):
        return Iverson(StackGuard(p))
    return Iverson(p)


def points_to(addr, *values) -> Iverson:
    return Iverson(PointsTo(as_arith(addr), tuple(as_arith(v) for v in values)))


def allocated(addr) -> Iverson:
    return Iverson(Allocated(as_arith(addr)))


def const(q) -> Const:
    return Const(Fraction(q))


def sep(*factors: Expectation) -> Expectation:
    out = factors[-1]
    for f in reversed(factors[:-1]):
        out = SepMul(f, out)
    return out


def add(*terms: Expectation) -> Expectation:
    out = terms[0]
    for t in terms[1:]:
        out = Add(out, t)
    return out


def mul(*factors: Expectation) -> Expectation:
    out = factors[0]
    for f in factors[1:]:
        out = Mul(out, f)
    return out


def maxs(*terms: Expectation) -> Expectation:
    out = terms[0]
    for t in terms[1:]:
        out = Max(out, t)
    return out


def subst_exp(e: Expectation, x: str, a) -> Expectation:
    return Subst(e, x, as_arith(a))


def prob_to_exp(e: ProbExpr) -> Expectation:
    if isinstance(e, ProbLit):
        return Const(e.value)
    g = e.guard
    return Add(Mul(iv(g), prob_to_exp(e.then)), Mul(iv(Negate(g)), prob_to_exp(e.orelse)))


_FV: dict = {}


def fv_exp(e: Expectation) -> frozenset:
    """Syntactic free variables (bound variables of quantifiers removed)."""
    r = _FV.get(e)
    if r is not None:
        return r
    if isinstance(e, Const):
        r = frozenset()
    elif isinstance(e, Iverson):
        r = pred_vars(e.pred)
    elif isinstance(e, (Add, Mul, Max, Min, SepMul)):
        r = fv_exp(e.left) | fv_exp(e.right)
    elif isinstance(e, GuardedWand):
        r = fv_exp(e.guard) | fv_exp(e.body)
    elif isinstance(e, Pow):
        r = fv_exp(e.base) | arith_vars(e.exponent)
    elif isinstance(e, (SupVal, InfVal)):
        r = fv_exp(e.body) - {e.var}
    elif isinstance(e, Subst):
        r = (fv_exp(e.body) - {e.var}) | arith_vars(e.expr)
    elif isinstance(e, BigSepMul):
        r = (fv_exp(e.body) - {e.var}) | arith_vars(e.lo) | arith_vars(e.hi)
    else:
        raise TypeError(f"not an expectation: {e!r}")
    _FV[e] = r
    return r


_FV_SORTED: dict = {}


def _fv_sorted(e: Expectation) -> tuple:
    r = _FV_SORTED.get(e)
    if r is None:
        r = tuple(sorted(fv_exp(e)))
        _FV_SORTED[e] = r
    return r


def _pred_pure(p: Predicate) -> bool:
    if isinstance(p, (EqExpr, StackGuard)):
        return True
    if isinstance(p, (And, Or)):
        return _pred_pure(p.left) and _pred_pure(p.right)
    if isinstance(p, Not):
        return _pred_pure(p.arg)
    return False


_PURE: dict = {}


def is_pure(e: Expectation) -> bool:
    """Syntactic check that the value never depends on the heap."""
    r = _PURE.get(e)
    if r is not None:
        return r
    if isinstance(e, Const):
        r = True
    elif isinstance(e, Iverson):
        r = _pred_pure(e.pred)
    elif isinstance(e, (Add, Mul, Max, Min, SepMul)):
        r = is_pure(e.left) and is_pure(e.right)
    elif isinstance(e, Pow):
        r = is_pure(e.base)
    elif isinstance(e, (SupVal, InfVal, Subst, BigSepMul)):
        r = is_pure(e.body)
    else:
        r = False
    _PURE[e] = r
    return r


_HEAVY: dict = {}


def _heavy(e: Expectation) -> bool:
    r = _HEAVY.get(e)
    if r is not None:
        return r
    if isinstance(e, (SepMul, GuardedWand, SupVal, InfVal, BigSepMul)):
        r = True
    elif isinstance(e, (Add, Mul, Max, Min)):
        r = _heavy(e.left) or _heavy(e.right)
    elif isinstance(e, (Pow, Subst)):
        r = _heavy(e.base if isinstance(e, Pow) else e.body)
    else:
        r = False
    _HEAVY[e] = r
    return r


# ---------------------------------------------------------------------------
# evaluation


def _dedupe(heaps: Iterable[Heap]) -> list:
    return list(dict.fromkeys(heaps))


class Evaluator:
    """Exact evaluation of expectations relative to fixed bounds, with memoisation."""

    MEMO_LIMIT = 4_000_000

    def __init__(self, bounds: DomainBounds):
        self.bounds = bounds
        self.memo: dict = {}
        self.heaps = enumerate_heaps(bounds)
        self.universe = heap_universe(bounds)
        self.values = tuple(bounds.value_range)
        self.locations = tuple(bounds.locations)

    def __call__(self, e: Expectation, s: Stack, h: Heap) -> Fraction:
        return Fraction(self.ev(e, s, h))

    def ev(self, e: Expectation, s: Stack, h: Heap):
        if not _heavy(e):
            return self._ev(e, s, h)
        key = (e, s.project(_fv_sorted(e)), h)
        memo = self.memo
        r = memo.get(key)
        if r is None:
            r = self._ev(e, s, h)
            if len(memo) > self.MEMO_LIMIT:
                memo.clear()
            memo[key] = r
        return r

    def _ev(self, e, s, h):
        t = type(e)
        if t is Iverson:
            return 1 if eval_pred(e.pred, s, h) else 0
        if t is Const:
            return e.value
        if t is Mul:
            a = self.ev(e.left, s, h)
            if a == 0:
                return 0
            return a * self.ev(e.right, s, h)
        if t is Add:
            r = self.ev(e.left, s, h) + self.ev(e.right, s, h)
            if r > 1:
                raise ExpectationRangeError(f"sum evaluates to {r} > 1 at ({s!r}, {h!r})")
            return r
        if t is Max:
            a = self.ev(e.left, s, h)
            return a if a == 1 else max(a, self.ev(e.right, s, h))
        if t is Min:
            a = self.ev(e.left, s, h)
            return a if a == 0 else min(a, self.ev(e.right, s, h))
        if t is Pow:
            n = eval_arith(e.exponent, s)
            if n < 0:
                raise ExpectationRangeError(f"negative exponent {n}")
            if n == 0:
                return 1
            return self.ev(e.base, s, h) ** n
        if t is SepMul:
            return self._sepmul(e.left, e.right, s, h)
        if t is GuardedWand:
            return self._wand(e, s, h)
        if t is SupVal:
            best = 0
            for v in self._domain(e.over):
                r = self.ev(e.body, s.bind(e.var, v), h)
                if r > best:
                    best = r
                    if best == 1:
                        break
            return best
        if t is InfVal:
            best = 1
            for v in self._domain(e.over):
                r = self.ev(e.body, s.bind(e.var, v), h)
                if r < best:
                    best = r
                    if best == 0:
                        break
            return best
        if t is Subst:
            return self.ev(e.body, s.bind(e.var, eval_arith(e.expr, s)), h)
        if t is BigSepMul:
            factors = self._factors(e, s)
            if not factors:
                return 1
            return self._chain(e, s, factors, 0, h)
        raise TypeError(f"not an expectation: {e!r}")

    def _domain(self, over: str):
        return self.values if over == "values" else self.locations

    def _factors(self, e: BigSepMul, s: Stack) -> list:
        lo, hi = eval_arith(e.lo, s), eval_arith(e.hi, s)
        return [s.bind(e.var, i) for i in range(lo, hi + 1)]

    # separating multiplication

    def _sepmul(self, left, right, s, h):
        lp, rp = is_pure(left), is_pure(right)
        if lp and rp:
            a = self.ev(left, s, h)
            return 0 if a == 0 else a * self.ev(right, s, h)
        if lp:
            a = self.ev(left, s, h)
            return 0 if a == 0 else a * self.upmax(right, s, h)
        if rp:
            a = self.ev(right, s, h)
            return 0 if a == 0 else a * self.upmax(left, s, h)
        sl = self.support(left, s, h)
        if sl is not None:
            return self._best_split(left, right, s, h, sl)
        sr = self.support(right, s, h)
        if sr is not None:
            return self._best_split(right, left, s, h, sr)
        return self._best_split(left, right, s, h, subheaps(h))

    def _best_split(self, first, second, s, h, parts):
        best = 0
        for h1 in parts:
            a = self.ev(first, s, h1)
            if a == 0 or a <= best:
                continue
            r = a * self.ev(second, s, h.minus(h1))
            if r > best:
                best = r
                if best == 1:
                    break
        return best

    def upmax(self, e, s, h):
        """max over subheaps h' of h of e(s, h'), i.e. the value of e ** 1."""
        parts = self.support(e, s, h)
        if parts is None:
            parts = subheaps(h)
        best = 0
        for h2 in parts:
            r = self.ev(e, s, h2)
            if r > best:
                best = r
                if best == 1:
                    break
        return best

    def _chain(self, e, s, factors, k, h):
        key = ("chain", e, s.project(_fv_sorted(e)), k, h)
        r = self.memo.get(key)
        if r is not None:
            return r
        body = e.body
        sk = factors[k]
        if k == len(factors) - 1:
            r = self.ev(body, sk, h)
        else:
            parts = self.support(body, sk, h)
            if parts is None:
                parts = subheaps(h)
            r = 0
            for h1 in parts:
                a = self.ev(body, sk, h1)
                if a == 0 or a <= r:
                    continue
                v = a * self._chain(e, s, factors, k + 1, h.minus(h1))
                if v > r:
                    r = v
                    if r == 1:
                        break
        self.memo[key] = r
        return r

    # guarded magic wand

    def _wand(self, e: GuardedWand, s, h):
        body = e.body
        best = None
        for h2 in self.extensions(e.guard, s, h):
            r = self.ev(body, s, heap_union(h, h2))
            if best is None or r < best:
                best = r
                if best == 0:
                    break
        return 1 if best is None else best

    def extensions(self, guard, s, h) -> list:
        """Heaps h' from the bounded universe with h' disjoint from h and guard(s, h') = 1."""
        cands = self._candidates(guard, s)
        if cands is None:
            cands = self.heaps
        else:
            cands = [c for c in cands if c in self.universe]
        out = []
        for c in cands:
            if not heap_disjoint(c, h):
                continue
            g = self.ev(guard, s, c)
            if g == 1:
                out.append(c)
            elif g != 0:
                raise NonQualitativeError(f"wand guard takes value {g} at ({s!r}, {c!r})")
        return out

    def _candidates(self, e, s) -> Optional[list]:
        """Superset of the universe heaps on which e can be nonzero, or None for 'any'."""
        t = type(e)
        if t is Const:
            return [] if e.value == 0 else None
        if t is Iverson:
            return self._pred_candidates(e.pred, s)
        if t in (Add, Max):
            a = self._candidates(e.left, s)
            b = self._candidates(e.right, s) if a is not None else None
            return None if a is None or b is None else _dedupe(a + b)
        if t in (Mul, Min):
            a = self._candidates(e.left, s)
            return a if a is not None else self._candidates(e.right, s)
        if t is SepMul:
            a = self._candidates(e.left, s)
            b = self._candidates(e.right, s) if a is not None else None
            if a is None or b is None:
                return None
            return _dedupe(heap_union(x, y) for x in a for y in b if heap_disjoint(x, y))
        if t is Subst:
            return self._candidates(e.body, s.bind(e.var, eval_arith(e.expr, s)))
        return None

    def _pred_candidates(self, p, s) -> Optional[list]:
        t = type(p)
        if t is PointsTo:
            base = eval_arith(p.addr, s)
            return [Heap((base + i, eval_arith(v, s)) for i, v in enumerate(p.values))]
        if t is Emp:
            return [EMPTY_HEAP]
        if t is Allocated:
            loc = eval_arith(p.addr, s)
            return [Heap({loc: v}) for v in self.values]
        if t in (EqExpr, StackGuard):
            return None if eval_pred(p, s, EMPTY_HEAP) else []
        if t is And:
            a = self._pred_candidates(p.left, s)
            return a if a is not None else self._pred_candidates(p.right, s)
        if t is Or:
            a = self._pred_candidates(p.left, s)
            b = self._pred_candidates(p.right, s) if a is not None else None
            return None if a is None or b is None else _dedupe(a + b)
        return None

    # supports within a fixed heap

    def support(self, e, s, h) -> Optional[list]:
        """Superset of the subheaps h' of h with e(s, h') > 0, or None if unknown."""
        t = type(e)
        if t is Iverson:
            return self._pred_support(e.pred, s, h)
        if t is Const:
            return [] if e.value == 0 else None
        if t in (Add, Max):
            a = self.support(e.left, s, h)
            if a is None:
                return None
            b = self.support(e.right, s, h)
            return None if b is None else _dedupe(a + b)
        if t in (Mul, Min):
            a = self.support(e.left, s, h)
            if a is not None and not a:
                return a
            b = self.support(e.right, s, h)
            if a is None:
                return b
            if b is None:
                return a
            bs = set(b)
            return [x for x in a if x in bs]
        if t is Pow:
            if eval_arith(e.exponent, s) == 0:
                return None
            return self.support(e.base, s, h)
        if t is SepMul:
            a = self.support(e.left, s, h)
            if a is None:
                return None
            b = self.support(e.right, s, h)
            if b is None:
                return None
            return _dedupe(heap_union(x, y) for x in a for y in b if heap_disjoint(x, y))
        if t is SupVal:
            out = []
            for v in self._domain(e.over):
                a = self.support(e.body, s.bind(e.var, v), h)
                if a is None:
                    return None
                out.extend(a)
            return _dedupe(out)
        if t is InfVal:
            dom = self._domain(e.over)
            if not dom:
                return None
            return self.support(e.body, s.bind(e.var, dom[0]), h)
        if t is Subst:
            return self.support(e.body, s.bind(e.var, eval_arith(e.expr, s)), h)
        if t is BigSepMul:
            factors = self._factors(e, s)
            if not factors:
                return None
            acc = [EMPTY_HEAP]
            for sk in factors:
                a = self.support(e.body, sk, h)
                if a is None:
                    return None
                acc = _dedupe(heap_union(x, y) for x in acc for y in a if heap_disjoint(x, y))
            return acc
        return None

    def _pred_support(self, p, s, h) -> Optional[list]:
        t = type(p)
        if t is PointsTo:
            base = eval_arith(p.addr, s)
            cells = []
            for i, v in enumerate(p.values):
                val = eval_arith(v, s)
                if h.get(base + i) != val:
                    return []
                cells.append((base + i, val))
            return [Heap(cells)]
        if t is Emp:
            return [EMPTY_HEAP]
        if t is Allocated:
            loc = eval_arith(p.addr, s)
            return [Heap({loc: h[loc]})] if loc in h else []
        if t in (EqExpr, StackGuard):
            return None if eval_pred(p, s, h) else []
        if t is And:
            a = self._pred_support(p.left, s, h)
            if a is not None:
                return a
            return self._pred_support(p.right, s, h)
        if t is Or:
            a = self._pred_support(p.left, s, h)
            if a is None:
                return None
            b = self._pred_support(p.right, s, h)
            return None if b is None else _dedupe(a + b)
        return None


@lru_cache(maxsize=16)
def evaluator(bounds: DomainBounds) -> Evaluator:
    return Evaluator(bounds)


def eval_exp(e: Expectation, st: ProgState, bounds: DomainBounds) -> Fraction:
    return evaluator(bounds)(e, st.stack, st.heap)


# ---------------------------------------------------------------------------
# enumeration-based checks


def states_for(exprs: Iterable[Expectation], bounds: DomainBounds, extra_vars=()):
    """Enumerate (stack, heap) over the free variables of exprs; pure exprs need one heap."""
    exprs = list(exprs)
    vs = set(extra_vars)
    for e in exprs:
        vs |= fv_exp(e)
    heaps = (EMPTY_HEAP,) if all(is_pure(e) for e in exprs) else enumerate_heaps(bounds)
    for s in enumerate_stacks(vs, bounds):
        for h in heaps:
            yield s, h


def is_qualitative(e: Expectation, bounds: DomainBounds) -> bool:
    ev = evaluator(bounds)
    return all(ev.ev(e, s, h) in (0, 1) for s, h in states_for([e], bounds))


def is_precise(e: Expectation, bounds: DomainBounds) -> bool:
    """At most one subheap of each bounded heap gives e a nonzero value."""
    ev = evaluator(bounds)
    vs = fv_exp(e)
    for s in enumerate_stacks(vs, bounds):
        for h in enumerate_heaps(bounds):
            parts = ev.support(e, s, h)
            if parts is None:
                parts = subheaps(h)
            hits = 0
            for h2 in parts:
                if ev.ev(e, s, h2) > 0:
                    hits += 1
                    if hits > 1:
                        return False
    return True


@dataclass(frozen=True)
class Witness:
    stack: Stack
    heap: Heap
    lhs: Fraction
    rhs: Fraction

    def __str__(self):
        return f"stack {self.stack!r}, heap {self.heap!r}: {self.lhs} > {self.rhs}"


def counterexample(x: Expectation, y: Expectation, bounds: DomainBounds) -> Optional[Witness]:
    """First bounded state where x > y, or None when x entails y."""
    if x == y:
        return None
    ev = evaluator(bounds)
    for s, h in states_for([x, y], bounds):
        a = ev.ev(x, s, h)
        if a == 0:
            continue
        b = ev.ev(y, s, h)
        if a > b:
            return Witness(s, h, Fraction(a), Fraction(b))
    return None


def entails(x: Expectation, y: Expectation, bounds: DomainBounds) -> bool:
    return counterexample(x, y, bounds) is None


def equivalent(x: Expectation, y: Expectation, bounds: DomainBounds) -> bool:
    return x == y or (entails(x, y, bounds) and entails(y, x, bounds))


def check_well_formed(e: Expectation, bounds: DomainBounds) -> None:
    """Raise if e leaves [0,1] or uses a non-qualitative wand guard anywhere in the bounds."""
    ev = evaluator(bounds)
    for s, h in states_for([e], bounds):
        ev.ev(e, s, h)


# ---------------------------------------------------------------------------
# concrete syntax


class ExpParser(Parser):
    def exp(self) -> Expectation:
        if self.at("sup") or self.at("inf"):
            kind = self.tok.text
            self.i += 1
            x = self.ident()
            over = "values"
            if self.accept("in"):
                self.expect("locs")
                over = "locations"
            self.expect(".")
            body = self.exp()
            return (SupVal if kind == "sup" else InfVal)(x, body, over)
        if self.accept("bigstar"):
            x = self.ident()
            self.expect("in")
            self.expect("[")
            lo = self.arith()
            self.expect(",")
            hi = self.arith()
            self.expect("]")
            self.expect(".")
            return BigSepMul(x, lo, hi, self.exp())
        left = self.sum()
        if self.accept("-*"):
            return GuardedWand(left, self.exp())
        return left

    def sum(self) -> Expectation:
        e = self.sepprod()
        while self.accept("+"):
            e = Add(e, self.sepprod())
        return e

    def sepprod(self) -> Expectation:
        e = self.prod()
        while self.accept("**"):
            e = SepMul(e, self.prod())
        return e

    def prod(self) -> Expectation:
        e = self.power()
        while self.accept("*"):
            e = Mul(e, self.power())
        return e

    def power(self) -> Expectation:
        e = self.postfix()
        while self.accept("^"):
            e = Pow(e, self.arith_unary())
        return e

    def postfix(self) -> Expectation:
        e = self.atom()
        while self.at("[") and self.peek().kind == "id" and self.peek(2).text == ":=":
            self.i += 1
            x = self.ident()
            self.expect(":=")
            a = self.arith()
            self.expect("]")
            e = Subst(e, x, a)
        return e

    def atom(self) -> Expectation:
        t = self.tok
        if t.kind in ("id", "num", "dec") or self.at("(") or self.at("-"):
            if t.kind == "id" and t.text in ("max", "min", "emp", "sup", "inf", "bigstar"):
                pass
            else:
                mark = self.i
                try:
                    a = self.arith()
                    if self.accept("|->"):
                        return Iverson(self.points_to_rhs(a, top=True))
                except ParseError:
                    pass
                self.i = mark
        if t.kind in ("num", "dec"):
            return Const(self.rational())
        if self.accept("emp"):
            return EMP
        if self.at("max") or self.at("min"):
            kind = self.tok.text
            self.i += 1
            self.expect("(")
            a = self.exp()
            self.expect(",")
            b = self.exp()
            self.expect(")")
            return Max(a, b) if kind == "max" else Min(a, b)
        if self.at("sup") or self.at("inf") or self.at("bigstar"):
            return self.exp()
        if self.accept("["):
            p = self.pred()
            self.expect("]")
            return Iverson(p)
        if self.accept("("):
            e = self.exp()
            self.expect(")")
            return e
        self.fail("expected an expectation")

    def points_to_rhs(self, addr, top=False) -> Predicate:
        if self.accept("-"):
            if self.tok.kind != "num":
                return Allocated(addr)
            self.i -= 1
        vals = [self.arith()]
        while self.at(","):
            mark = self.i
            self.i += 1
            try:
                v = self.arith()
            except ParseError:
                self.i = mark
                break
            if top and self.at("|->"):
                self.i = mark
                break
            vals.append(v)
        return PointsTo(addr, tuple(vals))

    # predicates inside [ ]
    def pred(self) -> Predicate:
        p = self.pred_and()
        while self.accept("||"):
            p = Or(p, self.pred_and())
        return p

    def pred_and(self) -> Predicate:
        p = self.pred_not()
        while self.accept("&&"):
            p = And(p, self.pred_not())
        return p

    def pred_not(self) -> Predicate:
        if self.accept("!"):
            return Not(self.pred_not())
        if self.accept("emp"):
            return Emp()
        if self.accept("true"):
            return StackGuard(BoolLit(True))
        if self.accept("false"):
            return StackGuard(BoolLit(False))
        if self.accept("guard"):
            self.expect("(")
            g = self.guard()
            self.expect(")")
            return StackGuard(g)
        if self.at("("):
            mark = self.i
            self.i += 1
            try:
                p = self.pred()
                self.expect(")")
                if not (self._at_cmp() or self.at("|->")):
                    return p
            except ParseError:
                pass
            self.i = mark
        a = self.arith()
        if self.accept("|->"):
            return self.points_to_rhs(a)
        if not self._at_cmp():
            self.fail("expected '|->' or a comparison")
        op = self.tok.text
        self.i += 1
        b = self.arith()
        if op in ("=", "=="):
            return EqExpr(a, b)
        return StackGuard(Cmp(op, a, b))


def parse_exp(text: str) -> Expectation:
    p = ExpParser(text)
    e = p.exp()
    p.end()
    return e


def fmt_pred(p: Predicate) -> str:
    if isinstance(p, Emp):
        return "emp"
    if isinstance(p, PointsTo):
        return f"{fmt_arith(p.addr)} |-> {', '.join(fmt_arith(v) for v in p.values)}"
    if isinstance(p, Allocated):
        return f"{fmt_arith(p.addr)} |-> -"
    if isinstance(p, EqExpr):
        return f"{fmt_arith(p.left)} = {fmt_arith(p.right)}"
    if isinstance(p, StackGuard):
        g = p.guard
        if isinstance(g, Cmp) and g.op != "=":
            return fmt_guard(g)
        if isinstance(g, BoolLit):
            return fmt_guard(g)
        return f"guard({fmt_guard(g)})"
    if isinstance(p, And):
        return f"({fmt_pred(p.left)} && {fmt_pred(p.right)})"
    if isinstance(p, Or):
        return f"({fmt_pred(p.left)} || {fmt_pred(p.right)})"
    if isinstance(p, Not):
        return f"!({fmt_pred(p.arg)})"
    raise TypeError(f"not a predicate: {p!r}")


_BIN = {Add: "+", Mul: "*", SepMul: "**", GuardedWand: "-*"}


def fmt_exp(e: Expectation) -> str:
    t = type(e)
    if t is Const:
        return fmt_rational(e.value)
    if t is Iverson:
        return "emp" if isinstance(e.pred, Emp) else f"[{fmt_pred(e.pred)}]"
    if t in (Add, Mul, SepMul):
        return f"({fmt_exp(e.left)} {_BIN[t]} {fmt_exp(e.right)})"
    if t is GuardedWand:
        return f"({fmt_exp(e.guard)} -* {fmt_exp(e.body)})"
    if t is Max:
        return f"max({fmt_exp(e.left)}, {fmt_exp(e.right)})"
    if t is Min:
        return f"min({fmt_exp(e.left)}, {fmt_exp(e.right)})"
    if t is Pow:
        return f"({fmt_exp(e.base)} ^ ({fmt_arith(e.exponent)}))"
    if t in (SupVal, InfVal):
        kw = "sup" if t is SupVal else "inf"
        dom = " in locs" if e.over == "locations" else ""
        return f"({kw} {e.var}{dom}. {fmt_exp(e.body)})"
    if t is Subst:
        return f"({fmt_exp(e.body)})[{e.var} := {fmt_arith(e.expr)}]"
    if t is BigSepMul:
        return f"(bigstar {e.var} in [{fmt_arith(e.lo)}, {fmt_arith(e.hi)}]. {fmt_exp(e.body)})"
    raise TypeError(f"not an expectation: {e!r}")
