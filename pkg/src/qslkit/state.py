"""Program states: stacks, heaps, and the finite universe that bounds every quantifier."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import comb
from typing import Iterable, Iterator, Mapping

from .syntax import (
    ArithExpr, BinOp, BoolLit, Cmp, Conj, Disj, Guard, Negate, Num, ProbCase,
    ProbExpr, ProbLit, Var, check_var,
)


class UndeclaredVariableError(KeyError):
    pass


class HeapOverlapError(ValueError):
    pass


class ProbabilityRangeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# stacks

_INDEX_CACHE: dict = {}


def _index_of(names: tuple) -> dict:
    idx = _INDEX_CACHE.get(names)
    if idx is None:
        idx = {n: i for i, n in enumerate(names)}
        _INDEX_CACHE[names] = idx
    return idx


class Stack:
    """Immutable total map from declared variables to integers."""

    __slots__ = ("names", "vals", "_idx", "_hash")

    def __init__(self, names: tuple, vals: tuple):
        self.names = names
        self.vals = vals
        self._idx = _index_of(names)
        self._hash = hash((names, vals))

    @classmethod
    def of(cls, names: Iterable[str], values: Mapping[str, int] | None = None) -> "Stack":
        names = tuple(names)
        values = dict(values or {})
        unknown = set(values) - set(names)
        if unknown:
            raise UndeclaredVariableError(f"undeclared variable(s) {sorted(unknown)}")
        return cls(names, tuple(int(values.get(n, 0)) for n in names))

    def __getitem__(self, x: str) -> int:
        try:
            return self.vals[self._idx[x]]
        except KeyError:
            raise UndeclaredVariableError(f"undeclared variable {x!r}") from None

    def get(self, x: str, default=None):
        i = self._idx.get(x)
        return default if i is None else self.vals[i]

    def __contains__(self, x: str) -> bool:
        return x in self._idx

    def subst(self, x: str, v: int) -> "Stack":
        """s[x/v]; x must be declared."""
        i = self._idx.get(x)
        if i is None:
            raise UndeclaredVariableError(f"undeclared variable {x!r}")
        if self.vals[i] == v:
            return self
        vals = list(self.vals)
        vals[i] = v
        return Stack(self.names, tuple(vals))

    def bind(self, x: str, v: int) -> "Stack":
        """Like subst, but declares x if needed (used for bound variables of expectations)."""
        if x in self._idx:
            return self.subst(x, v)
        return Stack(self.names + (x,), self.vals + (v,))

    def project(self, xs: tuple) -> tuple:
        idx, vals = self._idx, self.vals
        try:
            return tuple(vals[idx[x]] for x in xs)
        except KeyError as e:
            raise UndeclaredVariableError(f"undeclared variable {e.args[0]!r}") from None

    def items(self):
        return zip(self.names, self.vals)

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.vals))

    def __eq__(self, other):
        return isinstance(other, Stack) and self._hash == other._hash and \
            self.names == other.names and self.vals == other.vals

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return "{" + ", ".join(f"{n}={v}" for n, v in zip(self.names, self.vals)) + "}"


def stack_subst(s: Stack, x: str, v: int) -> Stack:
    return s.subst(x, v)


# ---------------------------------------------------------------------------
# heaps


class Heap:
    """Immutable finite partial map from locations to values."""

    __slots__ = ("cells", "_map", "_hash")

    def __init__(self, cells: Mapping[int, int] | Iterable = ()):
        if isinstance(cells, Mapping):
            items = cells.items()
        else:
            items = cells
        m = {int(k): int(v) for k, v in items}
        self._map = m
        self.cells = tuple(sorted(m.items()))
        self._hash = hash(self.cells)

    def dom(self) -> frozenset:
        return frozenset(self._map)

    def __contains__(self, loc: int) -> bool:
        return loc in self._map

    def __getitem__(self, loc: int) -> int:
        return self._map[loc]

    def get(self, loc: int, default=None):
        return self._map.get(loc, default)

    def __len__(self):
        return len(self.cells)

    def __iter__(self):
        return iter(self._map)

    def update(self, loc: int, v: int) -> "Heap":
        m = dict(self._map)
        m[loc] = v
        return Heap(m)

    def remove(self, loc: int) -> "Heap":
        m = dict(self._map)
        del m[loc]
        return Heap(m)

    def restrict(self, locs) -> "Heap":
        return Heap((k, v) for k, v in self.cells if k in locs)

    def minus(self, other: "Heap") -> "Heap":
        return Heap((k, v) for k, v in self.cells if k not in other._map)

    def is_subheap_of(self, other: "Heap") -> bool:
        om = other._map
        return all(om.get(k, _MISSING) == v for k, v in self.cells)

    def __eq__(self, other):
        return isinstance(other, Heap) and self._hash == other._hash and self.cells == other.cells

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return "{" + ", ".join(f"{k}↦{v}" for k, v in self.cells) + "}"


_MISSING = object()
EMPTY_HEAP = Heap()


def heap_disjoint(h1: Heap, h2: Heap) -> bool:
    if len(h1) > len(h2):
        h1, h2 = h2, h1
    return not any(k in h2 for k in h1)


def heap_union(h1: Heap, h2: Heap) -> Heap:
    if not heap_disjoint(h1, h2):
        raise HeapOverlapError(f"heaps {h1} and {h2} overlap")
    if not h1.cells:
        return h2
    if not h2.cells:
        return h1
    return Heap(h1.cells + h2.cells)


@lru_cache(maxsize=1 << 16)
def subheaps(h: Heap) -> tuple:
    """All 2^|dom h| restrictions of h."""
    cells = h.cells
    out = []
    for mask in range(1 << len(cells)):
        out.append(Heap(c for i, c in enumerate(cells) if mask >> i & 1))
    return tuple(out)


@dataclass(frozen=True)
class ProgState:
    stack: Stack
    heap: Heap

    def __repr__(self):
        return f"({self.stack!r}, {self.heap!r})"


# ---------------------------------------------------------------------------
# bounds


@dataclass(frozen=True)
class DomainBounds:
    """Finite stand-ins for Vals and Locs plus the declared variables.

    ``pinned`` optionally narrows the enumerated values of individual variables
    (for instance array base pointers); quantifiers over values still range
    over the full interval.
    """

    vars: tuple
    values: tuple  # inclusive (lo, hi)
    locations: tuple
    heap_cap: int
    pinned: tuple = field(default=())  # ((var, (v, ...)), ...)

    def __post_init__(self):
        object.__setattr__(self, "vars", tuple(dict.fromkeys(check_var(v) for v in self.vars)))
        lo, hi = self.values
        if lo > hi:
            raise ValueError("empty value interval")
        object.__setattr__(self, "values", (int(lo), int(hi)))
        locs = tuple(sorted(set(int(l) for l in self.locations)))
        object.__setattr__(self, "locations", locs)
        if not 0 <= self.heap_cap <= len(locs):
            raise ValueError("heap_cap must lie in [0, |locations|]")
        pins = tuple(sorted((str(k), tuple(int(x) for x in vs)) for k, vs in dict(self.pinned).items()))
        object.__setattr__(self, "pinned", pins)

    @property
    def value_range(self) -> range:
        return range(self.values[0], self.values[1] + 1)

    def values_for(self, x: str):
        for k, vs in self.pinned:
            if k == x:
                return vs
        return self.value_range

    def with_vars(self, extra: Iterable[str]) -> "DomainBounds":
        new = tuple(dict.fromkeys(self.vars + tuple(sorted(set(extra)))))
        if new == self.vars:
            return self
        return DomainBounds(new, self.values, self.locations, self.heap_cap, self.pinned)

    def stack(self, values: Mapping[str, int] | None = None) -> Stack:
        return Stack.of(self.vars, values)

    def heap_count(self) -> int:
        nv = len(self.value_range)
        return sum(comb(len(self.locations), k) * nv ** k for k in range(self.heap_cap + 1))


@lru_cache(maxsize=64)
def _heaps(bounds: DomainBounds) -> tuple:
    vals = list(bounds.value_range)
    out = []
    for k in range(bounds.heap_cap + 1):
        for dom in itertools.combinations(bounds.locations, k):
            for vs in itertools.product(vals, repeat=k):
                out.append(Heap(zip(dom, vs)))
    return tuple(out)


def enumerate_heaps(bounds: DomainBounds) -> tuple:
    """All heaps with dom within the locations, at most heap_cap cells, values in range."""
    return _heaps(bounds)


@lru_cache(maxsize=64)
def heap_universe(bounds: DomainBounds) -> frozenset:
    return frozenset(_heaps(bounds))


def enumerate_stacks(vars: Iterable[str], bounds: DomainBounds) -> Iterator[Stack]:
    """Every assignment of bounded values to vars; other declared variables stay 0."""
    vs = sorted(set(vars))
    names = bounds.vars
    missing = [v for v in vs if v not in names]
    if missing:
        names = names + tuple(missing)
    base = Stack.of(names)
    idx = _index_of(names)
    positions = [idx[v] for v in vs]
    for combo in itertools.product(*(bounds.values_for(v) for v in vs)):
        vals = list(base.vals)
        for p, c in zip(positions, combo):
            vals[p] = c
        yield Stack(names, tuple(vals))


# ---------------------------------------------------------------------------
# evaluation of stack expressions


def eval_arith(e: ArithExpr, s: Stack) -> int:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return s[e.name]
    a = eval_arith(e.left, s)
    b = eval_arith(e.right, s)
    op = e.op
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    return a * b


def eval_guard(g: Guard, s: Stack) -> bool:
    if isinstance(g, Cmp):
        a = eval_arith(g.left, s)
        b = eval_arith(g.right, s)
        op = g.op
        if op == "=":
            return a == b
        if op == "!=":
            return a != b
        if op == "<":
            return a < b
        if op == "<=":
            return a <= b
        if op == ">":
            return a > b
        return a >= b
    if isinstance(g, BoolLit):
        return g.value
    if isinstance(g, Conj):
        return eval_guard(g.left, s) and eval_guard(g.right, s)
    if isinstance(g, Disj):
        return eval_guard(g.left, s) or eval_guard(g.right, s)
    if isinstance(g, Negate):
        return not eval_guard(g.arg, s)
    raise TypeError(f"not a guard: {g!r}")


def eval_prob(e: ProbExpr, s: Stack) -> Fraction:
    if isinstance(e, ProbLit):
        v = e.value
    elif isinstance(e, ProbCase):
        v = eval_prob(e.then if eval_guard(e.guard, s) else e.orelse, s)
    else:
        raise TypeError(f"not a probability expression: {e!r}")
    if not 0 <= v <= 1:
        raise ProbabilityRangeError(f"probability {v} outside [0,1]")
    return v


# ---------------------------------------------------------------------------
# initial-state files


def parse_initial_state(text: str) -> tuple:
    """Parse `var = int` and `heap loc = int` lines; returns (stack dict, Heap)."""
    stack, cells = {}, {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected `name = int`")
        lhs, rhs = (p.strip() for p in line.split("=", 1))
        try:
            val = int(rhs)
        except ValueError:
            raise ValueError(f"line {n}: {rhs!r} is not an integer") from None
        parts = lhs.split()
        if len(parts) == 2 and parts[0] == "heap":
            loc = int(parts[1])
            if loc in cells:
                raise ValueError(f"line {n}: location {loc} given twice")
            cells[loc] = val
        elif len(parts) == 1:
            stack[check_var(parts[0])] = val
        else:
            raise ValueError(f"line {n}: cannot parse {line!r}")
    return stack, Heap(cells)


def format_stack(s: Stack, only: Iterable[str] | None = None) -> str:
    keep = None if only is None else set(only)
    return ",".join(f"{n}={v}" for n, v in s.items() if keep is None or n in keep) or "-"


def format_heap(h: Heap) -> str:
    return ",".join(f"{k}:{v}" for k, v in h.cells) or "emp"
