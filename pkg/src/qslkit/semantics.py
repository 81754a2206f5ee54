"""MDP operational semantics: configurations, enabled actions and transitions.

A configuration is either ``Config(cmd, stack, heap)`` or the global ``ABORT``
sink. ``steps`` returns every enabled action with its successor distribution;
atomic regions are collapsed into a single action by an exact absorption solve
of the (fully probabilistic) chain of their tame body.
"""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Hashable, Iterable, Optional

from .state import (
    DomainBounds, Heap, ProgState, Stack, eval_arith, eval_guard, eval_prob,
    format_heap, format_stack,
)
from .syntax import (
    Alloc, Assign, Atomic, Command, Concurrent, Diverge, Free, IfThenElse,
    Lookup, Mutate, ProbChoice, Seq, Terminated, While, is_tame, node, pretty,
    SKIP, DIVERGE,
)


class SemanticsError(Exception):
    pass


class ActionNotEnabled(SemanticsError):
    pass


class StateSpaceExceeded(SemanticsError):
    def __init__(self, count: int, cap: int):
        super().__init__(f"state space exceeded node cap {cap} ({count} configurations)")
        self.count = count
        self.cap = cap


@node
class Config:
    cmd: Command
    stack: Stack
    heap: Heap

    @property
    def state(self) -> ProgState:
        return ProgState(self.stack, self.heap)

    def __repr__(self):
        return f"<{pretty(self.cmd)} | {format_stack(self.stack)} | {format_heap(self.heap)}>"


class _Abort:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "abort"

    def __reduce__(self):
        return (_Abort, ())


ABORT = _Abort()


def running(cmd: Command, st: ProgState) -> Config:
    return Config(cmd, st.stack, st.heap)


def is_final(c) -> bool:
    return c is ABORT or isinstance(c.cmd, Terminated)


def is_terminated(c) -> bool:
    return c is not ABORT and isinstance(c.cmd, Terminated)


def _dist(pairs: Iterable) -> tuple:
    """Merge identical successors and drop zero-probability branches."""
    acc: dict = {}
    for cfg, p in pairs:
        if p:
            acc[cfg] = acc.get(cfg, 0) + p
    return tuple((cfg, Fraction(p)) for cfg, p in acc.items())


def _lift(dist, wrap: Callable) -> tuple:
    return tuple((c if c is ABORT else wrap(c), p) for c, p in dist)


_CACHE: dict = {}
_CACHE_LIMIT = 2_000_000


def steps(cfg, bounds: DomainBounds) -> tuple:
    """All enabled actions at cfg as (label, distribution) pairs, in a fixed order."""
    if cfg is ABORT:
        return ()
    key = (cfg, bounds)
    r = _CACHE.get(key)
    if r is None:
        r = tuple(_steps(cfg.cmd, cfg.stack, cfg.heap, bounds))
        if len(_CACHE) > _CACHE_LIMIT:
            _CACHE.clear()
        _CACHE[key] = r
    return r


def _steps(c: Command, s: Stack, h: Heap, bounds: DomainBounds) -> list:
    t = type(c)
    if t is Terminated:
        return []
    if t is Assign:
        return [("assign", ((Config(SKIP, s.subst(c.var, eval_arith(c.expr, s)), h), Fraction(1)),))]
    if t is Lookup:
        loc = eval_arith(c.addr, s)
        if loc in h:
            return [("lookup", ((Config(SKIP, s.subst(c.var, h[loc]), h), Fraction(1)),))]
        return [("lookup-abt", ((ABORT, Fraction(1)),))]
    if t is Mutate:
        loc = eval_arith(c.addr, s)
        if loc in h:
            return [("mutation", ((Config(SKIP, s, h.update(loc, eval_arith(c.value, s))), Fraction(1)),))]
        return [("mutation-abt", ((ABORT, Fraction(1)),))]
    if t is Free:
        loc = eval_arith(c.addr, s)
        if loc in h:
            return [("free", ((Config(SKIP, s, h.remove(loc)), Fraction(1)),))]
        return [("free-abt", ((ABORT, Fraction(1)),))]
    if t is Alloc:
        vals = [eval_arith(e, s) for e in c.args]
        locs = set(bounds.locations)
        out = []
        for loc in sorted(locs):
            block = range(loc, loc + len(vals))
            if all(l in locs and l not in h for l in block):
                h2 = h
                for i, v in enumerate(vals):
                    h2 = h2.update(loc + i, v)
                out.append((f"alloc-{loc}", ((Config(SKIP, s.subst(c.var, loc), h2), Fraction(1)),)))
        return out
    if t is Diverge:
        return [("div", ((Config(DIVERGE, s, h), Fraction(1)),))]
    if t is Seq:
        if isinstance(c.first, Terminated):
            if isinstance(c.second, Terminated):
                # no rule moves "skip; skip"; without this step it would be stuck instead of finishing
                return [("seq-end", ((Config(SKIP, s, h), Fraction(1)),))]
            return _steps(c.second, s, h, bounds)
        second = c.second
        return [(a, _lift(d, lambda k: Config(Seq(k.cmd, second), k.stack, k.heap)))
                for a, d in _steps(c.first, s, h, bounds)]
    if t is IfThenElse:
        if eval_guard(c.guard, s):
            return [("if-t", ((Config(c.then, s, h), Fraction(1)),))]
        return [("if-f", ((Config(c.orelse, s, h), Fraction(1)),))]
    if t is While:
        if eval_guard(c.guard, s):
            return [("loop-t", ((Config(Seq(c.body, c), s, h), Fraction(1)),))]
        return [("loop-f", ((Config(SKIP, s, h), Fraction(1)),))]
    if t is ProbChoice:
        p = eval_prob(c.prob, s)
        return [("prob", _dist([(Config(c.left, s, h), p), (Config(c.right, s, h), 1 - p)]))]
    if t is Atomic:
        if not is_tame(c.body):
            return []
        finals, p_div = atomic_outcome(c.body, ProgState(s, h), bounds)
        pairs = list(finals.items())
        pairs.append((Config(DIVERGE, s, h), p_div))
        return [("atomic", _dist(pairs))]
    if t is Concurrent:
        left, right = c.left, c.right
        if isinstance(left, Terminated) and isinstance(right, Terminated):
            return [("con-end", ((Config(SKIP, s, h), Fraction(1)),))]
        out = []
        for a, d in _steps(left, s, h, bounds):
            out.append((("C1," + a), _lift(d, lambda k: Config(Concurrent(k.cmd, right), k.stack, k.heap))))
        for a, d in _steps(right, s, h, bounds):
            out.append((("C2," + a), _lift(d, lambda k: Config(Concurrent(left, k.cmd), k.stack, k.heap))))
        return out
    raise TypeError(f"not a command: {c!r}")


def enabled_actions(cfg, bounds: DomainBounds) -> frozenset:
    return frozenset(a for a, _ in steps(cfg, bounds))


def transition(cfg, action: str, bounds: DomainBounds) -> tuple:
    for a, d in steps(cfg, bounds):
        if a == action:
            return d
    raise ActionNotEnabled(f"action {action!r} not enabled at {cfg!r}")


# ---------------------------------------------------------------------------
# exact linear solves on finite chains


def tarjan_sccs(nodes: Iterable, succ: Callable) -> list:
    """Strongly connected components in reverse topological order (sinks first)."""
    index: dict = {}
    low: dict = {}
    on_stack: set = set()
    stack: list = []
    out: list = []
    counter = 0
    for root in nodes:
        if root in index:
            continue
        work = [(root, iter(succ(root)))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(succ(w))))
                    advanced = True
                    break
                if w in on_stack and index[w] < low[v]:
                    low[v] = index[w]
            if advanced:
                continue
            work.pop()
            if work:
                u = work[-1][0]
                if low[v] < low[u]:
                    low[u] = low[v]
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                out.append(comp)
    return out


def _axpy(acc: dict, c: Fraction, vec: dict) -> None:
    for k, v in vec.items():
        r = acc.get(k, 0) + c * v
        if r:
            acc[k] = r
        else:
            acc.pop(k, None)


def solve_absorption(trans: dict, boundary: dict, default: dict) -> dict:
    """Solve x(n) = sum_m P(n,m) x(m) exactly for the transient nodes in trans.

    trans maps each transient node to a list of (successor, prob); boundary maps
    absorbing nodes to known vector values (dicts); transient nodes that cannot
    reach the boundary get ``default``. Vectors are dicts key -> Fraction.
    """
    # backward reachability to the boundary
    preds = defaultdict(list)
    for n, succs in trans.items():
        for m, p in succs:
            preds[m].append(n)
    reach = set()
    queue = deque(m for m in boundary)
    seen = set(boundary)
    while queue:
        m = queue.popleft()
        for n in preds[m]:
            if n not in seen and n in trans:
                seen.add(n)
                reach.add(n)
                queue.append(n)
    values: dict = {}
    for n in trans:
        if n not in reach:
            values[n] = dict(default)

    def known(m):
        if m in boundary:
            return boundary[m]
        return values.get(m)

    rows: dict = {}
    rhs: dict = {}
    for n in reach:
        row: dict = {}
        b: dict = {}
        for m, p in trans[n]:
            v = known(m) if m not in reach else None
            if v is not None:
                _axpy(b, p, v)
            else:
                row[m] = row.get(m, 0) + p
        rows[n] = row
        rhs[n] = b
    # eliminate in topological order of SCCs (sources first) to keep fill local
    order = [n for comp in reversed(tarjan_sccs(list(reach), lambda n: rows[n].keys())) for n in comp]
    users = defaultdict(set)
    for i, r in rows.items():
        for j in r:
            users[j].add(i)
    done = set()
    for k in order:
        r = rows[k]
        a = r.pop(k, 0)
        users[k].discard(k)
        if a:
            f = 1 / (1 - a)
            r = {j: c * f for j, c in r.items()}
            rows[k] = r
            rhs[k] = {key: v * f for key, v in rhs[k].items()}
        b = rhs[k]
        for i in list(users[k]):
            if i in done or i == k:
                continue
            ri = rows[i]
            c = ri.pop(k, 0)
            if not c:
                continue
            for j, cj in r.items():
                ri[j] = ri.get(j, 0) + c * cj
                users[j].add(i)
            _axpy(rhs[i], c, b)
        done.add(k)
    for k in reversed(order):
        acc = dict(rhs[k])
        for j, c in rows[k].items():
            _axpy(acc, c, values[j])
        values[k] = acc
    return values


# ---------------------------------------------------------------------------
# atomic regions


_ATOMIC: dict = {}


def atomic_outcome(c: Command, st: ProgState, bounds: DomainBounds) -> tuple:
    """Exact absorption distribution of a tame body: ({final config: prob}, p_div)."""
    if not is_tame(c):
        raise SemanticsError("atomic body is not tame (contains allocation or concurrency)")
    key = (c, st.stack, st.heap, bounds)
    r = _ATOMIC.get(key)
    if r is not None:
        return r
    start = Config(c, st.stack, st.heap)
    trans: dict = {}
    boundary: dict = {}
    queue = deque([start])
    seen = {start}
    while queue:
        n = queue.popleft()
        if is_final(n):
            boundary[n] = {n: Fraction(1)}
            continue
        acts = steps(n, bounds)
        if not acts:
            # a tame body has no blocked configurations; treat defensively as divergence
            trans[n] = []
            continue
        if len(acts) != 1:
            raise SemanticsError(f"tame body is nondeterministic at {n!r}")
        succs = acts[0][1]
        trans[n] = list(succs)
        for m, _ in succs:
            if m not in seen:
                seen.add(m)
                queue.append(m)
    if start in boundary:
        finals = {start: Fraction(1)}
    else:
        finals = solve_absorption(trans, boundary, {})[start]
    finals = {k: Fraction(v) for k, v in finals.items() if v}
    p_div = 1 - sum(finals.values(), Fraction(0))
    r = (finals, p_div)
    _ATOMIC[key] = r
    return r


# ---------------------------------------------------------------------------
# explicit state space


@dataclass
class MDP:
    """Reachable fragment of the MDP, with integer node ids."""

    nodes: list
    index: dict
    actions: list  # per node: list of (label, [(succ_id, prob)])
    initial: list
    frontier: set = field(default_factory=set)

    def __len__(self):
        return len(self.nodes)

    def is_final(self, i: int) -> bool:
        return is_final(self.nodes[i])

    def is_blocked(self, i: int) -> bool:
        return not self.actions[i] and not self.is_final(i) and i not in self.frontier

    def emit(self) -> tuple:
        """Transition lines `id action prob id'` and the id -> config table."""
        lines = []
        for i, acts in enumerate(self.actions):
            for a, succ in acts:
                for j, p in succ:
                    lines.append(f"{i}\t{a}\t{p}\t{j}")
        table = []
        for i, n in enumerate(self.nodes):
            tag = " (frontier)" if i in self.frontier else ""
            table.append(f"{i}\t{n!r}{tag}")
        return lines, table


def build_state_space(c0: Command, st0, bounds: DomainBounds, step_cap: Optional[int] = None,
                      node_cap: int = 1_000_000) -> MDP:
    """Breadth-first closure from one or several initial states.

    ``st0`` is a ProgState or an iterable of them. Nodes first reached beyond
    ``step_cap`` BFS layers are kept unexpanded and marked as frontier.
    """
    starts = [st0] if isinstance(st0, ProgState) else list(st0)
    nodes: list = []
    index: dict = {}
    depth: list = []

    def add(cfg, d):
        i = index.get(cfg)
        if i is None:
            i = len(nodes)
            index[cfg] = i
            nodes.append(cfg)
            depth.append(d)
            if len(nodes) > node_cap:
                raise StateSpaceExceeded(len(nodes), node_cap)
        return i

    initial = []
    for st in starts:
        i = add(running(c0, st), 0)
        if i not in initial:
            initial.append(i)
    actions: list = []
    frontier = set()
    i = 0
    while i < len(nodes):
        cfg = nodes[i]
        if step_cap is not None and depth[i] >= step_cap and not is_final(cfg):
            actions.append([])
            frontier.add(i)
            i += 1
            continue
        acts = []
        for a, d in steps(cfg, bounds):
            acts.append((a, [(add(m, depth[i] + 1), p) for m, p in d]))
        actions.append(acts)
        i += 1
    return MDP(nodes, index, actions, initial, frontier)
