"""Weakest liberal preexpectations on the bounded MDP.

``wslp_n`` is the resource-safe iterate with a qualitative invariant threaded
through every step. ``wlp_bracket`` encloses wlp between two sequences:

* upper: the wslp_n iterate with invariant emp, antitone from 1;
* lower: 1 minus an over-approximation of the maximal expected loss
  (1 - X at termination, 1 at abort), iterated from above on the MDP whose
  maximal end components have been collapsed, which makes the iteration
  converge to the true value.

When the explicit state space has no frontier, the bracket is additionally
snapped to the exact value: a memoryless policy read off the iterates is
evaluated by an exact linear solve, and if its value is a fixed point of the
min-Bellman operator it equals wlp (wlp is the greatest fixed point and no
scheduler does better than it).
"""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Optional, Union

from .expectation import (
    EMP, Expectation, NonQualitativeError, evaluator, fv_exp, is_qualitative,
)
from .semantics import (
    ABORT, MDP, Config, build_state_space, is_final, is_terminated,
    solve_absorption, steps, tarjan_sccs,
)
from .state import (
    DomainBounds, Heap, ProgState, enumerate_heaps, enumerate_stacks,
    heap_union, subheaps,
)
from .syntax import Command, Terminated, free_vars_cmd

ONE = Fraction(1)
ZERO = Fraction(0)


def default_states(c: Command, exprs: Iterable[Expectation], bounds: DomainBounds) -> list:
    """Every bounded initial state over the free variables of c and exprs."""
    vs = set(free_vars_cmd(c))
    for e in exprs:
        vs |= fv_exp(e)
    return [ProgState(s, h) for s in enumerate_stacks(vs, bounds) for h in enumerate_heaps(bounds)]


# ---------------------------------------------------------------------------
# step operator and wslp_n


class MissingSuccessor(KeyError):
    pass


def step_op(t: Mapping, cfg, bounds: DomainBounds) -> Fraction:
    """min over enabled actions of the expected t-value of the successor; 1 if none."""
    best = None
    for _, dist in steps(cfg, bounds):
        acc = ZERO
        for m, p in dist:
            if m not in t:
                raise MissingSuccessor(m)
            acc += p * t[m]
        if best is None or acc < best:
            best = acc
    return ONE if best is None else best


class WSLP:
    """Memoised evaluator for wslp_n(C, X | I) at arbitrary configurations."""

    def __init__(self, X: Expectation, I: Expectation, bounds: DomainBounds, check: bool = True):
        if check and I != EMP and not is_qualitative(I, bounds):
            raise NonQualitativeError("resource invariant is not qualitative")
        self.X, self.I, self.bounds = X, I, bounds
        self.ev = evaluator(bounds)
        self.memo: dict = {}

    def value(self, n: int, cmd: Command, st: ProgState) -> Fraction:
        return Fraction(self._w(n, Config(cmd, st.stack, st.heap)))

    def _w(self, n: int, cfg: Config):
        if n == 0:
            return 1
        if isinstance(cfg.cmd, Terminated):
            return self.ev.ev(self.X, cfg.stack, cfg.heap)
        key = (n, cfg)
        r = self.memo.get(key)
        if r is not None:
            return r
        s, h = cfg.stack, cfg.heap
        if self.I == EMP:
            exts = [Heap()]
        else:
            exts = self.ev.extensions(self.I, s, h)
        best = 1
        for hi in exts:
            v = self._step(n, Config(cfg.cmd, s, heap_union(h, hi)))
            if v < best:
                best = v
                if best == 0:
                    break
        self.memo[key] = best
        return best

    def _step(self, n: int, cfg: Config):
        best = None
        for _, dist in steps(cfg, self.bounds):
            acc = 0
            for m, p in dist:
                if m is ABORT:
                    continue
                acc += p * self._sep_inv(n - 1, m)
            if best is None or acc < best:
                best = acc
                if best == 0:
                    break
        return 1 if best is None else best

    def _sep_inv(self, n: int, cfg: Config):
        """(wslp_n(C') * I)(s', h'): best split of h' into a part for the program and one satisfying I."""
        if self.I == EMP:
            return self._w(n, cfg)
        s, h = cfg.stack, cfg.heap
        parts = self.ev.support(self.I, s, h)
        if parts is None:
            parts = subheaps(h)
        best = 0
        for h2 in parts:
            if self.ev.ev(self.I, s, h2) != 1:
                continue
            v = self._w(n, Config(cfg.cmd, s, h.minus(h2)))
            if v > best:
                best = v
                if best == 1:
                    break
        return best


def wslp_value(c: Command, X: Expectation, I: Expectation, st: ProgState,
               bounds: DomainBounds, n: int) -> Fraction:
    return WSLP(X, I, bounds).value(n, c, st)


def wslp_n(c: Command, X: Expectation, I: Expectation, bounds: DomainBounds, n: int,
           states: Optional[Iterable[ProgState]] = None) -> dict:
    """Table ProgState -> wslp_n(c, X | I) over the given (default: all bounded) initial states."""
    if states is None:
        states = default_states(c, [X, I], bounds)
    w = WSLP(X, I, bounds)
    return {st: w.value(n, c, st) for st in states}


# ---------------------------------------------------------------------------
# brackets


@dataclass(frozen=True)
class Bracket:
    lower: Fraction
    upper: Fraction
    exact: bool = False
    converged: bool = True
    iterations: int = 0
    frontier: bool = False

    @property
    def width(self) -> Fraction:
        return self.upper - self.lower

    def __str__(self):
        tag = "exact" if self.exact else ("" if self.converged else "not-converged")
        return f"{fmt_q(self.lower)}\t{fmt_q(self.upper)}\t{tag}".rstrip()


def fmt_q(q: Fraction) -> str:
    q = Fraction(q)
    if q.denominator == 1:
        return str(q.numerator)
    d = q.denominator
    while d % 2 == 0:
        d //= 2
    while d % 5 == 0:
        d //= 5
    if d == 1:
        return format(float(q), ".12g") if q.denominator <= 10 ** 12 else str(q)
    return str(q)


class _Boundary:
    """Per-node classification and terminal values of an explicit MDP."""

    def __init__(self, mdp: MDP, X: Expectation, bounds: DomainBounds):
        ev = evaluator(bounds)
        n = len(mdp)
        self.mdp = mdp
        self.final_value: dict = {}
        for i, cfg in enumerate(mdp.nodes):
            if cfg is ABORT:
                self.final_value[i] = ZERO
            elif is_terminated(cfg):
                self.final_value[i] = Fraction(ev.ev(X, cfg.stack, cfg.heap))
        self.blocked = {i for i in range(n) if mdp.is_blocked(i)}
        self.frontier = set(mdp.frontier)
        self.transient = [i for i in range(n) if mdp.actions[i]]


def _bellman_min(mdp, bd, v, i):
    best = None
    for _, succ in mdp.actions[i]:
        acc = ZERO
        for j, p in succ:
            acc += p * v[j]
        if best is None or acc < best:
            best = acc
    return best


def _upper_iterate(mdp: MDP, bd: _Boundary, v: list) -> list:
    nv = list(v)
    for i in bd.transient:
        nv[i] = _bellman_min(mdp, bd, v, i)
    for i, x in bd.final_value.items():
        nv[i] = x
    return nv


class _LossQuotient:
    """Max expected loss on the MDP with maximal end components collapsed.

    Iterating from above on the quotient converges to the maximal loss, so
    1 minus the iterate is a sound and convergent lower bound on wlp.
    """

    def __init__(self, mdp: MDP, bd: _Boundary):
        n = len(mdp)
        self.n = n
        loss = {}
        for i, x in bd.final_value.items():
            loss[i] = 1 - x
        for i in bd.blocked:
            loss[i] = ZERO
        for i in bd.frontier:
            loss[i] = ONE
        self.loss = loss
        trans_nodes = set(bd.transient)
        mecs = _mecs(mdp, trans_nodes)
        rep = list(range(n))
        for comp in mecs:
            r = min(comp)
            for i in comp:
                rep[i] = r
        self.rep = rep
        # quotient actions: lists of [(rep_succ, p)], staying actions dropped, staying option -> 0
        qacts: dict = defaultdict(list)
        stay: set = set()
        for comp in mecs:
            stay.add(rep[comp[0]])
        for i in trans_nodes:
            r = rep[i]
            for _, succ in mdp.actions[i]:
                mapped: dict = {}
                for j, p in succ:
                    mapped[rep[j]] = mapped.get(rep[j], 0) + p
                if r in stay and all(k == r for k in mapped):
                    continue
                qacts[r].append(tuple(mapped.items()))
        self.qacts = qacts
        self.stay = stay
        # nodes that cannot reach positive loss have max loss 0
        preds = defaultdict(set)
        for r, acts in qacts.items():
            for a in acts:
                for k, _ in a:
                    preds[k].add(r)
        pos = {i for i, x in loss.items() if x > 0}
        seen = set(pos)
        queue = deque(pos)
        while queue:
            k = queue.popleft()
            for r in preds[k]:
                if r not in seen:
                    seen.add(r)
                    queue.append(r)
        self.zero = {r for r in qacts if r not in seen} | {r for r in stay if r not in seen}
        self.nodes = sorted(set(qacts) | stay)

    def initial(self) -> dict:
        u = {}
        for r in self.nodes:
            u[r] = ZERO if r in self.zero else ONE
        return u

    def value(self, u: dict, k: int):
        x = self.loss.get(k)
        if x is not None:
            return x
        return u[k]

    def iterate(self, u: dict) -> dict:
        nu = {}
        for r in self.nodes:
            if r in self.zero:
                nu[r] = ZERO
                continue
            best = ZERO  # staying forever in an end component, or nothing better
            for a in self.qacts.get(r, ()):
                acc = ZERO
                for k, p in a:
                    acc += p * self.value(u, k)
                if acc > best:
                    best = acc
            nu[r] = best
        return nu

    def lower_at(self, u: dict, i: int) -> Fraction:
        x = self.loss.get(i)
        if x is not None:
            return 1 - x
        return 1 - u[self.rep[i]]


def _mecs(mdp: MDP, nodes: set) -> list:
    """Maximal end components among the given nodes (lists of node ids)."""
    allowed = {i: [a for a, (_, succ) in enumerate(mdp.actions[i]) if all(j in nodes for j, _ in succ)]
               for i in nodes}
    current = {i for i in nodes if allowed[i]}
    while True:
        def succ(i):
            out = []
            for a in allowed[i]:
                for j, _ in mdp.actions[i][a][1]:
                    if j in current:
                        out.append(j)
            return out
        comps = tarjan_sccs(sorted(current), succ)
        cid = {}
        for k, comp in enumerate(comps):
            for i in comp:
                cid[i] = k
        changed = False
        for i in list(current):
            keep = [a for a in allowed[i]
                    if all(j in current and cid[j] == cid[i] for j, _ in mdp.actions[i][a][1])]
            if len(keep) != len(allowed[i]):
                allowed[i] = keep
                changed = True
            if not keep:
                current.discard(i)
                changed = True
        if not changed:
            return [sorted(c) for c in comps if all(i in current for i in c)]


def _attractor_policy(mdp: MDP, bd: _Boundary, candidates: dict) -> dict:
    """Among each node's candidate actions, pick one that makes progress towards the boundary."""
    n = len(mdp)
    dist = {i: 0 for i in range(n) if not mdp.actions[i]}
    choice: dict = {}
    frontier = list(dist)
    preds = defaultdict(list)
    for i, acts in candidates.items():
        for a in acts:
            for j, _ in mdp.actions[i][a][1]:
                preds[j].append((i, a))
    d = 0
    while frontier:
        nxt = []
        for j in frontier:
            for i, a in preds[j]:
                if i not in dist:
                    dist[i] = d + 1
                    choice[i] = a
                    nxt.append(i)
        frontier = nxt
        d += 1
    for i, acts in candidates.items():
        if i not in choice and acts:
            choice[i] = acts[0]
    return choice


def policy_values(mdp: MDP, bd: _Boundary, choice: Mapping) -> list:
    """Exact liberal value of every node under a memoryless policy (node -> action index)."""
    trans = {}
    boundary = {}
    for i in range(len(mdp)):
        if i in bd.final_value:
            boundary[i] = {0: bd.final_value[i]}
        elif not mdp.actions[i]:
            boundary[i] = {0: ONE}
        else:
            trans[i] = mdp.actions[i][choice[i]][1]
    sol = solve_absorption(trans, boundary, {0: ONE})
    out = [ZERO] * len(mdp)
    for i in range(len(mdp)):
        vec = boundary[i] if i in boundary else sol[i]
        out[i] = Fraction(vec.get(0, 0))
    return out


def _try_snap(mdp: MDP, bd: _Boundary, policies: list) -> Optional[list]:
    for choice in policies:
        v = policy_values(mdp, bd, choice)
        if all(_bellman_min(mdp, bd, v, i) == v[i] for i in bd.transient):
            return v
    return None


def _candidate_actions(mdp, bd, values, better) -> dict:
    cands = {}
    for i in bd.transient:
        vals = []
        for _, succ in mdp.actions[i]:
            vals.append(sum((p * values(j) for j, p in succ), ZERO))
        target = better(vals)
        cands[i] = [a for a, x in enumerate(vals) if x == target]
    return cands


@dataclass
class BracketRun:
    mdp: MDP
    brackets: dict = field(default_factory=dict)  # initial ProgState -> Bracket
    exact_values: Optional[list] = None
    trace: list = field(default_factory=list)  # (iteration, lower, upper) at the first initial state


def wlp_brackets(c: Command, X: Expectation, states: Iterable[ProgState], bounds: DomainBounds,
                 eps: Fraction = Fraction(1, 10 ** 6), n_max: int = 1000,
                 step_cap: Optional[int] = None, node_cap: int = 1_000_000,
                 snap: bool = True) -> BracketRun:
    """Brackets for every initial state, sharing one explicit state space."""
    states = list(states)
    mdp = build_state_space(c, states, bounds, step_cap=step_cap, node_cap=node_cap)
    bd = _Boundary(mdp, X, bounds)
    has_frontier = bool(mdp.frontier)
    init_of = {st: mdp.index[Config(c, st.stack, st.heap)] for st in states}
    init_ids = sorted(set(init_of.values()))

    v = [ONE] * len(mdp)
    lq = _LossQuotient(mdp, bd)
    u = lq.initial()

    def snap_now():
        up = _candidate_actions(mdp, bd, lambda j: v[j], min)
        lo = _candidate_actions(mdp, bd, lambda j: lq.value(u, lq.rep[j]) if j not in lq.loss else lq.loss[j], max)
        return _try_snap(mdp, bd, [_attractor_policy(mdp, bd, lo), _attractor_policy(mdp, bd, up)])

    exact = None
    k = 0
    checkpoint = 1
    first = init_of[states[0]] if states else None
    trace = []
    while True:
        width = max((v[i] - lq.lower_at(u, i) for i in init_ids), default=ZERO)
        if first is not None:
            trace.append((k, lq.lower_at(u, first), v[first]))
        if snap and not has_frontier and (k == checkpoint or width <= eps or k >= n_max):
            exact = snap_now()
            checkpoint *= 2
            if exact is not None:
                break
        if width <= eps or k >= n_max:
            break
        v = _upper_iterate(mdp, bd, v)
        u = lq.iterate(u)
        k += 1
    run = BracketRun(mdp, exact_values=exact, trace=trace)
    for st, i in init_of.items():
        if exact is not None:
            run.brackets[st] = Bracket(exact[i], exact[i], True, True, k, False)
        else:
            lo, hi = lq.lower_at(u, i), v[i]
            run.brackets[st] = Bracket(lo, hi, lo == hi, hi - lo <= eps, k, has_frontier)
    return run


def wlp_bracket(c: Command, X: Expectation, st0: ProgState, bounds: DomainBounds,
                eps: Fraction = Fraction(1, 10 ** 6), n_max: int = 1000, **kw) -> Bracket:
    return wlp_brackets(c, X, [st0], bounds, eps, n_max, **kw).brackets[st0]


def wlp_exact(c: Command, X: Expectation, st0: ProgState, bounds: DomainBounds, **kw) -> Fraction:
    b = wlp_bracket(c, X, st0, bounds, **kw)
    if not b.exact:
        raise ValueError(f"wlp not determined exactly: [{b.lower}, {b.upper}]")
    return b.lower


# ---------------------------------------------------------------------------
# almost-sure termination


@dataclass
class ASTResult:
    ast: bool
    witness: list  # configurations from which the scheduler can avoid termination forever
    mdp: MDP

    def __bool__(self):
        return self.ast


def check_ast(c: Command, bounds: DomainBounds, states: Optional[Iterable[ProgState]] = None,
              node_cap: int = 1_000_000) -> ASTResult:
    """Graph analysis: AST iff no reachable node lets some scheduler avoid final configs surely."""
    if states is None:
        states = default_states(c, [], bounds)
    mdp = build_state_space(c, list(states), bounds, node_cap=node_cap)
    n = len(mdp)
    avoid = {i for i in range(n) if not mdp.is_final(i)}
    changed = True
    while changed:
        changed = False
        for i in list(avoid):
            acts = mdp.actions[i]
            if not acts:
                continue  # blocked or frontier: stuck without terminating
            if not any(all(j in avoid for j, _ in succ) for _, succ in acts):
                avoid.discard(i)
                changed = True
    witness = [mdp.nodes[i] for i in sorted(avoid)]
    return ASTResult(not avoid, witness, mdp)


# ---------------------------------------------------------------------------
# fixed memoryless schedulers


Policy = Union[Callable, Mapping]


def scheduler_value(c: Command, X: Expectation, st0: ProgState, bounds: DomainBounds,
                    policy: Policy, n_max: Optional[int] = None, node_cap: int = 1_000_000) -> Fraction:
    """Exact liberal value of the chain induced by a memoryless policy.

    ``policy`` maps a configuration (and its list of enabled labels) to a label;
    a Mapping from Config to label is accepted too.
    """
    from .semantics import ActionNotEnabled

    mdp = build_state_space(c, st0, bounds, step_cap=n_max, node_cap=node_cap)
    bd = _Boundary(mdp, X, bounds)
    choice = {}
    for i in bd.transient:
        labels = [a for a, _ in mdp.actions[i]]
        cfg = mdp.nodes[i]
        a = policy[cfg] if isinstance(policy, Mapping) else policy(cfg, labels)
        if a not in labels:
            raise ActionNotEnabled(f"policy chose {a!r}, enabled: {labels}")
        choice[i] = labels.index(a)
    return policy_values(mdp, bd, choice)[mdp.initial[0]]


def prefer(*prefixes: str) -> Callable:
    """Memoryless policy: first enabled label starting with the earliest listed prefix."""
    def pick(cfg, labels):
        for pre in prefixes:
            for a in labels:
                if a.startswith(pre):
                    return a
        return labels[0]
    return pick
