"""Independent reference interpreter for depth-bounded liberal values.

It re-implements the small-step rules on plain dicts, separately from
qslkit.semantics, and computes the depth-n unrolling

    W_0(C) = 1,   W_n(abort) = 0,   W_n(done, s, h) = X(s, h),
    W_n(C, s, h) = min over enabled actions of sum p * W_{n-1}(C'),  1 if none,

which for acyclic programs is the value of the best depth-n scheduler tree.
"""

from fractions import Fraction

from qslkit.syntax import (
    Alloc, Assign, Atomic, BinOp, BoolLit, Cmp, Concurrent, Conj, Diverge, Disj, Free, IfThenElse,
    Lookup, Mutate, Negate, Num, ProbCase, ProbChoice, ProbLit, Seq, Terminated, Var, While,
)

ABORT = "abort"
DONE = Terminated()
DIV = Diverge()


def arith(e, s):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return s.get(e.name, 0)
    a, b = arith(e.left, s), arith(e.right, s)
    return {"+": a + b, "-": a - b, "*": a * b}[e.op]


def guard(g, s):
    if isinstance(g, BoolLit):
        return g.value
    if isinstance(g, Cmp):
        a, b = arith(g.left, s), arith(g.right, s)
        return {"=": a == b, "!=": a != b, "<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b}[g.op]
    if isinstance(g, Conj):
        return guard(g.left, s) and guard(g.right, s)
    if isinstance(g, Disj):
        return guard(g.left, s) or guard(g.right, s)
    if isinstance(g, Negate):
        return not guard(g.arg, s)
    raise TypeError(g)


def prob(p, s):
    if isinstance(p, ProbLit):
        return Fraction(p.value)
    if isinstance(p, ProbCase):
        return prob(p.then, s) if guard(p.guard, s) else prob(p.orelse, s)
    raise TypeError(p)


def _key(c, s, h):
    return (c, tuple(sorted(s.items())), tuple(sorted(h.items())))


def moves(c, s, h, locs):
    """List of (label, [((cmd, s, h) | ABORT, p)]) mirroring the operational rules."""
    if isinstance(c, Terminated):
        return []
    if isinstance(c, Assign):
        return [("assign", [((DONE, {**s, c.var: arith(c.expr, s)}, h), 1)])]
    if isinstance(c, Lookup):
        l = arith(c.addr, s)
        if l in h:
            return [("lookup", [((DONE, {**s, c.var: h[l]}, h), 1)])]
        return [("lookup-abt", [(ABORT, 1)])]
    if isinstance(c, Mutate):
        l = arith(c.addr, s)
        if l in h:
            return [("mutation", [((DONE, s, {**h, l: arith(c.value, s)}), 1)])]
        return [("mutation-abt", [(ABORT, 1)])]
    if isinstance(c, Free):
        l = arith(c.addr, s)
        if l in h:
            h2 = dict(h)
            del h2[l]
            return [("free", [((DONE, s, h2), 1)])]
        return [("free-abt", [(ABORT, 1)])]
    if isinstance(c, Alloc):
        vs = [arith(a, s) for a in c.args]
        out = []
        for l in sorted(locs):
            block = [l + i for i in range(len(vs))]
            if all(b in locs and b not in h for b in block):
                h2 = dict(h)
                h2.update(zip(block, vs))
                out.append((f"alloc-{l}", [((DONE, {**s, c.var: l}, h2), 1)]))
        return out
    if isinstance(c, Diverge):
        return [("div", [((DIV, s, h), 1)])]
    if isinstance(c, Seq):
        if isinstance(c.first, Terminated):
            if isinstance(c.second, Terminated):
                return [("seq-end", [((DONE, s, h), 1)])]
            return moves(c.second, s, h, locs)
        return [(a, [(_wrap(m, lambda k: Seq(k, c.second)), p) for m, p in d])
                for a, d in moves(c.first, s, h, locs)]
    if isinstance(c, IfThenElse):
        return [("if", [((c.then if guard(c.guard, s) else c.orelse, s, h), 1)])]
    if isinstance(c, While):
        if guard(c.guard, s):
            return [("loop", [((Seq(c.body, c), s, h), 1)])]
        return [("loop", [((DONE, s, h), 1)])]
    if isinstance(c, ProbChoice):
        p = prob(c.prob, s)
        return [("prob", [((c.left, s, h), p), ((c.right, s, h), 1 - p)])]
    if isinstance(c, Atomic):
        return [("atomic", _run_atomic(c.body, s, h, locs))]
    if isinstance(c, Concurrent):
        if isinstance(c.left, Terminated) and isinstance(c.right, Terminated):
            return [("end", [((DONE, s, h), 1)])]
        out = [("L" + a, [(_wrap(m, lambda k: Concurrent(k, c.right)), p) for m, p in d])
               for a, d in moves(c.left, s, h, locs)]
        out += [("R" + a, [(_wrap(m, lambda k: Concurrent(c.left, k)), p) for m, p in d])
                for a, d in moves(c.right, s, h, locs)]
        return out
    raise TypeError(c)


def _wrap(m, f):
    if m == ABORT:
        return m
    return (f(m[0]), m[1], m[2])


def _run_atomic(body, s, h, locs, fuel=64):
    """Path enumeration of a loop-free tame body; mass reaching `diverge` diverges."""
    acc = {}

    def go(cfg, p, n):
        if cfg == ABORT:
            acc[ABORT] = acc.get(ABORT, 0) + p
            return
        c, s1, h1 = cfg
        if isinstance(c, Terminated):
            k = _key(DONE, s1, h1)
            acc[k] = acc.get(k, 0) + p
            return
        if isinstance(c, Diverge) or n == 0:
            k = _key(DIV, s, h)
            acc[k] = acc.get(k, 0) + p
            return
        (_, d), = moves(c, s1, h1, locs)
        for m, q in d:
            if q:
                go(m, p * q, n - 1)

    go((body, s, h), Fraction(1), fuel)
    out = []
    for k, p in acc.items():
        if k == ABORT:
            out.append((ABORT, p))
        else:
            c, si, hi = k
            out.append(((c, dict(si), dict(hi)), p))
    return out


def depth_value(c, s, h, X, n, locs, ev_post):
    """W_n at (c, s, h); ev_post(s, h) evaluates the postexpectation."""
    memo = {}

    def w(cfg, n):
        if cfg == ABORT:
            return Fraction(0)
        if n == 0:
            return Fraction(1)
        c, s1, h1 = cfg
        if isinstance(c, Terminated):
            return Fraction(ev_post(s1, h1))
        key = (_key(c, s1, h1), n)
        if key in memo:
            return memo[key]
        best = None
        for _, d in moves(c, s1, h1, locs):
            v = sum((p * w(m, n - 1) for m, p in d if p), Fraction(0))
            if best is None or v < best:
                best = v
        r = Fraction(1) if best is None else best
        memo[key] = r
        return r

    return w((c, dict(s), dict(h)), n)
