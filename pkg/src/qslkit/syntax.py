"""Abstract and concrete syntax of the concurrent probabilistic heap language.

The module holds four small expression languages (arithmetic, guards,
probability expressions, commands), a tokenizer and recursive-descent parser
shared with the expectation grammar, a pretty printer whose output parses back
to the same tree, and the static predicates used by the semantics and the
proof checker.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator

# ---------------------------------------------------------------------------
# node base: frozen dataclasses with a cached structural hash


def node(cls):
    cls = dataclass(frozen=True)(cls)
    raw_hash = cls.__hash__

    def __hash__(self):
        try:
            return self.__dict__["_h"]
        except KeyError:
            h = raw_hash(self)
            object.__setattr__(self, "_h", h)
            return h

    cls.__hash__ = __hash__
    return cls


KEYWORDS = frozenset({
    "skip", "diverge", "atomic", "if", "else", "while", "new", "free",
    "true", "false", "emp", "max", "min", "sup", "inf", "bigstar", "in",
    "guard", "locs",
})
_VAR_RE = re.compile(r"[a-zA-Z_][a-zA-Z0-9_']*\Z")


def check_var(name: str) -> str:
    if not isinstance(name, str) or not _VAR_RE.match(name):
        raise ValueError(f"invalid variable name {name!r}")
    if name in KEYWORDS:
        raise ValueError(f"reserved word {name!r} used as a variable")
    return name


# ---------------------------------------------------------------------------
# arithmetic expressions


class ArithExpr:
    __slots__ = ()


@node
class Num(ArithExpr):
    value: int


@node
class Var(ArithExpr):
    name: str

    def __post_init__(self):
        check_var(self.name)


@node
class BinOp(ArithExpr):
    op: str  # one of + - *
    left: ArithExpr
    right: ArithExpr


def arith_vars(e: ArithExpr) -> frozenset:
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, BinOp):
        return arith_vars(e.left) | arith_vars(e.right)
    return frozenset()


def as_arith(x) -> ArithExpr:
    if isinstance(x, ArithExpr):
        return x
    if isinstance(x, bool):
        raise TypeError("bool is not an arithmetic expression")
    if isinstance(x, int):
        return Num(x)
    if isinstance(x, str):
        return Var(x)
    raise TypeError(f"cannot convert {x!r} to an arithmetic expression")


def plus(a, b) -> ArithExpr:
    return BinOp("+", as_arith(a), as_arith(b))


def minus(a, b) -> ArithExpr:
    return BinOp("-", as_arith(a), as_arith(b))


# ---------------------------------------------------------------------------
# guards


class Guard:
    __slots__ = ()


@node
class BoolLit(Guard):
    value: bool


@node
class Cmp(Guard):
    op: str  # = != < <= > >=
    left: ArithExpr
    right: ArithExpr


@node
class Conj(Guard):
    left: Guard
    right: Guard


@node
class Disj(Guard):
    left: Guard
    right: Guard


@node
class Negate(Guard):
    arg: Guard


CMP_OPS = ("=", "!=", "<", "<=", ">", ">=")


def guard_vars(g: Guard) -> frozenset:
    if isinstance(g, Cmp):
        return arith_vars(g.left) | arith_vars(g.right)
    if isinstance(g, (Conj, Disj)):
        return guard_vars(g.left) | guard_vars(g.right)
    if isinstance(g, Negate):
        return guard_vars(g.arg)
    return frozenset()


def cmp(op: str, a, b) -> Cmp:
    if op not in CMP_OPS:
        raise ValueError(f"unknown comparison {op!r}")
    return Cmp(op, as_arith(a), as_arith(b))


# ---------------------------------------------------------------------------
# probability expressions


class ProbExpr:
    __slots__ = ()


@node
class ProbLit(ProbExpr):
    value: Fraction

    def __post_init__(self):
        v = Fraction(self.value)
        if not 0 <= v <= 1:
            raise ValueError(f"probability literal {v} outside [0,1]")
        object.__setattr__(self, "value", v)


@node
class ProbCase(ProbExpr):
    guard: Guard
    then: ProbExpr
    orelse: ProbExpr


def prob_vars(e: ProbExpr) -> frozenset:
    if isinstance(e, ProbCase):
        return guard_vars(e.guard) | prob_vars(e.then) | prob_vars(e.orelse)
    return frozenset()


def prob_complement(e: ProbExpr) -> ProbExpr:
    if isinstance(e, ProbLit):
        return ProbLit(1 - e.value)
    return ProbCase(e.guard, prob_complement(e.then), prob_complement(e.orelse))


# ---------------------------------------------------------------------------
# commands


class Command:
    __slots__ = ()


@node
class Terminated(Command):
    pass


@node
class Diverge(Command):
    pass


@node
class Assign(Command):
    var: str
    expr: ArithExpr

    def __post_init__(self):
        check_var(self.var)


@node
class ProbChoice(Command):
    left: Command
    prob: ProbExpr
    right: Command


@node
class Seq(Command):
    first: Command
    second: Command


@node
class Atomic(Command):
    body: Command


@node
class IfThenElse(Command):
    guard: Guard
    then: Command
    orelse: Command


@node
class While(Command):
    guard: Guard
    body: Command


@node
class Concurrent(Command):
    left: Command
    right: Command


@node
class Alloc(Command):
    var: str
    args: tuple

    def __post_init__(self):
        check_var(self.var)
        args = tuple(self.args)
        if not args:
            raise ValueError("allocation needs at least one initial value")
        object.__setattr__(self, "args", args)


@node
class Free(Command):
    addr: ArithExpr


@node
class Lookup(Command):
    var: str
    addr: ArithExpr

    def __post_init__(self):
        check_var(self.var)


@node
class Mutate(Command):
    addr: ArithExpr
    value: ArithExpr


SKIP = Terminated()
DIVERGE = Diverge()


def seq(*cmds: Command) -> Command:
    """Right-nested sequential composition of one or more commands."""
    if not cmds:
        return SKIP
    out = cmds[-1]
    for c in reversed(cmds[:-1]):
        out = Seq(c, out)
    return out


def subcommands(c: Command) -> Iterator[Command]:
    yield c
    for child in _children(c):
        yield from subcommands(child)


def _children(c: Command) -> tuple:
    if isinstance(c, (ProbChoice, Concurrent)):
        return (c.left, c.right)
    if isinstance(c, Seq):
        return (c.first, c.second)
    if isinstance(c, IfThenElse):
        return (c.then, c.orelse)
    if isinstance(c, (Atomic, While)):
        return (c.body,)
    return ()


def written_vars(c: Command) -> frozenset:
    """Variables on the left of assignments, lookups and allocations."""
    out = set()
    for sub in subcommands(c):
        if isinstance(sub, (Assign, Lookup, Alloc)):
            out.add(sub.var)
    return frozenset(out)


def free_vars_cmd(c: Command) -> frozenset:
    """Every variable occurring anywhere in the command."""
    out = set()
    for sub in subcommands(c):
        if isinstance(sub, Assign):
            out.add(sub.var)
            out |= arith_vars(sub.expr)
        elif isinstance(sub, Lookup):
            out.add(sub.var)
            out |= arith_vars(sub.addr)
        elif isinstance(sub, Alloc):
            out.add(sub.var)
            for a in sub.args:
                out |= arith_vars(a)
        elif isinstance(sub, Free):
            out |= arith_vars(sub.addr)
        elif isinstance(sub, Mutate):
            out |= arith_vars(sub.addr) | arith_vars(sub.value)
        elif isinstance(sub, ProbChoice):
            out |= prob_vars(sub.prob)
        elif isinstance(sub, (IfThenElse, While)):
            out |= guard_vars(sub.guard)
    return frozenset(out)


def is_tame(c: Command) -> bool:
    """No allocation and no parallel composition anywhere in c."""
    return not any(isinstance(s, (Alloc, Concurrent)) for s in subcommands(c))


def is_terminating_atom(c: Command) -> bool:
    return isinstance(c, (Assign, Lookup, Mutate, Free, Alloc))


def is_probabilistic(c: Command) -> bool:
    return any(isinstance(s, (ProbChoice, Atomic)) for s in subcommands(c))


def size(c: Command) -> int:
    return sum(1 for _ in subcommands(c))


# ---------------------------------------------------------------------------
# tokenizer and parser base


class ParseError(Exception):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {msg}" if line else msg)
        self.msg = msg
        self.line = line
        self.col = col


_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r\n]+|\#[^\n]*)
  | (?P<dec>\d+\.\d+)
  | (?P<num>\d+)
  | (?P<id>[a-zA-Z_][a-zA-Z0-9_']*)
  | (?P<op>\|\|\||\|->|-\*|\*\*|:=|&&|\|\||!=|<=|>=|==|[↓≠≤≥⋆+\-*/^<>=(){}\[\],;.!?:|])
""", re.VERBOSE)

_UNICODE_OPS = {"≠": "!=", "≤": "<=", "≥": ">=", "⋆": "**", "↓": "skip"}


@dataclass(frozen=True)
class Token:
    kind: str  # num, dec, id, op, eof
    text: str
    line: int
    col: int


def tokenize(text: str) -> list:
    out = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        tok = m.group(kind)
        if kind != "ws":
            if kind == "op" and tok in _UNICODE_OPS:
                tok = _UNICODE_OPS[tok]
                kind = "id" if tok == "skip" else "op"
            out.append(Token(kind, tok, line, pos - line_start + 1))
        nl = tok.count("\n") if kind == "ws" else 0
        if nl:
            line += nl
            line_start = pos + m.group(kind).rfind("\n") + 1
        pos = m.end()
    out.append(Token("eof", "", line, pos - line_start + 1))
    return out


class Parser:
    """Recursive-descent parser over a token list, with backtracking via mark/reset."""

    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    # token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, text: str) -> bool:
        t = self.tok
        return t.kind in ("op", "id") and t.text == text

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.fail(f"expected {text!r}")
        t = self.tok
        self.i += 1
        return t

    def fail(self, msg: str):
        t = self.tok
        found = "end of input" if t.kind == "eof" else repr(t.text)
        raise ParseError(f"{msg}, found {found}", t.line, t.col)

    def ident(self) -> str:
        t = self.tok
        if t.kind != "id":
            self.fail("expected an identifier")
        if t.text in KEYWORDS:
            raise ParseError(f"reserved word {t.text!r} used as a variable", t.line, t.col)
        self.i += 1
        return t.text

    def end(self):
        if self.tok.kind != "eof":
            self.fail("unexpected trailing input")

    # arithmetic: sum := term (('+'|'-') term)* ; term := unary ('*' unary)*
    def arith(self) -> ArithExpr:
        e = self.arith_term()
        while self.at("+") or self.at("-"):
            op = self.tok.text
            self.i += 1
            e = BinOp(op, e, self.arith_term())
        return e

    def arith_term(self) -> ArithExpr:
        e = self.arith_unary()
        while self.at("*"):
            self.i += 1
            e = BinOp("*", e, self.arith_unary())
        return e

    def arith_unary(self) -> ArithExpr:
        t = self.tok
        if self.accept("-"):
            if self.tok.kind == "num":
                v = int(self.tok.text)
                self.i += 1
                return Num(-v)
            return BinOp("-", Num(0), self.arith_unary())
        if t.kind == "num":
            self.i += 1
            return Num(int(t.text))
        if self.accept("("):
            e = self.arith()
            self.expect(")")
            return e
        if t.kind == "id":
            return Var(self.ident())
        self.fail("expected an arithmetic expression")

    # guards: or := and ('||' and)* ; and := not ('&&' not)* ; not := '!' not | atom
    def guard(self) -> Guard:
        g = self.guard_and()
        while self.accept("||"):
            g = Disj(g, self.guard_and())
        return g

    def guard_and(self) -> Guard:
        g = self.guard_not()
        while self.accept("&&"):
            g = Conj(g, self.guard_not())
        return g

    def guard_not(self) -> Guard:
        if self.accept("!"):
            return Negate(self.guard_not())
        if self.accept("true"):
            return BoolLit(True)
        if self.accept("false"):
            return BoolLit(False)
        if self.at("("):
            mark = self.i
            self.i += 1
            try:
                g = self.guard()
                self.expect(")")
                if not self._at_cmp():
                    return g
            except ParseError:
                pass
            self.i = mark
        return self.comparison()

    def _at_cmp(self) -> bool:
        return self.tok.kind == "op" and self.tok.text in CMP_OPS + ("==",)

    def comparison(self) -> Cmp:
        a = self.arith()
        if not self._at_cmp():
            self.fail("expected a comparison operator")
        op = self.tok.text
        self.i += 1
        if op == "==":
            op = "="
        return Cmp(op, a, self.arith())

    # probabilities: literal | '(' guard '?' prob ':' prob ')'
    def prob(self) -> ProbExpr:
        if self.at("("):
            self.i += 1
            g = self.guard()
            self.expect("?")
            a = self.prob()
            self.expect(":")
            b = self.prob()
            self.expect(")")
            return ProbCase(g, a, b)
        return ProbLit(self.rational())

    def rational(self) -> Fraction:
        t = self.tok
        if t.kind == "dec":
            frac = t.text.split(".")[1]
            if len(frac) > 9:
                self.fail("decimal literals allow at most 9 fractional digits")
            self.i += 1
            return Fraction(t.text)
        if t.kind == "num":
            self.i += 1
            num = int(t.text)
            if self.at("/") and self.peek().kind == "num":
                self.i += 1
                den = int(self.tok.text)
                self.i += 1
                if den == 0:
                    raise ParseError("zero denominator", t.line, t.col)
                return Fraction(num, den)
            return Fraction(num)
        self.fail("expected a rational literal")

    # commands
    def command(self) -> Command:
        items = [self.cmd_item()]
        while self.accept(";"):
            if self.tok.kind == "eof" or self.at("}"):
                break
            items.append(self.cmd_item())
        return seq(*items)

    def _braced(self) -> Command:
        self.expect("{")
        c = self.command()
        self.expect("}")
        return c

    def cmd_item(self) -> Command:
        t = self.tok
        if self.accept("skip"):
            return SKIP
        if self.accept("diverge"):
            return DIVERGE
        if self.accept("atomic"):
            return Atomic(self._braced())
        if self.accept("if"):
            self.expect("(")
            g = self.guard()
            self.expect(")")
            then = self._braced()
            orelse = self._braced() if self.accept("else") else SKIP
            return IfThenElse(g, then, orelse)
        if self.accept("while"):
            self.expect("(")
            g = self.guard()
            self.expect(")")
            return While(g, self._braced())
        if self.accept("free"):
            self.expect("(")
            e = self.arith()
            self.expect(")")
            return Free(e)
        if self.accept("<"):
            addr = self.arith()
            self.expect(">")
            self.expect(":=")
            return Mutate(addr, self.arith())
        if self.at("{"):
            first = self._braced()
            if self.accept("["):
                p = self.prob()
                self.expect("]")
                return ProbChoice(first, p, self._braced())
            if self.at("|||"):
                parts = [first]
                while self.accept("|||"):
                    parts.append(self._braced())
                out = parts[-1]
                for c in reversed(parts[:-1]):
                    out = Concurrent(c, out)
                return out
            return first
        if t.kind == "id" and t.text not in KEYWORDS:
            x = self.ident()
            self.expect(":=")
            if self.accept("new"):
                self.expect("(")
                args = [self.arith()]
                while self.accept(","):
                    args.append(self.arith())
                self.expect(")")
                return Alloc(x, tuple(args))
            if self.accept("<"):
                addr = self.arith()
                self.expect(">")
                return Lookup(x, addr)
            return Assign(x, self.arith())
        if t.kind == "id":
            raise ParseError(f"reserved word {t.text!r} cannot start a command", t.line, t.col)
        self.fail("expected a command")


def parse_program(text: str) -> Command:
    p = Parser(text)
    c = p.command()
    p.end()
    return c


def parse_arith(text: str) -> ArithExpr:
    p = Parser(text)
    e = p.arith()
    p.end()
    return e


def parse_guard(text: str) -> Guard:
    p = Parser(text)
    g = p.guard()
    p.end()
    return g


def parse_prob(text: str) -> ProbExpr:
    p = Parser(text)
    e = p.prob()
    p.end()
    return e


# ---------------------------------------------------------------------------
# pretty printing (output re-parses to an equal tree)


def fmt_arith(e: ArithExpr) -> str:
    if isinstance(e, Num):
        return str(e.value)
    if isinstance(e, Var):
        return e.name
    return f"({fmt_arith(e.left)} {e.op} {fmt_arith(e.right)})"


def fmt_guard(g: Guard) -> str:
    if isinstance(g, BoolLit):
        return "true" if g.value else "false"
    if isinstance(g, Cmp):
        return f"{fmt_arith(g.left)} {g.op} {fmt_arith(g.right)}"
    if isinstance(g, Conj):
        return f"({fmt_guard(g.left)} && {fmt_guard(g.right)})"
    if isinstance(g, Disj):
        return f"({fmt_guard(g.left)} || {fmt_guard(g.right)})"
    return f"!({fmt_guard(g.arg)})"


def fmt_rational(q: Fraction) -> str:
    q = Fraction(q)
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def fmt_prob(e: ProbExpr) -> str:
    if isinstance(e, ProbLit):
        return fmt_rational(e.value)
    return f"({fmt_guard(e.guard)} ? {fmt_prob(e.then)} : {fmt_prob(e.orelse)})"


def pretty(c: Command) -> str:
    if isinstance(c, Terminated):
        return "skip"
    if isinstance(c, Diverge):
        return "diverge"
    if isinstance(c, Assign):
        return f"{c.var} := {fmt_arith(c.expr)}"
    if isinstance(c, Lookup):
        return f"{c.var} := <{fmt_arith(c.addr)}>"
    if isinstance(c, Mutate):
        return f"<{fmt_arith(c.addr)}> := {fmt_arith(c.value)}"
    if isinstance(c, Alloc):
        return f"{c.var} := new({', '.join(fmt_arith(a) for a in c.args)})"
    if isinstance(c, Free):
        return f"free({fmt_arith(c.addr)})"
    if isinstance(c, Seq):
        first = pretty(c.first)
        if isinstance(c.first, Seq):
            first = "{" + first + "}"
        return f"{first}; {pretty(c.second)}"
    if isinstance(c, ProbChoice):
        return f"{{{pretty(c.left)}}} [{fmt_prob(c.prob)}] {{{pretty(c.right)}}}"
    if isinstance(c, Concurrent):
        return f"{{{pretty(c.left)}}} ||| {{{pretty(c.right)}}}"
    if isinstance(c, Atomic):
        return f"atomic {{{pretty(c.body)}}}"
    if isinstance(c, IfThenElse):
        return f"if ({fmt_guard(c.guard)}) {{{pretty(c.then)}}} else {{{pretty(c.orelse)}}}"
    if isinstance(c, While):
        return f"while ({fmt_guard(c.guard)}) {{{pretty(c.body)}}}"
    raise TypeError(f"not a command: {c!r}")


def dump(c: Command, indent: int = 0) -> str:
    """Indented constructor tree, one node per line."""
    pad = "  " * indent
    name = type(c).__name__
    if isinstance(c, (Terminated, Diverge)):
        return pad + name
    if isinstance(c, Assign):
        return f"{pad}Assign({c.var}, {fmt_arith(c.expr)})"
    if isinstance(c, Lookup):
        return f"{pad}Lookup({c.var}, {fmt_arith(c.addr)})"
    if isinstance(c, Mutate):
        return f"{pad}Mutate({fmt_arith(c.addr)}, {fmt_arith(c.value)})"
    if isinstance(c, Alloc):
        return f"{pad}Alloc({c.var}, [{', '.join(fmt_arith(a) for a in c.args)}])"
    if isinstance(c, Free):
        return f"{pad}Free({fmt_arith(c.addr)})"
    head = {
        ProbChoice: lambda: f"ProbChoice[{fmt_prob(c.prob)}]",
        IfThenElse: lambda: f"IfThenElse({fmt_guard(c.guard)})",
        While: lambda: f"While({fmt_guard(c.guard)})",
    }.get(type(c), lambda: name)()
    return "\n".join([pad + head] + [dump(k, indent + 1) for k in _children(c)])
