"""Command-line front end: ``qslkit <subcommand> ...``.

Exit codes: 0 success, 1 semantic failure (a proof condition fails, the
program is not AST, a bracket did not converge), 2 input error.
"""

from __future__ import annotations

import argparse
import sys
from fractions import Fraction
from pathlib import Path
from typing import Optional

from . import __version__
from .analysis import check_ast, default_states, fmt_q, wlp_brackets, wslp_n
from .expectation import (
    EMP, ExpectationError, evaluator, fv_exp, fmt_exp, is_qualitative, parse_exp,
)
from .proofcheck import (
    CheckError, EntailmentFails, ProofSchemaError, check, load_proof, walk,
)
from .semantics import SemanticsError, StateSpaceExceeded, build_state_space
from .simulate import POLICIES, estimate_liberal, make_policy
from .state import (
    DomainBounds, Heap, ProgState, enumerate_heaps, format_heap, format_stack, parse_initial_state,
)
from .syntax import ParseError, dump, free_vars_cmd, parse_program, pretty

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument helpers


def _interval(text: str) -> tuple:
    lo, sep, hi = text.partition("..")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected LO..HI, got {text!r}")
    try:
        return int(lo), int(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers in {text!r}") from None


def _locs(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected L1,L2,... got {text!r}") from None


def _pin(text: str) -> tuple:
    name, sep, val = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected VAR=INT, got {text!r}")
    return name.strip(), int(val)


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


def _epsilon(text: str) -> Fraction:
    q = Fraction(text)
    if q <= 0:
        raise argparse.ArgumentTypeError("epsilon must be positive")
    return q


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _bounds_flags(p: argparse.ArgumentParser, required: bool = True) -> None:
    g = p.add_argument_group("bounds")
    g.add_argument("--values", type=_interval, required=required, metavar="LO..HI")
    g.add_argument("--locs", type=_locs, required=required, metavar="L1,L2,...")
    g.add_argument("--heap-cap", type=int, required=required, metavar="N")
    g.add_argument("--pin", type=_pin, action="append", default=[], metavar="VAR=INT",
                   help="restrict an enumerated variable to one value")


def _exp_flag(p: argparse.ArgumentParser, name: str, what: str) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument(f"--{name}", metavar="FILE", help=f"{what} from a file")
    g.add_argument(f"--{name}-text", metavar="EXP", help=f"{what} given inline")


def _load_exp(args, name: str, default=None):
    path = getattr(args, name)
    text = getattr(args, f"{name}_text")
    if path is not None:
        text = _read(path)
    if text is None:
        if default is None:
            raise InputError(f"--{name} or --{name}-text is required")
        return default
    return parse_exp(text.strip())


def _bounds(args, vars_) -> DomainBounds:
    try:
        return DomainBounds(
            vars=tuple(sorted(vars_)), values=args.values, locations=args.locs,
            heap_cap=args.heap_cap, pinned=tuple((x, (v,)) for x, v in args.pin),
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _initial_states(args, c, exprs, bounds) -> list:
    if getattr(args, "init", None):
        stack, heap = parse_initial_state(_read(args.init))
        lo, hi = bounds.values
        for x, v in stack.items():
            if not lo <= v <= hi:
                raise InputError(f"initial value {x}={v} outside --values")
        for loc in heap:
            if loc not in bounds.locations:
                raise InputError(f"initial heap location {loc} not in --locs")
        b = bounds.with_vars(stack)
        return [ProgState(b.stack(stack), heap)]
    return default_states(c, exprs, bounds)


def _shown_vars(c, exprs) -> set:
    vs = set(free_vars_cmd(c)) if c is not None else set()
    for e in exprs:
        vs |= fv_exp(e)
    return vs


# ---------------------------------------------------------------------------
# subcommands


def cmd_parse(args) -> int:
    c = parse_program(_read(args.program))
    print(pretty(c))
    if not args.quiet:
        print(dump(c))
    return EXIT_OK


def cmd_eval(args) -> int:
    e = parse_exp(_read(args.expectation).strip()) if args.expectation else _load_exp(args, "exp")
    b = _bounds(args, fv_exp(e))
    ev = evaluator(b)
    shown = sorted(fv_exp(e))
    states = _initial_states(args, None, [e], b) if args.init else default_states_pure(e, b)
    for st in states:
        print(f"{format_stack(st.stack, shown)}\t{format_heap(st.heap)}\t{fmt_q(ev(e, st.stack, st.heap))}")
    return EXIT_OK


def default_states_pure(e, b: DomainBounds) -> list:
    from .state import enumerate_stacks
    return [ProgState(s, h) for s in enumerate_stacks(fv_exp(e), b) for h in enumerate_heaps(b)]


def cmd_wlp(args) -> int:
    c = parse_program(_read(args.program))
    X = _load_exp(args, "post")
    b = _bounds(args, _shown_vars(c, [X]))
    states = _initial_states(args, c, [X], b)
    run = wlp_brackets(c, X, states, b, eps=args.epsilon, n_max=args.max_steps,
                       step_cap=args.step_cap, node_cap=args.node_cap)
    shown = sorted(_shown_vars(c, [X]))
    status = EXIT_OK
    if args.report == "table":
        print("stack\theap\tlower\tupper\texact")
    for st in states:
        br = run.brackets[st]
        if args.report == "table":
            print(f"{format_stack(st.stack, shown)}\t{format_heap(st.heap)}\t{br}")
        else:
            print(br)
        if not br.converged:
            status = EXIT_FAIL
    if run.mdp.frontier:
        print(f"warning: state space truncated at {len(run.mdp.frontier)} frontier nodes; "
              "brackets are widened", file=sys.stderr)
    if status != EXIT_OK:
        print(f"warning: bracket wider than epsilon {args.epsilon} after {args.max_steps} iterations",
              file=sys.stderr)
    if args.figure:
        from .report import plot_bracket_trace
        plot_bracket_trace(run.trace, args.figure, title=f"wlp bracket ({Path(args.program).name})")
    return status


def cmd_wrlp(args) -> int:
    c = parse_program(_read(args.program))
    X = _load_exp(args, "post")
    I = _load_exp(args, "inv", default=EMP)
    b = _bounds(args, _shown_vars(c, [X, I]))
    if not is_qualitative(I, b):
        raise InputError(f"resource invariant {fmt_exp(I)} is not qualitative over the bounds")
    states = _initial_states(args, c, [X, I], b)
    shown = sorted(_shown_vars(c, [X, I]))
    n = args.steps
    table = wslp_n(c, X, I, b, n, states=states)
    print(f"stack\theap\twslp_{n}")
    for st in states:
        print(f"{format_stack(st.stack, shown)}\t{format_heap(st.heap)}\t{fmt_q(table[st])}")
    return EXIT_OK


def _proof_vars(node) -> set:
    vs: set = set()
    for n in walk(node):
        j = n.judgement
        vs |= fv_exp(j.pre) | fv_exp(j.post) | fv_exp(j.invariant) | set(free_vars_cmd(j.cmd))
    return vs


def cmd_check(args) -> int:
    node = load_proof(_read(args.proof))
    b = _bounds(args, _proof_vars(node))
    try:
        cert = check(node, b, verify_ast=not args.assert_ast)
    except EntailmentFails as exc:
        print(f"FAIL\t{exc.location}\t{exc.condition}")
        w = exc.witness
        print(f"witness\t{format_stack(w.stack)}\t{format_heap(w.heap)}\t{fmt_q(w.lhs)} > {fmt_q(w.rhs)}")
        return EXIT_FAIL
    except CheckError as exc:
        print(f"FAIL\t{type(exc).__name__}\t{exc}")
        return EXIT_FAIL
    print(cert.render())
    return EXIT_OK


def cmd_simulate(args) -> int:
    c = parse_program(_read(args.program))
    X = _load_exp(args, "post")
    b = _bounds(args, _shown_vars(c, [X]))
    if not args.init:
        raise InputError("simulate needs --init")
    (st,) = _initial_states(args, c, [X], b)
    policies = args.policy or ["uniform"]
    print("policy\ttrials\tmean\tstderr\taborted%\tcutoff%")
    results = {}
    for name in policies:
        est = estimate_liberal(c, X, st, make_policy(name, args.seed), args.trials, args.max_steps, args.seed, b)
        results[name] = est
        print(f"{name}\t{est.tsv()}")
    if args.figure:
        from .report import plot_estimates
        run = wlp_brackets(c, X, [st], b)
        plot_estimates(results, run.brackets[st].upper, args.figure)
    return EXIT_OK


def cmd_ast(args) -> int:
    c = parse_program(_read(args.program))
    b = _bounds(args, _shown_vars(c, []))
    states = _initial_states(args, c, [], b)
    res = check_ast(c, b, states, node_cap=args.node_cap)
    if res:
        print("yes")
        return EXIT_OK
    print(f"no\t{len(res.witness)} configurations can avoid termination")
    for cfg in res.witness[: args.show]:
        print(f"  {cfg!r}")
    return EXIT_FAIL


def cmd_emit_mdp(args) -> int:
    c = parse_program(_read(args.program))
    b = _bounds(args, _shown_vars(c, []))
    states = _initial_states(args, c, [], b)
    mdp = build_state_space(c, states, b, step_cap=args.step_cap, node_cap=args.node_cap)
    lines, table = mdp.emit()
    if args.out:
        Path(args.out + ".tsv").write_text("\n".join(lines) + "\n")
        Path(args.out + ".configs.tsv").write_text("\n".join(table) + "\n")
        print(f"{len(mdp)} configurations, {len(lines)} transitions")
    else:
        print("\n".join(lines))
        print()
        print("\n".join(table))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qslkit", description="Quantitative separation logic toolkit.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("parse", help="parse a program and print it back with its AST")
    p.add_argument("program")
    p.add_argument("-q", "--quiet", action="store_true", help="print only the pretty form")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("eval", help="evaluate an expectation")
    p.add_argument("expectation", nargs="?")
    _exp_flag(p, "exp", "expectation")
    p.add_argument("--init", metavar="FILE")
    _bounds_flags(p)
    p.set_defaults(func=cmd_eval)

    def analysis_flags(p):
        p.add_argument("program")
        p.add_argument("--init", metavar="FILE", help="initial state; default: every bounded state")
        _bounds_flags(p)
        p.add_argument("--node-cap", type=_positive, default=1_000_000)
        p.add_argument("--step-cap", type=_positive, default=None, help="explore at most this many steps")

    p = sub.add_parser("wlp", help="bracket wlp(C, X) per initial state")
    analysis_flags(p)
    _exp_flag(p, "post", "postexpectation")
    p.add_argument("--epsilon", type=_epsilon, default=Fraction(1, 10 ** 6))
    p.add_argument("--max-steps", type=_positive, default=1000, help="iteration limit")
    p.add_argument("--report", choices=("plain", "table"), default="table")
    p.add_argument("--figure", metavar="PNG", help="plot the bracket trace of the first state")
    p.set_defaults(func=cmd_wlp)

    p = sub.add_parser("wrlp", help="wslp_n(C, X | I) per initial state")
    analysis_flags(p)
    _exp_flag(p, "post", "postexpectation")
    _exp_flag(p, "inv", "qualitative resource invariant (default emp)")
    p.add_argument("--steps", type=int, default=20, help="n")
    p.set_defaults(func=cmd_wrlp)

    p = sub.add_parser("check", help="check a proof script")
    p.add_argument("proof")
    _bounds_flags(p)
    p.add_argument("--assert-ast", action="store_true",
                   help="record superlin AST premises as asserted instead of verifying them")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("simulate", help="Monte Carlo estimate of the liberal value under policies")
    analysis_flags(p)
    _exp_flag(p, "post", "postexpectation")
    p.add_argument("--policy", action="append", choices=sorted(POLICIES))
    p.add_argument("--trials", type=_positive, default=10_000)
    p.add_argument("--max-steps", type=_positive, default=1000, help="per-run step cap")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--figure", metavar="PNG", help="plot estimates against the engine value")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ast", help="decide almost-sure termination over the bounded MDP")
    analysis_flags(p)
    p.add_argument("--show", type=int, default=10, help="witness configurations to print")
    p.set_defaults(func=cmd_ast)

    p = sub.add_parser("emit-mdp", help="dump the reachable MDP")
    analysis_flags(p)
    p.add_argument("--out", metavar="PREFIX", help="write PREFIX.tsv and PREFIX.configs.tsv")
    p.set_defaults(func=cmd_emit_mdp)
    return ap


_VALUE_FLAGS = {"--values", "--pin", "--post-text", "--inv-text", "--exp-text"}


def _join_negative(argv: list) -> list:
    """Turn `--values -1..1` into `--values=-1..1` so argparse does not read it as a flag."""
    out, i = [], 0
    while i < len(argv):
        a = argv[i]
        if a in _VALUE_FLAGS and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{a}={argv[i + 1]}")
            i += 2
            continue
        out.append(a)
        i += 1
    return out


def main(argv: Optional[list] = None) -> int:
    ap = build_parser()
    args = ap.parse_args(_join_negative(list(sys.argv[1:] if argv is None else argv)))
    try:
        return args.func(args)
    except (InputError, ParseError, ProofSchemaError, ExpectationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StateSpaceExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except SemanticsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
