"""Monte Carlo runs of programs under heuristic scheduling policies.

Randomised policies are mixtures of deterministic schedulers, so the
estimated liberal value of any policy can never fall below wlp. They are
probes for cross-checking the engine, not a semantics of their own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .expectation import Expectation, evaluator
from .semantics import ABORT, ActionNotEnabled, is_terminated, running, steps
from .state import DomainBounds, ProgState
from .syntax import Command


def thread_of(label: str) -> str:
    """The thread path of an action label, e.g. 'C2,C1,lookup' -> 'C2,C1'."""
    head, _, _ = label.rpartition(",")
    return head


class Policy:
    """Resolves the scheduling choice; ``start`` gives a fresh chooser per run."""

    def start(self, rng: np.random.Generator):
        raise NotImplementedError


@dataclass(frozen=True)
class UniformRandom(Policy):
    seed: int = 0

    def start(self, rng):
        def choose(cfg, labels):
            return labels[int(rng.integers(len(labels)))]
        return choose


@dataclass(frozen=True)
class FixedPriority(Policy):
    """First enabled label matching the earliest listed prefix; otherwise the first label."""
    order: tuple = ()

    def start(self, rng):
        order = tuple(self.order)

        def choose(cfg, labels):
            for pre in order:
                for a in labels:
                    if a.startswith(pre):
                        return a
            return labels[0]
        return choose


@dataclass(frozen=True)
class RoundRobinThreads(Policy):
    """Cycle through enabled threads in label order; ties within a thread by the seeded stream."""
    seed: int = 0

    def start(self, rng):
        last = [None]

        def choose(cfg, labels):
            threads = sorted({thread_of(a) for a in labels})
            nxt = threads[0]
            if last[0] is not None:
                later = [t for t in threads if t > last[0]]
                if later:
                    nxt = later[0]
            last[0] = nxt
            mine = [a for a in labels if thread_of(a) == nxt]
            return mine[int(rng.integers(len(mine)))] if len(mine) > 1 else mine[0]
        return choose


def policy_seed(policy: Policy) -> int:
    return int(getattr(policy, "seed", 0))


@dataclass
class RunOutcome:
    kind: str  # terminated | aborted | cutoff | blocked
    steps: int
    final: Optional[ProgState] = None


def _sample(dist, u: float):
    acc = 0.0
    for cfg, p in dist:
        acc += float(p)
        if u < acc:
            return cfg
    return dist[-1][0]


def _run(c: Command, st0: ProgState, choose, rng, step_cap: int, bounds: DomainBounds) -> RunOutcome:
    cfg = running(c, st0)
    n = 0
    while True:
        if cfg is ABORT:
            return RunOutcome("aborted", n)
        if is_terminated(cfg):
            return RunOutcome("terminated", n, cfg.state)
        if n >= step_cap:
            return RunOutcome("cutoff", n)
        acts = steps(cfg, bounds)
        if not acts:
            return RunOutcome("blocked", n)
        labels = [a for a, _ in acts]
        a = choose(cfg, labels) if len(labels) > 1 else labels[0]
        if a not in labels:
            raise ActionNotEnabled(f"policy chose {a!r}, enabled: {labels}")
        dist = acts[labels.index(a)][1]
        cfg = dist[0][0] if len(dist) == 1 else _sample(dist, rng.random())
        n += 1


def _streams(policy: Policy, seed: int, trial: int):
    branch = np.random.default_rng([seed, trial, 0])
    sched = np.random.default_rng([seed, trial, 1, policy_seed(policy)])
    return branch, sched


def sample_run(c: Command, st0: ProgState, policy: Policy, seed: int, step_cap: int,
               bounds: DomainBounds, trial: int = 0) -> RunOutcome:
    """One trajectory; probabilistic branches and policy ties use streams derived from (seed, trial)."""
    branch, sched = _streams(policy, seed, trial)
    return _run(c, st0, policy.start(sched), branch, step_cap, bounds)


@dataclass
class Estimate:
    mean: Fraction
    stderr: float
    trials: int
    aborted: int = 0
    cutoff: int = 0
    blocked: int = 0
    scores: list = field(default_factory=list, repr=False)

    def __iter__(self):
        yield self.mean
        yield self.stderr

    def tsv(self) -> str:
        pct = lambda k: f"{100.0 * k / self.trials:.2f}"
        return f"{self.trials}\t{float(self.mean):.6f}\t{self.stderr:.6f}\t{pct(self.aborted)}\t{pct(self.cutoff)}"


def score(outcome: RunOutcome, X: Expectation, bounds: DomainBounds) -> Fraction:
    """Liberal score: X at termination, 0 on abort, 1 when cut off or blocked."""
    if outcome.kind == "terminated":
        st = outcome.final
        return Fraction(evaluator(bounds)(X, st.stack, st.heap))
    if outcome.kind == "aborted":
        return Fraction(0)
    return Fraction(1)


def estimate_liberal(c: Command, X: Expectation, st0: ProgState, policy: Policy, trials: int,
                     step_cap: int, seed: int, bounds: DomainBounds) -> Estimate:
    if trials < 1:
        raise ValueError("trials must be positive")
    scores = []
    kinds = {"aborted": 0, "cutoff": 0, "blocked": 0}
    for i in range(trials):
        out = sample_run(c, st0, policy, seed, step_cap, bounds, trial=i)
        if out.kind in kinds:
            kinds[out.kind] += 1
        scores.append(score(out, X, bounds))
    total = sum(scores, Fraction(0))
    mean = total / trials
    if trials > 1:
        m = float(mean)
        var = sum((float(s) - m) ** 2 for s in scores) / (trials - 1)
        se = math.sqrt(var / trials)
    else:
        se = 0.0
    return Estimate(mean, se, trials, kinds["aborted"], kinds["cutoff"], kinds["blocked"], scores)


POLICIES = {
    "uniform": lambda seed: UniformRandom(seed),
    "left": lambda seed: FixedPriority(("C1",)),
    "right": lambda seed: FixedPriority(("C2",)),
    "round-robin": lambda seed: RoundRobinThreads(seed),
}


def make_policy(name: str, seed: int = 0) -> Policy:
    try:
        return POLICIES[name](seed)
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {', '.join(POLICIES)}") from None
