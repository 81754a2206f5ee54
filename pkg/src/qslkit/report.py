"""Figures for bracket convergence, simulation estimates and certified bounds."""

from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_bracket_trace(trace: Sequence, path: str, title: str = "wlp bracket") -> str:
    """trace: (iteration, lower, upper) triples as recorded by wlp_brackets."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if trace:
        ks = [t[0] for t in trace]
        ax.step(ks, [float(t[2]) for t in trace], where="post", label="upper")
        ax.step(ks, [float(t[1]) for t in trace], where="post", label="lower")
        ax.fill_between(ks, [float(t[1]) for t in trace], [float(t[2]) for t in trace],
                        step="post", alpha=0.2)
    ax.set_xlabel("iteration")
    ax.set_ylabel("value")
    ax.set_ylim(-0.05, 1.05)
    ax.set_title(title)
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_estimates(estimates: Mapping, wlp, path: str, title: str = "policy estimates") -> str:
    """estimates: policy name -> Estimate; draws mean +- 3 stderr against the wlp line."""
    names = list(estimates)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    means = [float(estimates[n].mean) for n in names]
    errs = [3 * estimates[n].stderr for n in names]
    ax.errorbar(range(len(names)), means, yerr=errs, fmt="o", capsize=4, label="mean +- 3 stderr")
    ax.axhline(float(wlp), color="k", linestyle="--", label="wlp")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names)
    ax.set_ylim(-0.05, 1.05)
    ax.set_title(title)
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_bounds(rows: Sequence, path: str, title: str = "certified bound vs wlp") -> str:
    """rows: (label, certified bound, wlp upper) triples."""
    fig, ax = plt.subplots(figsize=(max(6, 0.6 * len(rows)), 3.5))
    xs = range(len(rows))
    ax.bar([x - 0.2 for x in xs], [float(r[1]) for r in rows], width=0.4, label="certified")
    ax.bar([x + 0.2 for x in xs], [float(r[2]) for r in rows], width=0.4, label="wlp upper")
    ax.set_xticks(list(xs))
    ax.set_xticklabels([r[0] for r in rows], rotation=45, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_title(title)
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
