"""Verification toolkit for concurrent probabilistic heap programs.

Submodules: ``syntax`` (language and parser), ``state`` (stacks, heaps,
bounds), ``expectation`` (quantitative separation logic), ``semantics``
(MDP), ``analysis`` (wlp engine), ``proofcheck`` (derivation checker),
``simulate`` (Monte Carlo probes) and ``cli``.
"""

__version__ = "0.1.0"
