"""Benefit-driven edge pruning and fixed baseline topologies."""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Mapping, Sequence

from .core import Topology

BASELINE_KINDS = ("star", "chain", "random", "layered", "full", "debate")


class EmptyInput(ValueError):
    pass


def percentile(values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile: the ceil(q/100 * n)-th smallest value (q=0 gives the minimum)."""
    if len(values) == 0:
        raise EmptyInput("percentile of an empty sequence")
    if not 0.0 <= q <= 100.0:
        raise ValueError(f"q must lie in [0, 100], got {q}")
    ordered = sorted(values)
    # round away float noise such as (1 - 0.7) * 100 == 30.000000000000004
    rank = math.ceil(round(q / 100.0 * len(ordered), 9))
    return ordered[max(rank, 1) - 1]


@dataclass(frozen=True)
class PruneResult:
    threshold: float
    kept: frozenset
    dropped: frozenset

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "kept": [list(e) for e in sorted(self.kept)],
            "dropped": [list(e) for e in sorted(self.dropped)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PruneResult":
        return cls(d["threshold"], frozenset(tuple(e) for e in d["kept"]),
                   frozenset(tuple(e) for e in d["dropped"]))


def prune_edges(benefits: Mapping[tuple[int, int], float], retention_rate: float, tau_min: float) -> PruneResult:
    """Keep edges whose benefit clears max(percentile at (1 - retention) * 100, tau_min).

    Ties at the threshold are all kept. An empty matrix (a single leader)
    reports ``tau_min`` as its threshold.
    """
    if not 0.0 <= retention_rate <= 1.0:
        raise ValueError("retention_rate must lie in [0, 1]")
    if not benefits:
        return PruneResult(tau_min, frozenset(), frozenset())
    cut = percentile(list(benefits.values()), (1.0 - retention_rate) * 100.0)
    tau = max(cut, tau_min)
    kept = frozenset(e for e, b in benefits.items() if b >= tau)
    return PruneResult(tau, kept, frozenset(benefits) - kept)


def build_baseline_topology(kind: str, n: int, seed: int = 0, density: float = 0.5) -> Topology:
    """Fixed communication graph for the vanilla multi-agent baselines.

    star: agent 0 is a hub linked both ways with every other agent.
    chain: i -> i+1.
    random: each ordered pair independently with probability ``density``,
        drawn in lexicographic pair order from ``random.Random(seed)``.
    layered: first ceil(n/2) agents feed every agent of the remaining floor(n/2).
    full / debate: every ordered pair.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if kind == "star":
        edges = {(0, i) for i in range(1, n)} | {(i, 0) for i in range(1, n)}
    elif kind == "chain":
        edges = {(i, i + 1) for i in range(n - 1)}
    elif kind == "random":
        if not 0.0 < density <= 1.0:
            raise ValueError("density must lie in (0, 1]")
        rng = random.Random(seed)
        edges = set()
        for i in range(n):
            for j in range(n):
                if i != j and rng.random() < density:
                    edges.add((i, j))
    elif kind == "layered":
        split = math.ceil(n / 2)
        edges = {(i, j) for i in range(split) for j in range(split, n)}
    elif kind in ("full", "debate"):
        edges = {(i, j) for i in range(n) for j in range(n) if i != j}
    else:
        raise ValueError(f"unknown topology kind {kind!r}; expected one of {BASELINE_KINDS}")
    return Topology(n, frozenset(edges))
