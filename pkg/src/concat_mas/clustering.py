"""Consensus clustering of agents by answer and per-cluster leader selection."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .core import AgentId, AgentState, TaskKind
from .similarity import similarity_for


@dataclass(frozen=True)
class ConsensusCluster:
    members: tuple[AgentId, ...]
    representative_answer: Optional[str] = None

    def __post_init__(self):
        if not self.members:
            raise ValueError("cluster must be nonempty")
        object.__setattr__(self, "members", tuple(sorted(self.members)))

    def to_dict(self) -> dict:
        return {"members": list(self.members), "representative_answer": self.representative_answer}

    @classmethod
    def from_dict(cls, d: dict) -> "ConsensusCluster":
        return cls(tuple(d["members"]), d["representative_answer"])


def _exact_groups(states: Sequence[AgentState]) -> list[list[AgentId]]:
    groups: dict[str, list[AgentId]] = {}
    out: list[list[AgentId]] = []
    for i, s in enumerate(states):
        if s.normalized_answer is None:
            out.append([i])
            continue
        if s.normalized_answer not in groups:
            groups[s.normalized_answer] = []
            out.append(groups[s.normalized_answer])
        groups[s.normalized_answer].append(i)
    return out


def average_linkage(sim: list[list[float]], threshold: float) -> list[list[int]]:
    """Agglomerative clustering on a similarity matrix with average linkage.

    Repeatedly merges the pair of clusters with the highest mean pairwise
    similarity while that mean is >= ``threshold``. Ties go to the pair whose
    smallest members are lowest.
    """
    clusters = [[i] for i in range(len(sim))]
    while len(clusters) > 1:
        best = None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                ca, cb = clusters[a], clusters[b]
                avg = sum(sim[i][j] for i in ca for j in cb) / (len(ca) * len(cb))
                if best is None or avg > best[0]:
                    best = (avg, a, b)
        avg, a, b = best
        if avg < threshold:
            break
        merged = sorted(clusters[a] + clusters[b])
        clusters = [c for k, c in enumerate(clusters) if k not in (a, b)] + [merged]
        clusters.sort(key=lambda c: c[0])
    return clusters


def cluster_by_similarity(
    states: Sequence[AgentState],
    kind: TaskKind,
    code_threshold: float = 0.45,
    similarity: Optional[Callable[[Optional[str], Optional[str]], float]] = None,
) -> list[ConsensusCluster]:
    """Partition agents into consensus clusters, ordered by lowest member index.

    Closed-form answers group on exact equality; code answers use average
    linkage over AST Jaccard similarity. The representative answer is filled
    in later by leader selection.
    """
    if not states:
        raise ValueError("no states to cluster")
    if not 0.0 <= code_threshold <= 1.0:
        raise ValueError("code_threshold must lie in [0, 1]")
    if TaskKind(kind) is TaskKind.CODE:
        sim_fn = similarity or similarity_for(TaskKind.CODE)
        answers = [s.normalized_answer for s in states]
        n = len(answers)
        matrix = [[1.0] * n for _ in range(n)]
        for i in range(n):
            for j in range(i + 1, n):
                matrix[i][j] = matrix[j][i] = sim_fn(answers[i], answers[j])
        # unparseable answers stay alone, even next to an identical failure
        for i, a in enumerate(answers):
            if a is None:
                for j in range(n):
                    if j != i:
                        matrix[i][j] = matrix[j][i] = 0.0
        groups = average_linkage(matrix, code_threshold)
    else:
        groups = _exact_groups(states)
    groups.sort(key=lambda g: min(g))
    return [ConsensusCluster(tuple(g)) for g in groups]


def select_leaders(clusters: Sequence[ConsensusCluster], states: Sequence[AgentState]) -> list[AgentId]:
    """One leader per cluster: highest confidence, lowest index on ties."""
    seen: set[int] = set()
    leaders = []
    for c in clusters:
        if seen & set(c.members):
            raise ValueError("clusters overlap")
        seen.update(c.members)
        leaders.append(min(c.members, key=lambda i: (-states[i].confidence, i)))
    if seen != set(range(len(states))):
        raise ValueError("clusters do not cover every agent")
    return leaders


def with_representatives(clusters: Sequence[ConsensusCluster], leaders: Sequence[AgentId],
                         states: Sequence[AgentState]) -> list[ConsensusCluster]:
    return [ConsensusCluster(c.members, states[l].normalized_answer) for c, l in zip(clusters, leaders)]
