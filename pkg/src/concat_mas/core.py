"""Domain types and answer normalization shared by every other module."""
from __future__ import annotations

import enum
import re
from dataclasses import asdict, dataclass, field, fields
from decimal import Decimal, InvalidOperation
from typing import Optional

AgentId = int


class NoAnswerFound(ValueError):
    """Raised when no decision-relevant answer can be extracted from a generation."""


class TaskKind(str, enum.Enum):
    CHOICE = "choice"
    NUMERIC = "numeric"
    CODE = "code"


@dataclass(frozen=True)
class AgentState:
    """An agent's answer and confidence after a given round.

    ``normalized_answer`` is ``None`` when nothing could be extracted; such
    states always end up in their own cluster.
    """

    answer: str
    normalized_answer: Optional[str]
    confidence: float
    round: int = 0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")
        if self.round < 0:
            raise ValueError("round must be non-negative")

    @classmethod
    def from_text(cls, text: str, kind: TaskKind, confidence: float, round: int = 0) -> "AgentState":
        try:
            norm = normalize_answer(text, kind)
        except NoAnswerFound:
            norm = None
        return cls(text, norm, confidence, round)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AgentState":
        return cls(d["answer"], d["normalized_answer"], d["confidence"], d["round"])


@dataclass(frozen=True)
class Topology:
    """Directed communication graph; an edge (src, dst) lets dst read src's answer."""

    n: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        edges = frozenset((int(s), int(d)) for s, d in self.edges)
        for s, d in edges:
            if s == d:
                raise ValueError(f"self-loop on agent {s}")
            if not (0 <= s < self.n and 0 <= d < self.n):
                raise ValueError(f"edge ({s}, {d}) outside 0..{self.n - 1}")
        object.__setattr__(self, "edges", edges)

    def in_neighbors(self, dst: AgentId) -> list[AgentId]:
        return sorted(s for s, d in self.edges if d == dst)

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def to_json(self) -> dict:
        return {"n": self.n, "edges": [list(e) for e in self.sorted_edges()]}

    @classmethod
    def from_json(cls, d: dict) -> "Topology":
        return cls(d["n"], frozenset(tuple(e) for e in d["edges"]))

    def __len__(self):
        return len(self.edges)


@dataclass(frozen=True)
class Task:
    id: str
    question: str
    kind: TaskKind
    reference_answer: Optional[str] = None
    # code tasks only; carried through untouched
    entry_point: Optional[str] = None
    tests: Optional[str] = None


@dataclass(frozen=True)
class RunConfig:
    n_agents: int = 5
    refinement_rounds: int = 2
    alpha: float = 0.20
    retention_rate: float = 0.70
    tau_min: float = 0.0
    theta_sim: float = 0.5
    code_cluster_threshold: float = 0.45
    temperature: float = 0.7
    top_p: float = 0.8
    max_tokens: int = 32768
    seed: int = 0
    skip_empty_refinement: bool = False
    predictor: str = "heuristic"
    max_workers: int = 8

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        if self.refinement_rounds < 0:
            raise ValueError("refinement_rounds must be >= 0")
        if not 0.0 <= self.retention_rate <= 1.0:
            raise ValueError("retention_rate must lie in [0, 1]")
        if not 0.0 <= self.theta_sim <= 1.0 or not 0.0 <= self.code_cluster_threshold <= 1.0:
            raise ValueError("similarity thresholds must lie in [0, 1]")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.predictor not in ("heuristic", "exact"):
            raise ValueError(f"unknown predictor {self.predictor!r}")
        if self.max_workers < 1:
            raise ValueError("max_workers must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown RunConfig fields: {sorted(unknown)}")
        return cls(**d)


# --- answer normalization -------------------------------------------------

_CHOICE_RE = re.compile(r"\b([A-D])\b")
_NUMBER = r"-?(?:\$\s*)?(?:\d[\d,]*(?:\.\d+)?|\.\d+)"
_ANSWER_IS_RE = re.compile(r"the answer is\s*:?\s*(" + _NUMBER + ")", re.IGNORECASE)
_NUMBER_RE = re.compile(_NUMBER)
_FENCE_RE = re.compile(r"```[ \t]*[\w+-]*[ \t]*\n(.*?)```", re.DOTALL)
_OPEN_FENCE_RE = re.compile(r"```[ \t]*[\w+-]*[ \t]*\n")


def _canonical_number(token: str) -> str:
    cleaned = token.replace(",", "").replace("$", "").replace(" ", "")
    try:
        value = Decimal(cleaned)
    except InvalidOperation as exc:
        raise NoAnswerFound(f"not a number: {token!r}") from exc
    if value == value.to_integral_value():
        return str(int(value))
    return format(value.normalize(), "f")


def _normalize_code(raw: str) -> str:
    blocks = _FENCE_RE.findall(raw)
    if blocks:
        code = blocks[-1]
    else:
        # a truncated generation may open a fence and never close it
        m = _OPEN_FENCE_RE.search(raw)
        code = raw[m.end():] if m else raw
    code = code.strip("\n").rstrip()
    if not code.strip():
        raise NoAnswerFound("empty code answer")
    return code


def normalize_answer(raw: str, kind: TaskKind) -> str:
    """Extract the decision-relevant part of a raw generation.

    choice -> last standalone letter A-D; numeric -> the number after the
    final "The answer is", else the last number on the last non-empty line,
    commas and currency signs removed; code -> contents of the last fenced
    block (or the raw text if unfenced).
    """
    kind = TaskKind(kind)
    if raw is None or not raw.strip():
        raise NoAnswerFound("empty generation")
    if kind is TaskKind.CHOICE:
        letters = _CHOICE_RE.findall(raw)
        if not letters:
            raise NoAnswerFound("no option letter A-D found")
        return letters[-1]
    if kind is TaskKind.NUMERIC:
        hits = _ANSWER_IS_RE.findall(raw)
        if hits:
            return _canonical_number(hits[-1])
        last_line = [ln for ln in raw.splitlines() if ln.strip()][-1]
        nums = _NUMBER_RE.findall(last_line)
        if not nums:
            raise NoAnswerFound("no number on the last line")
        return _canonical_number(nums[-1])
    return _normalize_code(raw)


def is_correct(normalized: Optional[str], task: Task) -> Optional[bool]:
    """Exact-match scoring; ``None`` when the task carries no reference answer."""
    if task.reference_answer is None:
        return None
    if normalized is None:
        return False
    try:
        ref = normalize_answer(task.reference_answer, task.kind)
    except NoAnswerFound:
        ref = task.reference_answer.strip()
    return normalized == ref
