"""Round-based execution of CONCAT and the training-free baselines.

Every method produces an ``ExperimentRecord``. Round 0 (independent answers)
is stored as the first entry of ``round_traces`` so that the per-round state
history, and with it every answer transition, can be rebuilt from a record
alone.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import prompts
from .backends import (
    Backend,
    BackendError,
    CallContext,
    GenerationRequest,
    GenerationResult,
    confidence_of,
)
from .benefit import benefits_from_json, benefits_to_json, predict_benefits
from .clustering import ConsensusCluster, cluster_by_similarity, select_leaders, with_representatives
from .core import AgentId, AgentState, NoAnswerFound, RunConfig, Task, TaskKind, Topology, is_correct, normalize_answer
from .similarity import similarity_for
from .topology import PruneResult, build_baseline_topology, prune_edges

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
AGGREGATOR = -1
METHODS = ("concat", "llm_debate", "cot", "sc_cot") + tuple(
    f"vanilla:{k}" for k in ("star", "chain", "random", "layered", "full")
)


@dataclass
class RoundTrace:
    round: int
    states_after: list[AgentState]
    invoked: list[AgentId]
    topology: Topology
    calls_made: int
    round_latency: float
    serial_latency: float
    token_totals: tuple[int, int]
    clusters: list[ConsensusCluster] = field(default_factory=list)
    leaders: list[AgentId] = field(default_factory=list)
    benefits: dict = field(default_factory=dict)
    prune: Optional[PruneResult] = None

    def references_of(self, agent: AgentId) -> list[AgentId]:
        return self.topology.in_neighbors(agent)

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "clusters": [c.to_dict() for c in self.clusters],
            "leaders": list(self.leaders),
            "benefits": benefits_to_json(self.benefits),
            "prune": self.prune.to_dict() if self.prune else None,
            "topology": self.topology.to_json(),
            "invoked": list(self.invoked),
            "states_after": [s.to_dict() for s in self.states_after],
            "calls_made": self.calls_made,
            "round_latency": self.round_latency,
            "serial_latency": self.serial_latency,
            "token_totals": list(self.token_totals),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoundTrace":
        return cls(
            round=d["round"],
            states_after=[AgentState.from_dict(s) for s in d["states_after"]],
            invoked=list(d["invoked"]),
            topology=Topology.from_json(d["topology"]),
            calls_made=d["calls_made"],
            round_latency=d["round_latency"],
            serial_latency=d["serial_latency"],
            token_totals=tuple(d["token_totals"]),
            clusters=[ConsensusCluster.from_dict(c) for c in d["clusters"]],
            leaders=list(d["leaders"]),
            benefits=benefits_from_json(d["benefits"]),
            prune=PruneResult.from_dict(d["prune"]) if d["prune"] else None,
        )


@dataclass
class ExperimentRecord:
    task_id: str
    method: str
    config: dict
    round_traces: list[RoundTrace]
    final_answer: Optional[str] = None
    final_text: str = ""
    correct: Optional[bool] = None
    reference_answer: Optional[str] = None
    kind: str = "choice"
    total_latency: float = 0.0
    serial_latency: float = 0.0
    total_tokens: tuple[int, int] = (0, 0)
    total_calls: int = 0
    aggregation_fallback: Optional[str] = None
    latency_kind: str = "synthetic"
    repetition: int = 0
    error: Optional[str] = None
    schema_version: int = SCHEMA_VERSION

    @property
    def n_agents(self) -> int:
        return len(self.round_traces[0].states_after) if self.round_traces else 0

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "task_id": self.task_id,
            "method": self.method,
            "repetition": self.repetition,
            "kind": self.kind,
            "config": self.config,
            "round_traces": [t.to_dict() for t in self.round_traces],
            "final_answer": self.final_answer,
            "final_text": self.final_text,
            "reference_answer": self.reference_answer,
            "correct": self.correct,
            "total_latency": self.total_latency,
            "serial_latency": self.serial_latency,
            "latency_kind": self.latency_kind,
            "total_tokens": list(self.total_tokens),
            "total_calls": self.total_calls,
            "aggregation_fallback": self.aggregation_fallback,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentRecord":
        return cls(
            task_id=d["task_id"],
            method=d["method"],
            config=d["config"],
            round_traces=[RoundTrace.from_dict(t) for t in d["round_traces"]],
            final_answer=d["final_answer"],
            final_text=d["final_text"],
            correct=d["correct"],
            reference_answer=d["reference_answer"],
            kind=d["kind"],
            total_latency=d["total_latency"],
            serial_latency=d["serial_latency"],
            total_tokens=tuple(d["total_tokens"]),
            total_calls=d["total_calls"],
            aggregation_fallback=d["aggregation_fallback"],
            latency_kind=d["latency_kind"],
            repetition=d.get("repetition", 0),
            error=d.get("error"),
            schema_version=d["schema_version"],
        )


class TaskFailed(RuntimeError):
    """A backend error aborted a task; ``record`` holds the trace up to the failure."""

    def __init__(self, record: ExperimentRecord, cause: Exception):
        super().__init__(str(cause))
        self.record = record
        self.cause = cause


# --- calling agents ------------------------------------------------------------

class _Caller:
    """Fans one round's calls out to the backend and merges results by agent id."""

    def __init__(self, task: Task, cfg: RunConfig, backend: Backend, pool: Optional[ThreadPoolExecutor],
                 confidence_fallback: Optional[float] = None):
        self.task = task
        self.cfg = cfg
        self.backend = backend
        self.pool = pool
        self.fallback = confidence_fallback

    def request(self, agent: int, round: int, references: Sequence[AgentState],
                previous: Optional[AgentState], role: Optional[int] = None) -> GenerationRequest:
        ctx = CallContext(
            task_id=self.task.id,
            kind=self.task.kind,
            agent=agent,
            round=round,
            reference_answer=self.task.reference_answer,
            previous=(previous.normalized_answer, previous.confidence) if previous else None,
            references=tuple((r.normalized_answer, r.confidence) for r in references),
        )
        return GenerationRequest(
            system_prompt=prompts.role_system_prompt(self.task.kind, agent if role is None else role),
            user_prompt=prompts.agent_user_prompt(self.task.question, [r.answer for r in references]),
            temperature=self.cfg.temperature,
            top_p=self.cfg.top_p,
            max_tokens=self.cfg.max_tokens,
            context=ctx,
        )

    def run(self, requests: Sequence[GenerationRequest]) -> list[GenerationResult]:
        if self.pool is None or len(requests) <= 1:
            return [self.backend.generate(r) for r in requests]
        # map() yields in submission order, whatever order the calls finish in
        return list(self.pool.map(self.backend.generate, requests))

    def state(self, result: GenerationResult, round: int) -> AgentState:
        conf = confidence_of(result, self.fallback)
        return AgentState.from_text(result.text, self.task.kind, conf, round)


def _round_trace(round: int, states: list[AgentState], invoked: list[int], topo: Topology,
                 results: Sequence[GenerationResult], **extra) -> RoundTrace:
    return RoundTrace(
        round=round,
        states_after=states,
        invoked=invoked,
        topology=topo,
        calls_made=len(results),
        round_latency=max((r.wall_latency for r in results), default=0.0),
        serial_latency=sum(r.wall_latency for r in results),
        token_totals=(sum(r.prompt_tokens for r in results), sum(r.completion_tokens for r in results)),
        **extra,
    )


def _refine(caller: _Caller, states: list[AgentState], round: int,
            refs: dict[int, list[int]], topo: Topology, **extra) -> RoundTrace:
    invoked = sorted(refs)
    reqs = [caller.request(a, round, [states[j] for j in refs[a]], states[a]) for a in invoked]
    results = caller.run(reqs)
    new_states = list(states)
    for a, res in zip(invoked, results):
        new_states[a] = caller.state(res, round)
    return _round_trace(round, new_states, invoked, topo, results, **extra)


# --- phases --------------------------------------------------------------------

def run_initialization(task: Task, cfg: RunConfig, backend: Backend, caller: Optional[_Caller] = None,
                       n: Optional[int] = None, single_role: bool = False) -> RoundTrace:
    """Round 0: every agent answers on its own.

    ``single_role`` gives every caller the first role prompt (self-consistency
    sampling draws repeatedly from one agent).
    """
    caller = caller or _Caller(task, cfg, backend, None)
    n = cfg.n_agents if n is None else n
    reqs = [caller.request(i, 0, [], None, role=0 if single_role else None) for i in range(n)]
    results = caller.run(reqs)
    states = [caller.state(r, 0) for r in results]
    return _round_trace(0, states, list(range(n)), Topology(n), results)


def run_concat_round(states: list[AgentState], task: Task, cfg: RunConfig, backend: Backend,
                     round: int = 1, caller: Optional[_Caller] = None) -> RoundTrace:
    """Cluster, elect leaders, predict benefits, prune, and let only leaders refine."""
    caller = caller or _Caller(task, cfg, backend, None)
    sim = similarity_for(task.kind)
    clusters = cluster_by_similarity(states, task.kind, cfg.code_cluster_threshold, sim)
    leaders = select_leaders(clusters, states)
    clusters = with_representatives(clusters, leaders, states)
    benefits = predict_benefits(leaders, states, cfg.alpha, cfg.theta_sim, sim, cfg.predictor)
    pruned = prune_edges(benefits, cfg.retention_rate, cfg.tau_min)
    refs = {k: sorted(j for j, kk in pruned.kept if kk == k) for k in leaders}
    if cfg.skip_empty_refinement:
        refs = {k: v for k, v in refs.items() if v}
    topo = Topology(len(states), pruned.kept)
    return _refine(caller, states, round, refs, topo, clusters=clusters, leaders=list(leaders),
                   benefits=benefits, prune=pruned)


def majority_vote(states: Sequence[AgentState]) -> Optional[str]:
    """Plurality over normalized answers; ties by higher mean confidence, then earliest agent."""
    tally: dict[str, list] = {}
    for i, s in enumerate(states):
        if s.normalized_answer is None:
            continue
        t = tally.setdefault(s.normalized_answer, [0, 0.0, i])
        t[0] += 1
        t[1] += s.confidence
    if not tally:
        return None
    return max(tally, key=lambda a: (tally[a][0], tally[a][1] / tally[a][0], -tally[a][2]))


def aggregate_final(states: Sequence[AgentState], task: Task, backend: Backend,
                    cfg: Optional[RunConfig] = None, round: Optional[int] = None,
                    few_shot: str = "") -> tuple[Optional[str], str, Optional[GenerationResult], Optional[str]]:
    """One aggregation call over all agents' final answers.

    Returns (normalized answer, raw text, call result, fallback reason). On a
    failed call or an unparseable reply the majority vote is used instead and
    the reason is reported.
    """
    cfg = cfg or RunConfig()
    ctx = CallContext(
        task_id=task.id, kind=task.kind, agent=AGGREGATOR,
        round=round if round is not None else cfg.refinement_rounds + 1,
        role="aggregator", reference_answer=task.reference_answer,
        references=tuple((s.normalized_answer, s.confidence) for s in states),
    )
    req = GenerationRequest(
        system_prompt=prompts.aggregation_system_prompt(task.kind),
        user_prompt=prompts.aggregation_user_prompt(task.kind, task.question, [s.answer for s in states], few_shot),
        temperature=cfg.temperature,
        top_p=cfg.top_p,
        max_tokens=cfg.max_tokens,
        want_logprobs=False,
        context=ctx,
    )
    try:
        result = backend.generate(req)
    except BackendError as exc:
        log.warning("aggregation failed for %s, using majority vote: %s", task.id, exc)
        return majority_vote(states), "", None, f"aggregation call failed: {exc}"
    try:
        return normalize_answer(result.text, task.kind), result.text, result, None
    except NoAnswerFound:
        return majority_vote(states), result.text, result, "aggregator reply had no extractable answer"


# --- whole methods -------------------------------------------------------------

def _finish(task: Task, method: str, cfg: RunConfig, backend: Backend, traces: list[RoundTrace],
            final: Optional[str], text: str, extra_results: Sequence[GenerationResult] = (),
            fallback: Optional[str] = None, extra_calls: int = 0) -> ExperimentRecord:
    latency = sum(t.round_latency for t in traces) + sum(r.wall_latency for r in extra_results)
    serial = sum(t.serial_latency for t in traces) + sum(r.wall_latency for r in extra_results)
    ptok = sum(t.token_totals[0] for t in traces) + sum(r.prompt_tokens for r in extra_results)
    ctok = sum(t.token_totals[1] for t in traces) + sum(r.completion_tokens for r in extra_results)
    return ExperimentRecord(
        task_id=task.id,
        method=method,
        config=cfg.to_dict(),
        round_traces=traces,
        final_answer=final,
        final_text=text,
        correct=is_correct(final, task),
        reference_answer=task.reference_answer,
        kind=TaskKind(task.kind).value,
        total_latency=latency,
        serial_latency=serial,
        total_tokens=(ptok, ctok),
        total_calls=sum(t.calls_made for t in traces) + extra_calls,
        aggregation_fallback=fallback,
        latency_kind=getattr(backend, "latency_kind", "wall"),
    )


def _partial(task: Task, method: str, cfg: RunConfig, backend: Backend, traces: list[RoundTrace],
             exc: Exception) -> TaskFailed:
    rec = _finish(task, method, cfg, backend, traces, None, "")
    rec.correct = False if task.reference_answer is not None else None
    rec.error = f"{type(exc).__name__}: {exc}"
    return TaskFailed(rec, exc)


def _pool(cfg: RunConfig) -> Optional[ThreadPoolExecutor]:
    return ThreadPoolExecutor(max_workers=cfg.max_workers) if cfg.max_workers > 1 else None


def _run_rounds(task: Task, cfg: RunConfig, backend: Backend, method: str, step,
                confidence_fallback: Optional[float]) -> ExperimentRecord:
    pool = _pool(cfg)
    traces: list[RoundTrace] = []
    try:
        caller = _Caller(task, cfg, backend, pool, confidence_fallback)
        try:
            traces.append(run_initialization(task, cfg, backend, caller))
            for t in range(1, cfg.refinement_rounds + 1):
                traces.append(step(traces[-1].states_after, t, caller))
        except BackendError as exc:
            raise _partial(task, method, cfg, backend, traces, exc) from exc
        final, text, agg, fallback = aggregate_final(traces[-1].states_after, task, backend, cfg)
        return _finish(task, method, cfg, backend, traces, final, text,
                       [agg] if agg else [], fallback, extra_calls=1)
    finally:
        if pool is not None:
            pool.shutdown()


def run_concat(task: Task, cfg: RunConfig, backend: Backend,
               confidence_fallback: Optional[float] = None) -> ExperimentRecord:
    def step(states, t, caller):
        return run_concat_round(states, task, cfg, backend, t, caller)
    return _run_rounds(task, cfg, backend, "concat", step, confidence_fallback)


def run_llm_debate(task: Task, cfg: RunConfig, backend: Backend,
                   confidence_fallback: Optional[float] = None) -> ExperimentRecord:
    topo = build_baseline_topology("debate", cfg.n_agents)

    def step(states, t, caller):
        refs = {k: topo.in_neighbors(k) for k in range(len(states))}
        return _refine(caller, states, t, refs, topo)
    return _run_rounds(task, cfg, backend, "llm_debate", step, confidence_fallback)


def run_vanilla_mas(task: Task, topology_kind: str, cfg: RunConfig, backend: Backend,
                    density: float = 0.5, confidence_fallback: Optional[float] = None) -> ExperimentRecord:
    """Fixed topology every round; agents without in-edges keep their state."""
    if topology_kind not in ("star", "chain", "random", "layered", "full"):
        raise ValueError(f"unknown vanilla topology {topology_kind!r}")
    topo = build_baseline_topology(topology_kind, cfg.n_agents, cfg.seed, density)

    def step(states, t, caller):
        refs = {k: topo.in_neighbors(k) for k in range(len(states)) if topo.in_neighbors(k)}
        return _refine(caller, states, t, refs, topo)
    return _run_rounds(task, cfg, backend, f"vanilla:{topology_kind}", step, confidence_fallback)


def run_cot(task: Task, cfg: RunConfig, backend: Backend,
            confidence_fallback: Optional[float] = None) -> ExperimentRecord:
    caller = _Caller(task, cfg, backend, None, confidence_fallback)
    try:
        trace = run_initialization(task, cfg, backend, caller, n=1)
    except BackendError as exc:
        raise _partial(task, "cot", cfg, backend, [], exc) from exc
    s = trace.states_after[0]
    return _finish(task, "cot", cfg, backend, [trace], s.normalized_answer, s.answer)


def run_sc_cot(task: Task, cfg: RunConfig, backend: Backend, samples: int = 5,
               confidence_fallback: Optional[float] = None) -> ExperimentRecord:
    """``samples`` independent chains, then a majority vote (no aggregation call)."""
    pool = _pool(cfg)
    try:
        caller = _Caller(task, cfg, backend, pool, confidence_fallback)
        try:
            trace = run_initialization(task, cfg, backend, caller, n=samples, single_role=True)
        except BackendError as exc:
            raise _partial(task, "sc_cot", cfg, backend, [], exc) from exc
    finally:
        if pool is not None:
            pool.shutdown()
    final = majority_vote(trace.states_after)
    return _finish(task, "sc_cot", cfg, backend, [trace], final, final or "")


def run_method(method: str, task: Task, cfg: RunConfig, backend: Backend,
               confidence_fallback: Optional[float] = None) -> ExperimentRecord:
    if method == "concat":
        return run_concat(task, cfg, backend, confidence_fallback)
    if method == "llm_debate":
        return run_llm_debate(task, cfg, backend, confidence_fallback)
    if method == "cot":
        return run_cot(task, cfg, backend, confidence_fallback)
    if method == "sc_cot":
        return run_sc_cot(task, cfg, backend, cfg.n_agents, confidence_fallback)
    if method.startswith("vanilla:"):
        return run_vanilla_mas(task, method.split(":", 1)[1], cfg, backend, confidence_fallback=confidence_fallback)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
