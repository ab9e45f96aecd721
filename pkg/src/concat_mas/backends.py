"""Agent execution backends.

``HttpBackend`` talks to any OpenAI-compatible chat-completions server (vLLM
and friends) and derives confidence from per-token log-probabilities.
``SimBackend`` is a seeded stand-in whose agents have a latent skill,
calibration and conformity, so that the whole protocol can be exercised and
replayed byte-for-byte without a GPU.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import random
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence

import httpx

from .core import TaskKind, normalize_answer, NoAnswerFound

log = logging.getLogger(__name__)


# --- request / result types ------------------------------------------------

@dataclass(frozen=True)
class CallContext:
    """Structured side-channel describing who is being called and with what.

    The HTTP backend only uses it to annotate errors; the simulator needs it
    to decide what its agent "believes".
    """

    task_id: str
    kind: TaskKind
    agent: int
    round: int
    role: str = "agent"  # or "aggregator"
    reference_answer: Optional[str] = None
    previous: Optional[tuple] = None  # (normalized answer, confidence)
    references: tuple = ()  # ((normalized answer, confidence), ...)


@dataclass(frozen=True)
class GenerationRequest:
    system_prompt: str
    user_prompt: str
    temperature: float = 0.7
    top_p: float = 0.8
    max_tokens: int = 32768
    want_logprobs: bool = True
    context: Optional[CallContext] = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.system_prompt.encode())
        h.update(b"\x00")
        h.update(self.user_prompt.encode())
        return h.hexdigest()


@dataclass(frozen=True)
class GenerationResult:
    text: str
    token_probabilities: Optional[tuple] = None
    prompt_tokens: int = 0
    completion_tokens: int = 0
    wall_latency: float = 0.0

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")
        if self.wall_latency < 0:
            raise ValueError("latency must be non-negative")


class Backend(Protocol):
    latency_kind: str

    def generate(self, req: GenerationRequest) -> GenerationResult: ...


# --- errors ------------------------------------------------------------------

class BackendError(RuntimeError):
    def __init__(self, message: str, task_id: Optional[str] = None, round: Optional[int] = None):
        where = f" [task={task_id} round={round}]" if task_id is not None else ""
        super().__init__(message + where)
        self.task_id = task_id
        self.round = round


class TransportError(BackendError):
    pass


class EndpointError(BackendError):
    def __init__(self, status: int, message: str, task_id=None, round=None):
        super().__init__(f"endpoint returned {status}: {message}", task_id, round)
        self.status = status


class MalformedResponse(BackendError):
    pass


class MissingLogprobs(ValueError):
    pass


# --- confidence ------------------------------------------------------------

def mean_token_probability(probs: Optional[Sequence[float]]) -> float:
    if not probs:
        raise MissingLogprobs("no token probabilities to average")
    for p in probs:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"token probability {p} outside [0, 1]")
    return min(1.0, max(0.0, math.fsum(probs) / len(probs)))


def confidence_of(result: GenerationResult, fallback: Optional[float] = None) -> float:
    """Confidence of a generation; ``fallback`` is used only when logprobs are absent."""
    if not result.token_probabilities:
        if fallback is None:
            raise MissingLogprobs("backend returned no log-probabilities and no fallback is configured")
        return fallback
    return mean_token_probability(result.token_probabilities)


# --- HTTP backend ----------------------------------------------------------

@dataclass
class HttpConfig:
    base_url: str
    model: str
    api_key: Optional[str] = None
    timeout: float = 600.0
    max_retries: int = 2

    @classmethod
    def load(cls, path: Optional[str] = None, endpoint: Optional[str] = None) -> "HttpConfig":
        """Read a JSON config file; CONCAT_ENDPOINT / CONCAT_MODEL / CONCAT_API_KEY override it."""
        data: dict = {}
        if path:
            data = json.loads(Path(path).read_text())
        if endpoint:
            data["base_url"] = endpoint
        env = {"base_url": "CONCAT_ENDPOINT", "model": "CONCAT_MODEL", "api_key": "CONCAT_API_KEY"}
        for key, var in env.items():
            if os.environ.get(var):
                data[key] = os.environ[var]
        if "base_url" not in data:
            raise ValueError("no endpoint configured (config file, --backend http:<url> or CONCAT_ENDPOINT)")
        data.setdefault("model", "default")
        return cls(**data)


class HttpBackend:
    latency_kind = "wall"

    def __init__(self, config: HttpConfig, transport: Optional[httpx.BaseTransport] = None):
        self.config = config
        headers = {"Content-Type": "application/json"}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        self._client = httpx.Client(
            base_url=config.base_url.rstrip("/"), headers=headers, timeout=config.timeout, transport=transport
        )

    def close(self) -> None:
        self._client.close()

    def _payload(self, req: GenerationRequest) -> dict:
        payload = {
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "temperature": req.temperature,
            "top_p": req.top_p,
            "max_tokens": req.max_tokens,
        }
        if req.want_logprobs:
            payload["logprobs"] = True
        return payload

    def generate(self, req: GenerationRequest) -> GenerationResult:
        ctx = req.context
        task_id, rnd = (ctx.task_id, ctx.round) if ctx else (None, None)
        payload = self._payload(req)
        last_error: Optional[BackendError] = None
        for attempt in range(self.config.max_retries + 1):
            start = time.perf_counter()
            try:
                resp = self._client.post("/chat/completions", json=payload)
            except httpx.HTTPError as exc:
                last_error = TransportError(f"{type(exc).__name__}: {exc}", task_id, rnd)
                log.warning("transport error (attempt %d): %s", attempt + 1, exc)
                continue
            elapsed = time.perf_counter() - start
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = EndpointError(resp.status_code, resp.text[:200], task_id, rnd)
                log.warning("endpoint error %d (attempt %d)", resp.status_code, attempt + 1)
                continue
            if resp.status_code != 200:
                raise EndpointError(resp.status_code, resp.text[:200], task_id, rnd)
            return self._parse(resp, elapsed, task_id, rnd)
        raise last_error

    @staticmethod
    def _parse(resp: httpx.Response, elapsed: float, task_id, rnd) -> GenerationResult:
        try:
            data = resp.json()
            choice = data["choices"][0]
            text = choice["message"]["content"]
            usage = data["usage"]
            prompt_tokens = int(usage["prompt_tokens"])
            completion_tokens = int(usage["completion_tokens"])
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected response shape: {exc!r}", task_id, rnd) from exc
        if text is None:
            raise MalformedResponse("message content is null", task_id, rnd)
        probs = None
        lp = choice.get("logprobs")
        if lp and lp.get("content"):
            try:
                probs = tuple(min(1.0, math.exp(float(t["logprob"]))) for t in lp["content"])
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedResponse(f"bad logprob entry: {exc!r}", task_id, rnd) from exc
        return GenerationResult(text, probs, prompt_tokens, completion_tokens, elapsed)


# --- simulated backend -------------------------------------------------------

@dataclass(frozen=True)
class SimAgentProfile:
    skill: float = 0.6
    calibration: float = 0.8
    conformity: float = 0.5
    base_latency: float = 1.0
    per_token_latency: float = 0.02

    def __post_init__(self):
        for name in ("skill", "calibration", "conformity"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.base_latency < 0 or self.per_token_latency < 0:
            raise ValueError("latencies must be non-negative")


_CODE_DISTRACTORS = (
    "def solution(values):\n    total = 0\n    for item in values:\n        total += item\n    return total",
    "def solution(n):\n    count = 0\n    while n > 0:\n        if n % 2 == 1:\n            count = count + 1\n        n //= 2\n    return count",
    "def solution(items):\n    try:\n        return [x * 2 for x in items if x]\n    except TypeError:\n        return []",
    "def solution(words):\n    table = {w: len(w) for w in words}\n    return sorted(table, key=lambda k: -table[k])",
    "class Solution:\n    def run(self, s):\n        with open(s) as fh:\n            return fh.read().split()",
)

# confidence bands for a perfectly calibrated agent
_HIGH_BAND = (0.65, 1.0)
_LOW_BAND = (0.2, 0.65)


def _seeded(*parts) -> random.Random:
    key = "|".join(str(p) for p in parts).encode()
    return random.Random(int.from_bytes(hashlib.sha256(key).digest()[:8], "big"))


class SimBackend:
    """Deterministic agent population.

    Each call is seeded by (seed, task, agent, round, request digest). An
    agent first considers adopting one of the referenced answers: it does so
    with probability conformity * mean reference confidence, picking a
    reference weighted by confidence. Otherwise it keeps its previous answer
    with probability equal to its previous confidence, or else answers
    afresh, correctly with probability ``skill``. Wrong answers come from a
    fixed per-task pool of ``n_options - 1`` distractors.

    The aggregator returns the plurality answer (ties: larger summed
    confidence, then earliest agent).
    """

    latency_kind = "synthetic"

    def __init__(self, profiles: Sequence[SimAgentProfile] = (SimAgentProfile(),), seed: int = 0,
                 n_options: int = 4, aggregator_latency: float = 1.0):
        if not profiles:
            raise ValueError("at least one profile is required")
        if n_options < 2:
            raise ValueError("n_options must be >= 2")
        self.profiles = tuple(profiles)
        self.seed = seed
        self.n_options = n_options
        self.aggregator_latency = aggregator_latency

    @classmethod
    def from_file(cls, path: str, seed: int = 0) -> "SimBackend":
        data = json.loads(Path(path).read_text())
        profiles = [SimAgentProfile(**p) for p in data.get("agents", [{}])]
        return cls(profiles, seed=seed, n_options=data.get("n_options", 4),
                   aggregator_latency=data.get("aggregator_latency", 1.0))

    def to_json(self) -> dict:
        return {"agents": [asdict(p) for p in self.profiles], "n_options": self.n_options,
                "aggregator_latency": self.aggregator_latency}

    def profile(self, agent: int) -> SimAgentProfile:
        return self.profiles[agent % len(self.profiles)]

    # answer pool ---------------------------------------------------------

    def answer_pool(self, ctx: CallContext) -> tuple[str, list[str]]:
        """(true answer, distractors) for a task; independent of the run seed."""
        kind = TaskKind(ctx.kind)
        rng = _seeded("pool", ctx.task_id, kind.value)
        truth = None
        if ctx.reference_answer is not None:
            try:
                truth = normalize_answer(ctx.reference_answer, kind)
            except NoAnswerFound:
                truth = ctx.reference_answer.strip()
        k = self.n_options - 1
        if kind is TaskKind.CHOICE:
            letters = ["A", "B", "C", "D"]
            truth = truth if truth in letters else letters[rng.randrange(4)]
            others = [x for x in letters if x != truth]
            rng.shuffle(others)
            return truth, others[:k]
        if kind is TaskKind.NUMERIC:
            if truth is None:
                truth = str(rng.randint(1, 500))
            base = float(truth)
            offsets = rng.sample([d for d in range(-30, 31) if d != 0], k)
            wrong = []
            for d in offsets:
                v = base + d
                wrong.append(str(int(v)) if v == int(v) else repr(v))
            return truth, wrong
        if truth is None:
            truth = _CODE_DISTRACTORS[0]
        wrong = [c for c in _CODE_DISTRACTORS if c != truth]
        rng.shuffle(wrong)
        return truth, wrong[:k]

    @staticmethod
    def render(kind: TaskKind, answer: str) -> str:
        kind = TaskKind(kind)
        if kind is TaskKind.CHOICE:
            return f"Having weighed every option, the answer is {answer}"
        if kind is TaskKind.NUMERIC:
            return f"Working through the problem step by step.\nThe answer is {answer}"
        return f"```python\n{answer}\n```"

    # generation ----------------------------------------------------------

    def generate(self, req: GenerationRequest) -> GenerationResult:
        ctx = req.context
        if ctx is None:
            raise ValueError("the simulated backend needs a CallContext on every request")
        rng = _seeded(self.seed, ctx.task_id, ctx.agent, ctx.round, req.digest())
        prompt_tokens = len(req.system_prompt.split()) + len(req.user_prompt.split())
        if ctx.role == "aggregator":
            answer = self._plurality(ctx)
            if answer is None:
                truth, wrong = self.answer_pool(ctx)
                answer = wrong[0]
            text = self.render(ctx.kind, answer)
            completion = len(text.split())
            latency = self.aggregator_latency + 0.01 * completion
            return GenerationResult(text, (1.0,) * completion, prompt_tokens, completion, latency)

        prof = self.profile(ctx.agent)
        truth, wrong = self.answer_pool(ctx)
        answer = None
        refs = [r for r in ctx.references if r[0] is not None]
        if refs:
            mean_conf = sum(c for _, c in ctx.references) / len(ctx.references)
            if rng.random() < prof.conformity * mean_conf:
                answer = self._weighted_pick(rng, refs)
        if answer is None and ctx.previous is not None and ctx.previous[0] is not None:
            if rng.random() < ctx.previous[1]:
                answer = ctx.previous[0]
        if answer is None:
            answer = truth if rng.random() < prof.skill else wrong[rng.randrange(len(wrong))]
        correct = answer == truth
        band = _HIGH_BAND if correct else _LOW_BAND
        calibrated = rng.uniform(*band)
        conf = prof.calibration * calibrated + (1.0 - prof.calibration) * rng.random()
        text = self.render(ctx.kind, answer)
        completion = rng.randint(40, 160)
        latency = prof.base_latency + prof.per_token_latency * completion
        return GenerationResult(text, (conf,) * completion, prompt_tokens, completion, latency)

    @staticmethod
    def _weighted_pick(rng: random.Random, refs: list) -> str:
        total = sum(c for _, c in refs)
        if total <= 0:
            return refs[rng.randrange(len(refs))][0]
        x = rng.random() * total
        acc = 0.0
        for ans, c in refs:
            acc += c
            if x < acc:
                return ans
        return refs[-1][0]

    @staticmethod
    def _plurality(ctx: CallContext) -> Optional[str]:
        votes: dict[str, list] = {}
        for i, (ans, conf) in enumerate(ctx.references):
            if ans is None:
                continue
            entry = votes.setdefault(ans, [0, 0.0, i])
            entry[0] += 1
            entry[1] += conf
        if not votes:
            return None
        return max(votes, key=lambda a: (votes[a][0], votes[a][1], -votes[a][2]))
