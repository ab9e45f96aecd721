"""Experiment configuration, dataset ingestion and the batch runner behind the CLI."""
from __future__ import annotations

import csv
import json
import logging
import random
import shlex
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

from .analysis import SchemaError, efficiency
from .backends import HttpBackend, HttpConfig, SimBackend
from .core import RunConfig, Task, TaskKind
from .orchestrator import METHODS, ExperimentRecord, TaskFailed, run_method

log = logging.getLogger(__name__)

FAILURE_LIMIT = 0.10


@dataclass
class ExperimentConfig:
    dataset: str
    kind: str
    method: str = "concat"
    backend: str = "sim"
    out: str = "runs/latest"
    repetitions: int = 3
    parallelism: int = 4
    http_config: Optional[str] = None
    confidence_fallback: Optional[float] = None
    test_command: Optional[str] = None
    run: RunConfig = field(default_factory=RunConfig)

    def validate(self) -> None:
        TaskKind(self.kind)
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not Path(self.dataset).is_file():
            raise FileNotFoundError(f"dataset not found: {self.dataset}")
        if self.repetitions < 1 or self.parallelism < 1:
            raise ValueError("repetitions and parallelism must be >= 1")
        scheme, _, arg = self.backend.partition(":")
        if scheme == "sim":
            if arg and not Path(arg).is_file():
                raise FileNotFoundError(f"simulation profile not found: {arg}")
        elif scheme == "http":
            if self.http_config and not Path(self.http_config).is_file():
                raise FileNotFoundError(f"http config not found: {self.http_config}")
        else:
            raise ValueError(f"backend must be 'sim[:profile.json]' or 'http[:url]', got {self.backend!r}")
        if self.confidence_fallback is not None and not 0.0 <= self.confidence_fallback <= 1.0:
            raise ValueError("confidence_fallback must lie in [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["run"] = self.run.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        run = RunConfig.from_dict(d.pop("run", {}))
        return cls(run=run, **d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


# --- datasets --------------------------------------------------------------------

def _inline_choices(question: str, choices) -> str:
    if not choices:
        return question
    if len(choices) != 4:
        raise ValueError("choice questions need exactly 4 options")
    opts = "\n".join(f"{letter}) {text}" for letter, text in zip("ABCD", choices))
    return f"{question}\n{opts}"


def load_dataset(path, kind) -> list[Task]:
    """Read a JSONL benchmark file.

    choice:  {id, question, answer in A-D, optional choices[4]}
    numeric: {id, question, answer}
    code:    {id, prompt, entry_point, tests, optional canonical_solution}
    """
    kind = TaskKind(kind)
    tasks: list[Task] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            required = ("id", "prompt", "entry_point", "tests") if kind is TaskKind.CODE else ("id", "question", "answer")
            missing = [k for k in required if k not in obj]
            if missing:
                raise SchemaError(f"line {lineno}: missing field(s) {missing}")
            tid = str(obj["id"])
            if tid in seen:
                raise SchemaError(f"line {lineno}: duplicate id {tid!r}")
            seen.add(tid)
            if kind is TaskKind.CHOICE:
                answer = str(obj["answer"]).strip()
                if answer not in ("A", "B", "C", "D"):
                    raise SchemaError(f"line {lineno}: choice answer must be one of A-D, got {answer!r}")
                try:
                    question = _inline_choices(obj["question"], obj.get("choices"))
                except ValueError as exc:
                    raise SchemaError(f"line {lineno}: {exc}") from exc
                tasks.append(Task(tid, question, kind, answer))
            elif kind is TaskKind.NUMERIC:
                tasks.append(Task(tid, obj["question"], kind, str(obj["answer"])))
            else:
                tasks.append(Task(tid, obj["prompt"], kind, obj.get("canonical_solution"),
                                  entry_point=obj["entry_point"], tests=obj["tests"]))
    return tasks


def make_sim_dataset(kind, n: int, seed: int = 0) -> list[dict]:
    """Synthetic benchmark rows for desk-scale simulation runs."""
    kind = TaskKind(kind)
    rng = random.Random(seed)
    rows = []
    for i in range(n):
        tid = f"{kind.value}-{i:04d}"
        if kind is TaskKind.CHOICE:
            rows.append({"id": tid, "question": f"Synthetic multiple-choice question {i}.",
                         "choices": [f"option {c}" for c in "ABCD"], "answer": rng.choice("ABCD")})
        elif kind is TaskKind.NUMERIC:
            rows.append({"id": tid, "question": f"Synthetic word problem {i}.", "answer": str(rng.randint(1, 999))})
        else:
            body = rng.choice(["return sum(xs)", "return max(xs) - min(xs)", "return sorted(xs)[len(xs) // 2]"])
            rows.append({"id": tid, "prompt": f"def f{i}(xs):\n    \"\"\"Synthetic task {i}.\"\"\"\n",
                         "entry_point": f"f{i}", "tests": "",
                         "canonical_solution": f"def f{i}(xs):\n    {body}"})
    return rows


# --- running -----------------------------------------------------------------------

def make_backend(cfg: ExperimentConfig, seed: int):
    scheme, _, arg = cfg.backend.partition(":")
    if scheme == "sim":
        return SimBackend.from_file(arg, seed=seed) if arg else SimBackend(seed=seed)
    return HttpBackend(HttpConfig.load(cfg.http_config, endpoint=arg or None))


def _run_tests(cmd_template: str, record: ExperimentRecord, task: Task) -> Optional[bool]:
    if task.kind is not TaskKind.CODE or record.final_answer is None:
        return record.correct
    with tempfile.NamedTemporaryFile("w", suffix=".py", delete=False) as fh:
        fh.write(record.final_answer + "\n\n" + (task.tests or "") + "\n")
        path = fh.name
    try:
        proc = subprocess.run(shlex.split(cmd_template.format(file=path)), capture_output=True, timeout=60)
        return proc.returncode == 0
    except (subprocess.TimeoutExpired, OSError):
        return False
    finally:
        Path(path).unlink(missing_ok=True)


def _run_one(cfg: ExperimentConfig, run_cfg: RunConfig, backend, task: Task, rep: int) -> ExperimentRecord:
    try:
        rec = run_method(cfg.method, task, run_cfg, backend, cfg.confidence_fallback)
    except TaskFailed as exc:
        rec = exc.record
    except Exception as exc:  # noqa: BLE001 - a task must never take the run down
        log.exception("task %s failed", task.id)
        rec = ExperimentRecord(task.id, cfg.method, run_cfg.to_dict(), [], reference_answer=task.reference_answer,
                               kind=task.kind.value, error=f"{type(exc).__name__}: {exc}",
                               correct=False if task.reference_answer is not None else None)
    rec.repetition = rep
    if cfg.test_command and rec.error is None:
        rec.correct = _run_tests(cfg.test_command, rec, task)
    return rec


def summarize(records: list[ExperimentRecord], repetitions: int) -> tuple[dict, list[dict]]:
    """Summary and per-repetition metrics, computed from records alone."""
    per_rep = []
    for rep in range(repetitions):
        recs = [r for r in records if r.repetition == rep]
        ok = [r for r in recs if r.error is None]
        scored = [r for r in recs if r.correct is not None]
        acc = 100.0 * sum(1 for r in scored if r.correct) / len(scored) if scored else None
        lat = sum(r.total_latency for r in ok) / len(ok) if ok else 0.0
        per_rep.append({
            "repetition": rep,
            "tasks": len(recs),
            "failed": len(recs) - len(ok),
            "accuracy": acc,
            "mean_latency": lat,
            "prompt_tokens": sum(r.total_tokens[0] for r in recs),
            "completion_tokens": sum(r.total_tokens[1] for r in recs),
            "total_calls": sum(r.total_calls for r in recs),
            "efficiency": efficiency(acc, lat) if acc is not None and lat > 0 else None,
        })
    accs = [m["accuracy"] for m in per_rep if m["accuracy"] is not None]
    mean_acc = sum(accs) / len(accs) if accs else None
    mean_lat = sum(m["mean_latency"] for m in per_rep) / len(per_rep) if per_rep else 0.0
    n_failed = sum(m["failed"] for m in per_rep)
    summary = {
        "method": records[0].method if records else None,
        "repetitions": repetitions,
        "tasks_per_repetition": per_rep[0]["tasks"] if per_rep else 0,
        "accuracy": mean_acc,
        "mean_latency": mean_lat,
        "latency_kind": next((r.latency_kind for r in records if r.error is None), None),
        "prompt_tokens": sum(m["prompt_tokens"] for m in per_rep),
        "completion_tokens": sum(m["completion_tokens"] for m in per_rep),
        "total_calls": sum(m["total_calls"] for m in per_rep),
        "efficiency": efficiency(mean_acc, mean_lat) if mean_acc is not None and mean_lat > 0 else None,
        "failed_tasks": n_failed,
        "failed_fraction": n_failed / len(records) if records else 0.0,
    }
    return summary, per_rep


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run ``cfg.method`` over every task for every repetition and write the run directory.

    Repetition r uses seed ``run.seed + r`` for both the backend and any
    seeded topology. Records are written in (repetition, dataset order),
    whatever order tasks finish in.
    """
    cfg.validate()
    tasks = load_dataset(cfg.dataset, cfg.kind)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")

    records: list[ExperimentRecord] = []
    for rep in range(cfg.repetitions):
        run_cfg = replace(cfg.run, seed=cfg.run.seed + rep)
        backend = make_backend(cfg, run_cfg.seed)
        try:
            with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
                records.extend(pool.map(lambda t: _run_one(cfg, run_cfg, backend, t, rep), tasks))
        finally:
            if hasattr(backend, "close"):
                backend.close()

    with open(out / "results.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")

    summary, per_rep = summarize(records, cfg.repetitions)
    cols = list(per_rep[0]) if per_rep else []
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        w.writerows([[m[c] for c in cols] for m in per_rep])
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
