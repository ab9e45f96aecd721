"""Observational statistics over experiment records.

Collaboration pairs are (source j -> focal k) references actually delivered
in some refinement round. Each pair is labeled by the focal agent's
correctness before and after that round; the label never looks at
confidence.
"""
from __future__ import annotations

import csv
import enum
import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .core import NoAnswerFound, TaskKind, normalize_answer
from .orchestrator import SCHEMA_VERSION, ExperimentRecord


class SchemaError(ValueError):
    pass


class DegenerateLabels(ValueError):
    pass


class ZeroLatency(ValueError):
    pass


class TransitionLabel(str, enum.Enum):
    WRONG_TO_CORRECT = "WrongToCorrect"
    CORRECT_TO_CORRECT = "CorrectToCorrect"
    WRONG_TO_WRONG = "WrongToWrong"
    CORRECT_TO_WRONG = "CorrectToWrong"

    @property
    def helpful(self) -> bool:
        return self is TransitionLabel.WRONG_TO_CORRECT


def label_transition(before_correct: bool, after_correct: bool) -> TransitionLabel:
    if before_correct:
        return TransitionLabel.CORRECT_TO_CORRECT if after_correct else TransitionLabel.CORRECT_TO_WRONG
    return TransitionLabel.WRONG_TO_CORRECT if after_correct else TransitionLabel.WRONG_TO_WRONG


def dissent_strength(mean_source_confidence: float, agree: bool) -> float:
    if not 0.0 <= mean_source_confidence <= 1.0:
        raise ValueError("confidence must lie in [0, 1]")
    return mean_source_confidence * (0.0 if agree else 1.0)


def roc_auc(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """Mann-Whitney estimate of P(score of a positive > score of a negative), ties worth 1/2."""
    if len(scores) != len(labels):
        raise ValueError("scores and labels differ in length")
    n_pos = sum(1 for y in labels if y)
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("need at least one positive and one negative label")
    order = sorted(range(len(scores)), key=lambda i: scores[i])
    pos_rank_sum = 0.0
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        avg_rank = (i + j) / 2.0 + 1.0
        pos_rank_sum += avg_rank * sum(1 for m in order[i:j + 1] if labels[m])
        i = j + 1
    u = pos_rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def efficiency(avg_accuracy: float, avg_latency: float) -> float:
    """Accuracy (in percent) per second of latency."""
    if avg_latency <= 0:
        raise ZeroLatency("average latency must be positive")
    return avg_accuracy / avg_latency


# --- collaboration pairs ----------------------------------------------------------

@dataclass(frozen=True)
class CollabPair:
    method: str
    n_agents: int
    round: int
    source: int
    target: int
    source_confidence: float
    agree: bool
    label: TransitionLabel


def _scorer(record: ExperimentRecord):
    kind = TaskKind(record.kind)
    if record.reference_answer is None:
        return None
    try:
        ref = normalize_answer(record.reference_answer, kind)
    except NoAnswerFound:
        ref = record.reference_answer.strip()
    return lambda norm: norm is not None and norm == ref


def collaboration_pairs(record: ExperimentRecord) -> list[CollabPair]:
    score = _scorer(record)
    if score is None:
        return []
    out = []
    traces = record.round_traces
    for t in range(1, len(traces)):
        prev, cur = traces[t - 1].states_after, traces[t]
        for k in cur.invoked:
            before = score(prev[k].normalized_answer)
            after = score(cur.states_after[k].normalized_answer)
            label = label_transition(before, after)
            for j in cur.references_of(k):
                agree = prev[j].normalized_answer is not None and prev[j].normalized_answer == prev[k].normalized_answer
                out.append(CollabPair(record.method, record.n_agents, cur.round, j, k,
                                      prev[j].confidence, agree, label))
    return out


def transition_histogram(records: Iterable[ExperimentRecord]) -> dict:
    """Label counts and proportions per (method, n_agents, round) bucket."""
    counts: dict = defaultdict(lambda: {lab: 0 for lab in TransitionLabel})
    for rec in records:
        for p in collaboration_pairs(rec):
            counts[(p.method, p.n_agents, p.round)][p.label] += 1
    out = {}
    for key in sorted(counts):
        c = counts[key]
        total = sum(c.values())
        out[key] = {
            "total": total,
            "counts": {lab.value: c[lab] for lab in TransitionLabel},
            "proportions": {lab.value: (c[lab] / total if total else 0.0) for lab in TransitionLabel},
        }
    return out


def dissent_auc(records: Iterable[ExperimentRecord]) -> dict:
    """ROC-AUC of dissent strength for predicting WrongToCorrect, per (method, n_agents).

    The source's confidence is averaged per source agent index over all of
    its pairs in the bucket before scoring. Buckets with a single class get
    ``auc = None``.
    """
    buckets: dict = defaultdict(list)
    for rec in records:
        for p in collaboration_pairs(rec):
            buckets[(p.method, p.n_agents)].append(p)
    out = {}
    for key in sorted(buckets):
        pairs = buckets[key]
        conf_by_src: dict = defaultdict(list)
        for p in pairs:
            conf_by_src[p.source].append(p.source_confidence)
        mean_conf = {s: sum(v) / len(v) for s, v in conf_by_src.items()}
        scores = [dissent_strength(mean_conf[p.source], p.agree) for p in pairs]
        labels = [p.label.helpful for p in pairs]
        try:
            auc = roc_auc(scores, labels)
        except DegenerateLabels:
            auc = None
        out[key] = {"pairs": len(pairs), "positives": sum(labels), "auc": auc}
    return out


def efficiency_table(records: Iterable[ExperimentRecord]) -> dict:
    """Per method: accuracy (%), mean critical-path latency, mean tokens, efficiency."""
    groups: dict = defaultdict(list)
    for rec in records:
        groups[rec.method].append(rec)
    out = {}
    for method in sorted(groups):
        recs = groups[method]
        scored = [r for r in recs if r.correct is not None]
        acc = 100.0 * sum(1 for r in scored if r.correct) / len(scored) if scored else None
        lat = sum(r.total_latency for r in recs) / len(recs)
        out[method] = {
            "records": len(recs),
            "accuracy": acc,
            "mean_latency": lat,
            "mean_prompt_tokens": sum(r.total_tokens[0] for r in recs) / len(recs),
            "mean_completion_tokens": sum(r.total_tokens[1] for r in recs) / len(recs),
            "mean_calls": sum(r.total_calls for r in recs) / len(recs),
            "efficiency": efficiency(acc, lat) if acc is not None and lat > 0 else None,
            "latency_kind": recs[0].latency_kind,
        }
    return out


# --- report files -----------------------------------------------------------------

def read_results(path) -> list[ExperimentRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            d = json.loads(line)
            version = d.get("schema_version")
            if version != SCHEMA_VERSION:
                raise SchemaError(f"line {lineno}: schema_version {version!r}, expected {SCHEMA_VERSION}")
            records.append(ExperimentRecord.from_dict(d))
    return records


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def emit_report(results_path, out_dir) -> dict:
    """Transition histograms, dissent-AUC table and efficiency table as CSV plus one JSON."""
    records = [r for r in read_results(results_path) if r.error is None]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hist = transition_histogram(records)
    aucs = dissent_auc(records)
    eff = efficiency_table(records)

    rows = []
    for (method, n, rnd), h in hist.items():
        for lab in TransitionLabel:
            rows.append([method, n, rnd, lab.value, h["counts"][lab.value], h["proportions"][lab.value]])
    _write_csv(out / "transitions.csv", ["method", "n_agents", "round", "label", "count", "proportion"], rows)
    _write_csv(out / "dissent_auc.csv", ["method", "n_agents", "pairs", "positives", "auc"],
               [[m, n, v["pairs"], v["positives"], v["auc"]] for (m, n), v in aucs.items()])
    eff_cols = ["records", "accuracy", "mean_latency", "mean_prompt_tokens", "mean_completion_tokens",
                "mean_calls", "efficiency", "latency_kind"]
    _write_csv(out / "efficiency.csv", ["method"] + eff_cols, [[m] + [v[c] for c in eff_cols] for m, v in eff.items()])

    report = {
        "schema_version": SCHEMA_VERSION,
        "transitions": [{"method": m, "n_agents": n, "round": r, **h} for (m, n, r), h in hist.items()],
        "dissent_auc": [{"method": m, "n_agents": n, **v} for (m, n), v in aucs.items()],
        "efficiency": [{"method": m, **v} for m, v in eff.items()],
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report
