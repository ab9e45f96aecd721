"""Prompt templates: per-dataset agent roles and the final aggregation prompts."""
from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from typing import Sequence

from .core import TaskKind

AGGREGATION_USER = {
    TaskKind.CHOICE: "{few_shot}The task is: {question}. At the same time, the output of other agents is as follows: {agent_responses}",
    TaskKind.NUMERIC: "{few_shot}The task is: {question}. At the same time, the output of other agents is as follows: {agent_responses}",
    TaskKind.CODE: "The task is: {question}. At the same time, the outputs and feedbacks of other agents are as follows: {agent_responses}",
}


def _read(name: str) -> str:
    return resources.files("concat_mas").joinpath("data", name).read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def aggregation_system_prompt(kind: TaskKind) -> str:
    text = _read(f"aggregation_{TaskKind(kind).value}.txt")
    return text[:-1] if text.endswith("\n") else text


@lru_cache(maxsize=None)
def _roles() -> dict:
    return json.loads(_read("roles.json"))


def role_system_prompt(kind: TaskKind, agent: int) -> str:
    entry = _roles()[TaskKind(kind).value]
    roles = entry["roles"]
    return f"{roles[agent % len(roles)]} {entry['format']}"


def format_responses(answers: Sequence[str]) -> str:
    return "".join(f"\n\nAgent {i + 1}'s answer:\n{a}" for i, a in enumerate(answers))


def agent_user_prompt(question: str, references: Sequence[str]) -> str:
    if not references:
        return _roles()["solo_user"].format(question=question)
    return _roles()["refine_user"].format(question=question, agent_responses=format_responses(references))


def aggregation_user_prompt(kind: TaskKind, question: str, answers: Sequence[str], few_shot: str = "") -> str:
    few = f"{few_shot} " if few_shot else ""
    return AGGREGATION_USER[TaskKind(kind)].format(
        few_shot=few, question=question, agent_responses=format_responses(answers)
    )
