from pathlib import Path

import pytest

from concat_mas.core import TaskKind
from concat_mas.prompts import (
    AGGREGATION_USER,
    aggregation_system_prompt,
    aggregation_user_prompt,
    agent_user_prompt,
    format_responses,
    role_system_prompt,
)

GOLDEN = Path(__file__).parent / "golden"


@pytest.mark.parametrize("kind", list(TaskKind))
def test_aggregation_system_prompt_byte_exact(kind):
    golden = (GOLDEN / f"aggregation_{kind.value}_system.txt").read_bytes()
    assert aggregation_system_prompt(kind).encode("utf-8") == golden


@pytest.mark.parametrize("kind", list(TaskKind))
def test_aggregation_user_template_matches_golden(kind):
    golden = (GOLDEN / f"aggregation_{kind.value}_user.txt").read_text(encoding="utf-8")
    responses = "{agent responses with test results}" if kind is TaskKind.CODE else "{agent responses}"
    rendered = AGGREGATION_USER[kind].format(few_shot="{few-shot examples} ", question="{question}",
                                             agent_responses=responses)
    assert rendered == golden


def test_numeric_exemplar_line():
    assert aggregation_system_prompt(TaskKind.NUMERIC).endswith("for example: The answer is 140")
    assert aggregation_system_prompt(TaskKind.CHOICE).startswith(
        "You are the top decision-maker and are good at analyzing and summarizing other people's opinions")


def test_user_prompts_interpolate_answers():
    text = aggregation_user_prompt(TaskKind.CHOICE, "Q?", ["A", "B"])
    assert text == "The task is: Q?. At the same time, the output of other agents is as follows: " \
                   "\n\nAgent 1's answer:\nA\n\nAgent 2's answer:\nB"
    assert format_responses([]) == ""
    refine = agent_user_prompt("Q?", ["x"])
    assert refine.startswith("The task is: Q?.") and refine.endswith("Agent 1's answer:\nx")
    assert "Agent" not in agent_user_prompt("Q?", [])


@pytest.mark.parametrize("kind", list(TaskKind))
def test_role_prompts_cycle_over_five_roles(kind):
    roles = [role_system_prompt(kind, i) for i in range(5)]
    assert len(set(roles)) == 5
    assert role_system_prompt(kind, 5) == roles[0]
