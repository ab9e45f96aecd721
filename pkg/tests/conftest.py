import pytest
from hypothesis import settings

from concat_mas.backends import GenerationResult
from concat_mas.core import Task, TaskKind

settings.register_profile("repo", deadline=None)
settings.load_profile("repo")


class ScriptedBackend:
    """Answers from a script keyed by (agent, round); aggregator replies with a fixed text.

    ``script`` values are (text, confidence). Every request is logged.
    """

    latency_kind = "synthetic"

    def __init__(self, script, aggregator_text="The answer is A", latency=1.0, fail_on=None):
        self.script = script
        self.aggregator_text = aggregator_text
        self.latency = latency
        self.fail_on = fail_on
        self.requests = []

    def generate(self, req):
        self.requests.append(req)
        ctx = req.context
        if self.fail_on is not None and self.fail_on(ctx):
            from concat_mas.backends import TransportError
            raise TransportError("scripted failure", ctx.task_id, ctx.round)
        if ctx.role == "aggregator":
            return GenerationResult(self.aggregator_text, None, 10, 5, self.latency)
        text, conf = self.script(ctx.agent, ctx.round) if callable(self.script) else self.script[(ctx.agent, ctx.round)]
        return GenerationResult(text, (conf,), 10, 20, self.latency * (1 + ctx.agent))

    def agent_calls(self, round=None):
        return [r.context for r in self.requests
                if r.context.role == "agent" and (round is None or r.context.round == round)]


@pytest.fixture
def choice_task():
    return Task("t0", "Which option?", TaskKind.CHOICE, "A")


@pytest.fixture
def numeric_task():
    return Task("n0", "How many apples?", TaskKind.NUMERIC, "140")


# --- acceptance reporting ------------------------------------------------------

ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        status, title, detail = ACCEPTANCE_RESULTS[num]
        terminalreporter.write_line(f"{status} [{num:>2}] {title}: {detail}")
