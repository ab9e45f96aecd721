"""Training-free multi-agent collaboration via consensus clustering and benefit-driven edge pruning."""
from .backends import HttpBackend, HttpConfig, SimAgentProfile, SimBackend
from .core import AgentState, NoAnswerFound, RunConfig, Task, TaskKind, Topology, normalize_answer
from .orchestrator import (
    ExperimentRecord,
    RoundTrace,
    run_concat,
    run_cot,
    run_llm_debate,
    run_method,
    run_sc_cot,
    run_vanilla_mas,
)

__version__ = "0.1.0"
