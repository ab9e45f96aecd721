"""Seeded simulation scenario for the observational analysis.

200 four-option choice tasks, a five-agent population of mixed skill whose
confidence is well calibrated (calibration 0.9) and who adopt referenced
answers with conformity 0.6. Agents talk over the fully connected debate
topology for two refinement rounds. Because confident agents are usually
right, a confident dissenter is more often corrective than a timid one.
"""
from concat_mas.analysis import dissent_auc, transition_histogram
from concat_mas.backends import SimAgentProfile, SimBackend
from concat_mas.core import RunConfig, Task, TaskKind
from concat_mas.experiment import make_sim_dataset
from concat_mas.orchestrator import run_llm_debate

SKILLS = (0.8, 0.4, 0.65, 0.3, 0.55)
SEED = 11


def observation_records(n_agents):
    rows = make_sim_dataset("choice", 200, seed=3)
    tasks = [Task(r["id"], r["question"], TaskKind.CHOICE, r["answer"]) for r in rows]
    profiles = [SimAgentProfile(skill=s, calibration=0.9, conformity=0.6) for s in SKILLS]
    backend = SimBackend(profiles, seed=SEED)
    cfg = RunConfig(n_agents=n_agents, refinement_rounds=2, seed=SEED, max_workers=1)
    return [run_llm_debate(t, cfg, backend) for t in tasks]


def observation_summary(n_agents):
    """(non-helpful transition share, dissent AUC) pooled over both refinement rounds."""
    recs = observation_records(n_agents)
    hist = transition_histogram(recs)
    total = sum(h["total"] for h in hist.values())
    helpful = sum(h["counts"]["WrongToCorrect"] for h in hist.values())
    auc = dissent_auc(recs)[("llm_debate", n_agents)]["auc"]
    return 1 - helpful / total, auc
