"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (the summary block at the
end lists every criterion) or ``python tests/test_acceptance.py``.
"""
import contextlib
import json
import math
import random
import subprocess
import sys
import time
from fractions import Fraction
from pathlib import Path

import pytest

from concat_mas.analysis import efficiency, roc_auc
from concat_mas.backends import SimAgentProfile, SimBackend
from concat_mas.benefit import benefit_challenger, correction_threshold, exact_euc, taylor_benefit
from concat_mas.clustering import cluster_by_similarity, select_leaders
from concat_mas.core import AgentState, RunConfig, Task, TaskKind
from concat_mas.experiment import make_sim_dataset
from concat_mas.orchestrator import run_concat, run_concat_round, run_llm_debate
from concat_mas.prompts import aggregation_system_prompt
from concat_mas.topology import prune_edges

from conftest import ACCEPTANCE_RESULTS, ScriptedBackend
from scenarios import observation_summary
from test_analysis import OBSERVATION_GOLDEN

GRID = [i / 100 for i in range(1, 100)]
GOLDEN = Path(__file__).parent / "golden"


class Detail:
    text = ""


@contextlib.contextmanager
def criterion(num, title):
    d = Detail()
    try:
        yield d
    except BaseException:
        ACCEPTANCE_RESULTS[num] = ("FAIL", title, d.text or "assertion failed")
        print(f"\nFAIL [{num}] {title}: {d.text}")
        raise
    ACCEPTANCE_RESULTS[num] = ("PASS", title, d.text)
    print(f"\nPASS [{num}] {title}: {d.text}")


def test_01_proposition_suite():
    with criterion(1, "proposition suite on the 99x99 grid") as d:
        start = time.perf_counter()
        sign_bad = mono_bad = 0
        values = {(ck, c): exact_euc(ck, c) for ck in GRID for c in GRID}
        for (ck, c), v in values.items():
            t = correction_threshold(ck)
            s_euc = 0 if abs(v) <= 1e-12 else (1 if v > 0 else -1)
            s_thr = 0 if abs(c - t) <= 1e-12 else (1 if c > t else -1)
            sign_bad += s_euc != s_thr
        for ck in GRID:
            row = [values[(ck, c)] for c in GRID]
            mono_bad += sum(b < a - 1e-12 for a, b in zip(row, row[1:]))
        for c in GRID:
            col = [values[(ck, c)] for ck in GRID]
            mono_bad += sum(b > a + 1e-12 for a, b in zip(col, col[1:]))
        zero = max(abs(exact_euc(ck, correction_threshold(ck))) for ck in GRID)
        elapsed = time.perf_counter() - start
        d.text = f"sign mismatches={sign_bad}, monotonicity violations={mono_bad}, max zero-point |EUC|={zero:.2e}, {elapsed:.3f}s"
        assert sign_bad == 0 and mono_bad == 0 and zero <= 1e-9 and elapsed < 1.0


def test_02_threshold_identities():
    with criterion(2, "threshold identities") as d:
        mid = correction_threshold(0.5)
        worst = max(abs(correction_threshold(c) + correction_threshold(1 - c) - 1) for c in GRID)
        d.text = f"t(0.5)={mid!r}, max |t(c)+t(1-c)-1|={worst:.2e}"
        assert mid == 0.5 and worst <= 1e-12


def test_03_taylor_fidelity():
    with criterion(3, "Taylor fidelity near 0.5") as d:
        pts = [(ck, c) for ck in GRID for c in GRID
               if 0.2 - 1e-12 <= ck <= 0.8 + 1e-12 and abs(c - 0.5) <= 0.05 + 1e-12]
        worst = max(abs(exact_euc(ck, c) - taylor_benefit(ck, c)) for ck, c in pts)
        d.text = f"{len(pts)} points, max |exact - taylor|={worst:.5f} (bound 0.02)"
        assert worst <= 0.02


def test_04_worked_benefits():
    with criterion(4, "worked challenger benefits") as d:
        def oracle(ck, ch, a):
            ck, ch, a = Fraction(str(ck)), Fraction(str(ch)), Fraction(str(a))
            return 4 * ck * (1 - ck) * ch - a * (1 + 2 * ck) / (2 + 2 * ck + 2 * ch) + a * (1 - ck)
        a = benefit_challenger(0.5, 0.5, 0.2)
        b = benefit_challenger(0.9, 0.1, 0.2)
        d.text = f"b(0.5,0.5)={a!r}, b(0.9,0.1)={b!r}"
        assert oracle(0.5, 0.5, 0.2) == Fraction(1, 2) and oracle(0.9, 0.1, 0.2) == Fraction(-84, 1000)
        assert abs(a - 0.5) <= 1e-12 and abs(b + 0.084) <= 1e-12


def _brute_prune(b, r, tau_min):
    vals = sorted(b.values())
    rank = max(math.ceil((1 - Fraction(repr(r))) * len(vals)), 1)
    tau = max(vals[rank - 1], tau_min)
    return tau, frozenset(e for e, v in b.items() if v >= tau)


def test_05_pruning_oracle():
    with criterion(5, "pruning equals brute-force sort-and-filter") as d:
        rng = random.Random(2024)
        mismatches = floor_violations = ties = 0
        for _ in range(1000):
            k = rng.randint(2, 8)
            pairs = [(j, i) for j in range(k) for i in range(k) if i != j]
            pool = [round(rng.uniform(-0.5, 0.8), 1) for _ in range(3)]
            b = {p: rng.choice(pool) if rng.random() < 0.4 else rng.uniform(-0.5, 0.8) for p in pairs}
            ties += len(set(b.values())) < len(b)
            r = rng.choice([0.0, 0.25, 0.5, 0.7, 0.9, 1.0, round(rng.random(), 3)])
            tau_min = rng.choice([0.0, 0.0, -1e9, 0.3])
            res = prune_edges(b, r, tau_min)
            tau, kept = _brute_prune(b, r, tau_min)
            mismatches += (res.threshold, res.kept) != (tau, kept)
            mismatches += res.kept | res.dropped != frozenset(pairs)
            floor_violations += sum(b[e] < tau_min for e in res.kept)
        d.text = f"1000 matrices ({ties} with ties), mismatches={mismatches}, floor violations={floor_violations}"
        assert mismatches == 0 and floor_violations == 0


def test_06_clustering_and_leaders():
    with criterion(6, "clustering partitions, leader dominance, K=1 rounds") as d:
        rng = random.Random(6)
        task = Task("acc6", "q", TaskKind.CHOICE, "A")
        bad = 0
        consensus_rounds = 0
        for _ in range(1000):
            n = rng.randint(1, 8)
            answers = [rng.choice(["A", "B", "C", "D", None]) for _ in range(n)]
            confs = [rng.choice([0.2, 0.5, 0.5, 0.8, rng.random()]) for _ in range(n)]
            states = [AgentState(a or "??", a, c) for a, c in zip(answers, confs)]
            clusters = cluster_by_similarity(states, TaskKind.CHOICE)
            bad += sorted(i for c in clusters for i in c.members) != list(range(n))
            leaders = select_leaders(clusters, states)
            for c, l in zip(clusters, leaders):
                top = max(confs[i] for i in c.members)
                bad += l != min(i for i in c.members if confs[i] == top)
            # same population forced into consensus
            agreed = [AgentState("A", "A", c) for c in confs]
            be = ScriptedBackend(lambda a, r: ("A", 0.5))
            trace = run_concat_round(agreed, task, RunConfig(n_agents=n, max_workers=1), be)
            consensus_rounds += 1
            bad += len(trace.leaders) != 1 or trace.topology.edges != frozenset() or trace.calls_made != 1
            bad += len(be.requests) != 1
        d.text = f"1000 populations + {consensus_rounds} consensus rounds, violations={bad}"
        assert bad == 0


def test_07_call_count_law():
    with criterion(7, "call-count law and cost dominance") as d:
        profiles = [SimAgentProfile(skill=s, conformity=0.5) for s in (0.7, 0.4, 0.6, 0.35, 0.5)]
        rng = random.Random(7)
        checked = law_bad = dom_bad = strict = 0
        for n in (2, 3, 4, 5):
            for rounds in (1, 2):
                cfg = RunConfig(n_agents=n, refinement_rounds=rounds, seed=n * 10 + rounds, max_workers=1)
                for i in range(15):
                    task = Task(f"c7-{n}-{rounds}-{i}", "q", TaskKind.CHOICE, rng.choice("ABCD"))
                    c = run_concat(task, cfg, SimBackend(profiles, seed=cfg.seed))
                    db = run_llm_debate(task, cfg, SimBackend(profiles, seed=cfg.seed))
                    ks = [len(t.leaders) for t in c.round_traces[1:]]
                    law_bad += c.total_calls != n + sum(ks) + 1
                    law_bad += db.total_calls != n + rounds * n + 1
                    if any(k < n for k in ks):
                        strict += 1
                        dom_bad += not c.total_calls < db.total_calls
                    else:
                        dom_bad += c.total_calls != db.total_calls
                    checked += 1
        d.text = f"{checked} matched pairs, law violations={law_bad}, dominance violations={dom_bad}, strict cases={strict}"
        assert law_bad == 0 and dom_bad == 0


def test_08_auc_oracle():
    with criterion(8, "ROC-AUC equals pairwise counting") as d:
        rng = random.Random(8)
        worst = worst_comp = 0.0
        for _ in range(500):
            n = rng.randint(2, 200)
            scores = [rng.choice([0.0, 0.5, round(rng.random(), 2), rng.random()]) for _ in range(n)]
            labels = [rng.random() < rng.uniform(0.1, 0.9) for _ in range(n)]
            labels[0], labels[-1] = True, False
            pos = [s for s, l in zip(scores, labels) if l]
            neg = [s for s, l in zip(scores, labels) if not l]
            wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
            auc = roc_auc(scores, labels)
            worst = max(worst, abs(auc - wins / (len(pos) * len(neg))))
            worst_comp = max(worst_comp, abs(auc + roc_auc(scores, [not l for l in labels]) - 1))
        d.text = f"500 instances, max oracle error={worst:.1e}, max complement error={worst_comp:.1e}"
        assert worst <= 1e-12 and worst_comp <= 1e-12


def test_09_observation_replication():
    with criterion(9, "in-silico observation replication") as d:
        parts = []
        ok = True
        for n in (2, 3, 4, 5):
            non_helpful, auc = observation_summary(n)
            parts.append(f"N={n}: non-helpful={non_helpful:.3f} auc={auc:.3f}")
            ok &= non_helpful > 0.5 and auc > 0.5
            ok &= abs(non_helpful - OBSERVATION_GOLDEN[n][0]) <= 1e-12 and abs(auc - OBSERVATION_GOLDEN[n][1]) <= 1e-12
        d.text = "; ".join(parts)
        assert ok


def test_10_efficiency_arithmetic():
    with criterion(10, "efficiency arithmetic") as d:
        a, b = efficiency(86.02, 30.17), efficiency(64.97, 41.73)
        d.text = f"{a:.4f} vs 2.85, {b:.4f} vs 1.56"
        assert abs(a - 2.85) <= 0.005 and abs(b - 1.56) <= 0.005


def test_11_determinism_and_runtime(tmp_path):
    with criterion(11, "byte-identical reruns; 50 tasks x 3 methods under 60 s") as d:
        data = tmp_path / "tasks.jsonl"
        data.write_text("".join(json.dumps(r) + "\n" for r in make_sim_dataset("choice", 50, seed=0)))
        start = time.perf_counter()
        identical = True
        for method in ("concat", "llm_debate", "sc_cot"):
            outs = []
            for attempt in ("a", "b"):
                out = tmp_path / f"{method}-{attempt}"
                proc = subprocess.run([sys.executable, "-m", "concat_mas", "run", "--dataset", str(data),
                                       "--kind", "choice", "--method", method, "--backend", "sim",
                                       "--seed", "3", "--out", str(out)], capture_output=True, text=True)
                assert proc.returncode == 0, proc.stderr
                outs.append(out)
            for name in ("results.jsonl", "summary.json"):
                identical &= (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
        elapsed = time.perf_counter() - start
        d.text = f"identical={identical}, two full passes in {elapsed:.1f}s"
        assert identical and elapsed < 60


def test_12_prompt_fidelity():
    with criterion(12, "aggregation prompts byte-exact") as d:
        same = {k.value: aggregation_system_prompt(k).encode() == (GOLDEN / f"aggregation_{k.value}_system.txt").read_bytes()
                for k in TaskKind}
        exemplar = aggregation_system_prompt(TaskKind.NUMERIC).splitlines()[-1].endswith("The answer is 140")
        d.text = f"{same}, numeric exemplar present={exemplar}"
        assert all(same.values()) and exemplar


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
