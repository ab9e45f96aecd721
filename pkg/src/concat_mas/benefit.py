"""Theory-of-Mind collaboration benefit predictor and its exact Bayesian reference.

The production predictor is the linearized challenger/supporter heuristic.
``exact_euc``, ``correction_threshold`` and ``taylor_benefit`` are the exact
expected-utility model it was derived from; they back the property checks
and can also be selected as the predictor (``predictor="exact"``).
"""
from __future__ import annotations

import enum
from typing import Callable, Mapping, Optional, Sequence

from .core import AgentId, AgentState

BenefitMatrix = dict  # {(source j, target k): benefit}, j != k


class DegenerateBelief(ValueError):
    """Posterior undefined: both hypotheses have zero joint probability."""


class Relation(str, enum.Enum):
    SUPPORTER = "supporter"
    CHALLENGER = "challenger"


def _check_unit(**values: float) -> None:
    for name, v in values.items():
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")


def classify_relation(s_jk: float, theta_sim: float) -> Relation:
    _check_unit(s_jk=s_jk, theta_sim=theta_sim)
    return Relation.SUPPORTER if s_jk >= theta_sim else Relation.CHALLENGER


def effective_signal(c_j: float, s_jk: float, rel: Relation) -> float:
    """Source confidence scaled by agreement (supporter) or disagreement (challenger)."""
    _check_unit(c_j=c_j, s_jk=s_jk)
    if rel is Relation.SUPPORTER:
        return c_j * s_jk
    return c_j * (1.0 - s_jk)


def p_stay(c_k: float, c_hat_j: float) -> float:
    """Beta-Binomial posterior mean that the focal agent keeps its answer.

    Confidence counts as 2*c_k prior successes, the challenge as 2*c_hat_j
    counter-evidence, both on top of a uniform Beta(1, 1).
    """
    _check_unit(c_k=c_k, c_hat_j=c_hat_j)
    return (1.0 + 2.0 * c_k) / (2.0 + 2.0 * c_k + 2.0 * c_hat_j)


def benefit_challenger(c_k: float, c_hat_j: float, alpha: float = 0.2) -> float:
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    correction_gain = 4.0 * c_k * (1.0 - c_k) * c_hat_j
    inertia = alpha * p_stay(c_k, c_hat_j)
    openness = alpha * (1.0 - c_k)
    return correction_gain - inertia + openness


def benefit_supporter(c_k: float, c_hat_j: float, alpha: float = 0.2) -> float:
    _check_unit(c_k=c_k, c_hat_j=c_hat_j)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return alpha * (c_hat_j - c_k)


def correction_threshold(c_k: float) -> float:
    """Smallest challenger signal for which switching raises expected correctness."""
    _check_unit(c_k=c_k)
    return c_k * c_k / (1.0 - 2.0 * c_k + 2.0 * c_k * c_k)


def exact_euc(c_k: float, c_hat_j: float) -> float:
    """Exact expected utility of communication for a challenger.

    The focal agent (prior c_k on its own answer) observes a dissenting
    signal of strength c_hat_j and weighs the two hypotheses by Bayes' rule.
    The value is the posterior probability of the challenger's answer minus
    the focal agent's pre-communication expected correctness c_k. It is
    positive exactly above ``correction_threshold(c_k)``, zero on it, and
    linearizes to ``taylor_benefit`` around c_hat_j = 0.5.

    Inputs on the boundary {0, 1} are rejected; the posterior degenerates there.
    """
    _check_unit(c_k=c_k, c_hat_j=c_hat_j)
    if c_k in (0.0, 1.0) or c_hat_j in (0.0, 1.0):
        raise DegenerateBelief(f"exact EUC undefined on the boundary (c_k={c_k}, c_hat_j={c_hat_j})")
    joint_stay = c_k * (1.0 - c_hat_j)
    joint_switch = (1.0 - c_k) * c_hat_j
    z = joint_stay + joint_switch
    if z == 0.0:
        raise DegenerateBelief("normalizer is zero")
    return joint_switch / z - c_k


def taylor_benefit(c_k: float, c_hat_j: float) -> float:
    """First-order expansion of ``exact_euc`` around c_hat_j = 0.5."""
    _check_unit(c_k=c_k, c_hat_j=c_hat_j)
    return (1.0 - 2.0 * c_k) + 4.0 * c_k * (1.0 - c_k) * (c_hat_j - 0.5)


def tom_predict(
    target: AgentState,
    source: AgentState,
    alpha: float,
    theta_sim: float,
    similarity: Callable[[Optional[str], Optional[str]], float],
    predictor: str = "heuristic",
) -> float:
    """Predicted benefit of ``target`` reading ``source``'s answer."""
    s_jk = similarity(source.normalized_answer, target.normalized_answer)
    rel = classify_relation(s_jk, theta_sim)
    c_hat = effective_signal(source.confidence, s_jk, rel)
    c_k = target.confidence
    if rel is Relation.SUPPORTER:
        return benefit_supporter(c_k, c_hat, alpha)
    if predictor == "exact":
        # clamp into the open interval; the exact model is undefined on the edges
        eps = 1e-6
        return exact_euc(min(max(c_k, eps), 1 - eps), min(max(c_hat, eps), 1 - eps))
    return benefit_challenger(c_k, c_hat, alpha)


def predict_benefits(
    leaders: Sequence[AgentId],
    states: Sequence[AgentState],
    alpha: float,
    theta_sim: float,
    similarity: Callable[[Optional[str], Optional[str]], float],
    predictor: str = "heuristic",
) -> BenefitMatrix:
    """Benefit for every ordered leader pair (j, k), j != k, in lexicographic order."""
    out: BenefitMatrix = {}
    for j in sorted(leaders):
        for k in sorted(leaders):
            if j == k:
                continue
            out[(j, k)] = tom_predict(states[k], states[j], alpha, theta_sim, similarity, predictor)
    return out


def benefits_to_json(b: Mapping) -> list:
    return [[j, k, v] for (j, k), v in sorted(b.items())]


def benefits_from_json(rows: list) -> BenefitMatrix:
    return {(int(j), int(k)): float(v) for j, k, v in rows}
