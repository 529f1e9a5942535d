"""Dataset diagnostics: conditional action-transition matrix, marginal action
distribution, per-question answer distributions, and chance rates. Pure
functions of dataset files; no model involvement.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .encoders import DEFAULT_VOCAB
from .episodegen import ANSWERS_BY_QTYPE, Episode
from .errors import EmptyDataset
from .gridworld import ACTION_NAMES, Action, N_ACTIONS


@dataclass
class TransitionMatrix:
    matrix: np.ndarray  # (6,6) row-stochastic where row_counts > 0
    marginals: np.ndarray  # (6,) distribution over transition targets
    row_counts: np.ndarray  # (6,) int
    total: int

    def to_json(self) -> dict:
        return {
            "actions": list(ACTION_NAMES),
            "matrix": [[float(v) for v in row] for row in self.matrix],
            "marginals": [float(v) for v in self.marginals],
            "row_counts": [int(v) for v in self.row_counts],
            "total": self.total,
        }


def transition_matrix(trajectories: Sequence[Sequence[Action]]) -> TransitionMatrix:
    """Empirical P(next action | previous action) over consecutive pairs.
    Marginals are the row-count-weighted average of the conditional rows,
    i.e. the distribution over transition targets."""
    counts = np.zeros((N_ACTIONS, N_ACTIONS), dtype=np.int64)
    for traj in trajectories:
        for prev, nxt in zip(traj[:-1], traj[1:]):
            counts[int(prev), int(nxt)] += 1
    total = int(counts.sum())
    if total == 0:
        raise EmptyDataset("no action transitions in the trajectory set")
    row_counts = counts.sum(axis=1)
    matrix = np.zeros_like(counts, dtype=np.float64)
    nz = row_counts > 0
    matrix[nz] = counts[nz] / row_counts[nz, None]
    marginals = counts.sum(axis=0) / total
    return TransitionMatrix(matrix=matrix, marginals=marginals, row_counts=row_counts, total=total)


def answer_distribution(episodes: Sequence[Episode]) -> dict:
    """Per question-group empirical answer distributions and majority
    proportions; groups are identical question token sequences."""
    groups: dict[tuple, dict] = {}
    for ep in episodes:
        if ep.answer is None:
            continue
        g = groups.setdefault(
            ep.language,
            {"question": " ".join(DEFAULT_VOCAB.decode(ep.language)), "question_type": ep.question_type, "counts": {}},
        )
        g["counts"][ep.answer] = g["counts"].get(ep.answer, 0) + 1
    if not groups:
        raise EmptyDataset("no answered questions in the dataset")
    out = {}
    for key, g in groups.items():
        n = sum(g["counts"].values())
        best = max(g["counts"].items(), key=lambda kv: (kv[1], kv[0]))
        out[g["question"]] = {
            "question_type": g["question_type"],
            "counts": dict(sorted(g["counts"].items())),
            "n": n,
            "majority_answer": best[0],
            "majority_proportion": best[1] / n,
        }
    return out


def chance_rates(episodes: Sequence[Episode]) -> dict:
    """Uniform-guess accuracy per question type present in the dataset, and
    the blend over the dataset's question-type mix."""
    per_type: dict[str, float] = {}
    counts: dict[str, int] = {}
    for ep in episodes:
        if ep.answer is None or ep.question_type is None:
            continue
        per_type[ep.question_type] = 1.0 / len(ANSWERS_BY_QTYPE[ep.question_type])
        counts[ep.question_type] = counts.get(ep.question_type, 0) + 1
    total = sum(counts.values())
    blended = (
        sum(per_type[q] * n for q, n in counts.items()) / total if total else None
    )
    return {"per_type": per_type, "type_counts": counts, "blended": blended}


def report_bias(
    episodes: Sequence[Episode],
    trajectories: Optional[Sequence[Sequence[Action]]] = None,
) -> dict:
    """One structured document bundling navigation transition statistics and
    question answer distributions; sections are marked absent when their
    inputs are empty."""
    report: dict = {}
    if trajectories:
        report["nav"] = transition_matrix(trajectories).to_json()
    else:
        report["nav"] = None
    answered = [ep for ep in episodes if ep.answer is not None]
    if answered:
        report["qa"] = {
            "answers": answer_distribution(answered),
            "chance": chance_rates(answered),
        }
    else:
        report["qa"] = None
    return report


def transition_csv(tm: TransitionMatrix) -> str:
    lines = ["prev\\next," + ",".join(ACTION_NAMES)]
    for i, name in enumerate(ACTION_NAMES):
        lines.append(name + "," + ",".join(f"{v:.6f}" for v in tm.matrix[i]))
    lines.append("marginal," + ",".join(f"{v:.6f}" for v in tm.marginals))
    return "\n".join(lines) + "\n"


def parse_transition_csv(text: str) -> tuple[np.ndarray, np.ndarray]:
    lines = [l for l in text.strip().split("\n")]
    rows = [list(map(float, l.split(",")[1:])) for l in lines[1 : 1 + N_ACTIONS]]
    marg = list(map(float, lines[1 + N_ACTIONS].split(",")[1:]))
    return np.array(rows), np.array(marg)
