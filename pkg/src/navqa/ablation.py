"""Input-zeroing ablation harness and the scripted baselines.

The four variants change model inputs only, so parameter counts never move.
Scripted baselines receive the world, a start pose, an rng, and the
availability mask; by construction they cannot consult vision, language, or
learned parameters.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .encoders import ANSWER_TOKENS
from .episodegen import Episode
from .errors import EmptyDataset
from .gridworld import Action, AgentState, GridWorld, available_actions, step
from .policy import Model

# variant name -> (mask_vision, mask_language)
VARIANTS = {
    "full": (False, False),
    "a": (True, True),
    "av": (False, True),
    "al": (True, False),
}

SCRIPTED_BASELINES = ("random_forward", "random_100")


@dataclass(frozen=True)
class AblationSpec:
    variant: str  # "full" | "a" | "av" | "al"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def mask_vision(self) -> bool:
        return VARIANTS[self.variant][0]

    @property
    def mask_language(self) -> bool:
        return VARIANTS[self.variant][1]


def apply_ablation(model: Model, spec: AblationSpec) -> Model:
    """A view of the model whose encoder always applies the variant's masks;
    the parameter store is shared, so counts are identical."""
    return model.with_masks(spec.mask_vision, spec.mask_language)


def random_forward_baseline(
    world: GridWorld, start: AgentState, rng, max_steps: int = 60
) -> list[Action]:
    """Pick a random initial direction, then take up to five forward actions,
    turning right whenever forward is unavailable."""
    actions: list[Action] = []
    state = start
    for _ in range(int(rng.integers(4))):
        actions.append(Action.RIGHT)
        state = step(world, state, Action.RIGHT)
    forwards = 0
    while forwards < 5 and len(actions) < max_steps:
        if available_actions(world, state)[Action.FORWARD]:
            actions.append(Action.FORWARD)
            state = step(world, state, Action.FORWARD)
            forwards += 1
        else:
            actions.append(Action.RIGHT)
            state = step(world, state, Action.RIGHT)
    actions.append(Action.END)
    return actions


def random_100_baseline(
    world: GridWorld, start: AgentState, rng, n_actions: int = 100
) -> list[Action]:
    """Execute n uniformly random available navigation actions (End excluded
    until the end), then terminate."""
    actions: list[Action] = []
    state = start
    for _ in range(n_actions):
        mask = available_actions(world, state)
        mask[Action.END] = False
        choices = np.flatnonzero(mask)
        a = Action(int(choices[rng.integers(len(choices))]))
        actions.append(a)
        state = step(world, state, a)
    actions.append(Action.END)
    return actions


class MajorityAnswerer:
    """Constant answerer: per question type, the most frequent training
    answer, ties broken by answer-vocabulary index."""

    kind = "majority"

    def __init__(self):
        self._by_qtype: dict[str, str] = {}

    def fit(self, episodes) -> "MajorityAnswerer":
        counts: dict[str, Counter] = {}
        for ep in episodes:
            if ep.answer is None:
                continue
            counts.setdefault(ep.question_type, Counter())[ep.answer] += 1
        if not counts:
            raise EmptyDataset("no answers to fit the majority baseline on")
        for qtype, ctr in counts.items():
            best, best_n = ANSWER_TOKENS[0], -1
            for token in ANSWER_TOKENS:  # vocabulary order breaks ties
                if ctr.get(token, 0) > best_n:
                    best, best_n = token, ctr.get(token, 0)
            self._by_qtype[qtype] = best
        return self

    def predict(self, episode: Episode) -> str:
        if episode.question_type in self._by_qtype:
            return self._by_qtype[episode.question_type]
        # unseen question type: fall back to the overall first fitted answer
        return next(iter(self._by_qtype.values()))


def majority_baseline(episodes) -> MajorityAnswerer:
    return MajorityAnswerer().fit(episodes)
