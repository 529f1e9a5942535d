"""Greedy episode rollout, QA scoring, and aggregation into paper-shaped
result tables (per-variant rows, unimodal-minus-baseline delta row, and
better-than-full flags).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .ablation import MajorityAnswerer, random_100_baseline, random_forward_baseline
from .encoders import ANSWER_TOKENS, encode_step
from .episodegen import Episode
from .errors import EmptyDataset
from .gridworld import Action, GridWorld, distance_field, step
from .policy import CTRL_REPEAT, HierPolicy, Model
from .training import qa_vision_input


@dataclass
class EpisodeResult:
    episode_id: int
    variant: str
    success: bool
    d_T: int
    d_min: int
    steps: int
    answer: Optional[str] = None
    answer_correct: Optional[bool] = None

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _greedy_masked(logits: np.ndarray, avail: np.ndarray) -> Action:
    work = np.where(avail, logits, -np.inf)
    return Action(int(np.argmax(work)))


class GreedyAgent:
    """Deterministic argmax rollout policy for flat or hierarchical models."""

    def __init__(self, model: Model):
        self.model = model
        self.variant = "full"

    def reset(self, world: GridWorld, episode: Episode) -> None:
        with ad.no_grad():
            self._lang = self.model.language_states(episode.language)
        self._hidden = self.model.init_hidden()
        self._prev: Optional[Action] = None
        self._episode = episode
        self._current: Optional[Action] = None  # hier: action under repetition
        if isinstance(self.model, HierPolicy):
            self._h_ctrl = self.model.init_controller_hidden()

    def act(self, world: GridWorld, state) -> Action:
        m = self.model
        with ad.no_grad():
            bundle = encode_step(
                world, state, self._episode.language, self._prev, m.mask_vision, m.mask_language
            )
            if not isinstance(m, HierPolicy):
                out = m.step(bundle, self._hidden, self._lang)
                self._hidden = out.next_hidden
                action = _greedy_masked(out.action_logits.data, bundle.availability)
                self._prev = action
                return action
            if self._current is not None:
                logits, self._h_ctrl = m.controller_step(bundle, int(self._current), self._h_ctrl)
                if (
                    int(np.argmax(logits.data)) == CTRL_REPEAT
                    and bundle.availability[self._current]
                ):
                    self._prev = self._current
                    return self._current
                self._current = None  # control returns to the planner
            out = m.planner_step(bundle, self._hidden, self._lang)
            self._hidden = out.next_hidden
            action = _greedy_masked(out.action_logits.data, bundle.availability)
            self._prev = action
            if action != Action.END:
                self._current = action
                self._h_ctrl = m.init_controller_hidden()
            return action


class ScriptedAgent:
    """Replays a baseline trajectory computed from (world, start, rng) only."""

    def __init__(self, name: str, seed: int = 0):
        if name == "random_forward":
            self._fn = random_forward_baseline
        elif name == "random_100":
            self._fn = random_100_baseline
        else:
            raise ValueError(f"unknown scripted baseline {name!r}")
        self.variant = name
        self.seed = seed

    def reset(self, world: GridWorld, episode: Episode) -> None:
        rng = np.random.default_rng([self.seed, 11, episode.episode_id])
        self._trajectory = self._fn(world, episode.start, rng)
        self._i = 0

    def act(self, world: GridWorld, state) -> Action:
        a = self._trajectory[self._i] if self._i < len(self._trajectory) else Action.END
        self._i += 1
        return a


def rollout(agent, world: GridWorld, episode: Episode, max_steps: int = 60, radius: int = 1) -> EpisodeResult:
    """Run one navigation episode to End or the step cap, tracking final and
    minimum geodesic distance to the goal."""
    dist = distance_field(world, episode.goal)
    agent.reset(world, episode)
    state = episode.start
    d = int(dist[state.y, state.x])
    d_min = d
    steps = 0
    for _ in range(max_steps):
        action = agent.act(world, state)
        state = step(world, state, action)
        steps += 1
        d = int(dist[state.y, state.x])
        d_min = min(d_min, d)
        if action == Action.END:
            break
    return EpisodeResult(
        episode_id=episode.episode_id,
        variant=getattr(agent, "variant", "full"),
        success=d <= radius,
        d_T=d,
        d_min=d_min,
        steps=steps,
    )


def rollout_split(agent, worlds, episodes, max_steps=60, radius=1) -> list[EpisodeResult]:
    return [
        rollout(agent, worlds[ep.world_id], ep, max_steps=max_steps, radius=radius)
        for ep in episodes
        if ep.task_kind == "nav"
    ]


def predict_answer(model, worlds, episode: Episode) -> str:
    if hasattr(model, "predict"):  # constant/scripted answerers
        return model.predict(episode)
    with ad.no_grad():
        logits = model.forward(qa_vision_input(model, worlds[episode.world_id], episode), episode.language)
    return ANSWER_TOKENS[int(np.argmax(logits.data))]


def qa_evaluate(model, worlds, episodes, variant: str = "full") -> list[EpisodeResult]:
    """Top-1 accuracy results given gold navigation context as vision."""
    episodes = [e for e in episodes if e.answer is not None]
    if not episodes:
        raise EmptyDataset("no question episodes to evaluate")
    results = []
    for ep in episodes:
        pred = predict_answer(model, worlds, ep)
        results.append(
            EpisodeResult(
                episode_id=ep.episode_id,
                variant=variant,
                success=pred == ep.answer,
                d_T=0,
                d_min=0,
                steps=0,
                answer=pred,
                answer_correct=pred == ep.answer,
            )
        )
    return results


def qa_accuracy(model, worlds, episodes) -> float:
    res = qa_evaluate(model, worlds, episodes)
    return float(np.mean([r.answer_correct for r in res]))


# ---------------------------------------------------------------------------
# aggregation

NAV_METRICS = ("success_rate", "d_T", "d_min", "steps")
QA_METRICS = ("accuracy",)

UNIMODAL = ("a", "av", "al")


@dataclass
class ResultTable:
    """Mean metrics keyed by (variant, split), plus episode counts."""

    rows: dict = field(default_factory=dict)  # (variant, split) -> {metric: mean}
    counts: dict = field(default_factory=dict)

    def add(self, variant: str, split: str, results: Sequence[EpisodeResult]) -> None:
        if not results:
            return
        qa = results[0].answer_correct is not None
        if qa:
            row = {"accuracy": float(np.mean([r.answer_correct for r in results]))}
        else:
            row = {
                "success_rate": float(np.mean([r.success for r in results])),
                "d_T": float(np.mean([r.d_T for r in results])),
                "d_min": float(np.mean([r.d_min for r in results])),
                "steps": float(np.mean([r.steps for r in results])),
            }
        self.rows[(variant, split)] = row
        self.counts[(variant, split)] = len(results)

    def splits(self) -> list[str]:
        return sorted({s for (_, s) in self.rows})

    def variants(self) -> list[str]:
        return list(dict.fromkeys(v for (v, _) in self.rows))

    def get(self, variant: str, split: str, metric: str) -> Optional[float]:
        return self.rows.get((variant, split), {}).get(metric)


def delta_unimodal_minus_baseline(table: ResultTable, baseline: str, metric: str, split: str) -> Optional[float]:
    """Best unimodal value minus the baseline value for one column. 'Best' is
    max for success/accuracy metrics and min for distance metrics."""
    uni = [table.get(v, split, metric) for v in UNIMODAL]
    uni = [u for u in uni if u is not None]
    base = table.get(baseline, split, metric)
    if not uni or base is None:
        return None
    best = min(uni) if metric in ("d_T", "d_min") else max(uni)
    return best - base


def render_table_csv(table: ResultTable, task: str, baseline: str) -> str:
    """Paper-shaped CSV: rows full, baseline, a, av, al, delta; a flag column
    marks unimodal rows that beat the full model on the headline metric.
    Distances are in cells, not meters."""
    metrics = QA_METRICS if task == "qa" else NAV_METRICS
    headline = "accuracy" if task == "qa" else "success_rate"
    splits = table.splits()
    header = ["variant"]
    for s in splits:
        header += [f"{s}:{m}" for m in metrics] + [f"{s}:n"]
    header.append("beats_full")
    lines = [",".join(header)]
    order = ["full", baseline, "a", "av", "al"]
    order += [v for v in table.variants() if v not in order]
    for variant in order:
        if not any((variant, s) in table.rows for s in splits):
            continue
        cells = [variant]
        for s in splits:
            for m in metrics:
                v = table.get(variant, s, m)
                cells.append("" if v is None else f"{v:.4f}")
            cells.append(str(table.counts.get((variant, s), "")))
        beats = ""
        if variant in UNIMODAL:
            for s in splits:
                v, fv = table.get(variant, s, headline), table.get("full", s, headline)
                if v is not None and fv is not None and v > fv:
                    beats = "*"
        cells.append(beats)
        lines.append(",".join(cells))
    cells = ["delta_uni_minus_base"]
    for s in splits:
        for m in metrics:
            d = delta_unimodal_minus_baseline(table, baseline, m, s)
            cells.append("" if d is None else f"{d:+.4f}")
        cells.append("")
    cells.append("")
    lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
