"""Teacher- and student-forcing loops for navigation, supervised QA training,
and the optimizers. Single-writer gradient accumulation: each loop owns its
model's parameter store for the duration of a run.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .encoders import ANSWER_INDEX, encode_step
from .episodegen import Episode, replay_actions
from .errors import EmptyDataset, GoldReplayFailure, NonFiniteGradient
from .gridworld import (
    Action,
    AgentState,
    GridWorld,
    HEADING_VECTORS,
    render_egocentric,
    render_topdown,
    shortest_path,
    step,
)
from .policy import CTRL_REPEAT, CTRL_RETURN, HierPolicy, Model, ParamStore


@dataclass
class TrainConfig:
    forcing: str = "teacher"  # "teacher" | "student"
    epochs: int = 30
    learning_rate: float = 0.003
    optimizer: str = "adam"  # "sgd" | "adam"
    batch_size: int = 8
    max_episode_steps: int = 60
    eval_every: int = 0  # 0 = no mid-training validation
    seed: int = 0
    success_radius: int = 1

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.forcing not in ("teacher", "student"):
            raise ValueError(f"unknown forcing {self.forcing!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


class SGD:
    def __init__(self, store: ParamStore, lr: float):
        self.store = store
        self.lr = lr

    def step(self, scale: float = 1.0) -> None:
        for name, t in self.store.items():
            if t.grad is None:
                continue
            g = t.grad * scale
            if not np.isfinite(g).all():
                raise NonFiniteGradient(f"non-finite gradient in {name}")
            t.data -= self.lr * g
        self.store.zero_grad()
        self.store.version += 1


class AdaptiveMoment:
    """First/second-moment update with bias correction; on a constant
    gradient the per-step parameter delta converges to -lr after warmup."""

    def __init__(self, store: ParamStore, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {n: np.zeros_like(t.data) for n, t in store.items()}
        self._v = {n: np.zeros_like(t.data) for n, t in store.items()}

    def step(self, scale: float = 1.0) -> None:
        self.t += 1
        for name, t in self.store.items():
            g = (t.grad if t.grad is not None else np.zeros_like(t.data)) * scale
            if not np.isfinite(g).all():
                raise NonFiniteGradient(f"non-finite gradient in {name}")
            m = self._m[name] = self.beta1 * self._m[name] + (1 - self.beta1) * g
            v = self._v[name] = self.beta2 * self._v[name] + (1 - self.beta2) * g * g
            mhat = m / (1 - self.beta1**self.t)
            vhat = v / (1 - self.beta2**self.t)
            t.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
        self.store.zero_grad()
        self.store.version += 1


def make_optimizer(store: ParamStore, config: TrainConfig):
    if config.optimizer == "sgd":
        return SGD(store, config.learning_rate)
    return AdaptiveMoment(store, config.learning_rate)


def _pose_key(s: AgentState) -> tuple:
    return (s.x, s.y, s.heading, s.tilt)


def shortest_path_action(world: GridWorld, state: AgentState, goal: tuple[int, int]) -> Action:
    """The action that puts the agent on the shortest path to the goal cell:
    End at the goal, else turn toward (tie to the right) or advance along the
    next path cell. Always available by construction."""
    if state.position == goal:
        return Action.END
    path = shortest_path(world, state.position, goal)
    nx, ny = path[1]
    target = HEADING_VECTORS.index((nx - state.x, ny - state.y))
    delta = (target - state.heading) % 4
    if delta == 0:
        return Action.FORWARD
    return Action.LEFT if delta == 3 else Action.RIGHT


@dataclass
class EpisodeLoss:
    losses: list[float]
    visited: set
    vision_linf: float  # max |vision| seen by the encoder, 0 under mask_vision


def _run_length(gold: Sequence[Action]) -> list[tuple[Action, int]]:
    runs: list[tuple[Action, int]] = []
    for a in gold:
        if runs and runs[-1][0] == a:
            runs[-1] = (a, runs[-1][1] + 1)
        else:
            runs.append((a, 1))
    return runs


def teacher_forcing_episode(model: Model, world: GridWorld, episode: Episode) -> EpisodeLoss:
    """Replay gold actions, accumulating cross-entropy gradients at each step.
    Raises GoldReplayFailure if a gold action is unavailable."""
    if isinstance(model, HierPolicy):
        return _teacher_forcing_hier(model, world, episode)
    lang_states = model.language_states(episode.language)
    hidden = model.init_hidden()
    state = episode.start
    prev: Optional[Action] = None
    terms = []
    visited = set()
    vmax = 0.0
    for gold in episode.gold_actions:
        bundle = encode_step(
            world, state, episode.language, prev, model.mask_vision, model.mask_language
        )
        visited.add(_pose_key(state))
        vmax = max(vmax, float(np.abs(bundle.vision).max()))
        if not bundle.availability[gold]:
            raise GoldReplayFailure(
                f"gold action {Action(gold).name} unavailable in episode {episode.episode_id}"
            )
        out = model.step(bundle, hidden, lang_states)
        terms.append(ad.cross_entropy(out.action_logits, int(gold), bundle.availability))
        hidden = out.next_hidden
        prev = gold
        state = step(world, state, gold)
    total = ad.add_n(terms)
    ad.backward(total)
    return EpisodeLoss([float(t.data) for t in terms], visited, vmax)


def _teacher_forcing_hier(model: HierPolicy, world: GridWorld, episode: Episode) -> EpisodeLoss:
    """Planner supervised once per gold run; controller supervised to repeat
    through the run and return control at its end."""
    lang_states = model.language_states(episode.language)
    h_plan = model.init_hidden()
    state = episode.start
    prev: Optional[Action] = None
    terms = []
    visited = set()
    vmax = 0.0

    def observe(s):
        nonlocal vmax
        b = encode_step(world, s, episode.language, prev, model.mask_vision, model.mask_language)
        visited.add(_pose_key(s))
        vmax = max(vmax, float(np.abs(b.vision).max()))
        return b

    for action, length in _run_length(episode.gold_actions):
        bundle = observe(state)
        if not bundle.availability[action]:
            raise GoldReplayFailure(
                f"gold action {Action(action).name} unavailable in episode {episode.episode_id}"
            )
        out = model.planner_step(bundle, h_plan, lang_states)
        terms.append(ad.cross_entropy(out.action_logits, int(action), bundle.availability))
        h_plan = out.next_hidden
        state = step(world, state, action)
        prev = action
        if action == Action.END:
            break
        h_ctrl = model.init_controller_hidden()  # reset at control transfer
        for i in range(length):
            bundle = observe(state)
            logits, h_ctrl = model.controller_step(bundle, int(action), h_ctrl)
            target = CTRL_REPEAT if i < length - 1 else CTRL_RETURN
            terms.append(ad.cross_entropy(logits, target))
            if target == CTRL_REPEAT:
                state = step(world, state, action)
    total = ad.add_n(terms)
    ad.backward(total)
    return EpisodeLoss([float(t.data) for t in terms], visited, vmax)


def student_forcing_episode(
    model: Model, world: GridWorld, episode: Episode, rng, max_steps: int = 60
) -> EpisodeLoss:
    """Sample actions from the masked policy; the supervision target is
    recomputed every step as the current shortest-path action."""
    if isinstance(model, HierPolicy):
        return _student_forcing_hier(model, world, episode, rng, max_steps)
    lang_states = model.language_states(episode.language)
    hidden = model.init_hidden()
    state = episode.start
    prev: Optional[Action] = None
    terms = []
    visited = set()
    vmax = 0.0
    for _ in range(max_steps):
        bundle = encode_step(
            world, state, episode.language, prev, model.mask_vision, model.mask_language
        )
        visited.add(_pose_key(state))
        vmax = max(vmax, float(np.abs(bundle.vision).max()))
        out = model.step(bundle, hidden, lang_states)
        target = shortest_path_action(world, state, episode.goal)
        terms.append(ad.cross_entropy(out.action_logits, int(target), bundle.availability))
        probs = ad.masked_softmax(out.action_logits, bundle.availability).data
        action = Action(int(rng.choice(len(probs), p=probs / probs.sum())))
        hidden = out.next_hidden
        prev = action
        state = step(world, state, action)
        if action == Action.END:
            break
    total = ad.add_n(terms)
    ad.backward(total)
    return EpisodeLoss([float(t.data) for t in terms], visited, vmax)


def _student_forcing_hier(
    model: HierPolicy, world: GridWorld, episode: Episode, rng, max_steps: int
) -> EpisodeLoss:
    """Planner sampled when it holds control; controller sampled per step with
    'repeat' correct iff the shortest-path action is unchanged."""
    lang_states = model.language_states(episode.language)
    h_plan = model.init_hidden()
    h_ctrl = model.init_controller_hidden()
    state = episode.start
    prev: Optional[Action] = None
    current: Optional[Action] = None
    terms = []
    visited = set()
    vmax = 0.0
    steps = 0
    while steps < max_steps:
        bundle = encode_step(
            world, state, episode.language, prev, model.mask_vision, model.mask_language
        )
        visited.add(_pose_key(state))
        vmax = max(vmax, float(np.abs(bundle.vision).max()))
        target = shortest_path_action(world, state, episode.goal)
        if current is None:
            out = model.planner_step(bundle, h_plan, lang_states)
            terms.append(ad.cross_entropy(out.action_logits, int(target), bundle.availability))
            probs = ad.masked_softmax(out.action_logits, bundle.availability).data
            action = Action(int(rng.choice(len(probs), p=probs / probs.sum())))
            h_plan = out.next_hidden
            state = step(world, state, action)
            prev = action
            steps += 1
            if action == Action.END:
                break
            current = action
            h_ctrl = model.init_controller_hidden()
            continue
        logits, h_ctrl = model.controller_step(bundle, int(current), h_ctrl)
        ctrl_target = CTRL_REPEAT if target == current else CTRL_RETURN
        terms.append(ad.cross_entropy(logits, ctrl_target))
        p = ad.softmax(logits).data
        decision = int(rng.choice(2, p=p / p.sum()))
        if decision == CTRL_REPEAT and bundle.availability[current]:
            state = step(world, state, current)
            prev = current
            steps += 1
        else:
            current = None
    total = ad.add_n(terms)
    ad.backward(total)
    return EpisodeLoss([float(t.data) for t in terms], visited, vmax)


def train_nav(
    model: Model,
    worlds: dict[int, GridWorld],
    episodes: Sequence[Episode],
    config: TrainConfig,
    val_splits: Optional[dict[str, Sequence[Episode]]] = None,
) -> tuple[list[dict], set]:
    """Returns (log rows, set of states visited across training)."""
    config.validate()
    if not episodes:
        raise EmptyDataset("no navigation episodes to train on")
    opt = make_optimizer(model.params, config)
    log: list[dict] = []
    visited_all: set = set()
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, 7, epoch]).permutation(len(episodes))
        losses: list[float] = []
        vmax = 0.0
        in_batch = 0
        batch_steps = 0
        for pos, idx in enumerate(order):
            ep = episodes[int(idx)]
            world = worlds[ep.world_id]
            if config.forcing == "teacher":
                res = teacher_forcing_episode(model, world, ep)
            else:
                rng = np.random.default_rng([config.seed, 8, epoch, int(idx)])
                res = student_forcing_episode(model, world, ep, rng, config.max_episode_steps)
            losses.extend(res.losses)
            visited_all |= res.visited
            vmax = max(vmax, res.vision_linf)
            in_batch += 1
            batch_steps += len(res.losses)
            if in_batch == config.batch_size or pos == len(order) - 1:
                opt.step(scale=1.0 / max(batch_steps, 1))
                in_batch = 0
                batch_steps = 0
        row = {
            "epoch": epoch,
            "split": "train",
            "forcing": config.forcing,
            "loss": float(np.mean(losses)),
            "vision_linf": vmax,
        }
        log.append(row)
        if val_splits and config.eval_every and (epoch + 1) % config.eval_every == 0:
            from .evaluation import GreedyAgent, rollout

            agent = GreedyAgent(model)
            for split_name, split_eps in val_splits.items():
                succ = [
                    rollout(
                        agent,
                        worlds[e.world_id],
                        e,
                        max_steps=config.max_episode_steps,
                        radius=config.success_radius,
                    ).success
                    for e in split_eps
                ]
                log.append(
                    {
                        "epoch": epoch,
                        "split": split_name,
                        "forcing": config.forcing,
                        "success_rate": float(np.mean(succ)) if succ else 0.0,
                        "n": len(succ),
                    }
                )
    if not model.params.all_finite():
        raise NonFiniteGradient("parameters became non-finite during training")
    return log, visited_all


# ---------------------------------------------------------------------------
# question answering


def qa_vision_input(model: Model, world: GridWorld, episode: Episode) -> np.ndarray:
    """Ground-truth overhead map for the top-down model; the last n frames
    along the gold trajectory for the attention model (earliest frame repeated
    when the trajectory is shorter)."""
    if model.kind == "qa_topdown":
        return render_topdown(world)
    n = model.config.n_frames
    states = replay_actions(world, episode.start, episode.gold_actions)
    if len(states) >= n:
        tail = states[-n:]
    else:
        tail = [states[0]] * (n - len(states)) + list(states)
    return np.stack([render_egocentric(world, s) for s in tail])


def qa_episode_loss(model: Model, world: GridWorld, episode: Episode) -> float:
    vision = qa_vision_input(model, world, episode)
    logits = model.forward(vision, episode.language)
    loss = ad.cross_entropy(logits, ANSWER_INDEX[episode.answer])
    ad.backward(loss)
    return float(loss.data)


def train_qa(
    model: Model,
    worlds: dict[int, GridWorld],
    episodes: Sequence[Episode],
    config: TrainConfig,
    val_splits: Optional[dict[str, Sequence[Episode]]] = None,
) -> list[dict]:
    """Minibatch cross-entropy over the answer vocabulary. QA models take no
    previous-action input anywhere."""
    config.validate()
    episodes = [e for e in episodes if e.answer is not None]
    if not episodes:
        raise EmptyDataset("no question episodes to train on")
    opt = make_optimizer(model.params, config)
    log: list[dict] = []
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, 9, epoch]).permutation(len(episodes))
        losses = []
        in_batch = 0
        for pos, idx in enumerate(order):
            ep = episodes[int(idx)]
            losses.append(qa_episode_loss(model, worlds[ep.world_id], ep))
            in_batch += 1
            if in_batch == config.batch_size or pos == len(order) - 1:
                opt.step(scale=1.0 / in_batch)
                in_batch = 0
        row = {"epoch": epoch, "split": "train", "loss": float(np.mean(losses))}
        log.append(row)
        if val_splits and config.eval_every and (epoch + 1) % config.eval_every == 0:
            from .evaluation import qa_accuracy

            for split_name, split_eps in val_splits.items():
                acc = qa_accuracy(model, worlds, split_eps)
                log.append({"epoch": epoch, "split": split_name, "accuracy": acc, "n": len(split_eps)})
    if not model.params.all_finite():
        raise NonFiniteGradient("parameters became non-finite during training")
    return log
