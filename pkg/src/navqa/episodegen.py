"""Procedural generation: worlds, navigation episodes with templated
instructions, question episodes with answer balancing, entropy filtering,
and train/val splitting.

Determinism contract: every random draw comes from a stream seeded by
(spec.seed, stream tag, index), so identical specs produce byte-identical
datasets and generation order never matters.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .encoders import DEFAULT_VOCAB
from .errors import ConfigError, EmptyDataset, GenerationFailure
from .gridworld import (
    Action,
    AgentState,
    CANONICAL_COLORS,
    COLORS,
    FLOOR,
    GridWorld,
    HEADING_VECTORS,
    OBJECT_TYPES,
    ObjectInstance,
    WALL,
    available_actions,
    geodesic_distance,
    shortest_path,
    step,
)

QUESTION_TYPES = ("existence", "counting", "spatial", "color")

# Answer support per question type; randomized balancing fills these evenly.
ANSWERS_BY_QTYPE = {
    "existence": ("yes", "no"),
    "counting": ("0", "1", "2", "3"),
    "spatial": ("yes", "no"),
    "color": COLORS,
}

# Spatial-relation vocabulary: which types can sit in/on which.
CONTAINABLE_TYPES = ("lamp", "microwave", "garbage_can")
CONTAINER_TYPES = ("table", "counter", "sofa", "bathtub", "fridge")

# Natural-mode type frequencies (real homes have many tables, few bathtubs);
# randomized mode samples types uniformly instead.
NATURAL_TYPE_WEIGHTS = {
    "table": 3.0,
    "counter": 2.5,
    "lamp": 2.0,
    "sofa": 1.5,
    "garbage_can": 1.5,
    "microwave": 1.0,
    "fridge": 1.0,
    "bathtub": 0.5,
}

_WORLD_RETRIES = 50
FORWARD_COUNT_CAP = 20  # largest "go forward <n>" token


@dataclass
class GenSpec:
    """Everything the generator needs; serializable as a flat JSON object."""

    seed: int = 0
    width: int = 13
    height: int = 13
    worlds_seen: int = 8
    worlds_unseen: int = 4
    room_count: tuple[int, int] = (2, 4)
    object_count: tuple[int, int] = (4, 9)
    beta: float = 0.8
    balance_mode: str = "randomized"  # "randomized" | "natural"
    entropy_threshold: float = 1.0
    wall_bias: float = 0.8
    container_prob: float = 0.6
    val_seen_fraction: float = 0.15
    min_goal_distance: int = 4
    max_goal_distance: int = 0  # 0 = unbounded
    # only admit nav episodes whose gold path arrives head-on against a wall;
    # a deliberate trajectory regularity for bias-probing datasets
    goal_face_wall: bool = False
    nav_per_world: int = 0
    eqa_offsets: tuple[int, ...] = ()
    eqa_per_world: int = 0
    eqa_qa_per_world: int = 0
    qa_seen: dict = field(default_factory=dict)  # qtype -> question count
    qa_unseen: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must be in [0,1], got {self.beta}")
        if not 0.0 < self.entropy_threshold <= 1.0:
            raise ConfigError(f"entropy_threshold must be in (0,1], got {self.entropy_threshold}")
        if self.balance_mode not in ("randomized", "natural"):
            raise ConfigError(f"unknown balance_mode {self.balance_mode!r}")
        for d in (self.qa_seen, self.qa_unseen):
            for q in d:
                if q not in QUESTION_TYPES:
                    raise ConfigError(f"unknown question type {q!r}")
        if self.width < 5 or self.height < 5:
            raise ConfigError("world must be at least 5x5")

    def to_json(self) -> dict:
        d = dict(self.__dict__)
        d["room_count"] = list(self.room_count)
        d["object_count"] = list(self.object_count)
        d["eqa_offsets"] = list(self.eqa_offsets)
        return d

    @staticmethod
    def from_json(d: dict) -> "GenSpec":
        known = set(GenSpec().__dict__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kwargs = dict(d)
        for k in ("room_count", "object_count", "eqa_offsets"):
            if k in kwargs:
                kwargs[k] = tuple(kwargs[k])
        spec = GenSpec(**kwargs)
        spec.validate()
        return spec

    @staticmethod
    def from_file(path) -> "GenSpec":
        try:
            with open(path) as f:
                d = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: line {e.lineno}: {e.msg}") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        return GenSpec.from_json(d)


@dataclass
class Episode:
    """One task instance. Nav episodes carry a goal cell and gold actions;
    QA episodes carry an answer token (EQA-style ones carry both)."""

    episode_id: int
    world_id: int
    task_kind: str  # "nav" | "qa"
    start: AgentState
    goal: Optional[tuple[int, int]]
    answer: Optional[str]
    gold_actions: tuple[Action, ...]
    language: tuple[int, ...]
    question_type: Optional[str]
    split: str
    t_offset: Optional[int] = None

    def to_json(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "world_id": self.world_id,
            "task_kind": self.task_kind,
            "start": self.start.to_json(),
            "goal": list(self.goal) if self.goal is not None else None,
            "answer": self.answer,
            "gold_actions": [int(a) for a in self.gold_actions],
            "language": list(self.language),
            "question_type": self.question_type,
            "split": self.split,
            "t_offset": self.t_offset,
        }

    @staticmethod
    def from_json(d: dict) -> "Episode":
        return Episode(
            episode_id=d["episode_id"],
            world_id=d["world_id"],
            task_kind=d["task_kind"],
            start=AgentState.from_json(d["start"]),
            goal=tuple(d["goal"]) if d["goal"] is not None else None,
            answer=d["answer"],
            gold_actions=tuple(Action(a) for a in d["gold_actions"]),
            language=tuple(d["language"]),
            question_type=d["question_type"],
            split=d["split"],
            t_offset=d.get("t_offset"),
        )


# ---------------------------------------------------------------------------
# world generation


def _carve_rooms(width, height, target_rooms, rng):
    """Recursive-division layout: wall lines on even coordinates, doors on odd
    ones, which keeps every door open no matter how later splits land."""
    grid = [[FLOOR] * width for _ in range(height)]
    for x in range(width):
        grid[0][x] = WALL
        grid[height - 1][x] = WALL
    for y in range(height):
        grid[y][0] = WALL
        grid[y][width - 1] = WALL

    regions = [(1, 1, width - 2, height - 2)]  # inclusive x0,y0,x1,y1
    doors: list[tuple[int, int]] = []
    while len(regions) < target_rooms:
        splittable = []
        for idx, (x0, y0, x1, y1) in enumerate(regions):
            v_walls = [x for x in range(x0 + 1, x1) if x % 2 == 0]
            h_walls = [y for y in range(y0 + 1, y1) if y % 2 == 0]
            if v_walls or h_walls:
                splittable.append((-(x1 - x0 + 1) * (y1 - y0 + 1), idx, v_walls, h_walls))
        if not splittable:
            break
        splittable.sort()
        _, idx, v_walls, h_walls = splittable[0]
        x0, y0, x1, y1 = regions.pop(idx)
        vertical = bool(v_walls) and (not h_walls or (x1 - x0) >= (y1 - y0))
        if vertical:
            wx = int(v_walls[rng.integers(len(v_walls))])
            door_ys = [y for y in range(y0, y1 + 1) if y % 2 == 1]
            dy = int(door_ys[rng.integers(len(door_ys))])
            for y in range(y0, y1 + 1):
                grid[y][wx] = WALL
            grid[dy][wx] = FLOOR
            doors.append((wx, dy))
            regions.extend([(x0, y0, wx - 1, y1), (wx + 1, y0, x1, y1)])
        else:
            wy = int(h_walls[rng.integers(len(h_walls))])
            door_xs = [x for x in range(x0, x1 + 1) if x % 2 == 1]
            dx = int(door_xs[rng.integers(len(door_xs))])
            for x in range(x0, x1 + 1):
                grid[wy][x] = WALL
            grid[wy][dx] = FLOOR
            doors.append((dx, wy))
            regions.extend([(x0, y0, x1, wy - 1), (x0, wy + 1, x1, y1)])

    cells = tuple("".join(row) for row in grid)
    room_label = [[-1] * width for _ in range(height)]
    for rid, (x0, y0, x1, y1) in enumerate(regions):
        for y in range(y0, y1 + 1):
            for x in range(x0, x1 + 1):
                if grid[y][x] == FLOOR:
                    room_label[y][x] = rid
    for dx, dy in doors:
        for hx, hy in HEADING_VECTORS:
            nx, ny = dx + hx, dy + hy
            if 0 <= nx < width and 0 <= ny < height and room_label[ny][nx] >= 0:
                room_label[dy][dx] = room_label[ny][nx]
                break
    return cells, tuple(tuple(r) for r in room_label), set(doors)


def _sample_type(spec: GenSpec, rng) -> str:
    if spec.balance_mode == "natural":
        w = np.array([NATURAL_TYPE_WEIGHTS[t] for t in OBJECT_TYPES])
        return str(OBJECT_TYPES[rng.choice(len(OBJECT_TYPES), p=w / w.sum())])
    return str(OBJECT_TYPES[rng.integers(len(OBJECT_TYPES))])


def _sample_color(spec: GenSpec, obj_type: str, rng) -> str:
    if spec.balance_mode == "natural":
        canon = CANONICAL_COLORS[obj_type]
        if rng.random() < spec.beta:
            return canon
        others = [c for c in COLORS if c != canon]
        return others[rng.integers(len(others))]
    return COLORS[rng.integers(len(COLORS))]


def gen_world(spec: GenSpec, index: int, split: str = "seen", world_id: Optional[int] = None) -> GridWorld:
    """Deterministic in (spec.seed, index). Raises GenerationFailure if the
    constraints cannot be met within the retry budget."""
    wid = index if world_id is None else world_id
    for attempt in range(_WORLD_RETRIES):
        rng = np.random.default_rng([spec.seed, 1, index, attempt])
        target_rooms = int(rng.integers(spec.room_count[0], spec.room_count[1] + 1))
        cells, room_label, doors = _carve_rooms(spec.width, spec.height, target_rooms, rng)
        n_objects = int(rng.integers(spec.object_count[0], spec.object_count[1] + 1))

        floor = [
            (x, y)
            for y in range(spec.height)
            for x in range(spec.width)
            if cells[y][x] == FLOOR and (x, y) not in doors
        ]
        against_wall = [
            (x, y)
            for (x, y) in floor
            if any(cells[y + dy][x + dx] == WALL for dx, dy in HEADING_VECTORS)
        ]
        if len(floor) < n_objects:
            continue

        taken: set[tuple[int, int]] = set()
        objects: list[ObjectInstance] = []
        ok = True
        for _ in range(n_objects):
            pool = [c for c in against_wall if c not in taken]
            if not pool or rng.random() >= spec.wall_bias:
                pool = [c for c in floor if c not in taken]
            if not pool:
                ok = False
                break
            x, y = pool[rng.integers(len(pool))]
            taken.add((x, y))
            t = _sample_type(spec, rng)
            objects.append(ObjectInstance(t, _sample_color(spec, t, rng), x, y))
        if not ok:
            continue

        # attach container relations within rooms for spatial questions
        final_objects: list[ObjectInstance] = []
        for o in objects:
            container = None
            if o.object_type in CONTAINABLE_TYPES and rng.random() < spec.container_prob:
                room = room_label[o.y][o.x]
                cands = [
                    j
                    for j, other in enumerate(objects)
                    if other.object_type in CONTAINER_TYPES
                    and room_label[other.y][other.x] == room
                    and other.position != o.position
                ]
                if cands:
                    container = int(cands[rng.integers(len(cands))])
            final_objects.append(replace(o, container=container))

        world = GridWorld(
            width=spec.width,
            height=spec.height,
            cells=cells,
            room_label=room_label,
            objects=tuple(final_objects),
            world_id=wid,
            split=split,
        )
        try:
            world.validate()
        except ValueError:
            continue
        return world
    raise GenerationFailure(f"could not build world {index} in {_WORLD_RETRIES} attempts")


# ---------------------------------------------------------------------------
# navigation episodes


_TURNS_FOR_DELTA = {0: (), 1: (Action.RIGHT,), 2: (Action.RIGHT, Action.RIGHT), 3: (Action.LEFT,)}


def path_to_actions(path: Sequence[tuple[int, int]], start_heading: int) -> list[Action]:
    """Compile a cell path into turn/forward actions plus a terminal End.
    180-degree alignment breaks ties toward Right."""
    actions: list[Action] = []
    heading = start_heading
    for (x0, y0), (x1, y1) in zip(path[:-1], path[1:]):
        target = HEADING_VECTORS.index((x1 - x0, y1 - y0))
        actions.extend(_TURNS_FOR_DELTA[(target - heading) % 4])
        heading = target
        actions.append(Action.FORWARD)
    actions.append(Action.END)
    return actions


def replay_actions(
    world: GridWorld, start: AgentState, actions: Iterable[Action]
) -> list[AgentState]:
    """States visited executing ``actions`` from ``start``, start included."""
    states = [start]
    s = start
    for a in actions:
        s = step(world, s, a)
        states.append(s)
        if a == Action.END:
            break
    return states


def _random_pose(world: GridWorld, rng) -> AgentState:
    floor = list(world.floor_cells())
    x, y = floor[rng.integers(len(floor))]
    return AgentState(x, y, heading=int(rng.integers(4)))


def gen_nav_episode(
    world: GridWorld, spec: GenSpec, rng, episode_id: int = 0, split: str = "seen"
) -> Episode:
    """Random start pose and object goal with geodesic distance >= the
    configured minimum; gold actions follow the shortest path."""
    if not world.objects:
        raise GenerationFailure(f"world {world.world_id} has no goal-eligible object")
    for attempt in range(600):
        goal_obj = world.objects[rng.integers(len(world.objects))]
        start = _random_pose(world, rng)
        d = geodesic_distance(world, start.position, goal_obj.position)
        if d < spec.min_goal_distance:
            continue
        if spec.max_goal_distance and d > spec.max_goal_distance:
            continue
        path = shortest_path(world, start.position, goal_obj.position)
        gold = path_to_actions(path, start.heading)
        if spec.goal_face_wall and attempt < 400:
            # strict phase; some worlds admit no such pair, so later attempts
            # relax the arrival condition rather than fail generation
            arrival = replay_actions(world, start, gold[:-1])[-1]
            if available_actions(world, arrival)[Action.FORWARD]:
                continue
        language = gen_instruction(world, gold, start)
        return Episode(
            episode_id=episode_id,
            world_id=world.world_id,
            task_kind="nav",
            start=start,
            goal=goal_obj.position,
            answer=None,
            gold_actions=tuple(gold),
            language=tuple(DEFAULT_VOCAB.encode(language)),
            question_type=None,
            split=split,
        )
    raise GenerationFailure(f"no admissible start/goal pair in world {world.world_id}")


def gen_eqa_episode(
    world: GridWorld,
    spec: GenSpec,
    rng,
    t_offset: int,
    episode_id: int = 0,
    split: str = "seen",
    task_kind: str = "nav",
) -> Episode:
    """Start exactly ``t_offset`` gold actions before the target along a
    sampled gold trajectory; the language names the target object."""
    unique_types = [t for t in OBJECT_TYPES if sum(o.object_type == t for o in world.objects) == 1]
    if not unique_types:
        raise GenerationFailure(f"world {world.world_id} has no unambiguous object")
    for _ in range(300):
        t = unique_types[rng.integers(len(unique_types))]
        target = next(o for o in world.objects if o.object_type == t)
        origin = _random_pose(world, rng)
        try:
            path = shortest_path(world, origin.position, target.position)
        except Exception:
            continue
        gold_full = path_to_actions(path, origin.heading)
        if len(gold_full) < t_offset:
            continue
        skip = len(gold_full) - t_offset
        states = replay_actions(world, origin, gold_full[:skip]) if skip else [origin]
        start = replace(states[-1], steps_taken=0)
        language = ["what", "color", "is", "the", t]
        return Episode(
            episode_id=episode_id,
            world_id=world.world_id,
            task_kind=task_kind,
            start=start,
            goal=target.position,
            answer=target.color,
            gold_actions=tuple(gold_full[skip:]),
            language=tuple(DEFAULT_VOCAB.encode(language)),
            question_type="color",
            split=split,
            t_offset=t_offset,
        )
    raise GenerationFailure(
        f"world {world.world_id} admits no gold path of length >= {t_offset}"
    )


def gen_instruction(
    world: GridWorld, gold_actions: Sequence[Action], start: AgentState
) -> list[str]:
    """Templated tokens from macro-segments of the gold path. Landmarks are
    the nearest object within 1 cell of each forward segment; segments with
    no landmark fall back to a step-count template."""
    tokens: list[str] = []
    state = start
    pending_turns: list[str] = []
    segment_cells: list[tuple[int, int]] = []

    def flush_segment():
        if not segment_cells:
            return
        best = None
        for idx, o in enumerate(world.objects):
            d = min(abs(o.x - cx) + abs(o.y - cy) for cx, cy in segment_cells)
            if d <= 1 and (best is None or d < best[0]):
                best = (d, idx, o)
        if best is not None:
            tokens.extend(["walk", "past", best[2].color, best[2].object_type])
        else:
            tokens.extend(["go", "forward", str(min(len(segment_cells), FORWARD_COUNT_CAP))])
        segment_cells.clear()

    for a in gold_actions:
        if a == Action.LEFT or a == Action.RIGHT:
            flush_segment()
            tokens.extend(["turn", "left" if a == Action.LEFT else "right"])
        elif a == Action.FORWARD:
            state2 = step(world, state, a)
            segment_cells.append(state2.position)
            state = state2
            continue
        elif a == Action.END:
            flush_segment()
            break
        state = step(world, state, a)
    goal_obj = world.object_at(*state.position)
    if goal_obj is not None:
        tokens.extend(["go", "to", goal_obj.color, goal_obj.object_type])
    return tokens


# ---------------------------------------------------------------------------
# question episodes


@dataclass(frozen=True)
class QuestionDraft:
    tokens: tuple[str, ...]
    answer: str
    question_type: str


def gen_question(world: GridWorld, spec: GenSpec, rng, qtype: str) -> Optional[QuestionDraft]:
    """One candidate question for this world, or None when the world cannot
    support the drawn template (caller resamples)."""
    if qtype == "existence":
        t = OBJECT_TYPES[rng.integers(len(OBJECT_TYPES))]
        present = any(o.object_type == t for o in world.objects)
        return QuestionDraft(("is", "there", "a", t), "yes" if present else "no", qtype)
    if qtype == "counting":
        t = OBJECT_TYPES[rng.integers(len(OBJECT_TYPES))]
        n = sum(o.object_type == t for o in world.objects)
        if n > 3:
            return None
        return QuestionDraft(("how", "many", t), str(n), qtype)
    if qtype == "spatial":
        inner = CONTAINABLE_TYPES[rng.integers(len(CONTAINABLE_TYPES))]
        outer = CONTAINER_TYPES[rng.integers(len(CONTAINER_TYPES))]
        yes = any(
            o.object_type == inner
            and o.container is not None
            and world.objects[o.container].object_type == outer
            for o in world.objects
        )
        return QuestionDraft(
            ("is", "there", "a", inner, "in", "the", outer), "yes" if yes else "no", qtype
        )
    if qtype == "color":
        uniq = [t for t in OBJECT_TYPES if sum(o.object_type == t for o in world.objects) == 1]
        if not uniq:
            return None
        t = uniq[rng.integers(len(uniq))]
        obj = next(o for o in world.objects if o.object_type == t)
        return QuestionDraft(("what", "color", "is", "the", t), obj.color, qtype)
    raise ConfigError(f"unknown question type {qtype!r}")


def gen_question_episodes(
    worlds: Sequence[GridWorld],
    spec: GenSpec,
    qtype: str,
    count: int,
    stream: int,
    start_episode_id: int = 0,
    split: str = "seen",
) -> list[Episode]:
    """A batch of question episodes over a world pool.

    In randomized balance mode, scene/question pairs are rejection-sampled so
    the batch answer distribution is exactly uniform (up to divisibility); in
    natural mode every candidate is kept."""
    if not worlds:
        raise EmptyDataset("no worlds to generate questions over")
    answers = ANSWERS_BY_QTYPE[qtype]
    balanced = spec.balance_mode == "randomized"
    quota = {a: count // len(answers) + (1 if i < count % len(answers) else 0) for i, a in enumerate(answers)}
    episodes: list[Episode] = []
    limit = max(2000, 600 * count)
    i = 0
    while len(episodes) < count and i < limit:
        rng = np.random.default_rng([spec.seed, 5, stream, i])
        i += 1
        world = worlds[rng.integers(len(worlds))]
        draft = gen_question(world, spec, rng, qtype)
        if draft is None:
            continue
        if balanced:
            if quota[draft.answer] == 0:
                continue
            quota[draft.answer] -= 1
        episodes.append(
            Episode(
                episode_id=start_episode_id + len(episodes),
                world_id=world.world_id,
                task_kind="qa",
                start=_random_pose(world, rng),
                goal=None,
                answer=draft.answer,
                gold_actions=(),
                language=tuple(DEFAULT_VOCAB.encode(draft.tokens)),
                question_type=qtype,
                split=split,
            )
        )
    if len(episodes) < count:
        raise GenerationFailure(
            f"balancing quota not met for {qtype}: {len(episodes)}/{count} after {i} draws"
        )
    return episodes


# ---------------------------------------------------------------------------
# filtering and splitting


def entropy_filter(episodes: Sequence[Episode], threshold: float) -> list[Episode]:
    """Drop every question group (identical token sequence) whose majority
    answer exceeds ``threshold``; episodes without answers pass through and
    survivor order is preserved."""
    if not 0.0 < threshold <= 1.0:
        raise ConfigError(f"threshold must be in (0,1], got {threshold}")
    counts: dict[tuple, dict[str, int]] = {}
    for ep in episodes:
        if ep.answer is None:
            continue
        counts.setdefault(ep.language, {}).setdefault(ep.answer, 0)
        counts[ep.language][ep.answer] += 1
    dropped = {
        key
        for key, dist in counts.items()
        if max(dist.values()) / sum(dist.values()) > threshold
    }
    out = [ep for ep in episodes if ep.answer is None or ep.language not in dropped]
    had_qa = any(ep.answer is not None for ep in episodes)
    if had_qa and not any(ep.answer is not None for ep in out):
        raise EmptyDataset(f"entropy filter at {threshold} removed every question")
    return out


def split_dataset(
    worlds: Sequence[GridWorld], episodes: Sequence[Episode], spec: GenSpec
) -> dict[str, list[Episode]]:
    """Partition into train / val_seen / val_unseen. Unseen-world episodes go
    to val_unseen; a held-out fraction of seen-world episodes becomes
    val_seen. Every episode lands in exactly one split."""
    unseen_ids = {w.world_id for w in worlds if w.split == "unseen"}
    splits: dict[str, list[Episode]] = {"train": [], "val_seen": [], "val_unseen": []}
    frac = spec.val_seen_fraction
    seen_idx = 0
    for ep in episodes:
        if ep.world_id in unseen_ids:
            splits["val_unseen"].append(replace(ep, split="val_unseen"))
            continue
        held_out = int((seen_idx + 1) * frac) > int(seen_idx * frac)
        seen_idx += 1
        if held_out:
            splits["val_seen"].append(replace(ep, split="val_seen"))
        else:
            splits["train"].append(replace(ep, split="train"))
    return splits


# ---------------------------------------------------------------------------
# orchestration + file formats


def generate_worlds(spec: GenSpec) -> list[GridWorld]:
    worlds = [gen_world(spec, i, split="seen") for i in range(spec.worlds_seen)]
    worlds += [
        gen_world(spec, spec.worlds_seen + j, split="unseen")
        for j in range(spec.worlds_unseen)
    ]
    return worlds


def generate_dataset(spec: GenSpec) -> tuple[list[GridWorld], dict[str, list[Episode]]]:
    """Full pipeline: worlds, nav/EQA/question episodes, entropy filter, split."""
    spec.validate()
    worlds = generate_worlds(spec)
    seen_pool = [w for w in worlds if w.split == "seen"]
    unseen_pool = [w for w in worlds if w.split == "unseen"]

    episodes: list[Episode] = []
    eid = 0
    needs_eqa = spec.eqa_offsets and (spec.eqa_per_world or spec.eqa_qa_per_world)
    if needs_eqa:
        # EQA targets must be unambiguous, so only worlds with a unique-type
        # object carry EQA episodes.
        eligible = {
            w.world_id
            for w in worlds
            if any(sum(o.object_type == t for o in w.objects) == 1 for t in OBJECT_TYPES)
        }
        if not eligible:
            raise GenerationFailure("no world has an unambiguous object for EQA episodes")
    for world in worlds:
        for k in range(spec.nav_per_world):
            rng = np.random.default_rng([spec.seed, 2, world.world_id, k])
            episodes.append(gen_nav_episode(world, spec, rng, episode_id=eid))
            eid += 1
        if not needs_eqa or world.world_id not in eligible:
            continue
        for t_offset in spec.eqa_offsets:
            for k in range(spec.eqa_per_world):
                rng = np.random.default_rng([spec.seed, 3, world.world_id, t_offset, k])
                episodes.append(
                    gen_eqa_episode(world, spec, rng, t_offset, episode_id=eid, task_kind="nav")
                )
                eid += 1
            for k in range(spec.eqa_qa_per_world):
                rng = np.random.default_rng([spec.seed, 4, world.world_id, t_offset, k])
                episodes.append(
                    gen_eqa_episode(world, spec, rng, t_offset, episode_id=eid, task_kind="qa")
                )
                eid += 1

    for pool, counts, stream_base in ((seen_pool, spec.qa_seen, 0), (unseen_pool, spec.qa_unseen, 100)):
        for qi, qtype in enumerate(QUESTION_TYPES):
            n = counts.get(qtype, 0)
            if n <= 0:
                continue
            batch = gen_question_episodes(
                pool, spec, qtype, n, stream=stream_base + qi, start_episode_id=eid
            )
            episodes.extend(batch)
            eid += len(batch)

    if spec.entropy_threshold < 1.0:
        episodes = entropy_filter(episodes, spec.entropy_threshold)
    return worlds, split_dataset(worlds, episodes, spec)


def dumps_canonical(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w") as f:
        for r in records:
            f.write(dumps_canonical(r) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def write_dataset(out_dir, worlds, splits: dict[str, list[Episode]]) -> list[str]:
    """Worlds + per-split episode JSONL + vocabulary; returns written paths."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    p = os.path.join(out_dir, "worlds.jsonl")
    write_jsonl(p, (w.to_json() for w in worlds))
    paths.append(p)
    for name, eps in splits.items():
        p = os.path.join(out_dir, f"{name}.jsonl")
        write_jsonl(p, (ep.to_json() for ep in eps))
        paths.append(p)
    p = os.path.join(out_dir, "vocab.txt")
    DEFAULT_VOCAB.save(p)
    paths.append(p)
    return paths


def load_dataset(data_dir) -> tuple[dict[int, GridWorld], dict[str, list[Episode]]]:
    import os

    worlds = {}
    for d in read_jsonl(os.path.join(data_dir, "worlds.jsonl")):
        w = GridWorld.from_json(d)
        worlds[w.world_id] = w
    splits = {}
    for name in ("train", "val_seen", "val_unseen"):
        path = os.path.join(data_dir, f"{name}.jsonl")
        if os.path.exists(path):
            splits[name] = [Episode.from_json(d) for d in read_jsonl(path)]
    return worlds, splits
