"""Discrete grid environment: map data, agent kinematics, minimal sensing,
ground-truth geometry oracles, and observation rendering.

All operations are pure functions of immutable inputs. Worlds are built once
(by the generator or ``GridWorld.from_json``) and never mutated afterward.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Iterator, Optional

import numpy as np

from .errors import UnavailableAction, Unreachable

OBJECT_TYPES = (
    "fridge",
    "microwave",
    "garbage_can",
    "bathtub",
    "sofa",
    "table",
    "lamp",
    "counter",
)

COLORS = ("red", "green", "blue", "brown", "grey", "white")

# Typical real-home color per object type; the generator's bias knob controls
# how often an object actually takes it.
CANONICAL_COLORS = {
    "fridge": "white",
    "microwave": "grey",
    "garbage_can": "green",
    "bathtub": "grey",
    "sofa": "brown",
    "table": "brown",
    "lamp": "white",
    "counter": "grey",
}

WALL = "#"
FLOOR = "."


class Action(IntEnum):
    """Index order is stable; serialized datasets depend on it."""

    FORWARD = 0
    LEFT = 1
    RIGHT = 2
    TILT_UP = 3
    TILT_DOWN = 4
    END = 5


N_ACTIONS = len(Action)
ACTION_NAMES = tuple(a.name.lower() for a in Action)

# heading 0..3 = N,E,S,W; north decreases y
HEADING_NAMES = ("N", "E", "S", "W")
HEADING_VECTORS = ((0, -1), (1, 0), (0, 1), (-1, 0))

# per-cell observation channels: [wall, floor] + type one-hot + color one-hot
N_CELL_CHANNELS = 2 + len(OBJECT_TYPES) + len(COLORS)
CH_WALL = 0
CH_FLOOR = 1
CH_TYPE0 = 2
CH_COLOR0 = 2 + len(OBJECT_TYPES)

# egocentric cone: 3 deep x 3 wide, row-major near-left to far-right
VISION_DIM = 9 * N_CELL_CHANNELS


@dataclass(frozen=True)
class AgentState:
    """Agent pose plus step counter."""

    x: int
    y: int
    heading: int
    tilt: int = 0
    steps_taken: int = 0

    @property
    def position(self) -> tuple[int, int]:
        return (self.x, self.y)

    def to_json(self) -> dict:
        return {
            "x": self.x,
            "y": self.y,
            "heading": self.heading,
            "tilt": self.tilt,
        }

    @staticmethod
    def from_json(d: dict) -> "AgentState":
        return AgentState(d["x"], d["y"], d["heading"], d.get("tilt", 0))


@dataclass(frozen=True)
class ObjectInstance:
    """A colored, typed object occupying one floor cell.

    ``container`` is an index into the world's object list (same room) and
    backs spatial-relation questions; it has no geometric effect.
    """

    object_type: str
    color: str
    x: int
    y: int
    container: Optional[int] = None

    @property
    def position(self) -> tuple[int, int]:
        return (self.x, self.y)


@dataclass
class GridWorld:
    """Static map: cells, rooms, objects. Treat instances as immutable."""

    width: int
    height: int
    cells: tuple[str, ...]  # row strings of WALL/FLOOR, index [y][x]
    room_label: tuple[tuple[int, ...], ...]  # [y][x], -1 on walls
    objects: tuple[ObjectInstance, ...]
    world_id: int
    split: str  # "seen" | "unseen"
    _obj_at: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self._obj_at = {(o.x, o.y): o for o in self.objects}

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def is_floor(self, x: int, y: int) -> bool:
        return self.in_bounds(x, y) and self.cells[y][x] == FLOOR

    def object_at(self, x: int, y: int) -> Optional[ObjectInstance]:
        return self._obj_at.get((x, y))

    def floor_cells(self) -> Iterator[tuple[int, int]]:
        for y in range(self.height):
            for x in range(self.width):
                if self.cells[y][x] == FLOOR:
                    yield (x, y)

    def room_of(self, x: int, y: int) -> int:
        return self.room_label[y][x]

    def to_json(self) -> dict:
        return {
            "world_id": self.world_id,
            "split": self.split,
            "width": self.width,
            "height": self.height,
            "grid": list(self.cells),
            "rooms": [list(row) for row in self.room_label],
            "objects": [
                {
                    "type": o.object_type,
                    "color": o.color,
                    "x": o.x,
                    "y": o.y,
                    "container": o.container,
                }
                for o in self.objects
            ],
        }

    @staticmethod
    def from_json(d: dict) -> "GridWorld":
        objects = tuple(
            ObjectInstance(o["type"], o["color"], o["x"], o["y"], o.get("container"))
            for o in d["objects"]
        )
        return GridWorld(
            width=d["width"],
            height=d["height"],
            cells=tuple(d["grid"]),
            room_label=tuple(tuple(row) for row in d["rooms"]),
            objects=objects,
            world_id=d["world_id"],
            split=d["split"],
        )

    def validate(self) -> None:
        """Raise ValueError on any structural invariant violation."""
        for x in range(self.width):
            if self.cells[0][x] != WALL or self.cells[self.height - 1][x] != WALL:
                raise ValueError("border cell is not wall")
        for y in range(self.height):
            if self.cells[y][0] != WALL or self.cells[y][self.width - 1] != WALL:
                raise ValueError("border cell is not wall")
        seen_cells = set()
        for i, o in enumerate(self.objects):
            if not self.is_floor(o.x, o.y):
                raise ValueError(f"object {i} not on floor")
            if o.position in seen_cells:
                raise ValueError(f"two objects share cell {o.position}")
            seen_cells.add(o.position)
            if o.object_type not in OBJECT_TYPES:
                raise ValueError(f"unknown object type {o.object_type!r}")
            if o.color not in COLORS:
                raise ValueError(f"unknown color {o.color!r}")
            if o.container is not None:
                other = self.objects[o.container]
                if self.room_of(o.x, o.y) != self.room_of(other.x, other.y):
                    raise ValueError(f"object {i} container in different room")
        floors = list(self.floor_cells())
        if floors and len(_bfs_reach(self, floors[0])) != len(floors):
            raise ValueError("floor cells not fully connected")


def _bfs_reach(world: GridWorld, start: tuple[int, int]) -> set:
    from collections import deque

    seen = {start}
    q = deque([start])
    while q:
        x, y = q.popleft()
        for dx, dy in HEADING_VECTORS:
            nx, ny = x + dx, y + dy
            if world.is_floor(nx, ny) and (nx, ny) not in seen:
                seen.add((nx, ny))
                q.append((nx, ny))
    return seen


def cell_ahead(state: AgentState) -> tuple[int, int]:
    dx, dy = HEADING_VECTORS[state.heading]
    return (state.x + dx, state.y + dy)


def available_actions(world: GridWorld, state: AgentState) -> np.ndarray:
    """Boolean mask over Action indices; the 'minimally sensed' information
    every agent keeps regardless of ablation."""
    mask = np.ones(N_ACTIONS, dtype=bool)
    ax, ay = cell_ahead(state)
    mask[Action.FORWARD] = world.is_floor(ax, ay)
    mask[Action.TILT_UP] = state.tilt < 1
    mask[Action.TILT_DOWN] = state.tilt > -1
    return mask


def step(world: GridWorld, state: AgentState, action: Action) -> AgentState:
    """Execute one action. Raises UnavailableAction if the mask forbids it;
    agents must be masked before sampling, so this signals a harness bug."""
    if not available_actions(world, state)[action]:
        raise UnavailableAction(f"{Action(action).name} unavailable at {state}")
    steps = state.steps_taken + 1
    if action == Action.FORWARD:
        nx, ny = cell_ahead(state)
        return replace(state, x=nx, y=ny, steps_taken=steps)
    if action == Action.LEFT:
        return replace(state, heading=(state.heading - 1) % 4, steps_taken=steps)
    if action == Action.RIGHT:
        return replace(state, heading=(state.heading + 1) % 4, steps_taken=steps)
    if action == Action.TILT_UP:
        return replace(state, tilt=state.tilt + 1, steps_taken=steps)
    if action == Action.TILT_DOWN:
        return replace(state, tilt=state.tilt - 1, steps_taken=steps)
    # End: pose unchanged; the harness treats it as termination.
    return replace(state, steps_taken=steps)


def shortest_path(
    world: GridWorld, frm: tuple[int, int], to: tuple[int, int]
) -> list[tuple[int, int]]:
    """Minimum-length 4-connected floor path, endpoints inclusive.

    Ties are broken by the fixed neighbor expansion order N,E,S,W so gold
    trajectories are reproducible across runs and platforms.
    """
    from collections import deque

    if not world.is_floor(*frm) or not world.is_floor(*to):
        raise Unreachable(f"endpoint not on floor: {frm} -> {to}")
    if frm == to:
        return [frm]
    parent: dict[tuple[int, int], tuple[int, int]] = {frm: frm}
    q = deque([frm])
    while q:
        cur = q.popleft()
        if cur == to:
            break
        x, y = cur
        for dx, dy in HEADING_VECTORS:  # N,E,S,W expansion order
            nxt = (x + dx, y + dy)
            if world.is_floor(*nxt) and nxt not in parent:
                parent[nxt] = cur
                q.append(nxt)
    if to not in parent:
        raise Unreachable(f"no path {frm} -> {to}")
    path = [to]
    while path[-1] != frm:
        path.append(parent[path[-1]])
    path.reverse()
    return path


def geodesic_distance(
    world: GridWorld, frm: tuple[int, int], to: tuple[int, int]
) -> int:
    return len(shortest_path(world, frm, to)) - 1


def distance_field(world: GridWorld, to: tuple[int, int]) -> np.ndarray:
    """Geodesic distance from every floor cell to ``to``; -1 where unreachable
    or wall. Cheaper than repeated shortest_path calls during rollouts."""
    from collections import deque

    if not world.is_floor(*to):
        raise Unreachable(f"target not on floor: {to}")
    dist = np.full((world.height, world.width), -1, dtype=np.int32)
    dist[to[1], to[0]] = 0
    q = deque([to])
    while q:
        x, y = q.popleft()
        d = dist[y, x]
        for dx, dy in HEADING_VECTORS:
            nx, ny = x + dx, y + dy
            if world.is_floor(nx, ny) and dist[ny, nx] < 0:
                dist[ny, nx] = d + 1
                q.append((nx, ny))
    return dist


def _encode_cell(world: GridWorld, x: int, y: int, hide_objects: bool) -> np.ndarray:
    ch = np.zeros(N_CELL_CHANNELS, dtype=np.float64)
    if not world.is_floor(x, y):
        ch[CH_WALL] = 1.0
        return ch
    ch[CH_FLOOR] = 1.0
    if hide_objects:
        return ch
    obj = world.object_at(x, y)
    if obj is not None:
        ch[CH_TYPE0 + OBJECT_TYPES.index(obj.object_type)] = 1.0
        ch[CH_COLOR0 + COLORS.index(obj.color)] = 1.0
    return ch


def render_egocentric(world: GridWorld, state: AgentState) -> np.ndarray:
    """Fixed-length vision vector: a 3-wide x 3-deep cone of cells ahead,
    row-major from near-left to far-right, 16 channels per cell. Cells outside
    the map encode as wall. Nonzero tilt hides object channels (the agent is
    looking at floor or ceiling)."""
    fx, fy = HEADING_VECTORS[state.heading]
    rx, ry = HEADING_VECTORS[(state.heading + 1) % 4]
    hide = state.tilt != 0
    out = np.zeros(VISION_DIM, dtype=np.float64)
    i = 0
    for depth in (1, 2, 3):
        for lat in (-1, 0, 1):
            cx = state.x + fx * depth + rx * lat
            cy = state.y + fy * depth + ry * lat
            out[i : i + N_CELL_CHANNELS] = _encode_cell(world, cx, cy, hide)
            i += N_CELL_CHANNELS
    return out


def render_topdown(world: GridWorld) -> np.ndarray:
    """Ground-truth overhead map, shape (height, width, 16), same per-cell
    channel layout as render_egocentric."""
    out = np.zeros((world.height, world.width, N_CELL_CHANNELS), dtype=np.float64)
    for y in range(world.height):
        for x in range(world.width):
            out[y, x] = _encode_cell(world, x, y, hide_objects=False)
    return out
