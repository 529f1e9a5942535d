import numpy as np
import pytest

from navqa.gridworld import FLOOR, WALL, GridWorld, ObjectInstance


def make_world(rows, objects=(), world_id=0, split="seen"):
    """Build a world from ASCII rows ('#' wall, '.' floor); one room."""
    height = len(rows)
    width = len(rows[0])
    room = tuple(
        tuple(0 if rows[y][x] == FLOOR else -1 for x in range(width)) for y in range(height)
    )
    w = GridWorld(
        width=width,
        height=height,
        cells=tuple(rows),
        room_label=room,
        objects=tuple(objects),
        world_id=world_id,
        split=split,
    )
    w.validate()
    return w


@pytest.fixture
def open_room_5():
    """5x5 world: 3x3 open floor."""
    return make_world(
        [
            "#####",
            "#...#",
            "#...#",
            "#...#",
            "#####",
        ]
    )


@pytest.fixture
def corridor_7():
    """Straight 1-wide corridor of 5 floor cells along y=1."""
    return make_world(
        [
            "#######",
            "#.....#",
            "#######",
        ]
    )


@pytest.fixture
def room_with_bathtub():
    return make_world(
        [
            "#####",
            "#...#",
            "#...#",
            "#...#",
            "#####",
        ],
        objects=(ObjectInstance("bathtub", "grey", 2, 1),),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)
