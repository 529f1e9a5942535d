"""Fixed vocabulary, modality bundles, and the per-step input encoder.

Zero-masking for ablations happens here, at the encoder input boundary: a
masked vision vector is all-zero before any model sees it, and a masked
language sequence is represented to every model as a fixed-length run of
zero embeddings (see policy module). The availability mask is never masked.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import UnknownToken
from .gridworld import (
    Action,
    AgentState,
    COLORS,
    GridWorld,
    N_ACTIONS,
    OBJECT_TYPES,
    VISION_DIM,
    available_actions,
    render_egocentric,
)

MAX_LANG_LEN = 24

# previous-action input: 6 actions + a start-of-episode sentinel
N_PREV_ACTIONS = N_ACTIONS + 1
START_SENTINEL = N_ACTIONS

PAD_TOKEN = "<pad>"

# Answers share one head across QA models; majority-baseline ties break by
# position in this list.
ANSWER_TOKENS = ("yes", "no", "0", "1", "2", "3") + COLORS

_STRUCTURE_WORDS = (
    "is",
    "there",
    "a",
    "how",
    "many",
    "in",
    "the",
    "what",
    "color",
    "walk",
    "past",
    "turn",
    "left",
    "right",
    "go",
    "to",
    "forward",
)
_COUNT_WORDS = tuple(str(n) for n in range(4, 21))


def default_tokens() -> list[str]:
    """The versioned token list; id 0 is reserved for padding."""
    return (
        [PAD_TOKEN]
        + list(ANSWER_TOKENS)
        + list(OBJECT_TYPES)
        + list(_STRUCTURE_WORDS)
        + list(_COUNT_WORDS)
    )


class Vocabulary:
    """Dense token <-> id map, stable across save/load."""

    def __init__(self, tokens: Sequence[str]):
        if tokens[0] != PAD_TOKEN:
            raise ValueError("token id 0 must be the padding token")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens")
        self.tokens = list(tokens)
        self._ids = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def encode(self, words: Sequence[str]) -> list[int]:
        try:
            return [self._ids[w] for w in words]
        except KeyError as e:
            raise UnknownToken(f"token {e.args[0]!r} not in vocabulary") from None

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    @property
    def answer_ids(self) -> list[int]:
        return [self._ids[t] for t in ANSWER_TOKENS]

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write("\n".join(self.tokens) + "\n")

    @staticmethod
    def load(path) -> "Vocabulary":
        with open(path) as f:
            return Vocabulary([line.rstrip("\n") for line in f if line.rstrip("\n")])


DEFAULT_VOCAB = Vocabulary(default_tokens())

ANSWER_INDEX = {t: i for i, t in enumerate(ANSWER_TOKENS)}
N_ANSWERS = len(ANSWER_TOKENS)


@dataclass
class ModalityBundle:
    """One step's model input: vision, language, previous action, and the
    never-masked availability mask."""

    vision: np.ndarray  # (144,), already zeroed when mask_vision
    language: tuple[int, ...]  # token ids, truncated to MAX_LANG_LEN
    prev_action: np.ndarray  # (7,) one-hot incl. start sentinel
    availability: np.ndarray  # (6,) bool
    mask_vision: bool
    mask_language: bool


def prev_action_onehot(prev: Optional[Action]) -> np.ndarray:
    v = np.zeros(N_PREV_ACTIONS, dtype=np.float64)
    v[START_SENTINEL if prev is None else int(prev)] = 1.0
    return v


def encode_step(
    world: GridWorld,
    state: AgentState,
    language: Sequence[int],
    prev_action: Optional[Action],
    mask_vision: bool = False,
    mask_language: bool = False,
    vocab_size: int = len(DEFAULT_VOCAB),
) -> ModalityBundle:
    """Build the per-step input bundle; prev_action=None means episode start."""
    for t in language:
        if not 0 <= t < vocab_size:
            raise UnknownToken(f"token id {t} outside vocabulary of size {vocab_size}")
    if mask_vision:
        vision = np.zeros(VISION_DIM, dtype=np.float64)
    else:
        vision = render_egocentric(world, state)
    return ModalityBundle(
        vision=vision,
        language=tuple(language[:MAX_LANG_LEN]),
        prev_action=prev_action_onehot(prev_action),
        availability=available_actions(world, state),
        mask_vision=mask_vision,
        mask_language=mask_language,
    )
