"""Trainable models: flat recurrent navigation policy, hierarchical
planner-controller policy, top-down QA model, and attention QA model.

All four share one parameter-store/checkpoint format and a 3-gate gated
recurrent cell. Ablation variants change inputs only: a model and its
ablations have identical parameter counts by construction.
"""
from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import (
    MAX_LANG_LEN,
    ModalityBundle,
    N_ANSWERS,
    N_PREV_ACTIONS,
)
from .errors import DimensionMismatch
from .gridworld import N_ACTIONS, VISION_DIM

INIT_RANGE = 0.08  # uniform init half-width, standard for small recurrent nets

CHECKPOINT_MANIFEST = "checkpoint.json"
CHECKPOINT_PARAMS = "params.bin"


class ParamStore:
    """Flat named collection of parameter tensors with gradient buffers.

    ``version`` increments on every in-place update (optimizer steps,
    set_flat) so cached forward computations can be invalidated."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}
        self.version = 0

    def add(self, name: str, shape: tuple[int, ...], rng: np.random.Generator) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter {name!r}")
        t = ad.parameter(rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape))
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    @property
    def count(self) -> int:
        return sum(t.data.size for t in self._tensors.values())

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def all_finite(self) -> bool:
        return all(np.isfinite(t.data).all() for t in self._tensors.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([t.data.ravel() for t in self._tensors.values()])

    def set_flat(self, vec: np.ndarray) -> None:
        i = 0
        for t in self._tensors.values():
            n = t.data.size
            t.data = vec[i : i + n].reshape(t.data.shape).astype(np.float64)
            i += n
        if i != vec.size:
            raise DimensionMismatch(f"flat vector size {vec.size}, expected {i}")
        self.version += 1

    def flat_grad(self) -> np.ndarray:
        parts = []
        for t in self._tensors.values():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            parts.append(g.ravel())
        return np.concatenate(parts)


def count_params(model_or_store) -> int:
    store = model_or_store.params if hasattr(model_or_store, "params") else model_or_store
    return store.count


def save_checkpoint(path: str, store: ParamStore, meta: dict) -> None:
    """Manifest plus flat little-endian float32 arrays; round-trips bit-exactly."""
    os.makedirs(path, exist_ok=True)
    manifest = {
        "format": "navqa-checkpoint-v1",
        "meta": meta,
        "tensors": [{"name": n, "shape": list(t.data.shape)} for n, t in store.items()],
    }
    with open(os.path.join(path, CHECKPOINT_MANIFEST), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    with open(os.path.join(path, CHECKPOINT_PARAMS), "wb") as f:
        f.write(store.flat().astype("<f4").tobytes())


def load_checkpoint(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    with open(os.path.join(path, CHECKPOINT_MANIFEST)) as f:
        manifest = json.load(f)
    raw = np.fromfile(os.path.join(path, CHECKPOINT_PARAMS), dtype="<f4").astype(np.float64)
    arrays: dict[str, np.ndarray] = {}
    i = 0
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        arrays[entry["name"]] = raw[i : i + n].reshape(shape)
        i += n
    if i != raw.size:
        raise DimensionMismatch("checkpoint size does not match manifest")
    return manifest, arrays


@dataclass(frozen=True)
class NavPolicyConfig:
    embed_dim: int = 16
    hidden_dim: int = 32
    vision_proj_dim: int = 32


@dataclass(frozen=True)
class HierPolicyConfig(NavPolicyConfig):
    controller_hidden_dim: int = 16


@dataclass(frozen=True)
class TopDownQAConfig:
    embed_dim: int = 16
    hidden_dim: int = 32
    conv_channels: tuple[int, int] = (16, 16)


@dataclass(frozen=True)
class AttentionQAConfig:
    embed_dim: int = 16
    hidden_dim: int = 32
    n_frames: int = 5


@dataclass
class PolicyOutput:
    action_logits: Tensor  # (6,), finite; availability applied downstream
    next_hidden: Tensor


def _add_gru(store: ParamStore, prefix: str, in_dim: int, hid: int, rng) -> None:
    for gate in ("z", "r", "h"):
        store.add(f"{prefix}.W{gate}", (hid, in_dim), rng)
        store.add(f"{prefix}.U{gate}", (hid, hid), rng)
        store.add(f"{prefix}.b{gate}", (hid,), rng)


def _gru_step(store: ParamStore, prefix: str, x: Tensor, h: Tensor) -> Tensor:
    p = store
    return ad.gru_cell(
        x,
        h,
        p[f"{prefix}.Wz"],
        p[f"{prefix}.Uz"],
        p[f"{prefix}.bz"],
        p[f"{prefix}.Wr"],
        p[f"{prefix}.Ur"],
        p[f"{prefix}.br"],
        p[f"{prefix}.Wh"],
        p[f"{prefix}.Uh"],
        p[f"{prefix}.bh"],
    )


def _encode_tokens(
    store: ParamStore,
    embed_name: str,
    gru_prefix: str,
    tokens: Sequence[int],
    hidden_dim: int,
    embed_dim: int,
    masked: bool,
) -> list[Tensor]:
    """Run the recurrent language encoder, returning all hidden states.

    Masked language is replaced by a fixed-length run of zero embeddings so
    ablated outputs cannot depend on the instruction, including its length.
    An empty unmasked sequence degenerates to a single zero-input step.
    """
    if masked:
        inputs = [ad.zeros(embed_dim) for _ in range(MAX_LANG_LEN)]
    elif len(tokens) == 0:
        inputs = [ad.zeros(embed_dim)]
    else:
        emb = store[embed_name]
        inputs = [ad.row(emb, t) for t in tokens[:MAX_LANG_LEN]]
    h = ad.zeros(hidden_dim)
    states = []
    for x in inputs:
        h = _gru_step(store, gru_prefix, x, h)
        states.append(h)
    return states


def _attend(lang_states: Sequence[Tensor], query: Tensor) -> Tensor:
    """Dot-product attention; returns the weighted sum of encoder states."""
    s = ad.stack(lang_states)
    scores = ad.matvec(s, query)
    weights = ad.softmax(scores)
    return ad.tmatvec(s, weights)


class Model:
    """Shared surface: parameter store, ablation masks, checkpoint IO."""

    kind = "base"

    def __init__(self):
        self.params = ParamStore()
        self.mask_vision = False
        self.mask_language = False
        # masked language states are identical for every episode; cache them
        # per (param version, grad mode). Shared across ablation views.
        self._masked_lang_cache: dict = {}

    @property
    def masks(self) -> tuple[bool, bool]:
        return (self.mask_vision, self.mask_language)

    def with_masks(self, mask_vision: bool, mask_language: bool) -> "Model":
        """A view sharing this model's parameter store, with different input
        masks. Training and evaluation both run through the masked pathway."""
        view = copy.copy(self)
        view.mask_vision = mask_vision
        view.mask_language = mask_language
        return view

    def _encode_language(self, tokens: Sequence[int]) -> list[Tensor]:
        if not self.mask_language:
            return _encode_tokens(
                self.params,
                "embed",
                "enc",
                tokens,
                self.config.hidden_dim,
                self.config.embed_dim,
                masked=False,
            )
        key = (self.params.version, ad.grad_enabled())
        cached = self._masked_lang_cache.get(key)
        if cached is None:
            self._masked_lang_cache.clear()
            cached = _encode_tokens(
                self.params,
                "embed",
                "enc",
                tokens,
                self.config.hidden_dim,
                self.config.embed_dim,
                masked=True,
            )
            self._masked_lang_cache[key] = cached
        return cached

    def checkpoint_meta(self) -> dict:
        raise NotImplementedError

    def save(self, path: str) -> None:
        meta = dict(self.checkpoint_meta())
        meta["mask_vision"] = self.mask_vision
        meta["mask_language"] = self.mask_language
        save_checkpoint(path, self.params, meta)


class NavPolicy(Model):
    """Flat recurrent policy: a gated recurrent decoder consumes projected
    vision, the previous action, and dot-product attention over the states of
    a gated recurrent language encoder, then emits action logits."""

    kind = "nav"

    def __init__(
        self,
        vocab_size: int,
        config: NavPolicyConfig = NavPolicyConfig(),
        seed: int = 0,
    ):
        super().__init__()
        self.vocab_size = vocab_size
        self.config = config
        rng = np.random.default_rng([seed, 101])
        c = config
        p = self.params
        p.add("embed", (vocab_size, c.embed_dim), rng)
        _add_gru(p, "enc", c.embed_dim, c.hidden_dim, rng)
        p.add("vision.W", (c.vision_proj_dim, VISION_DIM), rng)
        p.add("vision.b", (c.vision_proj_dim,), rng)
        dec_in = c.vision_proj_dim + N_PREV_ACTIONS + c.hidden_dim
        _add_gru(p, "dec", dec_in, c.hidden_dim, rng)
        p.add("out.W", (N_ACTIONS, c.hidden_dim), rng)
        p.add("out.b", (N_ACTIONS,), rng)

    def checkpoint_meta(self) -> dict:
        return {
            "kind": self.kind,
            "vocab_size": self.vocab_size,
            "config": self.config.__dict__ | {},
        }

    def init_hidden(self) -> Tensor:
        return ad.zeros(self.config.hidden_dim)

    def language_states(self, tokens: Sequence[int]) -> list[Tensor]:
        return self._encode_language(tokens)

    def _decoder_input(self, bundle: ModalityBundle, hidden, lang_states) -> Tensor:
        if bundle.vision.shape != (VISION_DIM,):
            raise DimensionMismatch(f"vision shape {bundle.vision.shape}")
        vis = ad.affine(self.params["vision.W"], ad.constant(bundle.vision), self.params["vision.b"], "tanh")
        ctx = _attend(lang_states, hidden)
        return ad.concat([vis, ad.constant(bundle.prev_action), ctx])

    def step(
        self, bundle: ModalityBundle, hidden: Tensor, lang_states: Sequence[Tensor]
    ) -> PolicyOutput:
        x = self._decoder_input(bundle, hidden, lang_states)
        h = _gru_step(self.params, "dec", x, hidden)
        logits = ad.affine(self.params["out.W"], h, self.params["out.b"])
        return PolicyOutput(action_logits=logits, next_hidden=h)


# controller decision indices
CTRL_RETURN = 0
CTRL_REPEAT = 1


class HierPolicy(Model):
    """Planner-controller policy: the planner (same wiring as NavPolicy)
    emits an action when it holds control; the controller consumes fresh
    vision plus the current action and decides repeat vs return. Its hidden
    state is reset to zeros at every control transfer."""

    kind = "hier"

    def __init__(
        self,
        vocab_size: int,
        config: HierPolicyConfig = HierPolicyConfig(),
        seed: int = 0,
    ):
        super().__init__()
        self.vocab_size = vocab_size
        self.config = config
        rng = np.random.default_rng([seed, 102])
        c = config
        p = self.params
        p.add("embed", (vocab_size, c.embed_dim), rng)
        _add_gru(p, "enc", c.embed_dim, c.hidden_dim, rng)
        p.add("vision.W", (c.vision_proj_dim, VISION_DIM), rng)
        p.add("vision.b", (c.vision_proj_dim,), rng)
        dec_in = c.vision_proj_dim + N_PREV_ACTIONS + c.hidden_dim
        _add_gru(p, "plan", dec_in, c.hidden_dim, rng)
        p.add("out.W", (N_ACTIONS, c.hidden_dim), rng)
        p.add("out.b", (N_ACTIONS,), rng)
        p.add("ctrl.vision.W", (c.vision_proj_dim, VISION_DIM), rng)
        p.add("ctrl.vision.b", (c.vision_proj_dim,), rng)
        _add_gru(p, "ctrl", c.vision_proj_dim + N_ACTIONS, c.controller_hidden_dim, rng)
        p.add("ctrl.out.W", (2, c.controller_hidden_dim), rng)
        p.add("ctrl.out.b", (2,), rng)

    def checkpoint_meta(self) -> dict:
        return {
            "kind": self.kind,
            "vocab_size": self.vocab_size,
            "config": self.config.__dict__ | {},
        }

    def init_hidden(self) -> Tensor:
        return ad.zeros(self.config.hidden_dim)

    def init_controller_hidden(self) -> Tensor:
        return ad.zeros(self.config.controller_hidden_dim)

    def language_states(self, tokens: Sequence[int]) -> list[Tensor]:
        return self._encode_language(tokens)

    def planner_step(
        self, bundle: ModalityBundle, hidden: Tensor, lang_states: Sequence[Tensor]
    ) -> PolicyOutput:
        vis = ad.affine(self.params["vision.W"], ad.constant(bundle.vision), self.params["vision.b"], "tanh")
        ctx = _attend(lang_states, hidden)
        x = ad.concat([vis, ad.constant(bundle.prev_action), ctx])
        h = _gru_step(self.params, "plan", x, hidden)
        logits = ad.affine(self.params["out.W"], h, self.params["out.b"])
        return PolicyOutput(action_logits=logits, next_hidden=h)

    def controller_step(
        self, bundle: ModalityBundle, action: int, hidden: Tensor
    ) -> tuple[Tensor, Tensor]:
        """Binary repeat/return logits from fresh vision and the current action."""
        vis = ad.affine(
            self.params["ctrl.vision.W"], ad.constant(bundle.vision), self.params["ctrl.vision.b"], "tanh"
        )
        a = np.zeros(N_ACTIONS, dtype=np.float64)
        a[action] = 1.0
        x = ad.concat([vis, ad.constant(a)])
        h = _gru_step(self.params, "ctrl", x, hidden)
        logits = ad.affine(self.params["ctrl.out.W"], h, self.params["ctrl.out.b"])
        return logits, h


class TopDownQA(Model):
    """Answerer over a ground-truth overhead map: the question encoding is
    tiled over the grid, two 3x3 aggregation layers with tanh follow, then a
    spatial sum and a dense layer produce answer logits."""

    kind = "qa_topdown"

    def __init__(
        self,
        vocab_size: int,
        config: TopDownQAConfig = TopDownQAConfig(),
        seed: int = 0,
        map_channels: int = 16,
    ):
        super().__init__()
        self.vocab_size = vocab_size
        self.config = config
        self.map_channels = map_channels
        rng = np.random.default_rng([seed, 103])
        c = config
        p = self.params
        p.add("embed", (vocab_size, c.embed_dim), rng)
        _add_gru(p, "enc", c.embed_dim, c.hidden_dim, rng)
        c1, c2 = c.conv_channels
        p.add("conv1.W", (c1, 3, 3, map_channels + c.hidden_dim), rng)
        p.add("conv1.b", (c1,), rng)
        p.add("conv2.W", (c2, 3, 3, c1), rng)
        p.add("conv2.b", (c2,), rng)
        p.add("out.W", (N_ANSWERS, c2), rng)
        p.add("out.b", (N_ANSWERS,), rng)

    def checkpoint_meta(self) -> dict:
        return {
            "kind": self.kind,
            "vocab_size": self.vocab_size,
            "map_channels": self.map_channels,
            "config": self.config.__dict__ | {"conv_channels": list(self.config.conv_channels)},
        }

    def question_encoding(self, tokens: Sequence[int]) -> Tensor:
        return self._encode_language(tokens)[-1]

    def forward(self, topdown: np.ndarray, tokens: Sequence[int]) -> Tensor:
        """Answer logits, shape (N_ANSWERS,)."""
        if topdown.ndim != 3 or topdown.shape[2] != self.map_channels:
            raise DimensionMismatch(f"topdown shape {topdown.shape}")
        if self.mask_vision:
            topdown = np.zeros_like(topdown)
        q = self.question_encoding(tokens)
        x = ad.tile_concat(topdown, q)
        h1 = ad.tanh(ad.conv3x3(x, self.params["conv1.W"], self.params["conv1.b"]))
        h2 = ad.tanh(ad.conv3x3(h1, self.params["conv2.W"], self.params["conv2.b"]))
        pooled = ad.spatial_sum(h2)
        return ad.affine(self.params["out.W"], pooled, self.params["out.b"])


class AttentionQA(Model):
    """Answerer over the last frames of a gold navigation trajectory:
    frame-question similarities become attention weights, the attention
    summary is concatenated with the question encoding, and one dense layer
    emits answer logits."""

    kind = "qa_attention"

    def __init__(
        self,
        vocab_size: int,
        config: AttentionQAConfig = AttentionQAConfig(),
        seed: int = 0,
    ):
        super().__init__()
        self.vocab_size = vocab_size
        self.config = config
        rng = np.random.default_rng([seed, 104])
        c = config
        p = self.params
        p.add("embed", (vocab_size, c.embed_dim), rng)
        _add_gru(p, "enc", c.embed_dim, c.hidden_dim, rng)
        p.add("frame.W", (c.hidden_dim, VISION_DIM), rng)
        p.add("frame.b", (c.hidden_dim,), rng)
        p.add("out.W", (N_ANSWERS, 2 * c.hidden_dim), rng)
        p.add("out.b", (N_ANSWERS,), rng)

    def checkpoint_meta(self) -> dict:
        return {
            "kind": self.kind,
            "vocab_size": self.vocab_size,
            "config": self.config.__dict__ | {},
        }

    def question_encoding(self, tokens: Sequence[int]) -> Tensor:
        return self._encode_language(tokens)[-1]

    def forward(self, frames: np.ndarray, tokens: Sequence[int]) -> Tensor:
        """Answer logits from exactly n_frames egocentric views."""
        n = self.config.n_frames
        if frames.shape != (n, VISION_DIM):
            raise DimensionMismatch(f"frames shape {frames.shape}, want ({n}, {VISION_DIM})")
        if self.mask_vision:
            frames = np.zeros_like(frames)
        q = self.question_encoding(tokens)
        projected = [
            ad.affine(self.params["frame.W"], ad.constant(frames[i]), self.params["frame.b"], "tanh")
            for i in range(n)
        ]
        weights = ad.softmax(ad.stack([ad.dot(f, q) for f in projected]))
        stacked = ad.stack(projected)
        summary = ad.tmatvec(stacked, weights)
        feats = ad.concat([summary, q])
        return ad.affine(self.params["out.W"], feats, self.params["out.b"])

    def attention_weights(self, frames: np.ndarray, tokens: Sequence[int]) -> np.ndarray:
        if self.mask_vision:
            frames = np.zeros_like(frames)
        q = self.question_encoding(tokens)
        projected = [
            ad.affine(self.params["frame.W"], ad.constant(frames[i]), self.params["frame.b"], "tanh")
            for i in range(self.config.n_frames)
        ]
        return ad.softmax(ad.stack([ad.dot(f, q) for f in projected])).data


MODEL_KINDS = {
    "nav": (NavPolicy, NavPolicyConfig),
    "hier": (HierPolicy, HierPolicyConfig),
    "qa_topdown": (TopDownQA, TopDownQAConfig),
    "qa_attention": (AttentionQA, AttentionQAConfig),
}


def build_model(kind: str, vocab_size: int, seed: int = 0, **config_kwargs) -> Model:
    cls, cfg_cls = MODEL_KINDS[kind]
    cfg = cfg_cls(**config_kwargs) if config_kwargs else cfg_cls()
    return cls(vocab_size, cfg, seed=seed)


def load_model(path: str) -> Model:
    """Rebuild a model from a checkpoint directory; values round-trip the
    float32 file format exactly."""
    manifest, arrays = load_checkpoint(path)
    meta = manifest["meta"]
    kind = meta["kind"]
    cls, cfg_cls = MODEL_KINDS[kind]
    cfg_dict = dict(meta["config"])
    if "conv_channels" in cfg_dict:
        cfg_dict["conv_channels"] = tuple(cfg_dict["conv_channels"])
    extra = {}
    if kind == "qa_topdown":
        extra["map_channels"] = meta.get("map_channels", 16)
    model = cls(meta["vocab_size"], cfg_cls(**cfg_dict), seed=0, **extra)
    for name, arr in arrays.items():
        t = model.params[name]
        if t.data.shape != arr.shape:
            raise DimensionMismatch(f"checkpoint tensor {name}: {arr.shape} vs {t.data.shape}")
        t.data = arr
    return model.with_masks(meta.get("mask_vision", False), meta.get("mask_language", False))
