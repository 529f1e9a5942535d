import numpy as np
import pytest

from navqa.encoders import (
    ANSWER_TOKENS,
    DEFAULT_VOCAB,
    MAX_LANG_LEN,
    START_SENTINEL,
    Vocabulary,
    default_tokens,
    encode_step,
)
from navqa.errors import UnknownToken
from navqa.gridworld import Action, AgentState, VISION_DIM, render_egocentric


class TestVocabulary:
    def test_pad_is_id_zero(self):
        assert DEFAULT_VOCAB.tokens[0] == "<pad>"

    def test_ids_dense_and_stable_across_save_load(self, tmp_path):
        path = tmp_path / "vocab.txt"
        DEFAULT_VOCAB.save(path)
        again = Vocabulary.load(path)
        assert again.tokens == DEFAULT_VOCAB.tokens
        words = ["is", "there", "a", "bathtub"]
        assert again.encode(words) == DEFAULT_VOCAB.encode(words)

    def test_unknown_token_raises(self):
        with pytest.raises(UnknownToken):
            DEFAULT_VOCAB.encode(["zebra"])

    def test_answer_sublist_present(self):
        ids = DEFAULT_VOCAB.answer_ids
        assert len(ids) == len(ANSWER_TOKENS)
        assert DEFAULT_VOCAB.decode(ids) == list(ANSWER_TOKENS)

    def test_duplicate_tokens_rejected(self):
        with pytest.raises(ValueError):
            Vocabulary(["<pad>", "a", "a"])

    def test_default_tokens_cover_templates(self):
        toks = set(default_tokens())
        for needed in ("walk", "past", "turn", "left", "right", "go", "forward",
                       "is", "there", "how", "many", "what", "color", "in", "the"):
            assert needed in toks


class TestEncodeStep:
    def _world(self, room_with_bathtub=None):
        from conftest import make_world
        from navqa.gridworld import ObjectInstance

        return make_world(
            ["#####", "#...#", "#...#", "#...#", "#####"],
            objects=(ObjectInstance("bathtub", "grey", 2, 1),),
        )

    def test_mask_vision_gives_zero_vector(self):
        world = self._world()
        state = AgentState(2, 2, heading=0)
        bundle = encode_step(world, state, [1, 2], None, mask_vision=True)
        assert np.abs(bundle.vision).max() == 0.0
        assert bundle.vision.shape == (VISION_DIM,)

    def test_unmasked_vision_matches_render(self):
        world = self._world()
        state = AgentState(2, 2, heading=0)
        bundle = encode_step(world, state, [], None)
        assert bundle.vision.tobytes() == render_egocentric(world, state).tobytes()

    def test_start_sentinel_at_t0(self):
        bundle = encode_step(self._world(), AgentState(2, 2, heading=0), [], None)
        assert bundle.prev_action[START_SENTINEL] == 1.0
        assert bundle.prev_action.sum() == 1.0

    def test_prev_action_one_hot(self):
        bundle = encode_step(self._world(), AgentState(2, 2, heading=0), [], Action.LEFT)
        assert bundle.prev_action[int(Action.LEFT)] == 1.0
        assert bundle.prev_action.sum() == 1.0

    def test_both_masks_leave_only_availability_and_prev_action(self):
        world = self._world()
        bundle = encode_step(
            world, AgentState(2, 2, heading=0), [3, 4], Action.FORWARD,
            mask_vision=True, mask_language=True,
        )
        assert np.abs(bundle.vision).max() == 0.0
        assert bundle.mask_language
        assert bundle.availability.any()
        assert bundle.prev_action.sum() == 1.0

    def test_availability_never_masked(self):
        world = self._world()
        s = AgentState(2, 1, heading=0)  # facing border wall
        for mv, ml in ((True, True), (True, False), (False, True)):
            bundle = encode_step(world, s, [], None, mask_vision=mv, mask_language=ml)
            assert not bundle.availability[Action.FORWARD]
            assert bundle.availability[Action.END]

    def test_truncates_to_max_length(self):
        bundle = encode_step(self._world(), AgentState(2, 2, heading=0), [1] * 40, None)
        assert len(bundle.language) == MAX_LANG_LEN

    def test_out_of_range_token_rejected(self):
        with pytest.raises(UnknownToken):
            encode_step(self._world(), AgentState(2, 2, heading=0), [10**6], None)

    def test_masking_commutes_with_encoding(self):
        # encode-then-zero equals zero-then-encode for the vision pathway
        world = self._world()
        state = AgentState(2, 2, heading=0)
        pre = encode_step(world, state, [], None, mask_vision=True).vision
        post = encode_step(world, state, [], None).vision * 0.0
        assert pre.tobytes() == post.tobytes()
