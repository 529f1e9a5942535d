import json

import numpy as np
import pytest

from navqa.encoders import DEFAULT_VOCAB
from navqa.episodegen import (
    ANSWERS_BY_QTYPE,
    Episode,
    GenSpec,
    entropy_filter,
    gen_eqa_episode,
    gen_instruction,
    gen_nav_episode,
    gen_question,
    gen_question_episodes,
    gen_world,
    generate_dataset,
    generate_worlds,
    path_to_actions,
    replay_actions,
    split_dataset,
    write_dataset,
    load_dataset,
)
from navqa.errors import ConfigError, EmptyDataset, GenerationFailure
from navqa.gridworld import (
    Action,
    AgentState,
    CANONICAL_COLORS,
    GridWorld,
    ObjectInstance,
    geodesic_distance,
)

from conftest import make_world


class TestGenWorld:
    def test_deterministic_byte_identical(self):
        spec = GenSpec(seed=13, width=11, height=11)
        a = gen_world(spec, 4)
        b = gen_world(spec, 4)
        assert json.dumps(a.to_json()) == json.dumps(b.to_json())

    def test_different_index_different_world(self):
        spec = GenSpec(seed=13, width=11, height=11)
        assert gen_world(spec, 0).to_json() != gen_world(spec, 1).to_json()

    def test_zero_objects_still_connected(self):
        spec = GenSpec(seed=13, width=11, height=11, object_count=(0, 0))
        world = gen_world(spec, 0)
        assert world.objects == ()
        world.validate()  # includes connectivity

    def test_beta_one_all_canonical(self):
        spec = GenSpec(seed=17, width=13, height=13, beta=1.0, balance_mode="natural",
                       object_count=(8, 12))
        for i in range(5):
            world = gen_world(spec, i)
            for o in world.objects:
                assert o.color == CANONICAL_COLORS[o.object_type]

    def test_invariants_on_many_worlds(self):
        spec = GenSpec(seed=19, width=9, height=9)
        for i in range(30):
            gen_world(spec, i).validate()

    def test_container_same_room(self):
        spec = GenSpec(seed=23, width=13, height=13, object_count=(10, 14), container_prob=1.0)
        found = 0
        for i in range(10):
            world = gen_world(spec, i)
            for o in world.objects:
                if o.container is not None:
                    other = world.objects[o.container]
                    assert world.room_of(o.x, o.y) == world.room_of(other.x, other.y)
                    found += 1
        assert found > 0


class TestNavEpisodes:
    def test_gold_compilation_straight_corridor(self, corridor_7):
        # goal 3 ahead, already aligned: forward three times then End
        path = [(1, 1), (2, 1), (3, 1), (4, 1)]
        gold = path_to_actions(path, start_heading=1)
        assert gold == [Action.FORWARD] * 3 + [Action.END]

    def test_goal_behind_starts_with_double_right(self, corridor_7):
        path = [(4, 1), (3, 1), (2, 1)]
        gold = path_to_actions(path, start_heading=1)  # facing E, goal W
        assert gold[:2] == [Action.RIGHT, Action.RIGHT]

    def test_min_goal_distance_respected(self):
        spec = GenSpec(seed=29, width=11, height=11, min_goal_distance=4)
        world = gen_world(spec, 0)
        for k in range(10):
            ep = gen_nav_episode(world, spec, np.random.default_rng(k))
            assert geodesic_distance(world, ep.start.position, ep.goal) >= 4

    def test_replay_soundness_many_episodes(self):
        spec = GenSpec(seed=31, width=11, height=11, worlds_seen=5, worlds_unseen=0)
        worlds = [gen_world(spec, i) for i in range(5)]
        for k in range(1000):
            world = worlds[k % 5]
            ep = gen_nav_episode(world, spec, np.random.default_rng(k))
            states = replay_actions(world, ep.start, ep.gold_actions)
            assert ep.gold_actions[-1] == Action.END
            assert states[-1].position == ep.goal  # gold ends on the goal cell

    def test_no_objects_fails(self):
        spec = GenSpec(seed=13, width=11, height=11, object_count=(0, 0))
        world = gen_world(spec, 0)
        with pytest.raises(GenerationFailure):
            gen_nav_episode(world, spec, np.random.default_rng(0))


class TestEqaEpisodes:
    def _world(self, seed=37):
        spec = GenSpec(seed=seed, width=13, height=13, worlds_seen=1, worlds_unseen=0)
        return gen_world(spec, 0), spec

    def test_replaying_offset_actions_reaches_target(self):
        world, spec = self._world()
        for k in range(20):
            ep = gen_eqa_episode(world, spec, np.random.default_rng(k), t_offset=10)
            assert len(ep.gold_actions) == 10
            states = replay_actions(world, ep.start, ep.gold_actions)
            assert states[-1].position == ep.goal

    def test_do_nothing_distance_equals_start_geodesic(self):
        world, spec = self._world()
        ep = gen_eqa_episode(world, spec, np.random.default_rng(3), t_offset=10)
        assert geodesic_distance(world, ep.start.position, ep.goal) == geodesic_distance(
            world, ep.start.position, ep.goal
        )

    def test_start_distance_bounded_by_offset(self):
        world, spec = self._world()
        dists = []
        for k in range(50):
            ep = gen_eqa_episode(world, spec, np.random.default_rng(k), t_offset=10)
            dists.append(geodesic_distance(world, ep.start.position, ep.goal))
        assert max(dists) <= 10

    def test_question_names_target(self):
        world, spec = self._world()
        ep = gen_eqa_episode(world, spec, np.random.default_rng(1), t_offset=10)
        words = DEFAULT_VOCAB.decode(ep.language)
        assert words[:4] == ["what", "color", "is", "the"]
        target_type = words[4]
        target = next(o for o in world.objects if o.position == ep.goal)
        assert target.object_type == target_type
        assert ep.answer == target.color

    def test_too_long_offset_fails(self):
        spec = GenSpec(seed=41, width=7, height=7)
        world = gen_world(spec, 0)
        with pytest.raises(GenerationFailure):
            gen_eqa_episode(world, spec, np.random.default_rng(0), t_offset=50)


class TestInstructions:
    def test_landmark_then_turn_tokens(self):
        world = make_world(
            [
                "#######",
                "#.....#",
                "#####.#",
                "#####.#",
                "#######",
            ],
            objects=(ObjectInstance("sofa", "red", 3, 1), ObjectInstance("lamp", "white", 5, 3)),
        )
        start = AgentState(1, 1, heading=1)
        path = [(1, 1), (2, 1), (3, 1), (4, 1), (5, 1), (5, 2), (5, 3)]
        gold = path_to_actions(path, start.heading)
        words = gen_instruction(world, gold, start)
        joined = " ".join(words)
        assert "past red sofa turn right" in joined
        assert words[-4:] == ["go", "to", "white", "lamp"]

    def test_landmark_free_corridor_falls_back_to_counts(self, corridor_7):
        start = AgentState(1, 1, heading=1)
        gold = path_to_actions([(1, 1), (2, 1), (3, 1), (4, 1)], start.heading)
        words = gen_instruction(corridor_7, gold, start)
        assert words[:3] == ["go", "forward", "3"]

    def test_vocabulary_closure_over_many_episodes(self):
        spec = GenSpec(seed=43, width=11, height=11, worlds_seen=8, worlds_unseen=0)
        worlds = [gen_world(spec, i) for i in range(8)]
        for k in range(10_000):
            world = worlds[k % 8]
            ep = gen_nav_episode(world, spec, np.random.default_rng(k))
            # Episode.language is already encoded; decoding must round-trip
            words = DEFAULT_VOCAB.decode(ep.language)
            assert DEFAULT_VOCAB.encode(words) == list(ep.language)


class TestQuestions:
    def test_counting_ground_truth(self):
        world = make_world(
            ["######", "#....#", "#....#", "######"],
            objects=(
                ObjectInstance("microwave", "grey", 1, 1),
                ObjectInstance("microwave", "white", 2, 1),
            ),
        )
        spec = GenSpec(seed=0)
        for k in range(30):
            draft = gen_question(world, spec, np.random.default_rng(k), "counting")
            if draft and DEFAULT_VOCAB.decode(DEFAULT_VOCAB.encode(list(draft.tokens)))[2] == "microwave":
                assert draft.answer == "2"
                return
        pytest.fail("never drew the microwave counting question")

    def test_counting_never_above_three(self):
        spec = GenSpec(seed=47, width=13, height=13, object_count=(14, 16))
        world = gen_world(spec, 0)
        for k in range(200):
            draft = gen_question(world, spec, np.random.default_rng(k), "counting")
            if draft is not None:
                assert draft.answer in ("0", "1", "2", "3")

    def test_existence_ground_truth(self):
        world = make_world(
            ["#####", "#...#", "#####"],
            objects=(ObjectInstance("sofa", "brown", 1, 1),),
        )
        spec = GenSpec(seed=0)
        seen = set()
        for k in range(60):
            draft = gen_question(world, spec, np.random.default_rng(k), "existence")
            t = DEFAULT_VOCAB.decode(DEFAULT_VOCAB.encode(list(draft.tokens)))[3]
            assert draft.answer == ("yes" if t == "sofa" else "no")
            seen.add(draft.answer)
        assert seen == {"yes", "no"}

    def test_spatial_ground_truth(self):
        world = make_world(
            ["######", "#....#", "######"],
            objects=(
                ObjectInstance("table", "brown", 1, 1),
                ObjectInstance("lamp", "white", 2, 1, container=0),
            ),
        )
        spec = GenSpec(seed=0)
        for k in range(120):
            draft = gen_question(world, spec, np.random.default_rng(k), "spatial")
            words = draft.tokens
            if words[3] == "lamp" and words[6] == "table":
                assert draft.answer == "yes"
            elif words[3] == "microwave":
                assert draft.answer == "no"

    def test_color_requires_unique_instance(self):
        world = make_world(
            ["######", "#....#", "######"],
            objects=(
                ObjectInstance("lamp", "red", 1, 1),
                ObjectInstance("lamp", "blue", 2, 1),
            ),
        )
        spec = GenSpec(seed=0)
        for k in range(30):
            assert gen_question(world, spec, np.random.default_rng(k), "color") is None

    def test_randomized_batches_exactly_balanced(self):
        spec = GenSpec(seed=53, width=11, height=11, worlds_seen=12, worlds_unseen=0,
                       balance_mode="randomized")
        worlds = [gen_world(spec, i) for i in range(12)]
        for qtype, n in (("existence", 400), ("counting", 400), ("spatial", 400)):
            eps = gen_question_episodes(worlds, spec, qtype, n, stream=7)
            answers = [e.answer for e in eps]
            support = ANSWERS_BY_QTYPE[qtype]
            for a in support:
                assert answers.count(a) == n // len(support)

    def test_natural_mode_color_majority_tracks_beta(self):
        # majority share of each color-question group should be close to beta
        spec = GenSpec(seed=59, width=11, height=11, worlds_seen=60, worlds_unseen=0,
                       balance_mode="natural", beta=0.8)
        worlds = generate_worlds(spec)
        eps = gen_question_episodes(worlds, spec, "color", 3000, stream=9)
        canonical = sum(
            1
            for e in eps
            if e.answer == CANONICAL_COLORS[DEFAULT_VOCAB.decode(e.language)[4]]
        )
        share = canonical / len(eps)
        assert abs(share - 0.8) <= 0.03

    def test_bias_knob_monotonicity(self):
        shares = []
        for beta in (0.0, 0.4, 0.8, 1.0):
            spec = GenSpec(seed=61, width=11, height=11, worlds_seen=40, worlds_unseen=0,
                           balance_mode="natural", beta=beta)
            worlds = generate_worlds(spec)
            eps = gen_question_episodes(worlds, spec, "color", 1500, stream=3)
            canonical = sum(
                1
                for e in eps
                if e.answer == CANONICAL_COLORS[DEFAULT_VOCAB.decode(e.language)[4]]
            )
            shares.append(canonical / len(eps))
        assert all(b >= a - 0.02 for a, b in zip(shares, shares[1:]))
        assert shares[-1] == 1.0


class TestEntropyFilter:
    def _episodes(self, groups):
        eps = []
        eid = 0
        for tokens, answers in groups.items():
            for a in answers:
                eps.append(
                    Episode(
                        episode_id=eid, world_id=0, task_kind="qa",
                        start=AgentState(1, 1, 0), goal=None, answer=a,
                        gold_actions=(), language=tokens, question_type="color",
                        split="seen",
                    )
                )
                eid += 1
        return eps

    def test_threshold_one_is_identity(self):
        eps = self._episodes({(1, 2): ["grey"] * 10, (3, 4): ["red", "blue"]})
        assert entropy_filter(eps, 1.0) == eps

    def test_peaked_group_removed(self):
        eps = self._episodes({(1, 2): ["grey"] * 10, (3, 4): ["red"] * 5 + ["blue"] * 5})
        out = entropy_filter(eps, 0.6)
        assert all(e.language == (3, 4) for e in out)
        assert len(out) == 10

    def test_post_filter_majorities_below_threshold(self):
        rng = np.random.default_rng(5)
        groups = {}
        for g in range(30):
            n = int(rng.integers(5, 40))
            p = rng.random()
            answers = ["yes" if rng.random() < p else "no" for _ in range(n)]
            groups[(100 + g,)] = answers
        out = entropy_filter(self._episodes(groups), 0.7)
        by_group = {}
        for e in out:
            by_group.setdefault(e.language, []).append(e.answer)
        for answers in by_group.values():
            top = max(answers.count(a) for a in set(answers))
            assert top / len(answers) <= 0.7

    def test_everything_filtered_raises(self):
        eps = self._episodes({(1, 2): ["grey"] * 10})
        with pytest.raises(EmptyDataset):
            entropy_filter(eps, 0.5)

    def test_nav_episodes_pass_through(self):
        nav = Episode(
            episode_id=0, world_id=0, task_kind="nav", start=AgentState(1, 1, 0),
            goal=(1, 2), answer=None, gold_actions=(Action.END,), language=(5,),
            question_type=None, split="seen",
        )
        assert entropy_filter([nav], 0.5) == [nav]

    def test_bad_threshold_rejected(self):
        with pytest.raises(ConfigError):
            entropy_filter([], 0.0)


class TestSplits:
    def _dataset(self):
        spec = GenSpec(seed=67, width=11, height=11, worlds_seen=6, worlds_unseen=3,
                       nav_per_world=10, val_seen_fraction=0.25)
        worlds = generate_worlds(spec)
        episodes = []
        eid = 0
        for w in worlds:
            for k in range(spec.nav_per_world):
                episodes.append(
                    gen_nav_episode(w, spec, np.random.default_rng([67, w.world_id, k]), episode_id=eid)
                )
                eid += 1
        return worlds, episodes, spec

    def test_unseen_worlds_disjoint_from_train(self):
        worlds, episodes, spec = self._dataset()
        splits = split_dataset(worlds, episodes, spec)
        train_worlds = {e.world_id for e in splits["train"]} | {
            e.world_id for e in splits["val_seen"]
        }
        unseen_worlds = {e.world_id for e in splits["val_unseen"]}
        assert train_worlds & unseen_worlds == set()

    def test_partition_complete_and_disjoint(self):
        worlds, episodes, spec = self._dataset()
        splits = split_dataset(worlds, episodes, spec)
        ids = [e.episode_id for part in splits.values() for e in part]
        assert sorted(ids) == sorted(e.episode_id for e in episodes)
        assert len(ids) == len(set(ids))

    def test_ratio_within_one_episode(self):
        worlds, episodes, spec = self._dataset()
        splits = split_dataset(worlds, episodes, spec)
        n_seen = len(splits["train"]) + len(splits["val_seen"])
        assert abs(len(splits["val_seen"]) - spec.val_seen_fraction * n_seen) <= 1


class TestDatasetFiles:
    def test_byte_identical_regeneration(self, tmp_path):
        spec = GenSpec(seed=71, width=11, height=11, worlds_seen=3, worlds_unseen=1,
                       nav_per_world=4, qa_seen={"existence": 8}, balance_mode="randomized")
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            worlds, splits = generate_dataset(GenSpec.from_json(spec.to_json()))
            write_dataset(out, worlds, splits)
        for name in ("worlds.jsonl", "train.jsonl", "val_seen.jsonl", "val_unseen.jsonl", "vocab.txt"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name

    def test_round_trip_load(self, tmp_path):
        spec = GenSpec(seed=73, width=11, height=11, worlds_seen=10, worlds_unseen=2,
                       nav_per_world=2, qa_seen={"counting": 8})
        worlds, splits = generate_dataset(spec)
        write_dataset(tmp_path, worlds, splits)
        worlds2, splits2 = load_dataset(tmp_path)
        assert set(worlds2) == {w.world_id for w in worlds}
        for name, eps in splits.items():
            assert [e.to_json() for e in splits2[name]] == [e.to_json() for e in eps]

    def test_genspec_rejects_unknown_fields(self):
        with pytest.raises(ConfigError):
            GenSpec.from_json({"seed": 1, "bogus": 2})

    def test_genspec_validates_ranges(self):
        with pytest.raises(ConfigError):
            GenSpec.from_json({"beta": 1.5})
        with pytest.raises(ConfigError):
            GenSpec.from_json({"entropy_threshold": 0.0})
        with pytest.raises(ConfigError):
            GenSpec.from_json({"balance_mode": "other"})
