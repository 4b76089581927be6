"""
בדיקות למורפולוגיות: עץ, מאפייני הקשר, פורמט טקסט ומחולל
"""
import numpy as np
import pytest

from src.data_generator import MorphologyGenerator, generate_family, mutate
from src.data_schemas import ExperimentConfig, JointType
from src.morphology import (
    CONTEXT_DIM, N_MAX, LimbContext, Morphology, MorphologyFormatError, TopologyError, absolute_positions,
    context_features, dfs_order, load_morphology, load_morphology_dir, morphology_from_text,
    morphology_to_text, save_morphology,
)
from src.numerics import seed_stream


def make_limb(position=(0.1, 0.0, 0.0), mass=1.0) -> LimbContext:
    return LimbContext(
        rel_position=position,
        orientation=(0.0, 0.0, 0.0),
        mass=mass,
        shape_params=(0.05, 0.3),
        joint_type=JointType.HINGE_Y,
        joint_range=(-0.5, 0.5),
        motor_gear=150.0,
    )


@pytest.fixture
def forked_robot():
    """רובוט לדוגמה: שורש עם שני ילדים, ולילד הראשון נכד"""
    return Morphology(
        id="fork",
        parents=(-1, 0, 0, 1),
        limbs=(
            make_limb((0.0, 0.0, 0.0)),
            make_limb((0.1, 0.0, 0.0)),
            make_limb((0.0, 0.2, 0.0)),
            make_limb((0.0, 0.0, 0.3)),
        ),
    )


@pytest.fixture
def generator():
    return MorphologyGenerator()


def shuffled_tree(rng: np.random.Generator, n: int) -> list:
    """עץ אקראי שאינדקסי האחסון שלו מעורבבים"""
    parents = [-1] + [int(rng.integers(0, i)) for i in range(1, n)]
    perm = rng.permutation(n)
    inverse = np.argsort(perm)
    return [-1 if parents[perm[j]] == -1 else int(inverse[parents[perm[j]]]) for j in range(n)]


def subtree(children: dict, root: int) -> set:
    nodes, stack = set(), [root]
    while stack:
        node = stack.pop()
        nodes.add(node)
        stack.extend(children[node])
    return nodes


class TestTree:
    """בדיקות מבנה העץ"""

    def test_dfs_order_is_preorder(self):
        assert dfs_order([-1, 0, 0, 1]) == [0, 1, 3, 2]

    def test_dfs_order_root_not_first(self):
        assert dfs_order([1, -1]) == [1, 0]

    def test_two_roots_rejected(self):
        with pytest.raises(TopologyError):
            dfs_order([-1, -1])

    def test_cycle_rejected(self):
        with pytest.raises(TopologyError):
            dfs_order([-1, 2, 1])

    def test_bad_parent_rejected(self):
        with pytest.raises(TopologyError):
            dfs_order([-1, 5])

    def test_morphology_fills_dfs_order(self, forked_robot):
        assert forked_robot.dfs_order == (0, 1, 3, 2)
        assert forked_robot.root == 0
        assert forked_robot.leaves() == [2, 3]
        assert forked_robot.children(0) == [1, 2]

    def test_too_many_limbs_rejected(self):
        with pytest.raises(ValueError):
            Morphology(id="big", parents=(-1,) + (0,) * N_MAX, limbs=(make_limb(),) * (N_MAX + 1))

    def test_invalid_limb_rejected(self):
        with pytest.raises(ValueError):
            make_limb(mass=-1.0)
        with pytest.raises(ValueError):
            LimbContext(rel_position=(0, 0, 0), orientation=(0, 0, 0), mass=1.0, shape_params=(0.1, 0.1),
                        joint_type=JointType.HINGE_X, joint_range=(0.5, -0.5), motor_gear=10.0)

    @pytest.mark.parametrize("seed", range(20))
    def test_dfs_order_properties_on_shuffled_trees(self, seed):
        """עצים אקראיים בני 10 צמתים בסדר אחסון מעורבב"""
        rng = np.random.default_rng(seed)
        parents = shuffled_tree(rng, 10)
        order = dfs_order(parents)
        position = {node: k for k, node in enumerate(order)}

        assert sorted(order) == list(range(10))
        assert parents[order[0]] == -1
        for child, parent in enumerate(parents):
            if parent != -1:
                assert position[parent] < position[child]

        children = {v: [i for i, p in enumerate(parents) if p == v] for v in range(10)}
        for v in range(10):
            descendants = subtree(children, v)
            assert {order[k] for k in range(position[v], position[v] + len(descendants))} == descendants
            visited = sorted(children[v], key=position.get)
            assert visited == sorted(children[v])


class TestContextFeatures:
    """בדיקות מאפייני ההקשר"""

    def test_absolute_positions_accumulate(self, forked_robot):
        positions = absolute_positions(forked_robot)
        np.testing.assert_allclose(positions[3], [0.1, 0.0, 0.3])
        np.testing.assert_allclose(positions[2], [0.0, 0.2, 0.0])

    def test_shape_and_order(self, forked_robot):
        features = context_features(forked_robot)
        assert features.shape == (4, CONTEXT_DIM)
        # השורה השלישית היא הנכד (אינדקס 3) בסדר DFS
        raw = context_features(forked_robot, absolute=False)
        assert not np.allclose(features[2], raw[2])
        np.testing.assert_allclose(features[0], raw[0])

    def test_single_mass_change_changes_one_row(self, forked_robot):
        heavier = forked_robot.model_copy(update={
            "limbs": forked_robot.limbs[:2] + (make_limb((0.0, 0.2, 0.0), mass=3.0),) + forked_robot.limbs[3:]
        })
        diff = np.abs(context_features(heavier) - context_features(forked_robot)).sum(axis=1)
        assert np.count_nonzero(diff) == 1

    def test_absolute_positions_follow_storage_permutation(self, generator):
        """ערבוב סדר האחסון מזיז את המיקומים המוחלטים יחד עם האיברים"""
        rng = np.random.default_rng(11)
        morph = generator.random_morphology(rng, "base", 7)
        perm = rng.permutation(7)
        inverse = np.argsort(perm)
        shuffled = Morphology(
            id="shuffled",
            parents=tuple(-1 if morph.parents[p] == -1 else int(inverse[morph.parents[p]]) for p in perm),
            limbs=tuple(morph.limbs[p] for p in perm),
        )
        before, after = absolute_positions(morph), absolute_positions(shuffled)
        for j, p in enumerate(perm):
            np.testing.assert_allclose(after[j], before[p], rtol=0, atol=1e-12)


class TestTextFormat:
    """בדיקות פורמט הטקסט"""

    def test_round_trip_is_exact(self, forked_robot):
        restored = morphology_from_text(morphology_to_text(forked_robot))
        assert restored == forked_robot

    def test_file_round_trip(self, forked_robot, tmp_path):
        path = save_morphology(forked_robot, tmp_path / "fork.morph")
        assert load_morphology(path) == forked_robot
        assert [m.id for m in load_morphology_dir(tmp_path)] == ["fork"]

    def test_bad_header(self):
        with pytest.raises(MorphologyFormatError):
            morphology_from_text("robot x 1\n")

    def test_wrong_limb_count(self, forked_robot):
        text = morphology_to_text(forked_robot).replace("morphology fork 4", "morphology fork 5")
        with pytest.raises(MorphologyFormatError):
            morphology_from_text(text)

    def test_truncated_limb_line(self, forked_robot):
        lines = morphology_to_text(forked_robot).splitlines()
        lines[1] = " ".join(lines[1].split()[:10])
        with pytest.raises(MorphologyFormatError):
            morphology_from_text("\n".join(lines))

    def test_nan_rejected(self, forked_robot):
        lines = morphology_to_text(forked_robot).splitlines()
        fields = lines[2].split()
        fields[9] = "nan"
        lines[2] = " ".join(fields)
        with pytest.raises(MorphologyFormatError):
            morphology_from_text("\n".join(lines))


class TestGenerator:
    """בדיקות מחולל המורפולוגיות"""

    def test_random_morphology_is_valid(self, generator):
        rng = np.random.default_rng(0)
        for n in range(1, N_MAX + 1):
            morph = generator.random_morphology(rng, f"r{n}", n)
            assert morph.limb_count == n
            assert all(p < i for i, p in enumerate(morph.parents) if p != -1)
            assert morph.limbs[0].rel_position == (0.0, 0.0, 0.0)

    def test_mutation_keeps_bounds(self, generator):
        rng = np.random.default_rng(1)
        morph = generator.random_morphology(rng, "base", 3)
        for _ in range(50):
            morph = generator.mutate(morph, rng)
            assert 2 <= morph.limb_count <= N_MAX

    def test_only_child_of_two_limb_robot_is_not_deleted(self, generator):
        rng = np.random.default_rng(12)
        two = generator.random_morphology(rng, "two", 2)
        for _ in range(100):
            assert generator._delete_leaf((list(two.parents), list(two.limbs)), rng) is None
            assert generator.mutate(two, rng).limb_count >= 2

    def test_long_mutation_chain_keeps_invariants(self, generator):
        """10,000 מוטציות ברצף: גבולות הגודל, סדר DFS קנוני ומאפיינים סופיים"""
        rng = np.random.default_rng(13)
        morph = generator.random_morphology(rng, "chain", 5)
        for _ in range(10_000):
            morph = generator.mutate(morph, rng)
            assert 2 <= morph.limb_count <= N_MAX
            assert list(morph.dfs_order) == dfs_order(morph.parents)
            features = context_features(morph)
            assert features.shape == (morph.limb_count, CONTEXT_DIM)
            assert np.all(np.isfinite(features))

    def test_single_limb_robot_grows(self):
        rng = np.random.default_rng(2)
        single = MorphologyGenerator().random_morphology(rng, "one", 1)
        assert mutate(single, rng).limb_count >= 2

    def test_family_size_and_ids(self, generator):
        rng = np.random.default_rng(3)
        bases = [generator.random_morphology(rng, f"b{i}", 4) for i in range(3)]
        family = generate_family(bases, 2, np.random.default_rng(4))
        assert len(family) == 9
        assert family[:3] == bases
        assert family[3].id == "b0-v1"
        assert family[4].id == "b0-v2"

    def test_family_rejects_empty_base(self, generator):
        with pytest.raises(ValueError):
            generator.generate_family([], 1, np.random.default_rng(0))

    def test_splits_are_disjoint_and_deterministic(self, generator):
        config = ExperimentConfig(n_train_morphs=4, n_test_morphs=3, pd_counts=[8])
        first = generator.generate_splits(config, seed=5, variants_per_base=1)
        second = generator.generate_splits(config, seed=5, variants_per_base=1)
        assert first == second
        test_ids = {m.id for m in first["test"]}
        assert not test_ids & {m.id for m in first["train"] + first["pd"]}
        assert len(first["pd"]) == 8
        for morph in first["train"] + first["test"]:
            assert config.min_limbs <= morph.limb_count <= config.max_limbs

    def test_split_streams_are_independent(self, generator):
        """שינוי מספר רובוטי המבחן לא משנה את רובוטי האימון"""
        small = generator.generate_splits(ExperimentConfig(n_train_morphs=2, n_test_morphs=1, pd_counts=[2]), 0, 0)
        large = generator.generate_splits(ExperimentConfig(n_train_morphs=2, n_test_morphs=5, pd_counts=[2]), 0, 0)
        assert small["train"] == large["train"]

    def test_seed_stream_reproduces_generator_output(self, generator):
        a = generator.random_morphology(seed_stream(9, "morph-gen/train"), "x", 5)
        b = generator.random_morphology(seed_stream(9, "morph-gen/train"), "x", 5)
        assert a == b


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
