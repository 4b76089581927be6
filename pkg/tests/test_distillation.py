"""
בדיקות למודול הזיקוק: KL, מאגר המעברים, לולאת האימון ומורים פרטניים
"""
import numpy as np
import pytest

from src.architectures import build_policy
from src.data_generator import MorphologyGenerator
from src.data_schemas import (
    ArchitectureKind, ArchitectureSpec, ContextEncoderKind, DistillConfig, DropoutSite, LrSchedule, TeacherFitConfig,
)
from src.distillation import (
    DistillationError, PerRobotTeachers, TransitionDataset, dataset_kl, distill, fit_single_robot_teachers,
    iterate_minibatches, kl_diag_gaussian, kl_elementwise, scheduled_lr,
)
from src.numerics import NumericalError


class LinearOracle:
    """מורה לינארי פשוט: ממוצע = W s לכל איבר, log_std קבוע"""

    def __init__(self, weights, log_std=-1.0, offset=0.0):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.log_std = log_std
        self.offset = offset

    def act(self, morphology, states):
        means = states @ self.weights + self.offset
        means = means.reshape(states.shape[0], -1)
        return means, np.full_like(means, self.log_std)


def student_spec(**overrides) -> ArchitectureSpec:
    fields = dict(kind=ArchitectureKind.HYPERNETWORK, hidden_layers=1, hidden_width=8,
                  context_encoder=ContextEncoderKind.MLP, context_embed_dim=8, encoder_layers=1,
                  state_dim_per_limb=3, action_dim_per_limb=1, n_max=4)
    fields.update(overrides)
    return ArchitectureSpec(**fields)


def collect_from(oracle, morphs, count, seed=0) -> TransitionDataset:
    rng = np.random.default_rng(seed)
    dataset = TransitionDataset()
    for morph in morphs:
        states = rng.standard_normal((count, morph.limb_count, 3))
        means, log_stds = oracle.act(morph, states)
        dataset.add(morph.id, states, means, log_stds)
    return dataset


@pytest.fixture
def one_limb():
    return MorphologyGenerator().random_morphology(np.random.default_rng(0), "solo", 1)


@pytest.fixture
def oracle():
    return LinearOracle([0.2, -0.15, 0.1])


class TestKL:
    """בדיקות ל-KL בין גאוסיאנים אלכסוניים"""

    def test_identical_distributions_give_exact_zero(self):
        rng = np.random.default_rng(0)
        mean, log_std = rng.standard_normal(16), rng.uniform(-2, 1, 16)
        assert kl_diag_gaussian(mean, log_std, mean, log_std).item() == 0.0

    @pytest.mark.parametrize("case", range(20))
    def test_matches_monte_carlo(self, case):
        rng = np.random.default_rng(100 + case)
        m1, m2 = rng.normal(0, 0.5, 8), rng.normal(0, 0.5, 8)
        s1, s2 = rng.uniform(-0.3, 0.3, 8), rng.uniform(-0.3, 0.3, 8)

        def log_density(x, mean, log_std):
            return -0.5 * ((x - mean) / np.exp(log_std)) ** 2 - log_std - 0.5 * np.log(2 * np.pi)

        # מיליון דגימות בארבע מנות
        chunks = []
        for _ in range(4):
            samples = m1 + np.exp(s1) * rng.standard_normal((250_000, 8))
            chunks.append(np.sum(log_density(samples, m1, s1) - log_density(samples, m2, s2), axis=1))
        estimate = np.mean(np.concatenate(chunks))
        assert abs(kl_diag_gaussian(m1, s1, m2, s2).item() - estimate) < 1e-2

    def test_elementwise_is_non_negative(self):
        rng = np.random.default_rng(2)
        values = kl_elementwise(rng.standard_normal(50), rng.uniform(-1, 1, 50),
                                rng.standard_normal(50), rng.uniform(-1, 1, 50)).data
        assert np.all(values >= 0.0)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            kl_diag_gaussian(np.zeros(3), np.zeros(3), np.zeros(4), np.zeros(4))

    def test_non_finite_input_rejected(self):
        with pytest.raises(NumericalError):
            kl_diag_gaussian(np.array([np.nan]), np.zeros(1), np.zeros(1), np.zeros(1))


class TestTransitionDataset:
    """בדיקות מאגר המעברים"""

    def test_groups_keep_insertion_order(self):
        dataset = TransitionDataset()
        dataset.add("a", np.zeros((2, 1, 3)), np.zeros((2, 1)), np.full((2, 1), -1.0))
        dataset.add("b", np.ones((3, 2, 3)), np.ones((3, 2)), np.full((3, 2), -1.0))
        dataset.add("a", np.full((1, 1, 3), 5.0), np.ones((1, 1)), np.full((1, 1), -1.0))

        assert len(dataset) == 6
        assert dataset.morphology_ids == ["a", "b"]
        assert dataset.group("a").states.shape == (3, 1, 3)
        np.testing.assert_array_equal(dataset.codes, [0, 0, 1, 1, 1, 0])
        np.testing.assert_array_equal(dataset.rows, [0, 1, 0, 1, 2, 2])
        records = list(dataset.records())
        assert [r.morphology_id for r in records] == ["a", "a", "b", "b", "b", "a"]
        assert records[-1].states[0, 0] == 5.0

    def test_index_arrays_are_cached_until_next_add(self):
        """קריאות חוזרות מחזירות את אותו מערך; add מרענן את המטמון"""
        dataset = TransitionDataset()
        dataset.add("a", np.zeros((2, 1, 3)), np.zeros((2, 1)), np.zeros((2, 1)))
        codes = dataset.codes
        assert dataset.codes is codes
        assert dataset.rows is dataset.rows
        assert not codes.flags.writeable

        dataset.add("b", np.zeros((1, 1, 3)), np.zeros((1, 1)), np.zeros((1, 1)))
        assert dataset.codes is not codes
        np.testing.assert_array_equal(dataset.codes, [0, 0, 1])
        np.testing.assert_array_equal(dataset.rows, [0, 1, 0])

    def test_subset(self):
        dataset = TransitionDataset()
        dataset.add("a", np.zeros((2, 1, 3)), np.zeros((2, 1)), np.zeros((2, 1)))
        dataset.add("b", np.zeros((3, 1, 3)), np.zeros((3, 1)), np.zeros((3, 1)))
        subset = dataset.subset(["b"])
        assert subset.morphology_ids == ["b"]
        assert len(subset) == 3

    def test_inconsistent_records_rejected(self):
        dataset = TransitionDataset()
        with pytest.raises(DistillationError):
            dataset.add("a", np.zeros((2, 1, 3)), np.zeros((3, 1)), np.zeros((3, 1)))
        with pytest.raises(DistillationError):
            dataset.add("a", np.zeros((2, 2, 3)), np.zeros((2, 3)), np.zeros((2, 3)))
        with pytest.raises(DistillationError):
            dataset.add("a", np.zeros((1, 1, 3)), np.array([[np.inf]]), np.zeros((1, 1)))
        dataset.add("a", np.zeros((1, 1, 3)), np.zeros((1, 1)), np.zeros((1, 1)))
        with pytest.raises(DistillationError):
            dataset.add("a", np.zeros((1, 2, 3)), np.zeros((1, 2)), np.zeros((1, 2)))

    def test_minibatches_cover_every_record_once(self):
        batches = list(iterate_minibatches(10, 4, np.random.default_rng(0)))
        assert [len(b) for b in batches] == [4, 4, 2]
        assert sorted(np.concatenate(batches).tolist()) == list(range(10))


class TestDistill:
    """בדיקות לולאת הזיקוק"""

    def test_linear_oracle_is_learned(self, one_limb, oracle):
        dataset = collect_from(oracle, [one_limb], 512)
        student = build_policy(student_spec(), np.random.default_rng(0))
        config = DistillConfig(epochs=200, minibatch=128, lr=1e-2, dropout_p=0.0, dropout_site=DropoutSite.NONE)
        result = distill(student, dataset, [one_limb], config)

        assert len(result.loss_trace) == 200
        assert result.final_kl < 1e-2
        assert result.loss_trace[-1] < result.loss_trace[0]
        assert dataset_kl(student, dataset, [one_limb]) < 1e-2

    def test_same_seed_same_parameters(self, one_limb, oracle):
        dataset = collect_from(oracle, [one_limb], 64)
        config = DistillConfig(epochs=5, minibatch=16, lr=1e-2, dropout_p=0.2, seed=3)
        runs = []
        for _ in range(2):
            student = build_policy(student_spec(), np.random.default_rng(0))
            distill(student, dataset, [one_limb], config)
            runs.append(student.parameter_arrays())
        for name in runs[0]:
            np.testing.assert_array_equal(runs[0][name], runs[1][name])

    def test_cosine_schedule_endpoints(self):
        config = DistillConfig(lr=1e-2, lr_schedule=LrSchedule.COSINE, lr_floor=0.1)
        assert scheduled_lr(config, 0, 11) == pytest.approx(1e-2)
        assert scheduled_lr(config, 5, 11) == pytest.approx(0.5 * (1e-2 + 1e-3))
        assert scheduled_lr(config, 10, 11) == pytest.approx(1e-3)
        rates = [scheduled_lr(config, step, 11) for step in range(11)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_constant_schedule_ignores_step(self):
        config = DistillConfig(lr=3e-3)
        assert {scheduled_lr(config, step, 100) for step in (0, 50, 99)} == {3e-3}

    def test_cosine_schedule_changes_training(self, one_limb, oracle):
        dataset = collect_from(oracle, [one_limb], 64)
        base = DistillConfig(epochs=3, minibatch=16, lr=1e-2, dropout_p=0.0, dropout_site=DropoutSite.NONE)
        runs = []
        for config in (base, base.model_copy(update={"lr_schedule": LrSchedule.COSINE})):
            student = build_policy(student_spec(), np.random.default_rng(0))
            runs.append(distill(student, dataset, [one_limb], config).loss_trace)
        assert runs[0] != runs[1]

    def test_zero_epochs_leave_student_untouched(self, one_limb, oracle):
        dataset = collect_from(oracle, [one_limb], 8)
        student = build_policy(student_spec(), np.random.default_rng(0))
        before = student.parameter_arrays()
        result = distill(student, dataset, [one_limb], DistillConfig(epochs=0))
        assert result.loss_trace == []
        assert result.final_kl is None
        for name, array in student.parameter_arrays().items():
            np.testing.assert_array_equal(array, before[name])

    def test_empty_dataset_rejected(self, one_limb):
        student = build_policy(student_spec(), np.random.default_rng(0))
        with pytest.raises(DistillationError):
            distill(student, TransitionDataset(), [one_limb], DistillConfig(epochs=1))

    def test_unknown_morphology_rejected(self, one_limb, oracle):
        dataset = collect_from(oracle, [one_limb], 8)
        student = build_policy(student_spec(), np.random.default_rng(0))
        with pytest.raises(DistillationError):
            distill(student, dataset, [], DistillConfig(epochs=1))

    def test_non_finite_student_raises(self, one_limb, oracle):
        dataset = collect_from(oracle, [one_limb], 8)
        student = build_policy(student_spec(), np.random.default_rng(0))
        student.params["head.out_bias.bias"].data[:] = np.nan
        with pytest.raises(NumericalError):
            distill(student, dataset, [one_limb], DistillConfig(epochs=1))


class TestPerRobotTeachers:
    """בדיקות להתאמת מורים פרטניים"""

    @pytest.fixture
    def robots(self):
        rng = np.random.default_rng(4)
        generator = MorphologyGenerator()
        return [generator.random_morphology(rng, f"r{n}", n) for n in (1, 3)]

    def test_constant_oracle_is_fit(self, robots):
        config = TeacherFitConfig(epochs=60, minibatch=32, lr=3e-3, samples=256, hidden_width=16)
        fits = fit_single_robot_teachers(LinearOracle(np.zeros(3), offset=0.3), robots, 3, 1, config)
        assert [fit.morphology_id for fit in fits] == ["r1", "r3"]
        for fit in fits:
            assert not fit.diverged
            assert fit.mse < 1e-3

    def test_different_seeds_give_different_teachers(self, robots, oracle):
        fits = [
            fit_single_robot_teachers(oracle, robots[:1], 3, 1, TeacherFitConfig(epochs=2, samples=64, seed=seed))[0]
            for seed in (0, 1)
        ]
        first, second = (fit.policy.parameter_arrays() for fit in fits)
        assert any(not np.array_equal(first[name], second[name]) for name in first)

    def test_per_robot_teachers_act(self, robots, oracle):
        fits = fit_single_robot_teachers(oracle, robots, 3, 1, TeacherFitConfig(epochs=1, samples=32))
        teachers = PerRobotTeachers({fit.morphology_id: fit.policy for fit in fits})
        means, log_stds = teachers.act(robots[1], np.zeros((5, 3, 3)))
        assert means.shape == log_stds.shape == (5, 3)
        with pytest.raises(DistillationError):
            teachers.act(MorphologyGenerator().random_morphology(np.random.default_rng(9), "other", 2),
                         np.zeros((1, 2, 3)))


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
