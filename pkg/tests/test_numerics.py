"""
בדיקות למנוע הטנזורים, לגזירה לאחור ולאופטימייזר
"""
import numpy as np
import pytest

from src.numerics import (
    AdamState, DimensionError, NumericalError, OptimizerError, Tape, Tensor, adam_step, backward,
    clip_global_norm, concat, count_multiplies, derive_seed, dropout, exp, layernorm, matmul,
    named_gradients, numerical_gradient, reduce_mean, reduce_sum, relative_error, reshape, seed_stream,
    set_debug, softmax_rows, take, tanh, transpose,
)


@pytest.fixture
def rng():
    """מחולל אקראיות קבוע לבדיקות"""
    return np.random.default_rng(1234)


def check_gradient(loss_fn, tensor: Tensor, tolerance: float = 1e-6) -> float:
    """השוואת גרדיאנט אנליטי להפרשים מרכזיים"""
    grads = backward(loss_fn())
    analytic = grads[tensor]
    numeric = numerical_gradient(lambda: loss_fn().item(), tensor)
    error = relative_error(analytic, numeric)
    assert error < tolerance, f"relative error {error}"
    return error


class TestTensorOps:
    """בדיקות פעולות בסיס"""

    def test_broadcast_add_gradient_sums_over_broadcast_axes(self):
        """גרדיאנט של הטיה שמשוכפלת על פני השורות"""
        x = Tensor(np.ones((4, 3)), requires_grad=True)
        bias = Tensor(np.zeros(3), requires_grad=True)
        grads = backward(reduce_sum(x + bias))
        np.testing.assert_array_equal(grads[bias], np.full(3, 4.0))
        np.testing.assert_array_equal(grads[x], np.ones((4, 3)))

    def test_incompatible_shapes_raise(self):
        with pytest.raises(DimensionError):
            Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))

    def test_matmul_gradient(self, rng):
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
        check_gradient(lambda: reduce_sum(tanh(matmul(a, b))), a)
        check_gradient(lambda: reduce_sum(tanh(matmul(a, b))), b)

    def test_batched_matmul_broadcasts_weight(self, rng):
        """משקל דו-ממדי משותף ל-batch: הגרדיאנט שלו נסכם"""
        x = Tensor(rng.standard_normal((5, 3, 4)), requires_grad=True)
        w = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
        assert matmul(x, w).shape == (5, 3, 2)
        check_gradient(lambda: reduce_sum(tanh(matmul(x, w))), w)

    def test_matmul_rejects_vectors_and_bad_inner_dims(self):
        with pytest.raises(DimensionError):
            matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))
        with pytest.raises(DimensionError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))

    def test_reduce_axis_out_of_range(self):
        with pytest.raises(DimensionError):
            reduce_mean(Tensor(np.ones((2, 3))), axis=2)

    def test_reshape_and_transpose_gradients(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)
        weights = Tensor(rng.standard_normal((4, 3, 2)))
        check_gradient(lambda: reduce_sum(tanh(transpose(x, (2, 1, 0))) * weights), x)
        check_gradient(lambda: reduce_sum(tanh(reshape(x, (6, 4))) * Tensor(np.arange(24.0).reshape(6, 4))), x)

    def test_take_accumulates_repeated_indices(self):
        """אינדקס שחוזר פעמיים מקבל גרדיאנט כפול"""
        x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        grads = backward(reduce_sum(take(x, np.array([0, 0, 1]))))
        np.testing.assert_array_equal(grads[x], [2.0, 1.0, 0.0])

    def test_take_slice_gradient(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        grads = backward(reduce_sum(x[:, 1:]))
        np.testing.assert_array_equal(grads[x], [[0.0, 1.0, 1.0], [0.0, 1.0, 1.0]])

    def test_concat_splits_gradient(self, rng):
        a = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
        b = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
        scale = Tensor(np.arange(10.0).reshape(2, 5))
        grads = backward(reduce_sum(concat([a, b], axis=-1) * scale))
        np.testing.assert_array_equal(grads[a], scale.data[:, :2])
        np.testing.assert_array_equal(grads[b], scale.data[:, 2:])

    def test_softmax_rows(self, rng):
        x = Tensor(rng.standard_normal((3, 5)) * 3, requires_grad=True)
        np.testing.assert_allclose(softmax_rows(x).data.sum(axis=-1), np.ones(3), atol=1e-12)
        weights = Tensor(rng.standard_normal((3, 5)))
        check_gradient(lambda: reduce_sum(softmax_rows(x) * weights), x)

    def test_softmax_is_stable_for_large_inputs(self):
        y = softmax_rows(Tensor(np.array([[1000.0, 1000.0]])))
        np.testing.assert_allclose(y.data, [[0.5, 0.5]])

    def test_layernorm_gradient(self, rng):
        x = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
        gain = Tensor(rng.standard_normal(6), requires_grad=True)
        bias = Tensor(rng.standard_normal(6), requires_grad=True)
        weights = Tensor(rng.standard_normal((4, 6)))
        loss = lambda: reduce_sum(layernorm(x, gain, bias) * weights)  # noqa: E731
        check_gradient(loss, x)
        check_gradient(loss, gain)

    def test_exp_gradient(self, rng):
        x = Tensor(rng.standard_normal(5), requires_grad=True)
        check_gradient(lambda: reduce_sum(exp(x * 0.5)), x)


class TestBackward:
    """בדיקות ה-Tape"""

    def test_non_scalar_loss_raises(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(DimensionError):
            backward(x * 2.0)

    def test_loss_without_grad_returns_empty_map(self):
        assert backward(reduce_sum(Tensor(np.ones(3)))) == {}

    def test_shared_subexpression_accumulates(self):
        """x משמש פעמיים: d(x*x)/dx = 2x"""
        x = Tensor(np.array([3.0]), requires_grad=True)
        grads = backward(reduce_sum(x * x))
        np.testing.assert_allclose(grads[x], [6.0])

    def test_tape_is_topologically_ordered(self, rng):
        x = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
        y = tanh(x)
        loss = reduce_sum(y * y + y)
        tape = Tape.from_output(loss)
        position = {node.id: i for i, node in enumerate(tape.nodes)}
        for node in tape.nodes:
            for parent in node.parents:
                if parent.requires_grad:
                    assert position[parent.id] < position[node.id]
        assert tape.nodes[-1] is loss

    def test_deep_chain_does_not_recurse(self):
        """שרשרת ארוכה מעבר לעומק הרקורסיה של פייתון"""
        x = Tensor(np.array([1.0]), requires_grad=True)
        y = x
        for _ in range(5000):
            y = y * 1.0
        grads = backward(reduce_sum(y))
        np.testing.assert_allclose(grads[x], [1.0])

    def test_named_gradients_fill_unused_parameters(self):
        used = Tensor(np.ones(2), requires_grad=True)
        unused = Tensor(np.ones(3), requires_grad=True)
        named = named_gradients({"used": used, "unused": unused}, backward(reduce_sum(used)))
        np.testing.assert_array_equal(named["unused"], np.zeros(3))
        np.testing.assert_array_equal(named["used"], np.ones(2))


class TestDropout:
    """בדיקות dropout"""

    def test_eval_mode_is_identity(self, rng):
        x = Tensor(rng.standard_normal((3, 4)))
        assert dropout(x, 0.5, train=False, rng=None) is x

    def test_invalid_probability(self):
        with pytest.raises(ValueError):
            dropout(Tensor(np.ones(3)), 1.0, train=True, rng=np.random.default_rng(0))

    def test_train_mode_scales_survivors(self):
        y = dropout(Tensor(np.ones(10000)), 0.25, train=True, rng=np.random.default_rng(0))
        assert np.all(np.isclose(y.data, 0.0) | np.isclose(y.data, 1 / 0.75))
        assert abs(y.data.mean() - 1.0) < 0.05


class TestDebugMode:
    """בדיקות מצב דיבאג"""

    def test_non_finite_values_raise_in_debug(self):
        set_debug(True)
        try:
            with pytest.raises(NumericalError):
                exp(Tensor(np.array([1000.0])))
        finally:
            set_debug(False)

    def test_non_finite_values_pass_without_debug(self):
        set_debug(False)
        assert np.isinf(exp(Tensor(np.array([1000.0]))).data[0])


class TestMultiplyCounter:
    """בדיקות מונה הכפלים"""

    def test_counts_matmul_multiplies(self):
        with count_multiplies() as counter:
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 4))))
        assert counter.multiplies == 24

    def test_counts_batched_matmul(self):
        with count_multiplies() as counter:
            matmul(Tensor(np.ones((5, 2, 3))), Tensor(np.ones((3, 4))))
        assert counter.multiplies == 5 * 24

    def test_counter_is_scoped(self):
        with count_multiplies() as counter:
            pass
        matmul(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))))
        assert counter.multiplies == 0


class TestOptimizer:
    """בדיקות Adam וחיתוך גרדיאנטים"""

    def test_first_adam_step_moves_by_lr(self):
        """בצעד הראשון, עם תיקון הטיה, כל קואורדינטה זזה ב-lr בכיוון הסימן"""
        params = {"w": Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)}
        grads = {"w": np.array([0.3, -4.0, 2.0])}
        adam_step(params, grads, AdamState(), lr=0.01)
        np.testing.assert_allclose(params["w"].data, [0.99, -1.99, 0.49], atol=1e-9)

    def test_adam_minimizes_quadratic(self):
        target = np.array([0.5, -1.5])
        params = {"x": Tensor(np.array([-0.5, -0.5]), requires_grad=True)}
        state = AdamState()
        for _ in range(1000):
            diff = params["x"] - Tensor(target)
            grads = named_gradients(params, backward(reduce_sum(diff * diff)))
            state = adam_step(params, grads, state, lr=0.01)
        assert np.max(np.abs(params["x"].data - target)) < 1e-2
        assert state.step == 1000

    def test_adam_rejects_non_finite_gradients(self):
        params = {"w": Tensor(np.ones(2), requires_grad=True)}
        with pytest.raises(OptimizerError):
            adam_step(params, {"w": np.array([np.nan, 0.0])}, AdamState())

    def test_clip_global_norm(self):
        grads = {"a": np.array([3.0, 0.0]), "b": np.array([4.0])}
        clipped, norm = clip_global_norm(grads, 1.0)
        assert norm == pytest.approx(5.0)
        total = np.sqrt(sum(np.sum(g ** 2) for g in clipped.values()))
        assert total == pytest.approx(1.0)
        np.testing.assert_allclose(clipped["a"], [0.6, 0.0])

    def test_clip_leaves_small_gradients(self):
        grads = {"a": np.array([0.1, 0.2])}
        clipped, _ = clip_global_norm(grads, 1.0)
        np.testing.assert_array_equal(clipped["a"], grads["a"])

    def test_clip_rejects_non_finite(self):
        with pytest.raises(OptimizerError):
            clip_global_norm({"a": np.array([np.inf])}, 1.0)


class TestSeedStreams:
    """בדיקות זרמי אקראיות בעלי שם"""

    def test_same_name_same_stream(self):
        a = seed_stream(7, "collect").standard_normal(5)
        b = seed_stream(7, "collect").standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_different_names_differ(self):
        a = seed_stream(7, "collect").standard_normal(5)
        b = seed_stream(7, "eval").standard_normal(5)
        assert not np.array_equal(a, b)

    def test_derive_seed_is_deterministic(self):
        assert derive_seed(3, "oracle") == derive_seed(3, "oracle")
        assert derive_seed(3, "oracle") != derive_seed(4, "oracle")


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
