import numpy as np
import pytest

from fedcompress.distill import kld_grad_student, kld_loss, temp_softmax
from fedcompress.errors import ShapeError
from fedcompress.nn import backward_from_output_grad, finite_diff_check, forward, init_model


class TestTempSoftmax:
    def test_symmetric_logits_give_uniform(self):
        for temperature in (0.5, 1.0, 7.0):
            p = temp_softmax(np.zeros((2, 3)), temperature)
            assert np.allclose(p, 1.0 / 3.0)

    def test_high_temperature_approaches_uniform(self):
        logits = np.array([[3.0, -1.0, 0.5, 2.0]])
        p = temp_softmax(logits, 1e4)
        assert abs(p.max() - 0.25) < 0.01

    def test_closed_form_two_class(self):
        p = temp_softmax(np.array([[np.log(3.0), 0.0]]), 1.0)
        assert np.allclose(p, [[0.75, 0.25]], atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        p = temp_softmax(rng.normal(scale=20, size=(10, 5)), 3.0)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_non_finite_logits_rejected(self):
        with pytest.raises(ShapeError):
            temp_softmax(np.array([[np.inf, 0.0]]), 1.0)

    def test_non_positive_temperature_rejected(self):
        with pytest.raises(ShapeError):
            temp_softmax(np.zeros((1, 2)), 0.0)


class TestKldLoss:
    def test_identical_distributions_zero(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(size=(6, 4))
        assert kld_loss(logits, logits.copy(), 2.5) == pytest.approx(0.0, abs=1e-15)

    def test_hand_evaluated_example(self):
        teacher = np.array([[np.log(3.0), 0.0]])
        student = np.array([[0.0, 0.0]])
        expected = 0.75 * np.log(1.5) + 0.25 * np.log(0.5)
        assert kld_loss(teacher, student, 1.0) == pytest.approx(expected, abs=1e-9)
        assert kld_loss(teacher, student, 1.0) == pytest.approx(0.130812, abs=1e-6)

    def test_temperature_scaling_identity(self):
        rng = np.random.default_rng(2)
        teacher = rng.normal(size=(5, 4))
        student = rng.normal(size=(5, 4))
        for temperature in (0.5, 2.0, 3.0, 10.0):
            direct = kld_loss(teacher, student, temperature)
            rescaled = temperature**2 * kld_loss(teacher / temperature, student / temperature, 1.0)
            assert direct == pytest.approx(rescaled, abs=1e-9)

    def test_nonnegative(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            t = rng.normal(scale=5, size=(4, 6))
            s = rng.normal(scale=5, size=(4, 6))
            assert kld_loss(t, s, 3.0) >= 0.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            kld_loss(np.zeros((2, 3)), np.zeros((2, 4)), 1.0)


class TestKldGradStudent:
    def test_zero_at_minimum(self):
        logits = np.random.default_rng(4).normal(size=(3, 5))
        grad = kld_grad_student(logits, logits.copy(), 2.0)
        assert np.allclose(grad, 0.0, atol=1e-15)

    def test_rows_sum_to_zero(self):
        rng = np.random.default_rng(5)
        grad = kld_grad_student(rng.normal(size=(7, 4)), rng.normal(size=(7, 4)), 3.0)
        assert np.allclose(grad.sum(axis=1), 0.0, atol=1e-9)

    def test_matches_finite_differences_on_logits(self):
        rng = np.random.default_rng(6)
        teacher = rng.normal(size=(4, 5))
        student = rng.normal(size=(4, 5))
        temperature = 3.0
        grad = kld_grad_student(teacher, student, temperature)
        step = 1e-6
        for i in range(student.shape[0]):
            for j in range(student.shape[1]):
                up = student.copy()
                up[i, j] += step
                down = student.copy()
                down[i, j] -= step
                numeric = (kld_loss(teacher, up, temperature) - kld_loss(teacher, down, temperature)) / (2 * step)
                assert grad[i, j] == pytest.approx(numeric, rel=1e-4, abs=1e-9)

    def test_through_network_gradients_match_finite_differences(self):
        rng = np.random.default_rng(7)
        teacher_model = init_model((4, 6, 3), seed=70)
        student_model = init_model((4, 6, 3), seed=71)
        x = rng.normal(size=(8, 4))
        teacher_logits, _ = forward(teacher_model, x)
        temperature = 3.0

        def loss_and_grad(m):
            student_logits, cache = forward(m, x)
            loss = kld_loss(teacher_logits, student_logits, temperature)
            dlogits = kld_grad_student(teacher_logits, student_logits, temperature)
            return loss, backward_from_output_grad(m, cache, dlogits)

        assert finite_diff_check(loss_and_grad, student_model, step=1e-5) < 1e-4
