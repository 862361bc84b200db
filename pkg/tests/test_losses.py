"""Check loss, crossing penalty, and objective gradient unit tests."""

import numpy as np
import pytest

from nccqr.losses import (
    QuantileLevels,
    check_loss,
    check_subgrad,
    objective_output_grads,
    penalized_objective,
    relu_penalty,
)


class TestQuantileLevels:
    def test_from_alpha(self):
        lv = QuantileLevels.from_alpha(0.1)
        assert lv.tau1 == pytest.approx(0.05)
        assert lv.tau2 == pytest.approx(0.95)

    @pytest.mark.parametrize("pair", [(0.9, 0.1), (0.5, 0.5), (0.0, 0.9),
                                      (0.1, 1.0), (-0.1, 0.5)])
    def test_rejects_bad_pairs(self, pair):
        with pytest.raises(ValueError):
            QuantileLevels(*pair)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.5, 2.0])
    def test_rejects_bad_alpha(self, alpha):
        with pytest.raises(ValueError):
            QuantileLevels.from_alpha(alpha)


class TestCheckLoss:
    def test_hand_values(self):
        assert check_loss(2.0, 0.3) == pytest.approx(0.6)
        assert check_loss(-2.0, 0.3) == pytest.approx(1.4)
        assert check_loss(0.0, 0.7) == 0.0

    def test_nonnegative_and_zero_only_at_origin(self):
        rng = np.random.default_rng(0)
        u = rng.normal(size=1000)
        for tau in (0.05, 0.5, 0.95):
            vals = check_loss(u, tau)
            assert np.all(vals > 0)
            assert check_loss(0.0, tau) == 0.0

    def test_convexity_midpoint(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(2, 500))
        for tau in (0.1, 0.5, 0.9):
            lhs = check_loss((a + b) / 2, tau)
            rhs = (check_loss(a, tau) + check_loss(b, tau)) / 2
            assert np.all(lhs <= rhs + 1e-12)

    def test_asymmetry_weights(self):
        # overprediction of a high quantile is cheap, underprediction dear
        assert check_loss(1.0, 0.9) == pytest.approx(0.9)
        assert check_loss(-1.0, 0.9) == pytest.approx(0.1)

    @pytest.mark.parametrize("tau", [0.0, 1.0, -1.0])
    def test_rejects_bad_tau(self, tau):
        with pytest.raises(ValueError):
            check_loss(1.0, tau)


class TestCheckSubgrad:
    def test_values(self):
        g = check_subgrad(np.array([2.0, -3.0, 0.0]), 0.3)
        assert g.tolist() == [0.3, -0.7, -0.7]

    def test_is_derivative_away_from_kink(self):
        rng = np.random.default_rng(2)
        u = rng.normal(size=200)
        u = u[np.abs(u) > 1e-3]
        h = 1e-7
        for tau in (0.05, 0.5, 0.95):
            fd = (check_loss(u + h, tau) - check_loss(u - h, tau)) / (2 * h)
            assert np.allclose(fd, check_subgrad(u, tau), atol=1e-7)


class TestReluPenalty:
    def test_values(self):
        f1 = np.array([1.0, 0.0, -2.0])
        f2 = np.array([0.0, 0.0, 1.0])
        assert relu_penalty(f1, f2).tolist() == [1.0, 0.0, 0.0]

    def test_zero_iff_ordered(self):
        rng = np.random.default_rng(3)
        f1, f2 = rng.normal(size=(2, 300))
        pen = relu_penalty(f1, f2)
        assert np.array_equal(pen == 0.0, f1 <= f2)


class TestPenalizedObjective:
    def test_single_point_hand_value(self):
        # y=0, f=(1, 0): rho_0.1(-1)=0.9, rho_0.9(0)=0, crossing gap 1
        val = penalized_objective(np.array([[1.0, 0.0]]), np.array([0.0]),
                                  QuantileLevels(0.1, 0.9), 1.0)
        assert val == pytest.approx(1.9)

    def test_matches_manual_mean(self):
        rng = np.random.default_rng(4)
        preds = rng.normal(size=(50, 2))
        y = rng.normal(size=50)
        lv = QuantileLevels(0.2, 0.8)
        lam = 3.0
        manual = np.mean(check_loss(y - preds[:, 0], 0.2)
                         + check_loss(y - preds[:, 1], 0.8)) \
            + lam * np.mean(relu_penalty(preds[:, 0], preds[:, 1]))
        assert penalized_objective(preds, y, lv, lam) == pytest.approx(manual)

    def test_penalty_term_scales_linearly(self):
        preds = np.array([[1.0, 0.0], [0.0, 1.0]])
        y = np.zeros(2)
        lv = QuantileLevels(0.1, 0.9)
        base = penalized_objective(preds, y, lv, 0.0)
        # one crossing of magnitude 1 over two points: slope 1/2 in lambda
        for lam in (1.0, 2.0, 10.0):
            assert penalized_objective(preds, y, lv, lam) == pytest.approx(
                base + lam * 0.5)

    def test_rejects_negative_weight_and_bad_shapes(self):
        lv = QuantileLevels(0.1, 0.9)
        with pytest.raises(ValueError):
            penalized_objective(np.zeros((3, 2)), np.zeros(3), lv, -1.0)
        with pytest.raises(ValueError):
            penalized_objective(np.zeros((3, 3)), np.zeros(3), lv, 1.0)
        with pytest.raises(ValueError):
            penalized_objective(np.zeros((3, 2)), np.zeros(4), lv, 1.0)


class TestObjectiveOutputGrads:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        lv = QuantileLevels(0.05, 0.95)
        lam = 2.5
        preds = rng.normal(size=(40, 2)) * 2.0
        y = rng.normal(size=40)
        # keep every entry away from the loss and penalty kinks
        keep = (np.abs(y - preds[:, 0]) > 1e-3) \
            & (np.abs(y - preds[:, 1]) > 1e-3) \
            & (np.abs(preds[:, 0] - preds[:, 1]) > 1e-3)
        preds, y = preds[keep], y[keep]
        g = objective_output_grads(preds, y, lv, lam)
        h = 1e-6
        for i in range(preds.shape[0]):
            for j in range(2):
                up = preds.copy()
                dn = preds.copy()
                up[i, j] += h
                dn[i, j] -= h
                fd = (penalized_objective(up, y, lv, lam)
                      - penalized_objective(dn, y, lv, lam)) / (2 * h)
                assert g[i, j] == pytest.approx(fd, abs=1e-8)

    def test_tie_contributes_no_penalty_gradient(self):
        preds = np.array([[1.0, 1.0]])
        y = np.array([5.0])
        lv = QuantileLevels(0.1, 0.9)
        with_pen = objective_output_grads(preds, y, lv, 100.0)
        without = objective_output_grads(preds, y, lv, 0.0)
        assert np.array_equal(with_pen, without)

    def test_mean_convention(self):
        # gradients carry the 1/n factor: duplicating the batch halves them
        rng = np.random.default_rng(6)
        preds = rng.normal(size=(10, 2))
        y = rng.normal(size=10)
        lv = QuantileLevels(0.1, 0.9)
        g1 = objective_output_grads(preds, y, lv, 1.0)
        g2 = objective_output_grads(np.vstack([preds, preds]),
                                    np.concatenate([y, y]), lv, 1.0)
        assert np.allclose(g2[:10] * 2.0, g1)
