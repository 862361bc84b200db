"""Cross-validated penalty selection tests."""

import math

import numpy as np
import pytest

from nccqr.conformal import ModelFamily, QuantileModel, TrainConfig
from nccqr.data import Dataset
from nccqr.losses import QuantileLevels
from nccqr.model_selection import CvPlan, alc, default_grid, select_lambda

LEVELS = QuantileLevels.from_alpha(0.1)


def linear_model(coef):
    return QuantileModel(ModelFamily.LINEAR, LEVELS, coef=np.asarray(coef, float))


class TestCvPlan:
    def test_validation(self):
        with pytest.raises(ValueError, match="K"):
            CvPlan(K=1, lambda_grid=(0.0, 1.0))
        with pytest.raises(ValueError, match="nonempty"):
            CvPlan(lambda_grid=())
        with pytest.raises(ValueError, match=">= 0"):
            CvPlan(lambda_grid=(-1.0, 0.0))
        with pytest.raises(ValueError, match="ascending"):
            CvPlan(lambda_grid=(1.0, 1.0))
        with pytest.raises(ValueError, match="ascending"):
            CvPlan(lambda_grid=(2.0, 1.0))

    def test_grid_coerced_to_floats(self):
        plan = CvPlan(lambda_grid=(0, 1, 2))
        assert plan.lambda_grid == (0.0, 1.0, 2.0)

    def test_default_grid_multiples(self):
        n = 148
        ln = math.log(n)
        assert default_grid(n) == (0.0, 0.5 * ln, ln, 2.0 * ln, 4.0 * ln)


class TestAlc:
    def test_width_only_when_ordered(self):
        # f1 = -1, f2 = 1 everywhere: width 2, no crossings
        model = linear_model([[-1.0, 0.0], [1.0, 0.0]])
        fold = Dataset(np.zeros((4, 1)), np.zeros(4))
        assert alc(model, fold) == pytest.approx(2.0)

    def test_crossings_add_unit_counts(self):
        # f1 = 2x, f2 = x: crosses for x > 0
        model = linear_model([[0.0, 2.0], [0.0, 1.0]])
        X = np.array([[-2.0], [-1.0], [1.0], [3.0]])
        fold = Dataset(X, np.zeros(4))
        # widths x - 2x = -x: |.| = [2, 1, 1, 3], mean 7/4; crossings: 2
        assert alc(model, fold) == pytest.approx(7 / 4 + 2)

    def test_mixed_fold_hand_value(self):
        # width -x: eight points at x=-1 (width 1), two at x=0.1 (crossed
        # by 0.1) -> (8*1 + 2*0.1)/10 + 2 = 2.82
        model = linear_model([[0.0, 2.0], [0.0, 1.0]])
        X = np.array([[-1.0]] * 8 + [[0.1]] * 2)
        fold = Dataset(X, np.zeros(10))
        assert alc(model, fold) == pytest.approx(2.82)

    def test_crossings_outweigh_moderate_width_gap(self):
        # each crossed point adds a full unit, so a band 4 units wider
        # still beats one crossed at all 5 fold points
        wide = linear_model([[-2.0, 0.0], [2.0, 0.0]])      # width 4, ordered
        crossed = linear_model([[0.1, 0.0], [0.0, 0.0]])    # width .1, crossed
        fold = Dataset(np.zeros((5, 1)), np.zeros(5))
        assert alc(wide, fold) == pytest.approx(4.0)
        assert alc(crossed, fold) == pytest.approx(5.1)
        assert alc(wide, fold) < alc(crossed, fold)

    def test_empty_fold_rejected(self):
        model = linear_model([[0.0, 0.0], [1.0, 0.0]])
        with pytest.raises(ValueError, match="nonempty"):
            alc(model, Dataset(np.zeros((0, 1)), np.zeros(0)))


FAST = TrainConfig(hidden=(4,), epochs=3)


def toy_train(n=25, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(rng.random((n, 1)), rng.normal(size=n))


class TestSelectLambda:
    def test_returns_grid_member_and_full_table(self):
        plan = CvPlan(K=3, lambda_grid=(0.0, 1.0, 5.0), seed=2)
        lam, table = select_lambda(toy_train(), plan, LEVELS, FAST)
        assert lam in plan.lambda_grid
        assert [row["penalty"] for row in table] == [0.0, 1.0, 5.0]
        for row in table:
            assert len(row["fold_alcs"]) == 3
            assert row["alc"] == pytest.approx(np.mean(row["fold_alcs"]))

    def test_singleton_grid(self):
        plan = CvPlan(K=2, lambda_grid=(0.0,))
        lam, table = select_lambda(toy_train(), plan, LEVELS, FAST)
        assert lam == 0.0
        assert len(table) == 1

    def test_deterministic(self):
        plan = CvPlan(K=3, lambda_grid=(0.0, 2.0), seed=9)
        a = select_lambda(toy_train(), plan, LEVELS, FAST)
        b = select_lambda(toy_train(), plan, LEVELS, FAST)
        assert a == b

    def test_fold_sizes_differ_by_at_most_one(self, monkeypatch):
        # observe the training subsets actually fitted
        seen = []
        import nccqr.model_selection as ms

        real = ms.fit_nccqr

        def spy(train, levels, cfg, scaler=None):
            seen.append(train.n)
            return real(train, levels, cfg, scaler=scaler)

        monkeypatch.setattr(ms, "fit_nccqr", spy)
        plan = CvPlan(K=4, lambda_grid=(0.0,), seed=1)
        select_lambda(toy_train(n=26), plan, LEVELS, FAST)
        # 26 points, 4 folds: fold sizes 7,7,6,6 so train sizes 19,19,20,20
        assert sorted(seen) == [19, 19, 20, 20]

    def test_too_few_rows(self):
        plan = CvPlan(K=5, lambda_grid=(0.0,))
        with pytest.raises(ValueError, match="at least"):
            select_lambda(toy_train(n=4), plan, LEVELS, FAST)

    def test_tie_breaks_to_smaller_lambda(self, monkeypatch):
        # force identical models for every penalty: ALC ties exactly
        import nccqr.model_selection as ms

        def stub(train, levels, cfg, scaler=None):
            return linear_model([[-1.0, 0.0], [1.0, 0.0]])

        monkeypatch.setattr(ms, "fit_nccqr", stub)
        plan = CvPlan(K=2, lambda_grid=(0.0, 1.0, 2.0))
        lam, table = select_lambda(toy_train(), plan, LEVELS, FAST)
        assert lam == 0.0
        assert len({row["alc"] for row in table}) == 1

    def test_crossing_penalized_model_wins(self, monkeypatch):
        # lambda = 0 yields a crossed model, positive lambda an ordered one
        import nccqr.model_selection as ms

        def stub(train, levels, cfg, scaler=None):
            if cfg.penalty == 0.0:
                return linear_model([[0.5, 0.0], [0.0, 0.0]])  # crossed
            return linear_model([[-2.0, 0.0], [2.0, 0.0]])     # wide, ordered
        monkeypatch.setattr(ms, "fit_nccqr", stub)
        plan = CvPlan(K=2, lambda_grid=(0.0, 3.0))
        lam, table = select_lambda(toy_train(n=20), plan, LEVELS, FAST)
        assert lam == 3.0
        # crossed model: width .5 + every fold point crossed
        assert table[0]["alc"] > table[1]["alc"] == pytest.approx(4.0)

    def test_initialization_shared_across_grid(self, monkeypatch):
        # fold k must see the same weight seed for every penalty value
        import nccqr.model_selection as ms

        seeds = {}
        real = ms.fit_nccqr

        def spy(train, levels, cfg, scaler=None):
            seeds.setdefault(cfg.penalty, []).append(cfg.seed)
            return real(train, levels, cfg, scaler=scaler)

        monkeypatch.setattr(ms, "fit_nccqr", spy)
        plan = CvPlan(K=3, lambda_grid=(0.0, 1.0), seed=4)
        select_lambda(toy_train(), plan, LEVELS, FAST)
        assert seeds[0.0] == seeds[1.0]
        assert len(set(seeds[0.0])) == 3  # but folds differ from each other
