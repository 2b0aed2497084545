import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2

from errlab.errors import RankDeficient, WidthMismatch
from errlab.linreg import (LinearModel, SelectionPath, backward_select, expand_interactions, fit_ols,
                           fold_assignment, kfold_cv_rmse, match_interactions, parsimony_select,
                           predict_linear, subset_columns, term_groups)
from errlab.prepare import DesignMatrix, standardize


def dm_of(X, names=None):
    X = np.asarray(X, dtype=float).reshape(len(X), -1)
    names = names or [f"x{j}" for j in range(X.shape[1])]
    return DesignMatrix(X, [{"name": n, "term": n} for n in names])


class TestFitOls:
    def test_exact_line(self):
        x = np.arange(20.0)
        m = fit_ols(dm_of(x), 2 * x)
        assert abs(m.intercept) < 1e-10 and abs(m.coefficients[1] - 2) < 1e-10

    def test_normal_equations_oracle(self):
        gen = np.random.default_rng(0)
        X, y = gen.normal(size=(50, 3)), gen.normal(size=50)
        A = np.column_stack([np.ones(50), X])
        oracle = np.linalg.solve(A.T @ A, A.T @ y)
        np.testing.assert_allclose(fit_ols(dm_of(X), y).coefficients, oracle, atol=1e-8)

    def test_constant_only(self):
        y = np.random.default_rng(1).normal(size=30)
        m = fit_ols(DesignMatrix(np.zeros((30, 0)), []), y)
        assert m.intercept == pytest.approx(y.mean())

    def test_residual_orthogonality(self):
        gen = np.random.default_rng(2)
        X, y = gen.normal(size=(200, 4)) * [1, 10, 100, 0.1], gen.normal(size=200) * 50
        dm = dm_of(X)
        resid = y - predict_linear(fit_ols(dm, y), dm)
        A = np.column_stack([np.ones(200), X])
        assert np.max(np.abs(A.T @ resid)) < 1e-8 * np.abs(A).max() * np.abs(y).max() * 200

    def test_rank_deficient_names_column(self):
        x = np.arange(10.0)
        with pytest.raises(RankDeficient) as err:
            fit_ols(dm_of(np.column_stack([x, 2 * x])), x)
        assert err.value.columns

    def test_too_few_rows(self):
        with pytest.raises(RankDeficient):
            fit_ols(dm_of(np.eye(3)), np.ones(3))

    def test_json_round_trip(self):
        m = fit_ols(dm_of(np.random.default_rng(3).normal(size=(20, 2))), np.arange(20.0))
        back = LinearModel.from_json(m.to_json())
        np.testing.assert_array_equal(back.coefficients, m.coefficients)
        assert back.column_meta == m.column_meta and back.term_groups == m.term_groups

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_adding_column_never_hurts(self, seed):
        gen = np.random.default_rng(seed)
        X, y = gen.normal(size=(40, 4)), gen.normal(size=40)
        small, big = dm_of(X[:, :3]), dm_of(X)
        r_small = np.mean((y - predict_linear(fit_ols(small, y), small)) ** 2)
        r_big = np.mean((y - predict_linear(fit_ols(big, y), big)) ** 2)
        assert r_big <= r_small + 1e-12


class TestPredict:
    def test_constant(self):
        m = LinearModel([3.5, 0.0, 0.0], [{"name": "a"}, {"name": "b"}])
        np.testing.assert_array_equal(predict_linear(m, dm_of(np.ones((4, 2)))), 3.5)

    def test_standardized_test_data(self):
        gen = np.random.default_rng(4)
        tr = standardize(dm_of(gen.normal(5, 2, (100, 3))))
        te = standardize(dm_of(gen.normal(5, 2, (37, 3))), tr.standardization)
        out = predict_linear(fit_ols(tr, gen.normal(size=100)), te)
        assert out.shape == (37,) and np.all(np.isfinite(out))

    def test_width_mismatch(self):
        m = fit_ols(dm_of(np.random.default_rng(5).normal(size=(20, 2))), np.arange(20.0))
        with pytest.raises(WidthMismatch):
            predict_linear(m, dm_of(np.ones((3, 3))))


class TestExpand:
    def test_three_continuous(self):
        dm = dm_of(np.random.default_rng(0).normal(size=(30, 3)), ["a", "b", "c"])
        ex = expand_interactions(dm, 3)
        groups = term_groups(ex)
        assert len(groups) == 7 and "a:b:c" in groups
        assert len(term_groups(expand_interactions(dm, 2))) == 6

    def test_exclusive_dummies_dropped(self):
        level = np.repeat([0, 1, 2], 10)
        d1, d2 = (level == 1).astype(float), (level == 2).astype(float)
        x = np.random.default_rng(1).normal(size=30)
        dm = DesignMatrix(np.column_stack([x, d1, d2]),
                          [{"name": "x", "term": "x"}, {"name": "z=1", "term": "z"}, {"name": "z=2", "term": "z"}])
        ex = expand_interactions(dm, 3)
        assert "z=1:z=2" not in ex.names
        # a product within one term never forms; x:z keeps both dummy products
        assert [n for n in ex.names if n.startswith("x:")] == ["x:z=1", "x:z=2"]

    def test_additive_truth_has_null_interactions(self):
        gen = np.random.default_rng(2)
        X = gen.normal(size=(500, 3))
        y = 1 + X @ [2.0, -1.0, 0.5]
        ex = expand_interactions(dm_of(X, ["a", "b", "c"]), 3)
        m = fit_ols(ex, y)
        inter = [j + 1 for j, meta in enumerate(ex.column_meta) if meta.get("order")]
        assert np.max(np.abs(m.coefficients[inter])) < 1e-6

    def test_match_interactions(self):
        gen = np.random.default_rng(3)
        tr, te = dm_of(gen.normal(size=(20, 3)), list("abc")), dm_of(gen.normal(size=(9, 3)), list("abc"))
        ex_tr = expand_interactions(tr, 3)
        ex_te = match_interactions(ex_tr, te)
        assert ex_te.names == ex_tr.names
        np.testing.assert_allclose(ex_te.values, expand_interactions(te, 3).values)
        with pytest.raises(WidthMismatch):
            match_interactions(ex_tr, dm_of(np.ones((4, 2)), ["a", "b"]))


class TestCv:
    def test_noiseless(self):
        X = np.random.default_rng(0).normal(size=(200, 2))
        assert kfold_cv_rmse(dm_of(X), 3 + X @ [1.0, 2.0], rng=0) < 1e-8

    def test_pure_noise_intercept_only(self):
        y = np.random.default_rng(1).normal(0, 3, 10_000)
        dm = dm_of(np.random.default_rng(2).normal(size=(10_000, 2)))
        score = kfold_cv_rmse(dm, y, term_subset=[], rng=0)
        assert abs(score / y.std(ddof=1) - 1) < 0.05

    def test_deterministic(self):
        gen = np.random.default_rng(3)
        dm, y = dm_of(gen.normal(size=(100, 3))), gen.normal(size=100)
        np.testing.assert_array_equal(fold_assignment(100, 10, 7), fold_assignment(100, 10, 7))
        assert kfold_cv_rmse(dm, y, rng=7) == kfold_cv_rmse(dm, y, rng=7)

    def test_stratified_folds_balanced(self):
        strata = np.r_[np.zeros(90, int), np.ones(10, int)]
        fold = fold_assignment(100, 10, 0, strata)
        assert all((fold[strata == 1] == f).sum() == 1 for f in range(10))

    def test_agrees_with_selection_scorer(self):
        gen = np.random.default_rng(4)
        X = gen.normal(size=(300, 3))
        y = X @ [1.0, 0.5, 0.0] + gen.normal(size=300)
        dm = dm_of(X)
        _, path = backward_select(dm, y, rng=9)
        assert kfold_cv_rmse(dm, y, rng=9) == pytest.approx(path.steps[0][2], abs=1e-9)


class TestBackward:
    def test_recovers_true_terms(self):
        gen = np.random.default_rng(0)
        X = gen.normal(size=(5000, 6))
        y = 2 * X[:, 1] - 3 * X[:, 4] + 0.1 * gen.normal(size=5000)
        model, path = backward_select(dm_of(X), y, rng=1)
        assert {"x1", "x4"} <= set(model.term_groups)

    def test_false_positive_rate(self):
        small, kept = 0, []
        for seed in range(30):
            gen = np.random.default_rng(seed)
            X, y = gen.normal(size=(10_000, 6)), gen.normal(size=10_000)
            model, path = backward_select(dm_of(X), y, rng=seed)
            small += parsimony_select(path, 0.01) <= 1
            kept.append(model.size)
        assert small >= 27
        # the raw CV minimum admits each noise term about as often as a chi2(1) > 2 event
        expected = 6 * chi2.sf(2, 1)
        assert abs(np.mean(kept) - expected) < 3 * np.sqrt(expected / 30)

    def test_path_contract(self, tmp_path):
        gen = np.random.default_rng(2)
        X = gen.normal(size=(200, 3))
        ex = expand_interactions(dm_of(X, list("abc")), 3)
        y = X[:, 0] + gen.normal(size=200)
        _, path = backward_select(ex, y, rng=0)
        sizes = [s[1] for s in path.steps]
        assert sizes == list(range(7, -1, -1))
        path.to_csv(tmp_path / "p.csv")
        rows = list(csv.DictReader(open(tmp_path / "p.csv")))
        assert [int(r["size"]) for r in rows] == sizes and rows[0]["term"] == ""
        # interactions are removed as whole terms
        for size in sizes:
            assert len(term_groups(ex.take_columns(subset_columns(ex, path, size)))) == size

    def test_column_order_invariance(self):
        gen = np.random.default_rng(5)
        X = gen.normal(size=(400, 4))
        y = X[:, 0] - X[:, 2] + gen.normal(size=400)
        m1, _ = backward_select(dm_of(X, list("abcd")), y, rng=3)
        m2, _ = backward_select(dm_of(X[:, ::-1], list("dcba")), y, rng=3)
        assert set(m1.term_groups) == set(m2.term_groups)

    def test_collinear_candidate_routed_around(self):
        gen = np.random.default_rng(6)
        x = gen.normal(size=100)
        dm = dm_of(np.column_stack([x, 2 * x, gen.normal(size=100)]))
        model, path = backward_select(dm, x + gen.normal(size=100), rng=0)
        assert path.steps[0][2] == np.inf
        assert model.size >= 1


class TestParsimony:
    def test_flat(self):
        assert parsimony_select(SelectionPath([(None, 3, 1.0), ("c", 2, 1.0), ("b", 1, 1.0), ("a", 0, 1.0)])) == 0

    def test_strictly_improving(self):
        path = SelectionPath([(None, 3, 1.0), ("c", 2, 0.9), ("b", 1, 0.8), ("a", 0, 2.0)])
        assert parsimony_select(path) == 1

    def test_reference_shape(self):
        # minimum at 44 terms, a 19-term model within 0.01 of it
        steps = [(None, 60, 7.30)]
        for size in range(59, -1, -1):
            if size >= 44:
                cv = 7.30 - 0.005 * (60 - size) / 16
            elif size >= 19:
                cv = 7.295 + 0.012 * (44 - size) / 25 * (size != 19) + 0.0045 * (size == 19)
            else:
                cv = 7.40 + 0.05 * (19 - size)
            steps.append((f"t{size}", size, cv))
        path = SelectionPath(steps)
        assert path.best[1] == 44
        assert parsimony_select(path, 0.01) == 19

    def test_sizes_must_decrease(self):
        with pytest.raises(ValueError):
            SelectionPath([(None, 2, 1.0), ("a", 2, 1.0)])
