import json

import numpy as np
import pytest

from roadgrip.learn import (
    DEFAULT_PARAMS,
    LABEL_CLIP,
    SFS_PARAMS,
    Dataset,
    GbtParams,
    grow_tree,
    kfold_cv,
    load_model,
    mape,
    model_from_dict,
    model_to_dict,
    save_model,
    sequential_feature_selection,
    train_gbt,
)


def dyadic(rng, shape, denom=16):
    # multiples of 1/denom: every partial sum, square, and midpoint that the
    # split search forms is exactly representable, so the reference
    # implementation must agree bit for bit
    return rng.integers(-2 * denom, 2 * denom + 1, size=shape) / denom


def make_dataset(x, y, prefix="f"):
    names = tuple(f"{prefix}{i}" for i in range(x.shape[1]))
    return Dataset(features=np.asarray(x, float), labels=np.asarray(y, float),
                   feature_names=names)


def brute_best_split(x, r, min_leaf):
    n, d = x.shape
    best = (-np.inf, -1, 0.0)
    total = float(r.sum())
    for f in range(d):
        order = np.argsort(x[:, f], kind="stable")
        v = x[order, f]
        rs = r[order]
        for i in range(n - 1):
            if not v[i] < v[i + 1]:
                continue
            n_l = i + 1
            n_r = n - n_l
            if n_l < min_leaf or n_r < min_leaf:
                continue
            s_l = float(rs[:i + 1].sum())
            s_r = total - s_l
            gain = s_l * s_l / n_l + s_r * s_r / n_r - total * total / n
            if gain > best[0]:
                best = (gain, f, (v[i] + v[i + 1]) / 2.0)
    return best


def brute_tree_predict(x_fit, r, params, x_query):
    """Plain recursive regression tree with the same gain, stopping rules,
    and tie-breaks as the packaged builder."""

    def fit(rows, depth):
        sub = r[rows]
        if depth >= params.max_depth or len(rows) < 2 * params.min_samples_leaf:
            return float(sub.mean())
        gain, f, thr = brute_best_split(x_fit[rows], sub, params.min_samples_leaf)
        if gain <= 1e-12:
            return float(sub.mean())
        go_left = x_fit[rows, f] <= thr
        return (f, thr, fit(rows[go_left], depth + 1), fit(rows[~go_left], depth + 1))

    def descend(node, q):
        while isinstance(node, tuple):
            f, thr, l_branch, r_branch = node
            node = l_branch if q[f] <= thr else r_branch
        return node

    root = fit(np.arange(len(x_fit)), 0)
    return np.array([descend(root, q) for q in x_query])


class TestTreeBuilder:
    def test_matches_reference_on_many_cases(self):
        rng = np.random.default_rng(2024)
        for case in range(12):
            n = int(rng.integers(10, 61))
            d = int(rng.integers(1, 5))
            params = GbtParams(
                n_estimators=1,
                max_depth=int(rng.integers(1, 4)),
                min_samples_leaf=int(rng.choice([1, 2, 5])))
            x = dyadic(rng, (n, d))
            r = dyadic(rng, n)
            queries = np.vstack([x, dyadic(rng, (20, d))])
            tree = grow_tree(x, r, params)
            want = brute_tree_predict(x, r, params, queries)
            assert np.array_equal(tree.predict(queries), want), f"case {case}"

    def test_root_split_matches_reference(self):
        rng = np.random.default_rng(7)
        x = dyadic(rng, (40, 3))
        r = dyadic(rng, 40)
        params = GbtParams(n_estimators=1, max_depth=1, min_samples_leaf=2)
        tree = grow_tree(x, r, params)
        _, feat, thr = brute_best_split(x, r, 2)
        assert tree.feature[0] == feat
        assert tree.threshold[0] == thr

    def test_duplicate_columns_tie_to_lower_feature(self):
        rng = np.random.default_rng(3)
        col = dyadic(rng, 30)
        x = np.column_stack([col, col])
        r = np.where(col > 0, 1.0, -1.0)
        tree = grow_tree(x, r, GbtParams(n_estimators=1, max_depth=1, min_samples_leaf=1))
        assert tree.feature[0] == 0

    def test_constant_residual_makes_a_stump(self):
        x = np.arange(20.0).reshape(-1, 1)
        tree = grow_tree(x, np.full(20, 0.25), DEFAULT_PARAMS)
        assert tree.n_leaves() == 1
        assert tree.predict(x) == pytest.approx(np.full(20, 0.25))

    def test_min_leaf_respected_everywhere(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(120, 3))
        y = np.sin(x[:, 0]) + 0.3 * x[:, 1]
        params = GbtParams(n_estimators=1, max_depth=4, min_samples_leaf=7)
        tree = grow_tree(x, y, params)
        node = np.zeros(len(x), dtype=int)
        while np.any(tree.feature[node] >= 0):
            live = tree.feature[node] >= 0
            cur = node[live]
            go_left = x[live, tree.feature[cur]] <= tree.threshold[cur]
            node[live] = np.where(go_left, tree.left[cur], tree.right[cur])
        counts = np.bincount(node, minlength=len(tree.feature))
        leaves = np.flatnonzero(tree.feature < 0)
        assert np.all(counts[leaves] >= 7)


class TestBoosting:
    def test_recovers_step_function(self):
        x = np.repeat([[0.0], [1.0]], 20, axis=0)
        y = np.repeat([0.3, 0.8], 20)
        model = train_gbt(make_dataset(x, y))
        err = model.predict(x) - y
        assert float(np.mean(err**2)) < 1e-8

    def test_training_mse_never_increases(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(150, 5))
        y = 0.6 + 0.2 * np.tanh(x[:, 0]) + 0.05 * rng.normal(size=150)
        model = train_gbt(make_dataset(x, y), GbtParams(n_estimators=60))
        assert len(model.training_mse) == 60
        assert np.all(np.diff(model.training_mse) <= 1e-12)

    def test_constant_labels(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(30, 2))
        model = train_gbt(make_dataset(x, np.full(30, 0.6)))
        assert np.allclose(model.predict(x), 0.6)
        assert all(t.n_leaves() == 1 for t in model.trees)

    def test_predictions_clamped_to_friction_range(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(30, 2))
        high = train_gbt(make_dataset(x, np.full(30, 2.0)))
        low = train_gbt(make_dataset(x, np.full(30, 0.01)))
        assert np.all(high.predict(x) == LABEL_CLIP[1])
        assert np.all(low.predict(x) == LABEL_CLIP[0])

    def test_single_sample_prediction(self):
        x = np.repeat([[0.0], [1.0]], 10, axis=0)
        y = np.repeat([0.3, 0.8], 10)
        model = train_gbt(make_dataset(x, y))
        one = model.predict(np.array([1.0]))
        assert np.ndim(one) == 0
        assert one == pytest.approx(0.8, abs=1e-3)

    def test_predictions_stay_in_label_range(self):
        rng = np.random.default_rng(14)
        x = rng.normal(size=(200, 4))
        y = 0.5 + 0.3 * np.tanh(x[:, 0] + 0.5 * x[:, 1])
        model = train_gbt(make_dataset(x, y))
        preds = model.predict(rng.normal(scale=3.0, size=(500, 4)))
        assert np.all(preds >= y.min() - 1e-9)
        assert np.all(preds <= y.max() + 1e-9)

    def test_too_few_rows_rejected(self):
        x = np.zeros((19, 1))
        with pytest.raises(ValueError):
            train_gbt(make_dataset(x, np.full(19, 0.5)))

    def test_feature_count_checked(self):
        x = np.repeat([[0.0], [1.0]], 10, axis=0)
        model = train_gbt(make_dataset(x, np.repeat([0.3, 0.8], 10)))
        with pytest.raises(ValueError):
            model.predict(np.zeros((4, 3)))

    def test_deterministic_retraining(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(80, 4))
        y = 0.5 + 0.1 * x[:, 2]
        a = train_gbt(make_dataset(x, y), GbtParams(n_estimators=20))
        b = train_gbt(make_dataset(x, y), GbtParams(n_estimators=20))
        assert (json.dumps(model_to_dict(a), sort_keys=True)
                == json.dumps(model_to_dict(b), sort_keys=True))


class TestMape:
    def test_worked_examples(self):
        assert mape([0.4], [0.36]) == pytest.approx(10.0, abs=1e-12)
        assert mape([0.2, 0.5], [0.22, 0.45]) == pytest.approx(10.0, abs=1e-12)
        assert mape([0.5, 0.4], [0.45, 0.44]) == pytest.approx(10.0, abs=1e-12)

    def test_perfect_prediction(self):
        assert mape([0.3, 0.7], [0.3, 0.7]) == 0.0

    def test_rejects_zero_labels_and_shape_mismatch(self):
        with pytest.raises(ValueError):
            mape([0.0, 0.5], [0.1, 0.5])
        with pytest.raises(ValueError):
            mape([0.5], [0.5, 0.5])


class TestCrossValidation:
    def test_fold_scores(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(60, 3))
        y = 0.6 + 0.2 * np.tanh(x[:, 0])
        ds = make_dataset(x, y)
        scores = kfold_cv(ds, 5, GbtParams(n_estimators=20, max_depth=3))
        assert scores.shape == (5,)
        assert np.all(np.isfinite(scores)) and np.all(scores >= 0)
        again = kfold_cv(ds, 5, GbtParams(n_estimators=20, max_depth=3))
        assert np.array_equal(scores, again)

    def test_perfect_mapping_scores_under_one_percent(self):
        # a margin around the decision boundary keeps every held-out point on
        # the same side as the learned threshold
        rng = np.random.default_rng(13)
        x = rng.normal(size=(160, 3))
        x[:, 1] = rng.choice([-1.0, 1.0], size=160) * rng.uniform(0.5, 1.5, size=160)
        y = np.where(x[:, 1] > 0, 0.7, 0.2)
        scores = kfold_cv(make_dataset(x, y), 8)
        assert np.all(scores < 1.0)

    def test_leave_one_out_boundary(self):
        rng = np.random.default_rng(15)
        x = rng.normal(size=(24, 2))
        y = 0.5 + 0.1 * np.tanh(x[:, 0])
        scores = kfold_cv(make_dataset(x, y), 24, GbtParams(n_estimators=5, max_depth=2))
        assert scores.shape == (24,)

    def test_duplicated_rows_give_equal_fold_scores(self):
        x = np.tile([[1.5, -0.5]], (24, 1))
        y = np.full(24, 0.6)
        scores = kfold_cv(make_dataset(x, y), 8, GbtParams(n_estimators=5))
        assert np.all(np.abs(scores - scores[0]) < 1e-9)

    def test_fold_count_validated(self):
        ds = make_dataset(np.zeros((10, 1)), np.full(10, 0.5))
        with pytest.raises(ValueError):
            kfold_cv(ds, 1)
        with pytest.raises(ValueError):
            kfold_cv(ds, 11)


class TestFeatureSelection:
    def test_finds_the_informative_feature_first(self):
        rng = np.random.default_rng(21)
        x = rng.normal(size=(240, 5))
        y = np.where(x[:, 2] > 0, 0.9, 0.3) + 0.01 * rng.normal(size=240)
        result = sequential_feature_selection(make_dataset(x, y), 2, n_folds=3)
        assert result.order[0] == "f2"
        assert len(result.order) == 2
        assert result.prefix(1) == ("f2",)
        assert result.scores[0] < 5.0

    def test_full_count_is_a_permutation(self):
        rng = np.random.default_rng(22)
        x = rng.normal(size=(60, 2))
        y = 0.5 + 0.1 * x[:, 0]
        result = sequential_feature_selection(make_dataset(x, y), 2, n_folds=3)
        assert set(result.order) == {"f0", "f1"}
        with pytest.raises(ValueError):
            sequential_feature_selection(make_dataset(x, y), 3, n_folds=3)

    def test_exact_ties_break_lexicographically(self):
        rng = np.random.default_rng(23)
        col = rng.normal(size=80)
        x = np.column_stack([col, col])
        y = np.where(col > 0, 0.8, 0.3)
        ds = Dataset(features=x, labels=y, feature_names=("zz", "aa"))
        result = sequential_feature_selection(ds, 1, n_folds=4)
        assert result.order == ("aa",)


class TestSerialization:
    def test_round_trip_preserves_predictions(self, tmp_path):
        rng = np.random.default_rng(31)
        x = rng.normal(size=(100, 4))
        y = 0.6 + 0.15 * np.tanh(x[:, 1]) + 0.02 * rng.normal(size=100)
        model = train_gbt(make_dataset(x, y), GbtParams(n_estimators=25),
                          corpus_digest="abc123")
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        queries = rng.normal(size=(50, 4))
        assert np.array_equal(model.predict(queries), loaded.predict(queries))
        assert loaded.feature_names == model.feature_names
        assert loaded.params == model.params
        assert loaded.corpus_digest == "abc123"
        assert loaded.training_mse == model.training_mse
        assert loaded.label_range == model.label_range

    def test_rejects_unknown_schema(self):
        payload = model_to_dict(train_gbt(make_dataset(
            np.zeros((20, 1)), np.full(20, 0.5)), GbtParams(n_estimators=2)))
        payload["schema"] = "gbt-v999"
        with pytest.raises(ValueError):
            model_from_dict(payload)


class TestDataset:
    def test_validation(self):
        ok = np.full(5, 0.5)
        with pytest.raises(ValueError):
            Dataset(np.zeros((5, 2)), np.full(4, 0.5), ("a", "b"))
        with pytest.raises(ValueError):
            Dataset(np.zeros((5, 2)), ok, ("a",))
        with pytest.raises(ValueError):
            Dataset(np.zeros((5, 2)), ok, ("a", "a"))
        with pytest.raises(ValueError):
            Dataset(np.full((5, 2), np.nan), ok, ("a", "b"))
        with pytest.raises(ValueError):
            Dataset(np.zeros((5, 2)), np.zeros(5), ("a", "b"))
        with pytest.raises(ValueError):
            Dataset(np.zeros((5, 2)), ok, ("a", "b"), run_ids=("r1",))

    def test_take_and_select(self):
        x = np.arange(12.0).reshape(4, 3)
        ds = Dataset(x, np.array([0.1, 0.2, 0.3, 0.4]), ("a", "b", "c"),
                     run_ids=("r0", "r1", "r2", "r3"))
        sub = ds.take([2, 0])
        assert np.array_equal(sub.labels, [0.3, 0.1])
        assert sub.run_ids == ("r2", "r0")
        cols = ds.select_features(["c", "a"])
        assert cols.feature_names == ("c", "a")
        assert np.array_equal(cols.features[:, 0], x[:, 2])
        with pytest.raises(ValueError):
            ds.select_features(["nope"])

    def test_arrays_read_only(self):
        ds = make_dataset(np.zeros((5, 2)), np.full(5, 0.5))
        with pytest.raises(ValueError):
            ds.features[0, 0] = 1.0

    def test_params_validated(self):
        with pytest.raises(ValueError):
            GbtParams(learning_rate=0.0)
        with pytest.raises(ValueError):
            GbtParams(n_estimators=0)
