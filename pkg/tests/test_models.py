import json

import numpy as np
import pytest

from threatlog.models import (
    DivergenceError,
    ForestConfig,
    GBMConfig,
    GBM_PRESETS,
    MLPConfig,
    MLPNetwork,
    TrainedModel,
    balanced_sample_weights,
    load_model,
    save_model,
    train_gbm,
    train_mlp,
    train_random_forest,
)
from threatlog.models.io import model_to_json
from threatlog.models.tree import ClassificationTree


def separable_toy(n=100, seed=0, margin=0.2):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    X[:, 0] += margin * np.sign(X[:, 0])
    y = ["pos" if v > 0 else "neg" for v in X[:, 0]]
    return X, y


def rings_toy(n=300, seed=1):
    """3 concentric rings with radial margins; labels by ring."""
    rng = np.random.default_rng(seed)
    radii = rng.choice([0.5, 1.5, 2.5], size=n)
    radii = radii + rng.uniform(-0.1, 0.1, size=n)
    theta = rng.uniform(0, 2 * np.pi, size=n)
    X = np.column_stack([radii * np.cos(theta), radii * np.sin(theta)])
    labels = np.digitize(radii, [1.0, 2.0])
    y = [f"ring{k}" for k in labels]
    return X, y


class TestRandomForest:
    def test_separable_toy_train_accuracy_one(self):
        X, y = separable_toy()
        model = train_random_forest(X, y, ("neg", "pos"), ForestConfig(n_estimators=25, seed=3))
        assert model.predict(X) == y

    def test_single_class_guard(self):
        X = np.zeros((10, 2))
        with pytest.raises(ValueError, match="2 classes"):
            train_random_forest(X, ["a"] * 10, ("a", "b"), ForestConfig(n_estimators=2))

    def test_same_seed_identical_predictions(self):
        X, y = separable_toy(seed=4)
        Xh, _ = separable_toy(n=40, seed=9)
        cfg = ForestConfig(n_estimators=15, seed=42)
        a = train_random_forest(X, y, ("neg", "pos"), cfg)
        b = train_random_forest(X, y, ("neg", "pos"), cfg)
        assert a.predict(Xh) == b.predict(Xh)
        assert np.array_equal(a.predict_proba(Xh), b.predict_proba(Xh))

    def test_proba_rows_sum_to_one(self):
        X, y = separable_toy(seed=5)
        model = train_random_forest(X, y, ("neg", "pos"), ForestConfig(n_estimators=10, seed=1))
        proba = model.predict_proba(X)
        assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-9)
        assert (proba >= 0).all() and (proba <= 1).all()

    def test_row_permutation_leaves_model_unchanged(self):
        X, y = separable_toy(seed=6)
        cfg = ForestConfig(n_estimators=10, seed=5)
        a = train_random_forest(X, y, ("neg", "pos"), cfg)
        rng = np.random.default_rng(0)
        perm = rng.permutation(len(y))
        b = train_random_forest(X[perm], [y[i] for i in perm], ("neg", "pos"), cfg)
        Xh, _ = separable_toy(n=30, seed=10)
        assert np.array_equal(a.predict_proba(Xh), b.predict_proba(Xh))
        assert a.config["feature_importances"] == b.config["feature_importances"]

    def test_layout_mismatch_errors(self):
        X, y = separable_toy()
        model = train_random_forest(X, y, ("neg", "pos"), ForestConfig(n_estimators=3, seed=1))
        with pytest.raises(ValueError, match="feature columns"):
            model.predict(np.zeros((2, 5)))

    def test_default_config_matches_preset(self):
        cfg = ForestConfig()
        assert cfg.n_estimators == 200
        assert cfg.max_depth is None


class TestGBM:
    def test_training_loss_monotone_without_subsampling(self):
        X, y = rings_toy()
        cfg = GBMConfig(rounds=40, learning_rate=0.1, max_depth=6, subsample=1.0, colsample=1.0, seed=2)
        model = train_gbm(X, y, ("ring0", "ring1", "ring2"), cfg)
        trace = model.loss_trace
        assert len(trace) == 40
        assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))

    def test_rings_toy_reaches_095_and_is_tree_separable(self):
        X, y = rings_toy()
        classes = ("ring0", "ring1", "ring2")
        # oracle: a single depth-6 exact tree must already separate the toy
        index = {c: i for i, c in enumerate(classes)}
        y_idx = np.array([index[v] for v in y])
        tree = ClassificationTree(max_depth=6, max_features=2, min_samples_leaf=1, n_classes=3)
        tree.fit(X, y_idx, np.random.default_rng(0))
        from threatlog.models.tree import tree_apply_class

        tree_acc = (tree_apply_class(tree.root, X, 3).argmax(axis=1) == y_idx).mean()
        assert tree_acc >= 0.95

        model = train_gbm(X, y, classes, "xgb_like")
        acc = np.mean([p == t for p, t in zip(model.predict(X), y)])
        assert acc >= 0.95

    def test_balanced_class_weights_definition(self):
        y = np.array([0, 0, 0, 1, 1, 2])
        w = balanced_sample_weights(y, 3)
        assert w[:3] == pytest.approx([6 / (3 * 3)] * 3)
        assert w[3:5] == pytest.approx([6 / (3 * 2)] * 2)
        assert w[5] == pytest.approx(6 / (3 * 1))
        # weighted counts equal across classes
        for c in range(3):
            assert w[y == c].sum() == pytest.approx(2.0)

    def test_presets_pin_table_values(self):
        xgb = GBM_PRESETS["xgb_like"]
        assert (xgb.rounds, xgb.max_depth, xgb.learning_rate) == (100, 6, 0.1)
        assert (xgb.subsample, xgb.colsample) == (0.8, 0.8)
        assert xgb.seed == 42
        lgbm = GBM_PRESETS["lgbm_like"]
        assert (lgbm.rounds, lgbm.learning_rate) == (300, 0.05)
        assert (lgbm.max_leaves, lgbm.min_data_in_leaf) == (50, 10)
        assert (lgbm.subsample, lgbm.colsample) == (0.7, 0.7)
        assert lgbm.class_weight == "balanced"
        assert lgbm.max_depth is None

    def test_lgbm_like_preset_trains(self):
        X, y = rings_toy(n=150, seed=7)
        cfg = GBMConfig(
            rounds=15,
            learning_rate=0.05,
            max_depth=None,
            max_leaves=50,
            min_data_in_leaf=10,
            subsample=0.7,
            colsample=0.7,
            class_weight="balanced",
            seed=3,
        )
        model = train_gbm(X, y, ("ring0", "ring1", "ring2"), cfg)
        acc = np.mean([p == t for p, t in zip(model.predict(X), y)])
        assert acc >= 0.8

    def test_determinism(self):
        X, y = rings_toy(n=120, seed=8)
        cfg = GBMConfig(rounds=10, max_depth=4, subsample=0.8, colsample=0.8, seed=11)
        a = train_gbm(X, y, ("ring0", "ring1", "ring2"), cfg)
        b = train_gbm(X, y, ("ring0", "ring1", "ring2"), cfg)
        assert a.loss_trace == b.loss_trace
        assert np.array_equal(a.predict_proba(X), b.predict_proba(X))

    def test_unknown_preset_errors(self):
        X, y = separable_toy(20)
        with pytest.raises(ValueError, match="preset"):
            train_gbm(X, y, ("neg", "pos"), "catboost_like")


class TestMLP:
    def test_gradient_check_no_batchnorm(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(20, 2))
        y = rng.integers(0, 3, size=20)
        net = MLPNetwork((2, 4, 3), batchnorm=False, dropout=0.0, seed=7)
        _, grads = net.loss_and_gradients(X, y, train=True)
        h = 1e-5
        worst = 0.0
        for name, param in net.parameters().items():
            it = np.nditer(param, flags=["multi_index"])
            for _ in it:
                ix = it.multi_index
                orig = param[ix]
                param[ix] = orig + h
                lp, _ = net.loss_and_gradients(X, y, train=True)
                param[ix] = orig - h
                lm, _ = net.loss_and_gradients(X, y, train=True)
                param[ix] = orig
                numeric = (lp - lm) / (2 * h)
                denom = max(abs(numeric), abs(grads[name][ix]), 1e-8)
                worst = max(worst, abs(numeric - grads[name][ix]) / denom)
        assert worst < 1e-4

    def test_gradient_check_with_batchnorm(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(12, 3))
        y = rng.integers(0, 2, size=12)
        net = MLPNetwork((3, 5, 2), batchnorm=True, dropout=0.0, seed=2)
        _, grads = net.loss_and_gradients(X, y, train=True)
        h = 1e-5
        for name, param in net.parameters().items():
            it = np.nditer(param, flags=["multi_index"])
            for _ in it:
                ix = it.multi_index
                orig = param[ix]
                param[ix] = orig + h
                lp, _ = net.loss_and_gradients(X, y, train=True)
                param[ix] = orig - h
                lm, _ = net.loss_and_gradients(X, y, train=True)
                param[ix] = orig
                numeric = (lp - lm) / (2 * h)
                denom = max(abs(numeric), abs(grads[name][ix]), 1e-8)
                assert abs(numeric - grads[name][ix]) / denom < 1e-4

    def test_xor_reaches_perfect_training_accuracy(self):
        X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        y = ["zero", "one", "one", "zero"]
        cfg = MLPConfig(
            hidden=(8,), dropout=0.0, batchnorm=False, epochs=2000, batch_size=64, seed=1
        )
        model = train_mlp(X, y, ("zero", "one"), cfg)
        assert model.predict(X) == y

    def test_inference_is_deterministic_with_dropout_config(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(64, 4))
        y = ["a" if v > 0 else "b" for v in X[:, 0]]
        cfg = MLPConfig(hidden=(16,), dropout=0.3, batchnorm=True, epochs=5, batch_size=16, seed=4)
        model = train_mlp(X, y, ("a", "b"), cfg)
        p1 = model.predict_proba(X)
        p2 = model.predict_proba(X)
        assert np.array_equal(p1, p2)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_error_reports_epoch(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(32, 2))
        X[5, 1] = np.inf  # poisoned input drives the loss non-finite
        y = ["a" if v > 0 else "b" for v in X[:, 0]]
        cfg = MLPConfig(
            hidden=(8,), dropout=0.0, batchnorm=False, epochs=2, batch_size=32, seed=0
        )
        with pytest.raises(DivergenceError, match="epoch 0"):
            train_mlp(X, y, ("a", "b"), cfg)

    def test_table_defaults(self):
        cfg = MLPConfig()
        assert cfg.hidden == (256, 128, 64)
        assert cfg.dropout == 0.3
        assert cfg.learning_rate == 0.001
        assert cfg.batch_size == 64
        assert cfg.epochs == 100
        assert (cfg.beta1, cfg.beta2, cfg.adam_eps) == (0.9, 0.999, 1e-8)


class TestPredictContract:
    def test_uniform_tie_takes_first_vocabulary_class(self):
        class Uniform:
            def predict_proba(self, X):
                return np.full((len(X), 3), 1 / 3)

        model = TrainedModel("gbm", ("first", "second", "third"), {}, [], 2, Uniform())
        assert model.predict(np.zeros((2, 2))) == ["first", "first"]

    def test_argmax_consistency(self):
        X, y = separable_toy(60, seed=12)
        model = train_random_forest(X, y, ("neg", "pos"), ForestConfig(n_estimators=5, seed=2))
        proba = model.predict_proba(X)
        labels = model.predict(X)
        for row, label in zip(proba, labels):
            assert label == ("neg", "pos")[int(np.argmax(row))]


class TestModelIO:
    @pytest.mark.parametrize("kind", ["random_forest", "gbm", "mlp"])
    def test_round_trip_preserves_predictions(self, tmp_path, kind):
        X, y = separable_toy(60, seed=13)
        classes = ("neg", "pos")
        if kind == "random_forest":
            model = train_random_forest(X, y, classes, ForestConfig(n_estimators=5, seed=3))
        elif kind == "gbm":
            model = train_gbm(X, y, classes, GBMConfig(rounds=5, max_depth=3, seed=3))
        else:
            model = train_mlp(
                X, y, classes, MLPConfig(hidden=(6,), dropout=0.0, batchnorm=True, epochs=3, seed=3)
            )
        path = tmp_path / "model.json"
        save_model(model, path)
        back = load_model(path)
        assert back.kind == model.kind
        assert back.classes == model.classes
        assert np.array_equal(back.predict_proba(X), model.predict_proba(X))

    def test_retraining_serializes_byte_identically(self, tmp_path):
        X, y = separable_toy(50, seed=14)
        cfg = GBMConfig(rounds=4, max_depth=3, subsample=0.8, colsample=1.0, seed=21)
        a = train_gbm(X, y, ("neg", "pos"), cfg)
        b = train_gbm(X, y, ("neg", "pos"), cfg)
        save_model(a, tmp_path / "a.json")
        save_model(b, tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_version_field_mandatory(self, tmp_path):
        X, y = separable_toy(30, seed=15)
        model = train_random_forest(X, y, ("neg", "pos"), ForestConfig(n_estimators=2, seed=1))
        payload = model_to_json(model)
        del payload["format_version"]
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(payload), encoding="utf-8")
        with pytest.raises(ValueError, match="version"):
            load_model(path)
