import math

import numpy as np
import pytest

from threatlog.features import (
    EncoderSpec,
    FeatureImportanceReport,
    FeatureMatrix,
    MissingFeatureError,
    TypingError,
    fit_encoder,
    fit_importance,
    ordinal_matrix,
    select_top_k,
    transform,
)
from threatlog.models import ForestConfig

from conftest import make_record

PAPER_TABLE = (
    ("dns.qry.name.len", 0.2058),
    ("mqtt.protoname", 0.1388),
    ("mqtt.msg", 0.1097),
    ("mqtt.topic", 0.1014),
    ("mqtt.conack.flags", 0.0956),
    ("tcp.options", 0.0817),
    ("tcp.dstport", 0.0557),
)


def informative_matrix(n=200, noise_features=3, seed=0):
    """Labels depend only on feature 0 (y = 1{A > 0.5}), rest is noise."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, 1 + noise_features))
    labels = ["hi" if v > 0.5 else "lo" for v in X[:, 0]]
    return X, labels


class TestFitImportance:
    def test_informative_feature_ranked_first(self):
        X, labels = informative_matrix()
        names = ["A"] + [f"noise{i}" for i in range(3)]
        report = fit_importance(X, names, labels, ForestConfig(n_estimators=20, seed=1))
        assert report.entries[0][0] == "A"

    def test_importances_sum_to_one(self):
        X, labels = informative_matrix(seed=2)
        names = ["A", "n0", "n1", "n2"]
        report = fit_importance(X, names, labels, ForestConfig(n_estimators=10, seed=2))
        assert sum(v for _, v in report.entries) == pytest.approx(1.0, abs=1e-9)
        assert all(v >= 0 for _, v in report.entries)

    def test_duplicated_informative_feature_splits_importance(self):
        # two identical copies share roughly the single-copy importance and
        # each copy still beats any noise feature
        X, labels = informative_matrix(n=200, noise_features=2, seed=3)
        X_dup = np.column_stack([X[:, 0], X[:, 0], X[:, 1], X[:, 2]])
        names_single = ["A", "n0", "n1"]
        names_dup = ["A1", "A2", "n0", "n1"]
        single = dict(
            fit_importance(X, names_single, labels, ForestConfig(n_estimators=30, seed=4)).entries
        )
        dup = dict(
            fit_importance(X_dup, names_dup, labels, ForestConfig(n_estimators=30, seed=4)).entries
        )
        combined = dup["A1"] + dup["A2"]
        assert combined == pytest.approx(single["A"], abs=0.12)
        assert dup["A1"] > max(dup["n0"], dup["n1"])
        assert dup["A2"] > max(dup["n0"], dup["n1"])

    def test_single_class_errors(self):
        X = np.random.default_rng(0).uniform(size=(20, 2))
        with pytest.raises(ValueError, match="2 classes"):
            fit_importance(X, ["a", "b"], ["same"] * 20)

    def test_row_permutation_does_not_change_selection(self):
        X, labels = informative_matrix(n=150, seed=5)
        names = ["A", "n0", "n1", "n2"]
        cfg = ForestConfig(n_estimators=15, seed=6)
        base = fit_importance(X, names, labels, cfg)
        rng = np.random.default_rng(1)
        perm = rng.permutation(len(labels))
        permuted = fit_importance(X[perm], names, [labels[i] for i in perm], cfg)
        assert select_top_k(base, 2) == select_top_k(permuted, 2)
        assert base.entries == permuted.entries


class TestSelectTopK:
    def test_paper_report_top_seven(self):
        report = FeatureImportanceReport.from_values(
            [n for n, _ in PAPER_TABLE], [v for _, v in PAPER_TABLE]
        )
        assert select_top_k(report, 7) == [n for n, _ in PAPER_TABLE]

    def test_k_equals_feature_count_is_identity(self):
        report = FeatureImportanceReport.from_values(["x", "y"], [0.6, 0.4])
        assert select_top_k(report, 2) == ["x", "y"]

    def test_k_one_picks_maximal(self):
        report = FeatureImportanceReport.from_values(
            [n for n, _ in PAPER_TABLE], [v for _, v in PAPER_TABLE]
        )
        assert select_top_k(report, 1) == ["dns.qry.name.len"]

    def test_k_too_large_errors(self):
        report = FeatureImportanceReport.from_values(["x"], [1.0])
        with pytest.raises(ValueError):
            select_top_k(report, 2)

    def test_tie_broken_by_name(self):
        report = FeatureImportanceReport.from_values(["zeta", "alpha"], [0.5, 0.5])
        assert [n for n, _ in report.entries] == ["alpha", "zeta"]


class TestFitEncoder:
    def test_population_std_oracle(self):
        records = [make_record("XSS", **{"dns.qry.name.len": v}) for v in (2, 4, 6)]
        spec = fit_encoder(records, ("dns.qry.name.len",), ("dns.qry.name.len",))
        enc = spec.numeric["dns.qry.name.len"]
        assert enc.mean == 4.0
        assert enc.std == pytest.approx(math.sqrt(8 / 3), abs=1e-6)
        assert enc.std == pytest.approx(1.632993, abs=1e-6)

    def test_categorical_first_occurrence_order(self):
        records = [make_record("XSS", **{"mqtt.msg": v}) for v in ("a", "b", "a")]
        spec = fit_encoder(records, ("mqtt.msg",), ())
        assert spec.categorical["mqtt.msg"].categories == ("a", "b")
        assert spec.width() == 2

    def test_constant_column_flagged(self):
        records = [make_record("XSS", **{"dns.qry.name.len": 5}) for _ in range(4)]
        spec = fit_encoder(records, ("dns.qry.name.len",), ("dns.qry.name.len",))
        assert spec.numeric["dns.qry.name.len"].std == 0.0
        assert spec.numeric["dns.qry.name.len"].constant

    def test_majority_unparsable_numeric_errors(self):
        records = [make_record("XSS", **{"dns.qry.name.len": v}) for v in ("x", "y", "3")]
        with pytest.raises(TypingError, match="dns.qry.name.len"):
            fit_encoder(records, ("dns.qry.name.len",), ("dns.qry.name.len",))

    def test_empty_partition_errors(self):
        with pytest.raises(ValueError):
            fit_encoder([], ("a",), ())


class TestTransform:
    def test_zscore_on_fit_data(self):
        rng = np.random.default_rng(4)
        records = [
            make_record("XSS", **{"dns.qry.name.len": f"{v:.6f}", "tcp.dstport": i % 5})
            for i, v in enumerate(rng.normal(50, 9, size=200))
        ]
        selected = ("dns.qry.name.len", "tcp.dstport")
        spec = fit_encoder(records, selected, selected)
        matrix = transform(records, spec)
        means = matrix.X.mean(axis=0)
        variances = matrix.X.var(axis=0)
        assert abs(means[0]) < 1e-9 and abs(means[1]) < 1e-9
        assert variances[0] == pytest.approx(1.0, abs=1e-6)
        assert variances[1] == pytest.approx(1.0, abs=1e-6)

    def test_constant_column_emits_zeros(self):
        records = [make_record("XSS", **{"dns.qry.name.len": 5}) for _ in range(3)]
        spec = fit_encoder(records, ("dns.qry.name.len",), ("dns.qry.name.len",))
        matrix = transform(records, spec)
        assert (matrix.X == 0).all()

    def test_unseen_category_zero_block(self):
        train = [make_record("XSS", **{"mqtt.msg": v}) for v in ("a", "b")]
        spec = fit_encoder(train, ("mqtt.msg",), ())
        matrix = transform([make_record("XSS", **{"mqtt.msg": "mqttX"})], spec)
        assert matrix.X.tolist() == [[0.0, 0.0]]

    def test_one_hot_rows(self):
        records = [make_record("XSS", **{"mqtt.msg": v}) for v in ("a", "b", "a")]
        spec = fit_encoder(records, ("mqtt.msg",), ())
        matrix = transform(records, spec)
        assert matrix.X.tolist() == [[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]
        assert matrix.column_names == ("mqtt.msg=a", "mqtt.msg=b")

    def test_width_formula(self):
        records = [
            make_record("XSS", **{"mqtt.msg": f"m{i % 3}", "mqtt.topic": f"t{i % 4}"})
            for i in range(12)
        ]
        selected = ("dns.qry.name.len", "mqtt.msg", "mqtt.topic")
        spec = fit_encoder(records, selected, ("dns.qry.name.len",))
        matrix = transform(records, spec)
        assert matrix.X.shape[1] == 1 + 3 + 4 == spec.width()

    def test_missing_feature_names_record_index(self):
        train = [make_record("XSS")]
        spec = fit_encoder(train, ("mqtt.msg",), ())
        bad = make_record("XSS")
        del bad.features["mqtt.msg"]
        with pytest.raises(MissingFeatureError, match="record 0"):
            transform([bad], spec)

    def test_labels_aligned(self):
        records = [make_record("XSS"), make_record("Normal")]
        spec = fit_encoder(records, ("mqtt.msg",), ())
        matrix = transform(records, spec)
        assert matrix.label_class == ["XSS", "Normal"]
        assert matrix.label_binary == ["Attack", "Normal"]


class TestSerialization:
    def test_encoder_spec_text_round_trip(self):
        records = [
            make_record("XSS", **{"dns.qry.name.len": v, "mqtt.msg": f"m{v % 2}"})
            for v in range(6)
        ]
        spec = fit_encoder(records, ("dns.qry.name.len", "mqtt.msg"), ("dns.qry.name.len",))
        text = spec.to_text()
        assert text.startswith("# threatlog encoder-spec v1")
        back = EncoderSpec.from_text(text)
        assert back == spec

    def test_matrix_csv_round_trip(self, tmp_path):
        records = [make_record("XSS", **{"dns.qry.name.len": v}) for v in (1, 2, 9)]
        spec = fit_encoder(records, ("dns.qry.name.len",), ("dns.qry.name.len",))
        matrix = transform(records, spec)
        path = tmp_path / "m.csv"
        matrix.to_csv(path)
        back = FeatureMatrix.from_csv(path)
        assert np.array_equal(back.X, matrix.X)
        assert back.column_names == matrix.column_names
        assert back.label_class == matrix.label_class


def test_ordinal_matrix_mixed_types():
    records = [
        make_record("XSS", **{"dns.qry.name.len": i, "mqtt.msg": f"m{i % 2}"})
        for i in range(4)
    ]
    X = ordinal_matrix(records, ["dns.qry.name.len", "mqtt.msg"], ["dns.qry.name.len"])
    assert X[:, 0].tolist() == [0.0, 1.0, 2.0, 3.0]
    assert sorted(set(X[:, 1].tolist())) == [0.0, 1.0]
