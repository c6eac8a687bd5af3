import math
import random

import numpy as np
import pytest

from threatlog.metrics import (
    ConfusionMatrix,
    TfidfSpace,
    classification_report,
    confusion_matrix,
    cosine_similarity,
    mitigation_quality_report,
    rouge_l,
    tokenize,
)
from threatlog.vocab import UNKNOWN_LABEL


# --- independent oracles -----------------------------------------------------


def brute_force_report(truth, predicted, classes):
    """Naive per-class counting straight off the label lists."""
    n = len(truth)
    per = {}
    for c in classes:
        tp = sum(1 for t, p in zip(truth, predicted) if t == c and p == c)
        fp = sum(1 for t, p in zip(truth, predicted) if t != c and p == c)
        support = sum(1 for t in truth if t == c)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per[c] = (precision, recall, f1, support)
    accuracy = sum(1 for t, p in zip(truth, predicted) if t == p) / n
    weighted = tuple(
        sum(per[c][i] * per[c][3] for c in classes) / n for i in range(3)
    )
    return accuracy, weighted, per


def lcs_recursive(a, b, memo=None):
    if memo is None:
        memo = {}
    if not a or not b:
        return 0
    key = (a, b)
    if key in memo:
        return memo[key]
    if a[-1] == b[-1]:
        value = lcs_recursive(a[:-1], b[:-1], memo) + 1
    else:
        value = max(lcs_recursive(a[:-1], b, memo), lcs_recursive(a, b[:-1], memo))
    memo[key] = value
    return value


def lcs_plain_dp(a, b):
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(cur[j], prev[j + 1]))
        prev = cur
    return prev[-1]


# --- confusion matrix --------------------------------------------------------


class TestConfusionMatrix:
    def test_direct_count(self):
        cm = confusion_matrix(["A", "A", "B"], ["A", "B", "B"], ["A", "B"])
        assert cm.matrix[:, :2].tolist() == [[1, 1], [0, 1]]
        assert cm.total == 3

    def test_all_correct_diagonal(self):
        cm = confusion_matrix(["A", "B", "B"], ["A", "B", "B"], ["A", "B"])
        assert cm.accuracy() == 1.0
        assert cm.matrix[:, 2].sum() == 0

    def test_unknown_column_hand_check(self):
        # 4 samples: A->A, A->Unknown, B->A, B->B
        cm = confusion_matrix(
            ["A", "A", "B", "B"], ["A", UNKNOWN_LABEL, "A", "B"], ["A", "B"]
        )
        assert cm.matrix.tolist() == [[1, 0, 1], [1, 1, 0]]
        report = classification_report(cm)
        # precision A: TP=1, predicted-as-A=2 -> 0.5 (Unknown never inflates denominators)
        assert report.per_class[0].precision == 0.5
        # recall A: support counts the Unknown row -> 1/2
        assert report.per_class[0].recall == 0.5
        assert report.accuracy == 0.5

    def test_truth_outside_vocabulary_errors(self):
        with pytest.raises(ValueError, match="truth label"):
            confusion_matrix(["C"], ["A"], ["A", "B"])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            confusion_matrix(["A"], [], ["A"])


class TestClassificationReport:
    def test_hand_arithmetic_case(self):
        cm = ConfusionMatrix(("A", "B"), np.array([[1, 1, 0], [0, 2, 0]], dtype=np.int64))
        report = classification_report(cm)
        assert report.accuracy == 0.75
        assert report.per_class[0].precision == 1.0
        assert report.per_class[1].precision == pytest.approx(2 / 3, abs=1e-12)
        assert report.per_class[0].recall == 0.5
        assert report.per_class[1].recall == 1.0
        assert report.weighted_recall == 0.75

    def test_perfect_diagonal(self):
        cm = ConfusionMatrix(("A", "B"), np.array([[3, 0, 0], [0, 2, 0]], dtype=np.int64))
        report = classification_report(cm)
        assert report.accuracy == report.weighted_f1 == report.weighted_precision == 1.0

    def test_weighted_recall_equals_accuracy_on_random_matrices(self):
        rng = random.Random(7)
        for _ in range(1000):
            k = rng.randint(2, 6)
            classes = [f"c{i}" for i in range(k)]
            n = rng.randint(k, 60)
            truth = [classes[rng.randrange(k)] for _ in range(n)]
            predicted = [
                UNKNOWN_LABEL if rng.random() < 0.1 else classes[rng.randrange(k)]
                for _ in range(n)
            ]
            report = classification_report(confusion_matrix(truth, predicted, classes))
            assert report.weighted_recall == report.accuracy

    def test_matches_brute_force(self):
        rng = random.Random(3)
        for _ in range(200):
            k = rng.randint(2, 8)
            classes = [f"c{i}" for i in range(k)]
            n = rng.randint(k, 80)
            truth = [classes[rng.randrange(k)] for _ in range(n)]
            predicted = [
                UNKNOWN_LABEL if rng.random() < 0.05 else classes[rng.randrange(k)]
                for _ in range(n)
            ]
            report = classification_report(confusion_matrix(truth, predicted, classes))
            accuracy, weighted, per = brute_force_report(truth, predicted, classes)
            assert report.accuracy == pytest.approx(accuracy, abs=1e-12)
            assert report.weighted_precision == pytest.approx(weighted[0], abs=1e-12)
            assert report.weighted_recall == pytest.approx(weighted[1], abs=1e-12)
            assert report.weighted_f1 == pytest.approx(weighted[2], abs=1e-12)
            for line in report.per_class:
                p, r, f1, support = per[line.name]
                assert (line.precision, line.recall, line.f1) == pytest.approx((p, r, f1), abs=1e-12)
                assert line.support == support

    def test_dropping_unknown_column_never_lowers_accuracy(self):
        rng = random.Random(11)
        for _ in range(50):
            classes = ["a", "b", "c"]
            n = rng.randint(6, 50)
            truth = [classes[rng.randrange(3)] for _ in range(n)]
            predicted = [
                UNKNOWN_LABEL if rng.random() < 0.3 else classes[rng.randrange(3)]
                for _ in range(n)
            ]
            known = [(t, p) for t, p in zip(truth, predicted) if p != UNKNOWN_LABEL]
            if not known:
                continue
            full = classification_report(confusion_matrix(truth, predicted, classes))
            kt, kp = zip(*known)
            reduced = classification_report(confusion_matrix(list(kt), list(kp), classes))
            assert reduced.accuracy >= full.accuracy

    def test_values_in_range(self):
        cm = confusion_matrix(["a", "b"], [UNKNOWN_LABEL, "a"], ["a", "b"])
        report = classification_report(cm)
        for line in report.per_class:
            for v in (line.precision, line.recall, line.f1):
                assert 0.0 <= v <= 1.0


# --- ROUGE-L -----------------------------------------------------------------


class TestRougeL:
    def test_identical(self):
        assert rouge_l("Rotate keys, often!", "rotate KEYS often") == 1.0

    def test_token_disjoint(self):
        assert rouge_l("alpha beta", "gamma delta") == 0.0

    def test_spec_worked_example(self):
        # reference "a b c d", candidate "a c d": lcs=3, P=1, R=0.75, F=6/7
        score = rouge_l("a c d", "a b c d")
        assert score == pytest.approx(0.8571, abs=1e-4)
        assert score == pytest.approx(6 / 7, abs=1e-12)

    def test_empty_conventions(self):
        assert rouge_l("", "") == 1.0
        assert rouge_l("a", "") == 0.0
        assert rouge_l("", "a") == 0.0

    def test_swap_symmetry(self):
        rng = random.Random(5)
        words = ["use", "tls", "rotate", "keys", "rate", "limit"]
        for _ in range(300):
            a = " ".join(rng.choice(words) for _ in range(rng.randint(0, 10)))
            b = " ".join(rng.choice(words) for _ in range(rng.randint(0, 10)))
            assert rouge_l(a, b) == rouge_l(b, a)

    def test_tokenizer_contract(self):
        assert tokenize("TLS1.3, enable-now!") == ["tls1", "3", "enable", "now"]
        assert tokenize("naïve café") == ["naïve", "café"]

    def test_bit_parallel_matches_plain_dp_exhaustive_and_random(self):
        import itertools

        for la in range(0, 5):
            for lb in range(0, 5):
                for a in itertools.product("xyz", repeat=la):
                    for b in itertools.product("xyz", repeat=lb):
                        ca, cb = " ".join(a), " ".join(b)
                        ta, tb = tuple(tokenize(ca)), tuple(tokenize(cb))
                        l = lcs_plain_dp(ta, tb)
                        want = (
                            1.0
                            if ta == tb
                            else (0.0 if not l else 2.0 * l / (len(ta) + len(tb)))
                        )
                        assert rouge_l(ca, cb) == want
        rng = random.Random(13)
        words = [f"w{i}" for i in range(9)]
        for _ in range(2000):
            a = [rng.choice(words) for _ in range(rng.randint(0, 40))]
            b = [rng.choice(words) for _ in range(rng.randint(0, 40))]
            ca, cb = " ".join(a), " ".join(b)
            l = lcs_plain_dp(a, b)
            want = 1.0 if a == b else (0.0 if not l else 2.0 * l / (len(a) + len(b)))
            assert rouge_l(ca, cb) == want


# --- tf-idf cosine -----------------------------------------------------------


class TestTfidfCosine:
    def test_identical_exactly_one(self):
        space = TfidfSpace.fit(["rotate keys often", "use tls"])
        assert cosine_similarity("rotate keys often", "Rotate keys often!", space) == 1.0

    def test_token_disjoint_zero(self):
        space = TfidfSpace.fit(["alpha beta", "gamma delta"])
        assert cosine_similarity("alpha beta", "gamma delta", space) == 0.0

    def test_hand_built_three_document_space(self):
        docs = ["rotate keys often", "rotate keys", "use tls"]
        space = TfidfSpace.fit(docs)
        # brute-force oracle: counts * idf, L2-normalize, dot
        n = 3
        df = {"rotate": 2, "keys": 2, "often": 1, "use": 1, "tls": 1}
        idf = {t: math.log((1 + n) / (1 + d)) + 1.0 for t, d in df.items()}

        def vec(text):
            counts = {}
            for t in text.split():
                counts[t] = counts.get(t, 0) + 1
            v = {t: c * idf[t] for t, c in counts.items()}
            norm = math.sqrt(sum(x * x for x in v.values()))
            return {t: x / norm for t, x in v.items()}

        va, vb = vec("rotate keys often"), vec("rotate keys")
        want = sum(va[t] * vb.get(t, 0.0) for t in va)
        got = cosine_similarity("rotate keys often", "rotate keys", space)
        assert got == pytest.approx(want, abs=1e-12)
        assert 0.0 < got < 1.0

    def test_out_of_vocabulary_candidate_is_zero(self):
        space = TfidfSpace.fit(["alpha beta"])
        assert cosine_similarity("zeta", "alpha beta", space) == 0.0


class TestMitigationQuality:
    def test_all_identical_gives_all_ones(self):
        references = {"A": "- use tls.", "B": "- rotate keys."}
        report = mitigation_quality_report(dict(references), references)
        for line in report.per_class:
            assert line.rouge_l == 1.0
            assert line.cosine == 1.0
        assert report.weighted_rouge_l == 1.0
        assert report.weighted_cosine == 1.0

    def test_perturbing_one_class_only_moves_that_class(self):
        references = {"A": "use tls now", "B": "rotate keys daily"}
        candidates = {"A": "use tls now", "B": "rotate keys daily and log"}
        report = mitigation_quality_report(candidates, references)
        by_name = {line.name: line for line in report.per_class}
        assert by_name["A"].rouge_l == 1.0 and by_name["A"].cosine == 1.0
        assert by_name["B"].rouge_l < 1.0

    def test_empty_candidate_scores_zero(self):
        report = mitigation_quality_report({"A": ""}, {"A": "use tls."})
        assert report.per_class[0].rouge_l == 0.0
        assert report.per_class[0].cosine == 0.0

    def test_missing_class_errors(self):
        with pytest.raises(ValueError, match="B"):
            mitigation_quality_report({"A": "x"}, {"A": "x", "B": "y"})

    def test_multiple_candidates_average(self):
        report = mitigation_quality_report(
            {"A": ["use tls", "totally different words"]}, {"A": "use tls"}
        )
        line = report.per_class[0]
        assert line.support == 2
        assert line.rouge_l == pytest.approx(0.5, abs=1e-12)
