"""Counting, F1 arithmetic against a rational oracle, model evaluation."""

from fractions import Fraction

import numpy as np
import pytest

from ecgnet.data import Dataset, LabelVocabulary
from ecgnet.errors import ConfigError, ShapeError
from ecgnet.metrics import (ClassCounts, ConfusionCounts, confusion_counts,
                            evaluate_model, f1_from_counts)
from ecgnet.model import build_model, forward
from ecgnet.autodiff import Tensor


def rational_f1(tp, fp, fn):
    """Exact-arithmetic reference for precision/recall/F1."""
    precision = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
    recall = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
    if precision + recall == 0:
        f1 = Fraction(0)
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return float(precision), float(recall), float(f1)


class TestConfusionCounts:
    def test_perfect_predictions(self):
        sets = [{"a"}, {"b"}, {"a", "b"}, set(), {"b"}]
        counts = confusion_counts(sets, sets, ["a", "b"])
        for name in ("a", "b"):
            assert counts.per_class[name].fp == 0
            assert counts.per_class[name].fn == 0

    def test_hand_counted_example(self):
        preds = [{"x"}, {"x"}, set(), {"x"}, set()]
        truths = [{"x"}, set(), set(), {"x"}, {"x"}]
        counts = confusion_counts(preds, truths, ["x"]).per_class["x"]
        assert (counts.tp, counts.fp, counts.fn, counts.tn) == (2, 1, 1, 1)

    def test_empty_records(self):
        counts = confusion_counts([], [], ["a"])
        cell = counts.per_class["a"]
        assert cell.total == 0

    def test_length_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            confusion_counts([{"a"}], [], ["a"])

    def test_totals_sum_to_record_count(self):
        rng = np.random.default_rng(0)
        preds = [{"a"} if rng.random() > 0.5 else set() for _ in range(50)]
        truths = [{"a"} if rng.random() > 0.5 else set() for _ in range(50)]
        counts = confusion_counts(preds, truths, ["a"])
        assert counts.per_class["a"].total == 50


class TestF1:
    def test_perfect(self):
        counts = ConfusionCounts({"a": ClassCounts(tp=5, tn=5)})
        m = f1_from_counts(counts).per_class["a"]
        assert (m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0)

    def test_spec_example(self):
        counts = ConfusionCounts({"a": ClassCounts(tp=2, fp=1, fn=3)})
        m = f1_from_counts(counts).per_class["a"]
        assert m.precision == pytest.approx(2 / 3)
        assert m.recall == pytest.approx(2 / 5)
        assert m.f1 == pytest.approx(0.5)

    def test_degenerate_zero_convention(self):
        counts = ConfusionCounts({"a": ClassCounts(tn=10)})
        m = f1_from_counts(counts).per_class["a"]
        assert (m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0)

    def test_support_is_true_positives_plus_false_negatives(self):
        counts = ConfusionCounts({"a": ClassCounts(tp=3, fn=4, fp=2, tn=1)})
        assert f1_from_counts(counts).per_class["a"].support == 7

    def test_rational_oracle_thousand_tuples(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            tp, fp, fn = (int(x) for x in rng.integers(0, 50, 3))
            if rng.random() < 0.15:
                tp = 0
            if rng.random() < 0.1:
                fp = 0
            if rng.random() < 0.1:
                fn = 0
            counts = ConfusionCounts({"a": ClassCounts(tp=tp, fp=fp, fn=fn)})
            m = f1_from_counts(counts).per_class["a"]
            p_ref, r_ref, f_ref = rational_f1(tp, fp, fn)
            assert abs(m.precision - p_ref) < 1e-12
            assert abs(m.recall - r_ref) < 1e-12
            assert abs(m.f1 - f_ref) < 1e-12
            assert 0.0 <= m.f1 <= 1.0
            assert m.f1 <= max(m.precision, m.recall) + 1e-12

    def test_symmetry_under_pr_swap(self):
        # swapping fp and fn swaps precision and recall, f1 unchanged
        a = f1_from_counts(ConfusionCounts({"a": ClassCounts(tp=4, fp=2, fn=7)}))
        b = f1_from_counts(ConfusionCounts({"a": ClassCounts(tp=4, fp=7, fn=2)}))
        assert a.per_class["a"].f1 == pytest.approx(b.per_class["a"].f1)
        assert a.per_class["a"].precision == pytest.approx(b.per_class["a"].recall)

    def test_round_trip_dict(self):
        table = f1_from_counts(ConfusionCounts({"a": ClassCounts(tp=1, fp=2, fn=3, tn=4)}))
        from ecgnet.metrics import MetricsTable
        assert MetricsTable.from_dict(table.to_dict()).to_dict() == table.to_dict()


def tiny_model(heads, seed=0):
    from test_model import small_config
    model = build_model(small_config(heads=heads), seed=seed)
    return model


class _StubRecord:
    """Record stand-in shaped for a small test model."""

    def __init__(self, voltages, labels):
        self.voltages = voltages
        self.labels = frozenset(labels)
        self.source_id = "stub"


class TestEvaluateModel:
    def _dataset_for(self, model, label_sets):
        cfg = model.config
        rng = np.random.default_rng(7)
        vocab = LabelVocabulary(["pos", "neg", "unheaded"])
        records = [_StubRecord(rng.standard_normal(
            (cfg.input_channels, cfg.input_length)).astype(np.float32), labels)
            for labels in label_sets]
        return Dataset(records, vocab, {})

    def _force_constant_logits(self, model, per_head):
        x = Tensor(np.random.default_rng(0).standard_normal(
            (4, model.config.input_channels, model.config.input_length)).astype(np.float32))
        forward(model, x, mode="train")  # initialize running stats
        for head, logit in per_head.items():
            model.param(f"head.{head}.w").data[:] = 0
            model.param(f"head.{head}.b").data[:] = logit

    def test_always_correct_model_scores_one(self):
        model = tiny_model(("pos",))
        self._force_constant_logits(model, {"pos": 8.0})
        ds = self._dataset_for(model, [{"pos"}, {"pos"}])
        table = evaluate_model(model, ds)
        assert table.per_class["pos"].f1 == 1.0

    def test_always_negative_model_scores_zero(self):
        model = tiny_model(("pos",))
        self._force_constant_logits(model, {"pos": -8.0})
        ds = self._dataset_for(model, [{"pos"}, {"pos"}, set()])
        table = evaluate_model(model, ds)
        assert table.per_class["pos"].f1 == 0.0

    def test_classes_without_head_omitted(self):
        model = tiny_model(("pos",))
        self._force_constant_logits(model, {"pos": 1.0})
        ds = self._dataset_for(model, [{"pos", "unheaded"}])
        table = evaluate_model(model, ds)
        assert table.classes() == ["pos"]

    def test_matches_bruteforce_recount(self):
        model = tiny_model(("pos", "neg"))
        self._force_constant_logits(model, {"pos": 0.3, "neg": -0.2})
        rng = np.random.default_rng(3)
        label_sets = [set(np.array(["pos", "neg"])[rng.random(2) > 0.5])
                      for _ in range(100)]
        ds = self._dataset_for(model, label_sets)
        table = evaluate_model(model, ds)

        from ecgnet.metrics import model_scores
        scores = model_scores(model, ds)
        for j, name in enumerate(("pos", "neg")):
            tp = fp = fn = 0
            for i, labels in enumerate(label_sets):
                p = scores[i, j] > 0.5
                t = name in labels
                tp += p and t
                fp += p and not t
                fn += (not p) and t
            _, _, f_ref = rational_f1(tp, fp, fn)
            assert table.per_class[name].f1 == pytest.approx(f_ref, abs=1e-12)

    def test_record_order_invariant(self):
        model = tiny_model(("pos",))
        self._force_constant_logits(model, {"pos": 0.1})
        rng = np.random.default_rng(5)
        label_sets = [{"pos"} if rng.random() > 0.4 else set() for _ in range(20)]
        ds = self._dataset_for(model, label_sets)
        table = evaluate_model(model, ds)
        reordered = Dataset(list(reversed(ds.records)), ds.vocabulary, {})
        table2 = evaluate_model(model, reordered)
        assert table.to_dict() == table2.to_dict()

    def test_empty_dataset_rejected(self):
        model = tiny_model(("pos",))
        ds = self._dataset_for(model, [])
        with pytest.raises(ConfigError):
            evaluate_model(model, ds)


class TestDiagnostics:
    def test_rank_auc_perfect_and_random(self):
        from ecgnet.metrics import rank_auc
        scores = np.array([0.9, 0.8, 0.2, 0.1])
        truths = np.array([1.0, 1.0, 0.0, 0.0])
        assert rank_auc(scores, truths) == 1.0
        assert rank_auc(1 - scores, truths) == 0.0
        assert rank_auc(scores, np.ones(4)) == 0.5      # single class
        tied = np.full(4, 0.5)
        assert rank_auc(tied, truths) == 0.5            # all tied

    def test_rank_auc_matches_pair_counting(self):
        from ecgnet.metrics import rank_auc
        rng = np.random.default_rng(11)
        for _ in range(20):
            scores = rng.random(30)
            truths = (rng.random(30) > 0.6).astype(float)
            if truths.sum() in (0, 30):
                continue
            pos = scores[truths == 1]
            neg = scores[truths == 0]
            wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
            expected = wins / (len(pos) * len(neg))
            assert rank_auc(scores, truths) == pytest.approx(expected, abs=1e-12)

    def test_diagnostic_metrics_and_threshold_tuning(self):
        from ecgnet.metrics import diagnostic_metrics, tune_thresholds
        model = tiny_model(("pos",))
        x = Tensor(np.random.default_rng(0).standard_normal(
            (4, model.config.input_channels, model.config.input_length)).astype(np.float32))
        forward(model, x, mode="train")
        model.param("head.pos.w").data[:] = 0
        model.param("head.pos.b").data[:] = 0.4     # sigmoid ~0.6 for all
        rng = np.random.default_rng(1)
        label_sets = [{"pos"} if rng.random() > 0.5 else set() for _ in range(12)]
        from test_metrics import _StubRecord
        ds_records = [_StubRecord(rng.standard_normal(
            (model.config.input_channels, model.config.input_length)).astype(np.float32), s)
            for s in label_sets]
        from ecgnet.data import Dataset, LabelVocabulary
        ds = Dataset(ds_records, LabelVocabulary(["pos"]), {})
        diag = diagnostic_metrics(model, ds)
        assert 0.0 <= diag["pos"]["accuracy"] <= 1.0
        assert 0.0 <= diag["pos"]["auc"] <= 1.0
        cuts = tune_thresholds(model, ds)
        assert 0.0 < cuts["pos"] < 1.0
