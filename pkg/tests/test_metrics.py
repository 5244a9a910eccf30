"""Metric formula tests against brute-force tallies and exhaustive
threshold enumeration."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memtopo.errors import ArgumentError, DimensionError
from memtopo.metrics import (ConfusionCounts, Rate, accuracy, confusion,
                             confusion_matrix, f1, find_modes, fpr, histogram,
                             precision, roc_pr_curves, tpr_recall)


def brute_counts(pred, truth):
    tp = fp = tn = fn = 0
    for p, t in zip(pred, truth):
        if p and t:
            tp += 1
        elif p and not t:
            fp += 1
        elif not p and t:
            fn += 1
        else:
            tn += 1
    return tp, fp, tn, fn


class TestConfusion:
    def test_perfect_prediction(self):
        c = confusion(np.ones(4), np.ones(4))
        assert (c.tp, c.fp, c.tn, c.fn) == (4, 0, 0, 0)

    def test_total_confusion(self):
        truth = np.array([1, 0, 1, 0])
        c = confusion(1 - truth, truth)
        assert c.tp == 0 and c.tn == 0 and c.fp == 2 and c.fn == 2

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            confusion(np.ones(3), np.ones(4))

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 1000))
        pred = rng.integers(0, 2, n)
        truth = rng.integers(0, 2, n)
        c = confusion(pred, truth)
        assert (c.tp, c.fp, c.tn, c.fn) == brute_counts(pred, truth)


class TestRates:
    def test_recall(self):
        assert tpr_recall(ConfusionCounts(tp=8, fp=0, tn=0, fn=2)) == 0.8

    def test_f1_symmetric_case(self):
        # precision = recall = 0.5 -> F1 = 0.5
        c = ConfusionCounts(tp=5, fp=5, tn=0, fn=5)
        assert precision(c) == 0.5 and tpr_recall(c) == 0.5
        assert f1(c) == 0.5

    def test_zero_denominator_flag(self):
        c = ConfusionCounts(tp=0, fp=0, tn=3, fn=2)
        p = precision(c)
        assert p == 0.0 and p.degenerate
        assert not tpr_recall(c).degenerate

    def test_accuracy_bounds_and_formula(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            vals = rng.integers(0, 50, 4)
            if vals.sum() == 0:
                continue
            c = ConfusionCounts(*[int(v) for v in vals])
            a = accuracy(c)
            assert 0.0 <= a <= 1.0
            assert a == (c.tp + c.tn) / c.total

    def test_all_formulas_against_brute_force(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            n = int(rng.integers(1, 60))
            pred = rng.integers(0, 2, n)
            truth = rng.integers(0, 2, n)
            c = confusion(pred, truth)
            tp, fp, tn, fn = brute_counts(pred, truth)
            assert tpr_recall(c) == (tp / (tp + fn) if tp + fn else 0.0)
            assert fpr(c) == (fp / (tn + fp) if tn + fp else 0.0)
            assert precision(c) == (tp / (tp + fp) if tp + fp else 0.0)
            p = tp / (tp + fp) if tp + fp else 0.0
            r = tp / (tp + fn) if tp + fn else 0.0
            expected_f1 = 2 * p * r / (p + r) if p + r else 0.0
            assert f1(c) == pytest.approx(expected_f1, abs=1e-15)
            assert accuracy(c) == (tp + tn) / n


def oracle_curves(probs, truth):
    """Naive threshold enumeration with the same conventions as the
    implementation (>= threshold, trapezoid, anchor points)."""
    thresholds = sorted(set(probs), reverse=True)
    roc = [(float("inf"), 0.0, 0.0)]
    pr = [(float("inf"), 0.0, 1.0)]
    n_pos = int(np.sum(truth))
    n_neg = len(truth) - n_pos
    for thr in thresholds:
        pred = probs >= thr
        tp, fp, tn, fn = brute_counts(pred, truth)
        roc.append((thr, fp / n_neg if n_neg else 0.0,
                    tp / n_pos if n_pos else 0.0))
        pr.append((thr, tp / n_pos if n_pos else 0.0,
                   tp / (tp + fp) if tp + fp else 0.0))
    auc_roc = np.trapezoid([p[2] for p in roc], [p[1] for p in roc])
    auc_pr = np.trapezoid([p[2] for p in pr], [p[1] for p in pr])
    return roc, pr, auc_roc, auc_pr


class TestCurves:
    def test_perfectly_separated(self):
        probs = np.array([0.9, 0.8, 0.2, 0.1])
        truth = np.array([1, 1, 0, 0])
        rep = roc_pr_curves(probs, truth)
        assert rep.auc_roc == 1.0
        assert rep.auc_pr == 1.0

    def test_constant_scores_single_segment(self):
        probs = np.full(20, 0.5)
        truth = np.arange(20) % 2
        rep = roc_pr_curves(probs, truth)
        assert rep.auc_roc == pytest.approx(0.5)
        assert len(rep.roc) == 2  # anchor + the single threshold point

    def test_exhaustive_enumeration_all_small_cases(self):
        # every (scores, labels) case with n <= 8 over a fixed score grid
        rng = np.random.default_rng(3)
        for n in range(1, 9):
            for _ in range(40):
                probs = rng.integers(0, 4, n) / 3.0
                truth = rng.integers(0, 2, n)
                if truth.min() == truth.max():
                    continue  # need both classes for meaningful curves
                rep = roc_pr_curves(probs, truth)
                o_roc, o_pr, o_auc_roc, o_auc_pr = oracle_curves(probs, truth)
                assert rep.auc_roc == pytest.approx(o_auc_roc, abs=1e-12)
                assert rep.auc_pr == pytest.approx(o_auc_pr, abs=1e-12)
                for got, want in zip(rep.roc, o_roc):
                    assert got == pytest.approx(want)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(5)
        probs = rng.random(200)
        truth = rng.integers(0, 2, 200)
        a1 = roc_pr_curves(probs, truth).auc_roc
        a2 = roc_pr_curves(probs ** 3, truth).auc_roc  # strictly monotone
        assert a1 == pytest.approx(a2, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ArgumentError):
            roc_pr_curves(np.array([]), np.array([]))

    def test_out_of_range_rejected(self):
        with pytest.raises(ArgumentError):
            roc_pr_curves(np.array([1.5]), np.array([1]))


class TestConfusionMatrix:
    def test_diagonal_for_perfect(self):
        y = np.array([0, 1, 2, 2])
        cm = confusion_matrix(y, y, 3)
        assert np.array_equal(cm, np.diag([1, 1, 2]))

    def test_counts_sum(self):
        rng = np.random.default_rng(8)
        pred = rng.integers(0, 5, 100)
        truth = rng.integers(0, 5, 100)
        assert confusion_matrix(pred, truth, 5).sum() == 100


class TestModes:
    def test_two_modes(self):
        rng = np.random.default_rng(1)
        vals = np.concatenate([rng.normal(-1, 0.1, 4000),
                               rng.normal(1, 0.1, 4000)])
        modes = find_modes(vals, bins=101, value_range=(-1.5, 1.5))
        assert len(modes) == 2
        assert modes[0] < 0 < modes[1]

    def test_three_modes_after_center_mass(self):
        rng = np.random.default_rng(2)
        vals = np.concatenate([rng.normal(-1, 0.09, 2500),
                               rng.normal(0, 0.002, 5000),
                               rng.normal(1, 0.09, 2500)])
        modes = find_modes(vals, bins=101, value_range=(-1.5, 1.5))
        assert len(modes) == 3

    def test_single_constant_mode(self):
        assert len(find_modes(np.zeros(100), bins=11)) == 1

    def test_two_bin_histogram_valid(self, tmp_path):
        from memtopo.metrics import export_histogram_csv

        counts, edges = histogram(np.array([0.0, 1.0, 1.0]), bins=2)
        path = tmp_path / "h.csv"
        export_histogram_csv(counts, edges, path)
        lines = path.read_text().splitlines()
        assert len(lines) == 3  # header + 2 bins
