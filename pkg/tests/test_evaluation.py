import itertools

import numpy as np
import pytest
import scipy.stats as sstats

import stressmon
from stressmon.errors import InvalidConfig, TooFewMethods, UnknownControl
from stressmon.evaluation import (
    ConfusionCounts,
    MethodScoreTable,
    confusion,
    dunn_posthoc,
    f1,
    fnr,
    fpr,
    friedman_test,
    load_score_table,
    point_adjust,
    zscore_baseline,
)
from stressmon.vitals import VitalSeries


class TestConfusion:
    def test_counts(self):
        pred = np.array([1, 0, 1, 1, 0, 0])
        true = np.array([1, 1, 0, 1, 0, 1])
        c = confusion(pred, true)
        assert (c.tp, c.fp, c.fn, c.tn) == (2, 1, 2, 1)
        assert f1(c) == pytest.approx(2 * 2 / (2 * 2 + 1 + 2))
        assert fpr(c) == pytest.approx(1 / 2)
        assert fnr(c) == pytest.approx(2 / 4)

    def test_degenerate_zero(self):
        c = ConfusionCounts(tp=0, fp=0, fn=0, tn=5)
        assert f1(c) == 0.0
        assert fpr(c) == 0.0
        assert fnr(c) == 0.0

    def test_f1_brute_force(self, rng):
        pred = rng.integers(0, 2, 200)
        true = rng.integers(0, 2, 200)
        c = confusion(pred, true)
        tp = int(np.sum((pred == 1) & (true == 1)))
        fp_ = int(np.sum((pred == 1) & (true == 0)))
        fn_ = int(np.sum((pred == 0) & (true == 1)))
        expect = 2 * tp / (2 * tp + fp_ + fn_)
        assert f1(c) == pytest.approx(expect, abs=1e-12)


class TestPointAdjust:
    def test_fills_detected_segment(self):
        true = np.array([0, 1, 1, 1, 0, 1, 1, 0])
        pred = np.array([0, 0, 1, 0, 0, 0, 0, 0])
        adj = point_adjust(pred, true)
        np.testing.assert_array_equal(adj, [0, 1, 1, 1, 0, 0, 0, 0])

    def test_no_detection_unchanged(self):
        true = np.array([0, 1, 1, 0])
        pred = np.zeros(4, dtype=int)
        np.testing.assert_array_equal(point_adjust(pred, true), pred)

    def test_false_positives_kept(self):
        true = np.array([0, 0, 1, 1])
        pred = np.array([1, 0, 0, 1])
        np.testing.assert_array_equal(point_adjust(pred, true), [1, 0, 1, 1])


def strictly_ordered_table():
    # method 0 best everywhere, method 2 worst everywhere
    values = np.array([[0.9, 0.8, 0.95, 0.85],
                       [0.7, 0.6, 0.75, 0.65],
                       [0.5, 0.4, 0.55, 0.45]])
    return MethodScoreTable(["a", "b", "c"], ["d1", "d2", "d3", "d4"], values)


class TestFriedman:
    def test_strictly_ordered_hand_value(self):
        stat, p = friedman_test(strictly_ordered_table())
        # rank sums 4, 8, 12 -> 12/(4*3*4)*(16+64+144) - 3*4*4 = 8
        assert stat == pytest.approx(8.0, abs=1e-12)
        assert p == pytest.approx(float(sstats.chi2.sf(8.0, 2)), abs=1e-12)

    def test_matches_scipy(self, rng):
        values = rng.uniform(0, 1, size=(5, 8))
        table = MethodScoreTable([f"m{i}" for i in range(5)],
                                 [f"d{j}" for j in range(8)], values)
        stat, p = friedman_test(table)
        ref = sstats.friedmanchisquare(*values)
        assert stat == pytest.approx(ref.statistic, rel=1e-12)
        assert p == pytest.approx(ref.pvalue, rel=1e-12)

    def test_permutation_rank_oracle(self, rng):
        # recompute the statistic from scratch with explicit rank loops
        values = rng.uniform(0, 1, size=(4, 6))
        table = MethodScoreTable(list("wxyz"), [f"d{j}" for j in range(6)],
                                 values)
        stat, _ = friedman_test(table)
        k, n = values.shape
        rank_sums = np.zeros(k)
        for j in range(n):
            col = values[:, j]
            for i in range(k):
                rank = 1 + sum(col[o] > col[i] for o in range(k))
                rank += sum(col[o] == col[i] for o in range(k) if o != i) / 2
                rank_sums[i] += rank
        expect = 12.0 / (n * k * (k + 1)) * np.sum(rank_sums**2) - 3 * n * (k + 1)
        assert stat == pytest.approx(expect, abs=1e-10)

    def test_all_tied(self):
        table = MethodScoreTable(list("abc"), ["d1", "d2"], np.ones((3, 2)))
        stat, p = friedman_test(table)
        assert stat == 0.0
        assert p == 1.0

    def test_too_few(self):
        with pytest.raises(TooFewMethods):
            friedman_test(MethodScoreTable(["a", "b"], ["d1", "d2"],
                                           np.ones((2, 2))))
        with pytest.raises(TooFewMethods):
            friedman_test(MethodScoreTable(list("abc"), ["d1"], np.ones((3, 1))))


class TestDunn:
    def test_hand_values(self):
        p = dunn_posthoc(strictly_ordered_table(), "a")
        # mean ranks 1, 2, 3; se = sqrt(3*4/(6*4)) = sqrt(0.5)
        se = np.sqrt(0.5)
        for name, diff in [("b", 1.0), ("c", 2.0)]:
            z = diff / se
            assert p[name] == pytest.approx(2 * sstats.norm.sf(z), abs=1e-12)

    def test_bonferroni(self):
        raw = dunn_posthoc(strictly_ordered_table(), "a")
        adj = dunn_posthoc(strictly_ordered_table(), "a", adjust="bonferroni")
        for name in raw:
            assert adj[name] == pytest.approx(min(1.0, 2 * raw[name]))

    def test_holm_monotone(self):
        adj = dunn_posthoc(strictly_ordered_table(), "a", adjust="holm")
        raw = dunn_posthoc(strictly_ordered_table(), "a")
        order = sorted(raw, key=raw.get)
        assert adj[order[0]] <= adj[order[1]]
        assert all(adj[n] >= raw[n] for n in raw)

    def test_unknown_control(self):
        with pytest.raises(UnknownControl):
            dunn_posthoc(strictly_ordered_table(), "zz")

    def test_unknown_adjust(self):
        with pytest.raises(InvalidConfig):
            dunn_posthoc(strictly_ordered_table(), "a", adjust="fdr")


class TestScoreTable:
    def test_bundled_table_shape(self):
        table = stressmon.bundled_score_table()
        assert len(table.methods) == 13
        assert table.datasets == ["DREAMER", "HCI", "WESAD_ECG", "WESAD_BVP"]
        assert float(table.values[table.methods.index("UniTS"), 0]) == 0.869

    def test_subset_preserves_rows(self):
        table = stressmon.bundled_score_table()
        sub = table.subset(["UniTS", "USAD", "GDN"])
        assert sub.methods == ["UniTS", "USAD", "GDN"]
        np.testing.assert_array_equal(
            sub.values[0], table.values[table.methods.index("UniTS")])

    def test_csv_round_trip(self, tmp_path, rng):
        table = strictly_ordered_table()
        path = tmp_path / "t.csv"
        with open(path, "w") as fh:
            fh.write("method," + ",".join(table.datasets) + "\n")
            for m, row in zip(table.methods, table.values):
                fh.write(m + "," + ",".join(f"{v:.6f}" for v in row) + "\n")
        back = load_score_table(path)
        assert back.methods == table.methods
        np.testing.assert_allclose(back.values, table.values)


class TestZscoreBaseline:
    def test_rolling_oracle(self, rng):
        hr = rng.uniform(55, 85, 30)
        hrv = rng.uniform(20, 60, 30)
        v = VitalSeries(hr, hrv, step_s=10.0)
        s = zscore_baseline(v, window=6)
        x = np.stack([hr, hrv], axis=1)
        for i in range(30):
            seg = x[max(0, i - 5):i + 1]
            z = np.abs(x[i] - seg.mean(axis=0)) / np.maximum(seg.std(axis=0), 1e-8)
            assert s.scores[i] == pytest.approx(z.max(), abs=1e-12)

    def test_spike_scores_high(self, rng):
        hr = 60.0 + 0.5 * rng.standard_normal(40)
        hr[25] = 120.0
        v = VitalSeries(hr, np.full(40, 40.0), step_s=10.0)
        s = zscore_baseline(v)
        assert np.argmax(s.scores) == 25
