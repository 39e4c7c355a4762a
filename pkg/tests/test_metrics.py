import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tempseg import metrics
from tempseg.errors import ShapeMismatchError, ValidationError
from tempseg.flowwarp import warp_labels_nearest


def rand_labels(rng, k, h, w):
    return rng.integers(0, k, (h, w)).astype(np.uint8)


class TestConfusionAndMiou:
    def test_perfect_prediction(self):
        rng = np.random.default_rng(0)
        gt = rand_labels(rng, 3, 8, 8)
        res = metrics.confusion_and_miou([gt.copy()], [gt], 3)
        assert res.miou == 1.0
        assert res.pixel_accuracy == 1.0

    def test_hand_counted_example(self):
        pred = np.array([[0, 0, 1, 1]], dtype=np.uint8)
        gt = np.array([[0, 1, 1, 1]], dtype=np.uint8)
        res = metrics.confusion_and_miou([pred], [gt], 2)
        assert abs(res.per_class_iou[0] - 0.5) < 1e-12
        assert abs(res.per_class_iou[1] - 2 / 3) < 1e-12
        assert abs(res.miou - (0.5 + 2 / 3) / 2) < 1e-12
        assert abs(res.miou - 0.58333) < 5e-6
        assert abs(res.pixel_accuracy - 0.75) < 1e-12

    def test_absent_class_excluded_from_mean(self):
        pred = np.zeros((2, 2), dtype=np.uint8)
        gt = np.zeros((2, 2), dtype=np.uint8)
        res = metrics.confusion_and_miou([pred], [gt], 4)
        assert res.miou == 1.0
        assert np.isnan(res.per_class_iou[1:]).all()

    def test_ignore_pixels_excluded(self):
        pred = np.array([[0, 1]], dtype=np.uint8)
        gt = np.array([[0, 255]], dtype=np.uint8)
        res = metrics.confusion_and_miou([pred], [gt], 2)
        assert res.miou == 1.0

    def test_all_ignored_raises(self):
        pred = np.zeros((2, 2), dtype=np.uint8)
        gt = np.full((2, 2), 255, dtype=np.uint8)
        with pytest.raises(ValidationError):
            metrics.confusion_and_miou([pred], [gt], 2)

    def test_empty_input_raises(self):
        with pytest.raises(ValidationError):
            metrics.confusion_and_miou([], [], 2)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeMismatchError):
            metrics.confusion_and_miou(
                [np.zeros((2, 2), dtype=np.uint8)], [np.zeros((3, 3), dtype=np.uint8)], 2
            )

    def test_out_of_range_prediction_raises(self):
        pred = np.full((2, 2), 7, dtype=np.uint8)
        gt = np.zeros((2, 2), dtype=np.uint8)
        with pytest.raises(ValidationError):
            metrics.confusion_and_miou([pred], [gt], 2)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        pred = rand_labels(rng, 4, 10, 10)
        gt = rand_labels(rng, 4, 10, 10)
        perm = np.array([2, 0, 3, 1], dtype=np.uint8)
        a = metrics.confusion_and_miou([pred], [gt], 4)
        b = metrics.confusion_and_miou([perm[pred]], [perm[gt]], 4)
        assert abs(a.miou - b.miou) < 1e-12
        assert abs(a.pixel_accuracy - b.pixel_accuracy) < 1e-12

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_set_arithmetic_oracle(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 5))
        pred = rand_labels(rng, k, 6, 6)
        gt = rand_labels(rng, k, 6, 6)
        res = metrics.confusion_and_miou([pred], [gt], k)
        for c in range(k):
            inter = int(np.sum((pred == c) & (gt == c)))
            union = int(np.sum((pred == c) | (gt == c)))
            if union == 0:
                assert np.isnan(res.per_class_iou[c])
            else:
                assert abs(res.per_class_iou[c] - inter / union) < 1e-12


class TestTemporalConsistency:
    def test_static_sequence_zero_flow_is_one(self):
        rng = np.random.default_rng(0)
        pred = rand_labels(rng, 3, 6, 6)
        preds = [pred.copy() for _ in range(4)]
        flows = [np.zeros((2, 6, 6)) for _ in range(3)]
        res = metrics.temporal_consistency([preds], [flows], 3)
        assert res.mean_tc == 1.0
        assert all(v == 1.0 for trace in res.traces for v in trace)

    def test_perfectly_tracked_motion_is_one(self):
        # later prediction is the earlier one carried along the flow
        prev = np.zeros((4, 4), dtype=np.uint8)
        prev[1:3, 0:2] = 1
        nxt = np.zeros((4, 4), dtype=np.uint8)
        nxt[1:3, 1:3] = 1
        flow = np.zeros((2, 4, 4))
        flow[0] = 1.0
        assert warp_labels_nearest(nxt, flow)[1:3, 0:2].min() == 1
        res = metrics.temporal_consistency([[prev, nxt]], [[flow]], 2)
        assert res.mean_tc == 1.0

    def test_relabeled_region_matches_confusion_oracle(self):
        rng = np.random.default_rng(2)
        prev = rand_labels(rng, 3, 5, 5)
        nxt = prev.copy()
        nxt[0:2, 0:2] = (nxt[0:2, 0:2] + 1) % 3
        flow = np.zeros((2, 5, 5))
        res = metrics.temporal_consistency([[prev, nxt]], [[flow]], 3)
        conf = metrics.confusion_matrix(nxt, prev, 3)
        expected = float(np.nanmean(metrics.iou_from_confusion(conf)))
        assert abs(res.mean_tc - expected) < 1e-12

    def test_two_level_averaging(self):
        # two sequences of different lengths: pair scores average per
        # sequence first, then across sequences
        a0 = np.zeros((2, 2), dtype=np.uint8)
        a1 = np.array([[0, 0], [1, 1]], dtype=np.uint8)
        z = np.zeros((2, 2, 2))
        res = metrics.temporal_consistency(
            [[a0, a0.copy()], [a0, a1, a1.copy(), a1.copy()]],
            [[z], [z, z, z]],
            2,
        )
        pair = metrics.pair_tc(a0, a1, z, 2)
        expected = (1.0 + (pair + 1.0 + 1.0) / 3) / 2
        assert abs(res.mean_tc - expected) < 1e-12

    def test_trace_mean_equals_sequence_score(self):
        rng = np.random.default_rng(5)
        preds = [rand_labels(rng, 3, 6, 6) for _ in range(5)]
        flows = [rng.uniform(-1, 1, (2, 6, 6)) for _ in range(4)]
        res = metrics.temporal_consistency([preds], [flows], 3)
        assert abs(np.mean(res.traces[0]) - res.per_sequence_tc[0]) < 1e-12
        assert abs(np.mean(res.per_sequence_tc) - res.mean_tc) < 1e-12

    def test_scores_in_unit_interval(self):
        rng = np.random.default_rng(6)
        preds = [rand_labels(rng, 4, 8, 8) for _ in range(4)]
        flows = [rng.uniform(-2, 2, (2, 8, 8)) for _ in range(3)]
        res = metrics.temporal_consistency([preds], [flows], 4)
        assert 0.0 <= res.mean_tc <= 1.0
        for trace in res.traces:
            for v in trace:
                assert 0.0 <= v <= 1.0

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(7)
        preds = [rand_labels(rng, 3, 6, 6) for _ in range(3)]
        flows = [rng.uniform(-1, 1, (2, 6, 6)) for _ in range(2)]
        perm = np.array([1, 2, 0], dtype=np.uint8)
        a = metrics.temporal_consistency([preds], [flows], 3)
        b = metrics.temporal_consistency([[perm[p] for p in preds]], [flows], 3)
        assert abs(a.mean_tc - b.mean_tc) < 1e-12

    def test_short_sequence_raises(self):
        with pytest.raises(ValidationError):
            metrics.temporal_consistency([[np.zeros((2, 2), dtype=np.uint8)]], [[]], 2)

    def test_flow_count_mismatch_raises(self):
        p = np.zeros((2, 2), dtype=np.uint8)
        with pytest.raises(ValidationError):
            metrics.temporal_consistency([[p, p, p]], [[np.zeros((2, 2, 2))]], 2)

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_pair_tc_bounded(self, seed):
        rng = np.random.default_rng(seed)
        prev = rand_labels(rng, 3, 4, 4)
        nxt = rand_labels(rng, 3, 4, 4)
        flow = rng.uniform(-2, 2, (2, 4, 4))
        v = metrics.pair_tc(prev, nxt, flow, 3)
        assert 0.0 <= v <= 1.0


class TestPerClassReport:
    def make_report(self, seed=0):
        rng = np.random.default_rng(seed)
        preds = [rand_labels(rng, 3, 6, 6) for _ in range(2)]
        gts = [rand_labels(rng, 3, 6, 6) for _ in range(2)]
        seqs = [[rand_labels(rng, 3, 6, 6) for _ in range(3)]]
        flows = [[rng.uniform(-1, 1, (2, 6, 6)) for _ in range(2)]]
        return preds, gts, seqs, flows

    def test_rows_match_independent_runs(self):
        preds, gts, seqs, flows = self.make_report()
        rep = metrics.per_class_report(preds, gts, seqs, flows, 3)
        acc = metrics.confusion_and_miou(preds, gts, 3)
        tc = metrics.temporal_consistency(seqs, flows, 3)
        assert np.allclose(rep.per_class_iou, acc.per_class_iou, equal_nan=True)
        assert np.allclose(rep.per_class_tc, tc.per_class_tc, equal_nan=True)
        assert rep.miou == acc.miou
        assert rep.mean_tc == tc.mean_tc

    def test_fields_in_unit_interval(self):
        preds, gts, seqs, flows = self.make_report(3)
        rep = metrics.per_class_report(preds, gts, seqs, flows, 3)
        for v in (rep.miou, rep.pixel_accuracy, rep.mean_tc):
            assert 0.0 <= v <= 1.0

    def test_csv_emission_round_trips(self, tmp_path):
        preds, gts, seqs, flows = self.make_report(4)
        rep = metrics.per_class_report(preds, gts, seqs, flows, 3)
        rep.param_count = 1234
        rep.clip_ids = ["clip_a"]
        metrics.write_report_csvs(rep, tmp_path)

        with open(tmp_path / "metrics.csv") as f:
            rows = {r[0]: r[1] for r in csv.reader(f)}
        assert abs(float(rows["miou"]) - rep.miou) < 1e-9
        assert abs(float(rows["tc"]) - rep.mean_tc) < 1e-9
        assert rows["param_count"] == "1234"

        with open(tmp_path / "per_class.csv") as f:
            body = list(csv.reader(f))[1:]
        assert len(body) == 3
        for c, row in enumerate(body):
            assert row[0] == str(c)
            if not np.isnan(rep.per_class_iou[c]):
                assert abs(float(row[1]) - rep.per_class_iou[c]) < 1e-9

        with open(tmp_path / "tc_trace.csv") as f:
            trace = list(csv.reader(f))[1:]
        assert [r[0] for r in trace] == ["clip_a", "clip_a"]
        assert abs(float(trace[0][2]) - rep.tc_traces[0][0]) < 1e-9

    def test_format_table_mentions_summary(self):
        preds, gts, seqs, flows = self.make_report(5)
        rep = metrics.per_class_report(preds, gts, seqs, flows, 3)
        text = metrics.format_table(rep)
        assert "mIoU" in text and "TC" in text
        assert len(text.splitlines()) >= 3 + 2
