"""
Tests for detection evaluation: matching, PR curves, AP and report assembly.
"""

import json

import numpy as np
import pytest

from modules.errors import EvaluationError
from modules.evaluation import (
    IOU_SWEEP,
    GroundTruthBox,
    PredictedBox,
    SplitStats,
    average_precision,
    best_f1,
    confusion_matrix,
    evaluate,
    f1,
    iou,
    load_ground_truth,
    load_predictions,
    map_sweep,
    match_dataset,
    match_detections,
    pr_curve,
    range_binned_accuracy,
    render_metrics_table,
    render_range_table,
    validate_split,
)

GT = GroundTruthBox((0.0, 0.0, 10.0, 10.0))


def brute_force_ap(curve):
    """Mean over recall 0.00..1.00 of the best precision at recall >= r."""
    total = 0.0
    for step in range(101):
        r = step / 100
        total += max((p for rec, p in curve if rec >= r), default=0.0)
    return total / 101


def random_box(rng, low=0, high=80):
    x, y = (float(v) for v in rng.integers(low, high, size=2))
    w, h = (float(v) for v in rng.integers(10, 31, size=2))
    return (x, y, x + w, y + h)


def jittered(rng, bbox, spread):
    dx1, dy1, dx2, dy2 = (float(v) for v in rng.integers(-spread, spread + 1, size=4))
    x1, y1, x2, y2 = bbox
    return (x1 + dx1, y1 + dy1, max(x1 + dx1, x2 + dx2), max(y1 + dy1, y2 + dy2))


def random_instance(rng, max_boxes=10, max_images=4):
    """Up to max_boxes ground truths and max_boxes predictions over up to max_images images."""
    image_ids = [f"img{i}" for i in range(int(rng.integers(1, max_images + 1)))]
    gts = {image_id: [] for image_id in image_ids}
    preds = {image_id: [] for image_id in image_ids}
    for _ in range(int(rng.integers(1, max_boxes + 1))):
        gts[image_ids[int(rng.integers(len(image_ids)))]].append(GroundTruthBox(random_box(rng)))
    for _ in range(int(rng.integers(0, max_boxes + 1))):
        image_id = image_ids[int(rng.integers(len(image_ids)))]
        if gts[image_id] and rng.random() < 0.6:
            bbox = jittered(rng, gts[image_id][int(rng.integers(len(gts[image_id])))].bbox, 6)
        else:
            bbox = random_box(rng)
        preds[image_id].append(PredictedBox(bbox, round(float(rng.uniform(0.05, 1.0)), 2)))
    return preds, gts


def separated_instance(rng, max_images=4):
    """Ground truths 60 px apart, so every prediction can only ever overlap one of them."""
    image_ids = [f"img{i}" for i in range(int(rng.integers(1, max_images + 1)))]
    gts = {image_id: [GroundTruthBox((100.0 * j, 50.0, 100.0 * j + 40, 90.0))
                      for j in range(int(rng.integers(0, 4)))]
           for image_id in image_ids}
    if not any(gts.values()):
        gts[image_ids[0]].append(GroundTruthBox((0.0, 50.0, 40.0, 90.0)))
    preds = {image_id: [] for image_id in image_ids}
    for _ in range(int(rng.integers(0, 11))):
        image_id = image_ids[int(rng.integers(len(image_ids)))]
        if gts[image_id] and rng.random() < 0.8:
            bbox = jittered(rng, gts[image_id][int(rng.integers(len(gts[image_id])))].bbox, 12)
        else:
            bbox = random_box(rng, low=300, high=400)
        preds[image_id].append(PredictedBox(bbox, round(float(rng.uniform(0.05, 1.0)), 2)))
    return preds, gts


def pipeline_ap(preds, gts, iou_thresh=0.5):
    return average_precision(pr_curve(match_dataset(preds, gts, iou_thresh)))


def rematched_ap(preds, gts, iou_thresh=0.5):
    """Re-match from scratch at every distinct confidence, then interpolate."""
    gt_total = sum(len(boxes) for boxes in gts.values())
    thresholds = sorted({p.confidence for boxes in preds.values() for p in boxes}, reverse=True)
    points = []
    for thresh in thresholds:
        kept = {image_id: [p for p in boxes if p.confidence >= thresh] for image_id, boxes in preds.items()}
        assignments = match_dataset(kept, gts, iou_thresh)
        tp = sum(a.tp for a in assignments)
        fp = sum(a.fp for a in assignments)
        points.append((tp / gt_total, tp / (tp + fp)))
    return brute_force_ap(points)


class TestIou:
    def test_identical(self):
        assert iou((1, 2, 30, 40), (1, 2, 30, 40)) == 1.0

    def test_disjoint(self):
        assert iou((0, 0, 10, 10), (20, 20, 30, 30)) == 0.0

    def test_half_shift(self):
        assert iou((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(50 / 150)

    def test_degenerate(self):
        assert iou((5, 5, 5, 9), (5, 5, 5, 9)) == 0.0
        assert iou((0, 0, 10, 10), (2, 2, 2, 2)) == 0.0


class TestMatching:
    def test_exact_match(self):
        a = match_detections([PredictedBox(GT.bbox, 0.9)], [GT], 0.5)
        assert (a.tp, a.fp, a.fn) == (1, 0, 0)

    def test_two_predictions_one_truth(self):
        preds = [PredictedBox((0, 0, 10, 9), 0.7), PredictedBox(GT.bbox, 0.9)]
        a = match_detections(preds, [GT], 0.5)
        assert a.pairs == ((1, 0),)
        assert a.false_positives == (0,)

    def test_below_threshold(self):
        a = match_detections([PredictedBox((0, 0, 4, 10), 0.9)], [GT], 0.5)
        assert (a.tp, a.fp, a.fn) == (0, 1, 1)

    def test_prefers_highest_iou_truth(self):
        gts = [GroundTruthBox((0, 0, 10, 10)), GroundTruthBox((1, 0, 11, 10))]
        a = match_detections([PredictedBox((1, 0, 11, 10), 0.8)], gts, 0.5)
        assert a.pairs == ((0, 1),)

    def test_iou_tie_goes_to_lower_index(self):
        gts = [GroundTruthBox((0, 0, 10, 10)), GroundTruthBox((10, 0, 20, 10))]
        a = match_detections([PredictedBox((5, 0, 15, 10), 0.8)], gts, 0.3)
        assert a.pairs == ((0, 0),)

    def test_class_must_agree(self):
        a = match_detections([PredictedBox(GT.bbox, 0.9, class_id=1)], [GT], 0.5)
        assert (a.tp, a.fp, a.fn) == (0, 1, 1)

    def test_confidence_filter_equals_rematching(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            gts = [GroundTruthBox(tuple(float(v) for v in (x, y, x + 20, y + 20)))
                   for x, y in rng.integers(0, 60, size=(3, 2))]
            preds = [PredictedBox(tuple(float(v) for v in (x, y, x + 20, y + 20)), float(c))
                     for (x, y), c in zip(rng.integers(0, 60, size=(4, 2)), rng.random(4).round(2))]
            for thresh in (0.25, 0.5, 0.75):
                full = match_detections(preds, gts, 0.3).at_confidence(thresh)
                kept = [p for p in preds if p.confidence >= thresh]
                direct = match_detections(kept, gts, 0.3)
                assert (full.tp, full.fp, full.fn) == (direct.tp, direct.fp, direct.fn)


class TestCurves:
    def test_single_true_positive(self):
        assert pr_curve([match_detections([PredictedBox(GT.bbox, 0.9)], [GT], 0.5)]) == [(1.0, 1.0)]

    def test_tp_then_fp(self):
        preds = [PredictedBox(GT.bbox, 0.9), PredictedBox((50, 50, 60, 60), 0.8)]
        curve = pr_curve([match_detections(preds, [GT], 0.5)])
        assert curve == [(1.0, 1.0), (1.0, 0.5)]
        assert average_precision(curve) == 1.0

    def test_fp_then_tp(self):
        preds = [PredictedBox((50, 50, 60, 60), 0.9), PredictedBox(GT.bbox, 0.8)]
        assert pr_curve([match_detections(preds, [GT], 0.5)]) == [(0.0, 0.0), (1.0, 0.5)]

    def test_tied_confidences_share_a_point(self):
        preds = [PredictedBox(GT.bbox, 0.8), PredictedBox((50, 50, 60, 60), 0.8)]
        assert pr_curve([match_detections(preds, [GT], 0.5)]) == [(1.0, 0.5)]

    def test_no_ground_truth(self):
        with pytest.raises(EvaluationError):
            pr_curve([match_detections([PredictedBox(GT.bbox, 0.9)], [], 0.5)])

    def test_ap_endpoints(self):
        assert average_precision([(1.0, 1.0)]) == 1.0
        assert average_precision([(0.0, 0.0)]) == 0.0
        assert average_precision([]) == 0.0

    def test_ap_matches_brute_force(self):
        rng = np.random.default_rng(1234)
        for _ in range(1000):
            gt_count = int(rng.integers(1, 8))
            hits = rng.random(int(rng.integers(1, 12))) < 0.6
            confidences = np.sort(rng.random(hits.size).round(2))[::-1]
            tp = fp = 0
            curve = []
            for is_tp, _ in zip(hits, confidences):
                if is_tp and tp < gt_count:
                    tp += 1
                else:
                    fp += 1
                curve.append((tp / gt_count, tp / (tp + fp)))
            assert average_precision(curve) == pytest.approx(brute_force_ap(curve), abs=1e-12)

    def test_ap_matches_rematching_at_every_threshold(self):
        rng = np.random.default_rng(2718)
        for _ in range(1000):
            preds, gts = random_instance(rng)
            ap = pipeline_ap(preds, gts)
            assert 0.0 <= ap <= 1.0
            assert ap == pytest.approx(rematched_ap(preds, gts), abs=1e-9)

    def test_rematching_oracle_at_strict_iou(self):
        rng = np.random.default_rng(3141)
        for _ in range(200):
            preds, gts = random_instance(rng)
            assert pipeline_ap(preds, gts, 0.75) == pytest.approx(rematched_ap(preds, gts, 0.75), abs=1e-9)

    def test_map_sweep_exact_boxes(self):
        gts = {'a': [GT], 'b': [GroundTruthBox((30, 30, 60, 70))]}
        preds = {'a': [PredictedBox(GT.bbox, 0.9)], 'b': [PredictedBox((30, 30, 60, 70), 0.6)]}
        assert map_sweep(preds, gts) == (1.0, 1.0)

    def test_map_sweep_degrades_with_loose_boxes(self):
        gts = {'a': [GT]}
        preds = {'a': [PredictedBox((0, 0, 10, 7), 0.9)]}  # IoU 0.7
        ap50, mean_ap = map_sweep(preds, gts)
        assert ap50 == 1.0
        assert mean_ap == pytest.approx(sum(t <= 0.7 for t in IOU_SWEEP) / 10)

    def test_unknown_prediction_image(self):
        with pytest.raises(EvaluationError) as excinfo:
            match_dataset({'ghost': []}, {'a': [GT]}, 0.5)
        assert excinfo.value.offender == 'ghost'


class TestMetricLaws:
    def test_ap_depends_only_on_confidence_order(self):
        rng = np.random.default_rng(61)
        for _ in range(300):
            preds, gts = random_instance(rng)
            ap = pipeline_ap(preds, gts)
            for transform in (lambda c: c ** 2, lambda c: 0.5 * c + 0.25):
                moved = {image_id: [PredictedBox(p.bbox, transform(p.confidence)) for p in boxes]
                         for image_id, boxes in preds.items()}
                assert pipeline_ap(moved, gts) == ap

    def test_trailing_false_positive_never_raises_ap(self):
        rng = np.random.default_rng(62)
        for _ in range(300):
            preds, gts = random_instance(rng)
            confidences = [p.confidence for boxes in preds.values() for p in boxes]
            lowest = min(confidences) / 2 if confidences else 0.5
            first_image = next(iter(preds))
            extended = {**preds, first_image: preds[first_image] + [PredictedBox((900, 900, 910, 910), lowest)]}
            assert pipeline_ap(extended, gts) <= pipeline_ap(preds, gts)

    def test_sweep_mean_never_exceeds_ap50(self):
        rng = np.random.default_rng(63)
        for _ in range(300):
            preds, gts = separated_instance(rng)
            aps = [pipeline_ap(preds, gts, thresh) for thresh in IOU_SWEEP]
            assert all(later <= earlier for earlier, later in zip(aps, aps[1:]))
            ap50, mean_ap = map_sweep(preds, gts)
            assert ap50 == aps[0]
            assert mean_ap <= ap50 + 1e-12

    def test_every_box_is_counted_exactly_once(self):
        rng = np.random.default_rng(64)
        for _ in range(300):
            preds, gts = random_instance(rng)
            for assignment in match_dataset(preds, gts, 0.5):
                for thresh in (0.0, 0.3, 0.6, 0.9):
                    kept = assignment.at_confidence(thresh)
                    image_preds = preds[assignment.image_id]
                    assert kept.tp + kept.fn == len(gts[assignment.image_id])
                    assert kept.tp + kept.fp == sum(p.confidence >= thresh for p in image_preds)

    def test_f1_is_symmetric(self):
        rng = np.random.default_rng(65)
        for precision, recall in rng.random((1000, 2)):
            p, r = float(precision), float(recall)
            assert f1(p, r) == f1(r, p)


class TestSummaries:
    def test_f1_reference_values(self):
        assert f1(0.9544, 0.9596) == pytest.approx(0.9570, abs=1e-4)
        assert f1(0.0, 0.0) == 0.0

    def test_confusion_background_row(self):
        a = match_detections([PredictedBox(GT.bbox, 0.9), PredictedBox((50, 50, 60, 60), 0.7)], [GT], 0.5)
        confusion = confusion_matrix([a], 0.5)
        assert (confusion['tp'], confusion['fp'], confusion['fn'], confusion['tn']) == (1, 1, 0, None)
        assert confusion['normalized']['deer'] == {'deer': 1.0, 'background': 0.0}
        assert confusion['normalized']['background'] == {'deer': 1.0, 'background': None}

    def test_confusion_respects_threshold(self):
        a = match_detections([PredictedBox(GT.bbox, 0.4)], [GT], 0.5)
        confusion = confusion_matrix([a], 0.5)
        assert (confusion['tp'], confusion['fp'], confusion['fn']) == (0, 0, 1)
        assert confusion['normalized']['background']['deer'] is None

    @pytest.mark.parametrize('false_positives', [1, 2, 7])
    def test_background_row_is_saturated_by_any_fp(self, false_positives):
        preds = [PredictedBox((200 + i, 10, 210 + i, 20), 0.8) for i in range(false_positives)]
        confusion = confusion_matrix([match_detections(preds, [GT], 0.5)], 0.5)
        assert confusion['fp'] == false_positives
        assert confusion['normalized']['background'] == {'deer': 1.0, 'background': None}
        assert confusion['normalized']['deer'] == {'deer': 0.0, 'background': 1.0}

    @pytest.mark.parametrize('distance, label', [
        (0.0, '<20'), (19.99, '<20'), (20.0, '20-50'), (50.0, '50-70'),
        (70.0, '70-100'), (99.9, '70-100'), (100.0, '>100'), (250.0, '>100'),
    ])
    def test_range_bin_edges(self, distance, label):
        gts = {'a': [GroundTruthBox(GT.bbox, est_distance_ft=distance)]}
        bins = range_binned_accuracy(gts, match_dataset({'a': [PredictedBox(GT.bbox, 0.9)]}, gts, 0.5))
        by_label = {b['range']: b for b in bins}
        assert by_label[label]['ground_truths'] == 1
        assert by_label[label]['accuracy'] == 1.0
        assert sum(b['ground_truths'] for b in bins) == 1

    def test_range_bins_need_distances(self):
        gts = {'a': [GT]}
        with pytest.raises(EvaluationError):
            range_binned_accuracy(gts, match_dataset({}, gts, 0.5))

    def test_best_f1_prefers_higher_confidence_on_tie(self):
        curve = [{'confidence': 0.9, 'f1': 0.5}, {'confidence': 0.6, 'f1': 0.5}]
        assert best_f1(curve) == {'confidence': 0.9, 'f1': 0.5}
        assert best_f1([]) is None


class TestSplits:
    def test_reported_split(self):
        result = validate_split(SplitStats(9118, 2009, 910, 12037, reported_pct=(75.8, 16.7, 7.6)))
        assert result['passed'] is True
        assert result['percentages'] == [75.75, 16.69, 7.56]

    def test_counts_must_sum(self):
        result = validate_split(SplitStats(9118, 2009, 900, 12037))
        assert result['passed'] is False
        assert 'split counts sum to 12027, not 12037' in result['issues']

    def test_percentage_mismatch(self):
        result = validate_split(SplitStats(9118, 2009, 910, 12037, reported_pct=(70.0, 16.7, 7.6)))
        assert result['passed'] is False
        assert result['issues'][0].startswith('train share')

    def test_empty_dataset(self):
        result = validate_split(SplitStats(0, 0, 0, 0))
        assert result['passed'] is False
        assert result['percentages'] is None
        assert 'empty dataset' in result['issues']


class TestReport:
    def test_mixed_fixture_matches_golden(self, fixtures_dir):
        report = evaluate(load_ground_truth(fixtures_dir / 'eval_mixed_gt.jsonl'),
                          load_predictions(fixtures_dir / 'eval_mixed_pred.jsonl'))
        golden = json.loads((fixtures_dir / 'eval_mixed_report.json').read_text())
        assert report.to_dict() == golden

    def test_perfect_predictions(self, fixtures_dir):
        report = evaluate(load_ground_truth(fixtures_dir / 'eval_perfect_gt.jsonl'),
                          load_predictions(fixtures_dir / 'eval_perfect_pred.jsonl'))
        assert (report.precision, report.recall, report.f1) == (1.0, 1.0, 1.0)
        assert (report.ap50, report.map5095) == (1.0, 1.0)
        assert [b['accuracy'] for b in report.range_bins] == [1.0, 1.0, 1.0, None, None]

    def test_mismatched_image_ids(self, fixtures_dir):
        with pytest.raises(EvaluationError) as excinfo:
            evaluate(load_ground_truth(fixtures_dir / 'eval_mixed_gt.jsonl'),
                     load_predictions(fixtures_dir / 'eval_mismatched_pred.jsonl'))
        assert excinfo.value.offender == 'img9'

    def test_empty_ground_truth(self):
        with pytest.raises(EvaluationError):
            evaluate({'a': []}, {})

    def test_missing_distances_skip_bins(self):
        report = evaluate({'a': [GT]}, {'a': [PredictedBox(GT.bbox, 0.9)]})
        assert report.range_bins is None
        assert 'unavailable' in render_range_table(report)

    def test_tables(self, fixtures_dir):
        report = evaluate(load_ground_truth(fixtures_dir / 'eval_mixed_gt.jsonl'),
                          load_predictions(fixtures_dir / 'eval_mixed_pred.jsonl'))
        metrics = render_metrics_table(report)
        assert 'mAP@0.5:0.95' in metrics
        assert '66.67%' in metrics
        ranges = render_range_table(report)
        assert '>100' in ranges
        assert 'n/a' in ranges


class TestLoaders:
    def test_replay_log_as_predictions(self, fixtures_dir):
        preds = load_predictions(fixtures_dir / 'three_frame_deer_detections.jsonl')
        assert sorted(preds) == ['1', '2', '3']
        assert preds['1'][0].confidence == 0.82

    def test_duplicate_image_id(self, tmp_path):
        path = tmp_path / 'gt.jsonl'
        path.write_text('{"image_id": "a", "boxes": []}\n{"image_id": "a", "boxes": []}\n')
        with pytest.raises(EvaluationError) as excinfo:
            load_ground_truth(path)
        assert excinfo.value.offender == 'a'

    def test_prediction_needs_confidence(self, tmp_path):
        path = tmp_path / 'pred.jsonl'
        path.write_text('{"image_id": "a", "boxes": [{"bbox": [0, 0, 5, 5]}]}\n')
        with pytest.raises(EvaluationError, match='no conf'):
            load_predictions(path)

    def test_malformed_line_names_line(self, tmp_path):
        path = tmp_path / 'gt.jsonl'
        path.write_text('{"image_id": "a", "boxes": []}\n{"image_id": 3\n')
        with pytest.raises(EvaluationError, match='line 2'):
            load_ground_truth(path)

    def test_reversed_box_is_rejected(self, tmp_path):
        path = tmp_path / 'gt.jsonl'
        path.write_text('{"image_id": "a", "boxes": [{"bbox": [10, 0, 5, 5]}]}\n')
        with pytest.raises(EvaluationError, match='malformed bbox'):
            load_ground_truth(path)

    @pytest.mark.parametrize('loader', [load_ground_truth, load_predictions])
    def test_invalid_utf8_names_line(self, tmp_path, loader):
        path = tmp_path / 'boxes.jsonl'
        path.write_bytes(b'{"image_id": "a", "boxes": []}\n{"image_id": "\xff", "boxes": []}\n')
        with pytest.raises(EvaluationError, match='line 2: not valid UTF-8'):
            loader(path)
