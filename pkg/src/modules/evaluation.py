"""
Evaluation Service
Detection evaluation: IoU matching, precision/recall/F1, PR curves, 101-point
AP and the 0.50:0.95 sweep, confusion counts, range-binned accuracy and
dataset split checks, plus the JSON Lines loaders and text tables.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import EvaluationError
from .tracking import box_iou

BBox = Tuple[float, float, float, float]

IOU_SWEEP = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = np.arange(101) / 100.0
REPORT_DECIMALS = 6

# label, lower bound (inclusive), upper bound (exclusive), feet
RANGE_BINS = (
    ('<20', 0.0, 20.0),
    ('20-50', 20.0, 50.0),
    ('50-70', 50.0, 70.0),
    ('70-100', 70.0, 100.0),
    ('>100', 100.0, math.inf),
)

SPLIT_TOLERANCE_PP = 0.1


@dataclass(frozen=True)
class GroundTruthBox:
    bbox: BBox
    class_id: int = 0
    est_distance_ft: Optional[float] = None


@dataclass(frozen=True)
class PredictedBox:
    bbox: BBox
    confidence: float
    class_id: int = 0


GroundTruthSet = Dict[str, List[GroundTruthBox]]
PredictionSet = Dict[str, List[PredictedBox]]


@dataclass(frozen=True)
class Assignment:
    """Matching outcome for one image. Indices refer to the input box lists."""
    image_id: str
    pairs: Tuple[Tuple[int, int], ...]
    false_positives: Tuple[int, ...]
    false_negatives: Tuple[int, ...]
    confidences: Tuple[float, ...]
    gt_count: int

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return len(self.false_positives)

    @property
    def fn(self) -> int:
        return len(self.false_negatives)

    def scored(self) -> List[Tuple[float, bool]]:
        matched = {p for p, _ in self.pairs}
        return [(self.confidences[i], i in matched) for i in range(len(self.confidences))]

    def at_confidence(self, conf_thresh: float) -> 'Assignment':
        """
        Restrict to predictions with confidence >= conf_thresh. Matching is
        greedy in confidence order, so this equals re-matching the kept set.
        """
        pairs = tuple((p, g) for p, g in self.pairs if self.confidences[p] >= conf_thresh)
        kept_gts = {g for _, g in pairs}
        return Assignment(
            image_id=self.image_id,
            pairs=pairs,
            false_positives=tuple(p for p in self.false_positives if self.confidences[p] >= conf_thresh),
            false_negatives=tuple(g for g in range(self.gt_count) if g not in kept_gts),
            confidences=self.confidences,
            gt_count=self.gt_count,
        )


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; a zero-area box scores 0 against anything."""
    return box_iou(a, b)


def match_detections(preds: Sequence[PredictedBox], gts: Sequence[GroundTruthBox],
                     iou_thresh: float, image_id: str = '') -> Assignment:
    """
    Greedy matching: predictions in descending confidence (stable on ties)
    each take the unmatched same-class ground truth with the highest IoU at or
    above iou_thresh; IoU ties go to the lower ground-truth index.
    """
    order = sorted(range(len(preds)), key=lambda i: -preds[i].confidence)
    matched_gts = set()
    pairs = []
    false_positives = []

    for p_idx in order:
        pred = preds[p_idx]
        best_idx, best_iou = None, 0.0
        for g_idx, gt in enumerate(gts):
            if g_idx in matched_gts or gt.class_id != pred.class_id:
                continue
            overlap = iou(pred.bbox, gt.bbox)
            if overlap <= 0 or overlap < iou_thresh:
                continue
            if best_idx is None or overlap > best_iou:
                best_idx, best_iou = g_idx, overlap
        if best_idx is None:
            false_positives.append(p_idx)
        else:
            matched_gts.add(best_idx)
            pairs.append((p_idx, best_idx))

    return Assignment(
        image_id=image_id,
        pairs=tuple(pairs),
        false_positives=tuple(false_positives),
        false_negatives=tuple(g for g in range(len(gts)) if g not in matched_gts),
        confidences=tuple(p.confidence for p in preds),
        gt_count=len(gts),
    )


def _cumulative_counts(assignments: Sequence[Assignment]) -> Tuple[List[Tuple[float, int, int]], int]:
    """(confidence, cumulative TP, cumulative FP) after each distinct confidence, descending."""
    gt_total = sum(a.gt_count for a in assignments)
    scored = [item for a in assignments for item in a.scored()]
    scored.sort(key=lambda item: -item[0])

    steps = []
    tp = fp = 0
    for idx, (confidence, is_tp) in enumerate(scored):
        if is_tp:
            tp += 1
        else:
            fp += 1
        if idx + 1 == len(scored) or scored[idx + 1][0] != confidence:
            steps.append((confidence, tp, fp))
    return steps, gt_total


def pr_curve(assignments: Sequence[Assignment]) -> List[Tuple[float, float]]:
    """Cumulative (recall, precision) at every distinct prediction confidence, highest first."""
    steps, gt_total = _cumulative_counts(assignments)
    if gt_total == 0:
        raise EvaluationError("no ground truth boxes: recall is undefined")
    return [(tp / gt_total, tp / (tp + fp)) for _, tp, fp in steps]


def average_precision(curve: Sequence[Tuple[float, float]]) -> float:
    """101-point interpolated AP over recall 0.00, 0.01, ..., 1.00."""
    if not curve:
        return 0.0

    recalls = np.array([r for r, _ in curve], dtype=float)
    precisions = np.array([p for _, p in curve], dtype=float)
    # precision envelope: best precision at this recall or any higher one
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]

    indices = np.searchsorted(recalls, RECALL_POINTS, side='left')
    sampled = np.zeros(len(RECALL_POINTS))
    reachable = indices < len(recalls)
    sampled[reachable] = envelope[indices[reachable]]
    return float(np.mean(sampled))


def _aligned_images(preds: Mapping[str, Sequence[PredictedBox]],
                    gts: Mapping[str, Sequence[GroundTruthBox]]) -> List[str]:
    for image_id in preds:
        if image_id not in gts:
            raise EvaluationError(f"prediction image id '{image_id}' has no ground truth entry",
                                  offender=image_id)
    return list(gts)


def match_dataset(preds: Mapping[str, Sequence[PredictedBox]], gts: Mapping[str, Sequence[GroundTruthBox]],
                  iou_thresh: float) -> List[Assignment]:
    return [
        match_detections(preds.get(image_id, []), gts[image_id], iou_thresh, image_id)
        for image_id in _aligned_images(preds, gts)
    ]


def map_sweep(preds: Mapping[str, Sequence[PredictedBox]],
              gts: Mapping[str, Sequence[GroundTruthBox]]) -> Tuple[float, float]:
    """(AP at IoU 0.50, mean AP over IoU 0.50, 0.55, ..., 0.95)."""
    aps = [average_precision(pr_curve(match_dataset(preds, gts, thresh))) for thresh in IOU_SWEEP]
    return aps[0], float(np.mean(aps))


def f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _share(count: int, total: int) -> Optional[float]:
    return count / total if total else None


def confusion_matrix(assignments: Sequence[Assignment], conf_thresh: float) -> Dict[str, Any]:
    """
    Deer/background counts at conf_thresh. TN is not applicable (open-set
    background), reported as None. The normalized block is indexed
    [actual][predicted] and divides by the actual-class total.

    With TN unknown, the actual-background total is FP alone, so the
    background row is degenerate: its deer share is 1.0 whenever any FP
    exists and None otherwise, and its background share is always None.
    Read FP as a count, not from that row.
    """
    kept = [a.at_confidence(conf_thresh) for a in assignments]
    tp = sum(a.tp for a in kept)
    fp = sum(a.fp for a in kept)
    fn = sum(a.fn for a in kept)

    return {
        'tp': tp,
        'fp': fp,
        'fn': fn,
        'tn': None,
        'normalized': {
            'deer': {'deer': _share(tp, tp + fn), 'background': _share(fn, tp + fn)},
            'background': {'deer': _share(fp, fp), 'background': None},
        },
    }


def range_binned_accuracy(gts: Mapping[str, Sequence[GroundTruthBox]],
                          assignments: Sequence[Assignment]) -> List[Dict[str, Any]]:
    """Recall per distance bin; an empty bin reports accuracy None."""
    detected = {a.image_id: {g for _, g in a.pairs} for a in assignments}
    totals = {label: 0 for label, _, _ in RANGE_BINS}
    hits = {label: 0 for label, _, _ in RANGE_BINS}

    for image_id, boxes in gts.items():
        for g_idx, gt in enumerate(boxes):
            if gt.est_distance_ft is None:
                raise EvaluationError(f"ground truth {image_id}[{g_idx}] has no est_distance_ft",
                                      offender=image_id)
            for label, low, high in RANGE_BINS:
                if low <= gt.est_distance_ft < high:
                    totals[label] += 1
                    if g_idx in detected.get(image_id, ()):
                        hits[label] += 1
                    break

    return [
        {
            'range': label,
            'ground_truths': totals[label],
            'detected': hits[label],
            'accuracy': _share(hits[label], totals[label]),
        }
        for label, _, _ in RANGE_BINS
    ]


def confidence_curve(assignments: Sequence[Assignment]) -> List[Dict[str, float]]:
    """Precision, recall and F1 when thresholding at each distinct confidence."""
    steps, gt_total = _cumulative_counts(assignments)
    if gt_total == 0:
        raise EvaluationError("no ground truth boxes: recall is undefined")

    curve = []
    for confidence, tp, fp in steps:
        precision = tp / (tp + fp)
        recall = tp / gt_total
        curve.append({'confidence': confidence, 'precision': precision,
                      'recall': recall, 'f1': f1(precision, recall)})
    return curve


def best_f1(curve: Sequence[Dict[str, float]]) -> Optional[Dict[str, float]]:
    """Operating point with the highest F1; ties keep the higher confidence."""
    best = None
    for point in curve:
        if best is None or point['f1'] > best['f1']:
            best = point
    if best is None:
        return None
    return {'confidence': best['confidence'], 'f1': best['f1']}


@dataclass(frozen=True)
class SplitStats:
    train: int
    val: int
    test: int
    total: int
    # stated percentages to verify, in train/val/test order
    reported_pct: Optional[Tuple[float, float, float]] = None

    def percentages(self) -> Optional[Tuple[float, float, float]]:
        if self.total <= 0:
            return None
        return tuple(100.0 * n / self.total for n in (self.train, self.val, self.test))


def validate_split(stats: SplitStats) -> Dict[str, Any]:
    """Counts must sum to the total; stated percentages must agree within 0.1 pp."""
    issues = []
    counts = (stats.train, stats.val, stats.test)
    if any(n < 0 for n in counts):
        issues.append("negative split count")
    if stats.total <= 0 or sum(counts) == 0:
        issues.append("empty dataset")
    if sum(counts) != stats.total:
        issues.append(f"split counts sum to {sum(counts)}, not {stats.total}")

    percentages = stats.percentages()
    if percentages is not None and stats.reported_pct is not None:
        for name, computed, stated in zip(('train', 'val', 'test'), percentages, stats.reported_pct):
            if abs(computed - stated) > SPLIT_TOLERANCE_PP + 1e-9:
                issues.append(f"{name} share {computed:.2f}% differs from stated {stated}%")

    return {
        'passed': not issues,
        'counts': {'train': stats.train, 'val': stats.val, 'test': stats.test, 'total': stats.total},
        'percentages': None if percentages is None else [round(p, 2) for p in percentages],
        'issues': issues,
    }


def _rounded(value: Any) -> Any:
    if isinstance(value, float):
        return round(value, REPORT_DECIMALS)
    if isinstance(value, dict):
        return {k: _rounded(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_rounded(v) for v in value]
    return value


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    ap50: float
    map5095: float
    pr_curve: List[Tuple[float, float]]
    confusion: Dict[str, Any]
    range_bins: Optional[List[Dict[str, Any]]]
    images: int = 0
    ground_truths: int = 0
    predictions: int = 0
    iou_thresh: float = 0.5
    conf_thresh: float = 0.5
    confidence_curve: List[Dict[str, float]] = field(default_factory=list)
    best_f1: Optional[Dict[str, float]] = None

    def to_dict(self) -> Dict[str, Any]:
        return _rounded({
            'images': self.images,
            'ground_truths': self.ground_truths,
            'predictions': self.predictions,
            'iou_thresh': self.iou_thresh,
            'conf_thresh': self.conf_thresh,
            'precision': self.precision,
            'recall': self.recall,
            'f1': self.f1,
            'ap50': self.ap50,
            'map5095': self.map5095,
            'pr_curve': [list(point) for point in self.pr_curve],
            'confusion': self.confusion,
            'range_bins': self.range_bins,
            'confidence_curve': self.confidence_curve,
            'best_f1': self.best_f1,
        })


def evaluate(gts: GroundTruthSet, preds: PredictionSet,
             conf_thresh: float = 0.5, iou_thresh: float = 0.5) -> EvalReport:
    """Full report at one operating point (conf_thresh, iou_thresh)."""
    assignments = match_dataset(preds, gts, iou_thresh)
    gt_total = sum(a.gt_count for a in assignments)
    if gt_total == 0:
        raise EvaluationError("no ground truth boxes: recall is undefined")

    curve = pr_curve(assignments)
    ap50, map5095 = map_sweep(preds, gts)
    confusion = confusion_matrix(assignments, conf_thresh)

    tp, fp, fn = confusion['tp'], confusion['fp'], confusion['fn']
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn)

    has_ranges = all(gt.est_distance_ft is not None for boxes in gts.values() for gt in boxes)
    operating = [a.at_confidence(conf_thresh) for a in assignments]
    bins = range_binned_accuracy(gts, operating) if has_ranges else None

    conf_curve = confidence_curve(assignments)
    report = EvalReport(
        precision=precision,
        recall=recall,
        f1=f1(precision, recall),
        ap50=ap50,
        map5095=map5095,
        pr_curve=curve,
        confusion=confusion,
        range_bins=bins,
        images=len(assignments),
        ground_truths=gt_total,
        predictions=sum(len(boxes) for boxes in preds.values()),
        iou_thresh=iou_thresh,
        conf_thresh=conf_thresh,
        confidence_curve=conf_curve,
        best_f1=best_f1(conf_curve),
    )
    logger.info(f"Evaluated {report.images} images - P {precision:.4f} R {recall:.4f} "
                f"AP50 {ap50:.4f} mAP50-95 {map5095:.4f}")
    return report


class _BoxRecord(BaseModel):
    model_config = ConfigDict(extra='forbid')

    bbox: Tuple[float, float, float, float]
    class_id: int = 0
    conf: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    est_distance_ft: Optional[float] = Field(default=None, ge=0.0)


class _ImageRecord(BaseModel):
    model_config = ConfigDict(extra='forbid')

    image_id: str
    boxes: List[_BoxRecord] = Field(default_factory=list)


class _ReplayRecord(BaseModel):
    model_config = ConfigDict(extra='ignore')

    frame_id: int
    detections: List[_BoxRecord] = Field(default_factory=list)


def _check_bbox(bbox: BBox, where: str) -> BBox:
    if not all(math.isfinite(v) for v in bbox) or bbox[2] < bbox[0] or bbox[3] < bbox[1]:
        raise EvaluationError(f"{where}: malformed bbox {list(bbox)}")
    return bbox


def _read_records(path: Union[str, Path], allow_replay: bool) -> Iterable[Tuple[int, _ImageRecord]]:
    with open(path, 'rb') as f:
        for line_no, raw in enumerate(f, start=1):
            try:
                line = raw.decode('utf-8')
            except UnicodeDecodeError as e:
                raise EvaluationError(f"{path} line {line_no}: not valid UTF-8 at byte {e.start}") from e
            if not line.strip():
                continue
            try:
                yield line_no, _ImageRecord.model_validate_json(line)
                continue
            except ValidationError as e:
                first_error = e
            if allow_replay:
                try:
                    replay = _ReplayRecord.model_validate_json(line)
                    yield line_no, _ImageRecord(image_id=str(replay.frame_id), boxes=replay.detections)
                    continue
                except ValidationError:
                    pass
            error = first_error.errors()[0]
            location = '.'.join(str(p) for p in error.get('loc', ()))
            raise EvaluationError(f"{path} line {line_no}: {location}: {error.get('msg')}")


def load_ground_truth(path: Union[str, Path]) -> GroundTruthSet:
    gts: GroundTruthSet = {}
    for line_no, record in _read_records(path, allow_replay=False):
        if record.image_id in gts:
            raise EvaluationError(f"{path} line {line_no}: duplicate image id '{record.image_id}'",
                                  offender=record.image_id)
        gts[record.image_id] = [
            GroundTruthBox(_check_bbox(b.bbox, f"{path} line {line_no}"), b.class_id, b.est_distance_ft)
            for b in record.boxes
        ]
    logger.debug(f"Loaded {sum(len(v) for v in gts.values())} ground truth boxes from {path}")
    return gts


def load_predictions(path: Union[str, Path]) -> PredictionSet:
    """Prediction JSONL, or a detection replay log (frame_id becomes the image id)."""
    preds: PredictionSet = {}
    for line_no, record in _read_records(path, allow_replay=True):
        if record.image_id in preds:
            raise EvaluationError(f"{path} line {line_no}: duplicate image id '{record.image_id}'",
                                  offender=record.image_id)
        boxes = []
        for b in record.boxes:
            if b.conf is None:
                raise EvaluationError(f"{path} line {line_no}: prediction box has no conf")
            boxes.append(PredictedBox(_check_bbox(b.bbox, f"{path} line {line_no}"), b.conf, b.class_id))
        preds[record.image_id] = boxes
    logger.debug(f"Loaded {sum(len(v) for v in preds.values())} predictions from {path}")
    return preds


def _pct(value: Optional[float]) -> str:
    return 'n/a' if value is None else f"{100 * value:.2f}%"


def render_metrics_table(report: EvalReport) -> str:
    """Model performance block: one metric per row."""
    rows = [
        ('Precision', _pct(report.precision)),
        ('Recall', _pct(report.recall)),
        ('F1 Score', _pct(report.f1)),
        ('mAP@0.5', _pct(report.ap50)),
        ('mAP@0.5:0.95', _pct(report.map5095)),
    ]
    frame = pd.DataFrame(rows, columns=['Metric', 'Value'])
    return frame.to_string(index=False)


def render_range_table(report: EvalReport) -> str:
    """Field accuracy by camera detection range."""
    if report.range_bins is None:
        return 'range bins unavailable: ground truth lacks est_distance_ft'
    frame = pd.DataFrame([
        {
            'Range (ft)': b['range'],
            'Ground truths': b['ground_truths'],
            'Detected': b['detected'],
            'Accuracy': _pct(b['accuracy']),
        }
        for b in report.range_bins
    ])
    return frame.to_string(index=False)
