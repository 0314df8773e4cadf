"""
Tracking Service
Links per-frame detections into tracks with greedy IoU association.
"""

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

from loguru import logger

from .data_ingestion import BBox, Detection

if TYPE_CHECKING:
    from .validation import ThresholdConfig


@dataclass(frozen=True)
class Track:
    track_id: int
    last_bbox: BBox
    last_confidence: float
    consecutive_hits: int
    age_frames: int
    peak_confidence: float
    broadcast_issued: bool
    last_update_ms: int
    est_distance_ft: Optional[float] = None

    def mark_broadcast(self) -> 'Track':
        return replace(self, broadcast_issued=True)


def box_iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two (x_min, y_min, x_max, y_max) boxes; 0 for zero-area boxes."""
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    if area_a <= 0 or area_b <= 0:
        return 0.0

    inter_w = min(a[2], b[2]) - max(a[0], b[0])
    inter_h = min(a[3], b[3]) - max(a[1], b[1])
    if inter_w <= 0 or inter_h <= 0:
        return 0.0

    intersection = inter_w * inter_h
    return intersection / (area_a + area_b - intersection)


def _greedy_pairs(tracks: Sequence[Track], detections: Sequence[Detection],
                  min_iou: float) -> List[Tuple[int, int]]:
    """One-to-one (track index, detection index) pairs, highest IoU first."""
    candidates = []
    for t_idx, track in enumerate(tracks):
        for d_idx, detection in enumerate(detections):
            overlap = box_iou(track.last_bbox, detection.bbox)
            if overlap > 0 and overlap >= min_iou:
                candidates.append((-overlap, d_idx, track.track_id, t_idx))

    # ties: lower detection index, then lower track_id
    candidates.sort()

    used_tracks, used_detections, pairs = set(), set(), []
    for _, d_idx, _, t_idx in candidates:
        if t_idx in used_tracks or d_idx in used_detections:
            continue
        used_tracks.add(t_idx)
        used_detections.add(d_idx)
        pairs.append((t_idx, d_idx))
    return pairs


def update_tracks(tracks: Sequence[Track], detections: Sequence[Detection], now_ms: int,
                  cfg: 'ThresholdConfig', next_track_id: Optional[int] = None) -> List[Track]:
    """
    Advance a track set by one frame.

    Matched tracks gain a hit; unmatched tracks age and lose their hit streak;
    tracks older than cfg.max_age_frames are dropped; leftover detections start
    new tracks. New ids continue from next_track_id, or from the largest live id.
    """
    if next_track_id is None:
        next_track_id = max((t.track_id for t in tracks), default=0) + 1

    pairs = _greedy_pairs(tracks, detections, cfg.assoc_iou)
    matched = {t_idx: d_idx for t_idx, d_idx in pairs}
    claimed = set(matched.values())

    updated: List[Track] = []
    for t_idx, track in enumerate(tracks):
        if t_idx in matched:
            detection = detections[matched[t_idx]]
            updated.append(replace(
                track,
                last_bbox=detection.bbox,
                last_confidence=detection.confidence,
                consecutive_hits=track.consecutive_hits + 1,
                age_frames=0,
                peak_confidence=max(track.peak_confidence, detection.confidence),
                last_update_ms=now_ms,
                est_distance_ft=(detection.est_distance_ft
                                 if detection.est_distance_ft is not None else track.est_distance_ft),
            ))
            continue

        aged = replace(track, consecutive_hits=0, age_frames=track.age_frames + 1)
        if aged.age_frames > cfg.max_age_frames:
            logger.debug(f"Dropping track {track.track_id} after {aged.age_frames} missed frames")
            continue
        updated.append(aged)

    for d_idx, detection in enumerate(detections):
        if d_idx in claimed:
            continue
        updated.append(Track(
            track_id=next_track_id,
            last_bbox=detection.bbox,
            last_confidence=detection.confidence,
            consecutive_hits=1,
            age_frames=0,
            peak_confidence=detection.confidence,
            broadcast_issued=False,
            last_update_ms=now_ms,
            est_distance_ft=detection.est_distance_ft,
        ))
        next_track_id += 1

    return updated


class TrackManager:
    """Single owner of a live track set and its id counter."""

    def __init__(self, cfg: 'ThresholdConfig'):
        self.cfg = cfg
        self.tracks: List[Track] = []
        self.next_track_id = 1

        logger.info(f"Track manager initialized - confirm {cfg.confirm_frames} frames, "
                    f"association IoU {cfg.assoc_iou}")

    def update(self, detections: Sequence[Detection], now_ms: int) -> List[Track]:
        self.tracks = update_tracks(self.tracks, detections, now_ms, self.cfg, self.next_track_id)
        if self.tracks:
            self.next_track_id = max(self.next_track_id, max(t.track_id for t in self.tracks) + 1)
        return list(self.tracks)

    def mark_broadcast(self, track_id: int) -> Track:
        for idx, track in enumerate(self.tracks):
            if track.track_id == track_id:
                self.tracks[idx] = track.mark_broadcast()
                return self.tracks[idx]
        raise KeyError(track_id)

    def snapshot(self) -> Tuple[Track, ...]:
        return tuple(self.tracks)
