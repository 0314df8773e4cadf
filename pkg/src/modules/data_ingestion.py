"""
Data Ingestion Service
Handles detector output: the Detection record, the backend contract and the
replay backend that serves recorded detections per frame.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Tuple, Union

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import InvalidDetectionError, ReplayLogError
from .preprocessing import MODEL_INPUT_SIZE, ThermalFrame

DEFAULT_INFERENCE_MS = 45.0
DEER_CLASS_ID = 0

BBox = Tuple[float, float, float, float]


@dataclass(frozen=True)
class Detection:
    """One confidence-scored box in 256x256 model-input pixels."""
    frame_id: int
    bbox: BBox
    confidence: float
    class_id: int = DEER_CLASS_ID
    est_distance_ft: Optional[float] = None

    def __post_init__(self):
        if len(self.bbox) != 4:
            raise InvalidDetectionError(f"bbox needs 4 coordinates, got {self.bbox!r}")
        x_min, y_min, x_max, y_max = (float(v) for v in self.bbox)
        if not all(math.isfinite(v) for v in (x_min, y_min, x_max, y_max)):
            raise InvalidDetectionError(f"bbox has non-finite coordinates: {self.bbox!r}")
        if not (x_min < x_max and y_min < y_max):
            raise InvalidDetectionError(f"bbox corners out of order: {self.bbox!r}")
        if x_min < 0 or y_min < 0 or x_max > MODEL_INPUT_SIZE or y_max > MODEL_INPUT_SIZE:
            raise InvalidDetectionError(f"bbox outside the {MODEL_INPUT_SIZE}px model input: {self.bbox!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidDetectionError(f"confidence {self.confidence} outside [0, 1]")
        if self.est_distance_ft is not None and self.est_distance_ft < 0:
            raise InvalidDetectionError(f"negative distance estimate {self.est_distance_ft}")
        object.__setattr__(self, 'bbox', (x_min, y_min, x_max, y_max))

    @property
    def center(self) -> Tuple[float, float]:
        x_min, y_min, x_max, y_max = self.bbox
        return (x_min + x_max) / 2, (y_min + y_max) / 2


class DetectorBackend(Protocol):
    """Anything that turns a frame into detections plus an inference latency."""

    def detect(self, frame: ThermalFrame) -> Tuple[List[Detection], float]:
        ...


class _DetectionRecord(BaseModel):
    model_config = ConfigDict(extra='forbid')

    bbox: Tuple[float, float, float, float]
    conf: float = Field(ge=0.0, le=1.0)
    class_id: int = DEER_CLASS_ID
    est_distance_ft: Optional[float] = Field(default=None, ge=0.0)


class _FrameRecord(BaseModel):
    model_config = ConfigDict(extra='forbid')

    frame_id: int
    t_ms: int
    inference_ms: Optional[float] = Field(default=None, ge=0.0)
    detections: List[_DetectionRecord] = Field(default_factory=list)


@dataclass(frozen=True)
class ReplayEntry:
    t_ms: int
    inference_ms: Optional[float]
    detections: Tuple[Detection, ...]


def _first_error(exc: ValidationError) -> str:
    error = exc.errors()[0]
    location = '.'.join(str(part) for part in error.get('loc', ()))
    return f"{location}: {error.get('msg')}" if location else str(error.get('msg'))


def parse_replay_lines(lines) -> Dict[int, ReplayEntry]:
    """Parse JSON Lines replay records, keyed by frame_id. Lines may be str or raw bytes."""
    entries: Dict[int, ReplayEntry] = {}

    for line_no, line in enumerate(lines, start=1):
        if isinstance(line, bytes):
            try:
                line = line.decode('utf-8')
            except UnicodeDecodeError as e:
                raise ReplayLogError(line_no, f"not valid UTF-8 at byte {e.start}") from e
        if not line.strip():
            continue
        try:
            record = _FrameRecord.model_validate_json(line)
        except ValidationError as e:
            raise ReplayLogError(line_no, _first_error(e))

        if record.frame_id in entries:
            raise ReplayLogError(line_no, f"duplicate frame_id {record.frame_id}")

        try:
            detections = tuple(
                Detection(
                    frame_id=record.frame_id,
                    bbox=d.bbox,
                    confidence=d.conf,
                    class_id=d.class_id,
                    est_distance_ft=d.est_distance_ft,
                )
                for d in record.detections
            )
        except InvalidDetectionError as e:
            raise ReplayLogError(line_no, str(e))

        entries[record.frame_id] = ReplayEntry(record.t_ms, record.inference_ms, detections)

    return entries


class ReplayDetector:
    """Detector backend that returns pre-recorded detections for each frame_id."""

    def __init__(self, entries: Optional[Dict[int, ReplayEntry]] = None,
                 default_inference_ms: float = DEFAULT_INFERENCE_MS):
        self.entries = dict(entries or {})
        self.default_inference_ms = default_inference_ms

        logger.info(f"Replay detector initialized - {len(self.entries)} logged frames, "
                    f"default inference {self.default_inference_ms}ms")

    @classmethod
    def from_jsonl(cls, path: Union[str, Path],
                   default_inference_ms: float = DEFAULT_INFERENCE_MS) -> 'ReplayDetector':
        with open(path, 'rb') as f:
            entries = parse_replay_lines(f)
        return cls(entries, default_inference_ms)

    def detect(self, frame: ThermalFrame) -> Tuple[List[Detection], float]:
        return replay_detect(self, frame)

    @property
    def detection_count(self) -> int:
        return sum(len(entry.detections) for entry in self.entries.values())


def replay_detect(backend: ReplayDetector, frame: ThermalFrame) -> Tuple[List[Detection], float]:
    """Logged detections for frame.frame_id, or ([], default) when the frame is unlogged."""
    entry = backend.entries.get(frame.frame_id)
    if entry is None:
        return [], backend.default_inference_ms

    inference_ms = entry.inference_ms if entry.inference_ms is not None else backend.default_inference_ms
    return list(entry.detections), inference_ms
