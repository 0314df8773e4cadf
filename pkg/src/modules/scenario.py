"""
Scenario Service
Scenario file schema and loader, per-frame stage timings, the simulation
report and the latency budget check.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigurationError, ScenarioError
from .sdsm_codec import CameraModel, EgoPose
from .v2x_net import DeliveryStats, RadioModel, StationKind, StationNode
from .validation import ThresholdConfig

DEFAULT_FRAME_PERIOD_MS = 40
DEFAULT_EGO_STATION_ID = 1

STAGES = ('capture_ms', 'inference_ms', 'sdsm_gen_ms', 'v2x_tx_ms', 'rx_decode_ms', 'alert_ms')

# typical window (min, max) and hard maximum per stage, milliseconds
STAGE_TYPICAL_MS = {
    'capture_ms': (10.0, 10.0),
    'inference_ms': (40.0, 50.0),
    'sdsm_gen_ms': (8.0, 10.0),
    'v2x_tx_ms': (10.0, 15.0),
    'rx_decode_ms': (10.0, 15.0),
    'alert_ms': (5.0, 10.0),
}
STAGE_MAX_MS = {
    'capture_ms': 25.0,
    'inference_ms': 65.0,
    'sdsm_gen_ms': 15.0,
    'v2x_tx_ms': 20.0,
    'rx_decode_ms': 20.0,
    'alert_ms': 15.0,
}
FRAME_MAX_MS = 160.0
MEDIAN_TARGET_MS = 100.0


class _Strict(BaseModel):
    model_config = ConfigDict(extra='forbid')


class PoseConfig(_Strict):
    t_ms: int = Field(ge=0)
    lat: float = Field(ge=-90.0, le=90.0)
    lon: float = Field(ge=-180.0, le=180.0)
    heading_deg: float = Field(default=0.0, ge=0.0, lt=360.0)
    speed_mps: float = Field(default=0.0, ge=0.0)


class EgoConfig(_Strict):
    station_id: int = Field(default=DEFAULT_EGO_STATION_ID, ge=0, le=0xFFFFFFFF)
    elevation_m: float = 0.0
    range_m: float = Field(default=1000.0, gt=0.0)
    poses: List[PoseConfig] = Field(min_length=1)

    @field_validator('poses')
    @classmethod
    def _strictly_increasing(cls, poses: List[PoseConfig]) -> List[PoseConfig]:
        for prev, cur in zip(poses, poses[1:]):
            if cur.t_ms <= prev.t_ms:
                raise ValueError(f"pose timestamps must be strictly increasing ({prev.t_ms} then {cur.t_ms})")
        return poses


class StationConfig(_Strict):
    station_id: int = Field(ge=0, le=0xFFFFFFFF)
    kind: Literal['obu', 'rsu']
    lat: float = Field(ge=-90.0, le=90.0)
    lon: float = Field(ge=-180.0, le=180.0)
    range_m: float = Field(default=1000.0, gt=0.0)


class RadioConfig(_Strict):
    max_range_m: float = Field(default=1000.0, gt=0.0)
    in_range_delivery_prob: float = Field(default=0.98, ge=0.0, le=1.0)
    per_hop_latency_ms: Tuple[float, float] = (10.0, 20.0)
    rng_seed: int = Field(default=7, ge=0, lt=2 ** 64)

    @field_validator('per_hop_latency_ms')
    @classmethod
    def _ordered_window(cls, window: Tuple[float, float]) -> Tuple[float, float]:
        if window[0] < 0 or window[0] > window[1]:
            raise ValueError(f"latency window must satisfy 0 <= min <= max, got {list(window)}")
        return window


class ThresholdsConfig(_Strict):
    driver_warn_conf: float = Field(default=0.50, ge=0.0, le=1.0)
    broadcast_conf: float = Field(default=0.65, ge=0.0, le=1.0)
    confirm_frames: int = Field(default=3, ge=1)
    assoc_iou: float = Field(default=0.3, ge=0.0, le=1.0)
    max_age_frames: int = Field(default=5, ge=0)
    hot_weather_mode: bool = False
    field_test_mode: bool = False


class CameraConfig(_Strict):
    hfov_deg: float = Field(default=56.0, gt=0.0, lt=180.0)


class Scenario(_Strict):
    """A parsed, invariant-checked scenario. Pose times are relative to the first frame."""

    name: str = 'scenario'
    epoch_ms: int = Field(default=0, ge=0)
    frame_period_ms: int = Field(default=DEFAULT_FRAME_PERIOD_MS, gt=0)
    duration_ms: Optional[int] = Field(default=None, ge=0)
    ambient_temp_f: Optional[float] = None
    timing_mode: Literal['simulated', 'measured'] = 'simulated'
    representation: Literal['grayscale', 'heatmap'] = 'grayscale'
    ego: EgoConfig
    stations: List[StationConfig] = Field(default_factory=list)
    radio: RadioConfig = Field(default_factory=RadioConfig)
    thresholds: ThresholdsConfig = Field(default_factory=ThresholdsConfig)
    camera: CameraConfig = Field(default_factory=CameraConfig)
    detection_log: Optional[Path] = None
    frames_dir: Optional[Path] = None
    obu_endpoint: Optional[str] = None

    @model_validator(mode='after')
    def _check_invariants(self) -> 'Scenario':
        if self.duration_ms is None:
            self.duration_ms = self.frame_period_ms
        ids = [self.ego.station_id] + [s.station_id for s in self.stations]
        duplicates = sorted({i for i in ids if ids.count(i) > 1})
        if duplicates:
            raise ValueError(f"station ids must be unique, duplicated: {duplicates}")
        return self

    @property
    def frame_count(self) -> int:
        return self.duration_ms // self.frame_period_ms

    def frame_time_ms(self, tick: int) -> int:
        return self.epoch_ms + tick * self.frame_period_ms

    def radio_model(self) -> RadioModel:
        return RadioModel(
            max_range_m=self.radio.max_range_m,
            in_range_delivery_prob=self.radio.in_range_delivery_prob,
            per_hop_latency_ms=tuple(self.radio.per_hop_latency_ms),
            rng_seed=self.radio.rng_seed,
        )

    def threshold_config(self) -> ThresholdConfig:
        return ThresholdConfig.for_ambient(self.ambient_temp_f, **self.thresholds.model_dump())

    def camera_model(self) -> CameraModel:
        return CameraModel(hfov_deg=self.camera.hfov_deg)

    def ego_pose_at(self, offset_ms: int) -> EgoPose:
        """Sample-and-hold: the latest pose at or before offset_ms, else the first pose."""
        current = self.ego.poses[0]
        for pose in self.ego.poses:
            if pose.t_ms > offset_ms:
                break
            current = pose
        return EgoPose(
            lat=current.lat,
            lon=current.lon,
            elev_m=self.ego.elevation_m,
            heading_deg=current.heading_deg,
            speed_mps=current.speed_mps,
        )

    def station_nodes(self) -> List[StationNode]:
        """Ego OBU first (at its initial pose), then the configured stations in file order."""
        first = self.ego.poses[0]
        nodes = [StationNode(self.ego.station_id, StationKind.OBU, (first.lat, first.lon), self.ego.range_m)]
        for s in self.stations:
            nodes.append(StationNode(s.station_id, StationKind(s.kind), (s.lat, s.lon), s.range_m))
        return nodes


def _validation_message(exc: ValidationError) -> str:
    parts = []
    for error in exc.errors():
        location = '.'.join(str(p) for p in error.get('loc', ())) or '<root>'
        parts.append(f"{location}: {error.get('msg')}")
    return '; '.join(parts)


def _resolve(base: Path, value: Optional[Path]) -> Optional[Path]:
    if value is None:
        return None
    return value if value.is_absolute() else (base / value)


def load_scenario(path: Union[str, Path]) -> Scenario:
    """Parse and validate a scenario file; referenced paths resolve relative to it."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise ScenarioError(f"scenario file not found: {path}")
    except OSError as e:
        raise ScenarioError(f"cannot read scenario {path}: {e}")
    try:
        text = data.decode('utf-8')
    except UnicodeDecodeError as e:
        line_no = data.count(b'\n', 0, e.start) + 1
        raise ScenarioError(f"{path} line {line_no}: not valid UTF-8 at byte {e.start}") from e

    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}")

    try:
        scenario = Scenario.model_validate(raw)
    except ValidationError as e:
        raise ScenarioError(f"{path}: {_validation_message(e)}")

    scenario.detection_log = _resolve(path.parent, scenario.detection_log)
    scenario.frames_dir = _resolve(path.parent, scenario.frames_dir)
    if scenario.detection_log is not None and not scenario.detection_log.is_file():
        raise ScenarioError(f"{path}: detection_log not found: {scenario.detection_log}")
    if scenario.frames_dir is not None and not scenario.frames_dir.is_dir():
        raise ScenarioError(f"{path}: frames_dir not found: {scenario.frames_dir}")

    try:
        scenario.threshold_config()
        scenario.radio_model()
        scenario.station_nodes()
    except ConfigurationError as e:
        raise ScenarioError(f"{path}: {e}")

    logger.info(f"Loaded scenario '{scenario.name}' - {scenario.frame_count} frames, "
                f"{len(scenario.stations)} stations")
    return scenario


@dataclass(frozen=True)
class StageTimings:
    capture_ms: float = 0.0
    inference_ms: float = 0.0
    sdsm_gen_ms: float = 0.0
    v2x_tx_ms: float = 0.0
    rx_decode_ms: float = 0.0
    alert_ms: float = 0.0
    frame_id: int = 0
    total_ms: float = field(init=False)

    def __post_init__(self):
        for stage in STAGES:
            if getattr(self, stage) < 0:
                raise ValueError(f"{stage} must be >= 0")
        total = 0.0
        for stage in STAGES:
            total += getattr(self, stage)
        object.__setattr__(self, 'total_ms', total)

    def to_dict(self) -> Dict[str, Any]:
        payload = {'frame_id': self.frame_id}
        for stage in STAGES:
            payload[stage] = round(getattr(self, stage), 3)
        payload['total_ms'] = round(self.total_ms, 3)
        return payload

    @classmethod
    def typical_midpoints(cls, frame_id: int = 0, **overrides: float) -> 'StageTimings':
        values = {stage: (low + high) / 2 for stage, (low, high) in STAGE_TYPICAL_MS.items()}
        values.update(overrides)
        return cls(frame_id=frame_id, **values)


@dataclass(frozen=True)
class BudgetViolation:
    frame_id: int
    stage: str
    value_ms: float
    limit_ms: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            'frame_id': self.frame_id,
            'stage': self.stage,
            'value_ms': round(self.value_ms, 3),
            'limit_ms': self.limit_ms,
        }


@dataclass(frozen=True)
class BudgetCheck:
    violations: List[BudgetViolation]
    median_total_ms: Optional[float]
    median_under_target: Optional[bool]

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> Dict[str, Any]:
        return {
            'violations': [v.to_dict() for v in self.violations],
            'median_total_ms': None if self.median_total_ms is None else round(self.median_total_ms, 3),
            'median_under_target': self.median_under_target,
            'target_ms': MEDIAN_TARGET_MS,
        }


@dataclass
class SimReport:
    scenario: str = 'scenario'
    status: str = 'completed'
    error: Optional[str] = None
    timing_mode: str = 'simulated'
    seed: int = 0
    frames: int = 0
    detections: int = 0
    driver_warnings: int = 0
    broadcasts: int = 0
    sdsm_encoded: int = 0
    datagrams_sent: int = 0
    send_failures: int = 0
    alert_duplicates_suppressed: int = 0
    nominal_fps: float = 0.0
    delivery: DeliveryStats = field(default_factory=DeliveryStats)
    events: List[Dict[str, Any]] = field(default_factory=list)
    receiver_alerts: List[Dict[str, Any]] = field(default_factory=list)
    timings: List[StageTimings] = field(default_factory=list)
    provenance: Dict[str, str] = field(default_factory=dict)
    budget: Optional[BudgetCheck] = None

    @property
    def effective_fps(self) -> float:
        """Frame rate the capture and inference stages could sustain, capped at the nominal rate."""
        if not self.timings:
            return 0.0
        busy = sum(t.capture_ms + t.inference_ms for t in self.timings) / len(self.timings)
        if busy <= 0:
            return self.nominal_fps
        return min(self.nominal_fps, 1000.0 / busy)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'scenario': self.scenario,
            'status': self.status,
            'error': self.error,
            'timing_mode': self.timing_mode,
            'seed': self.seed,
            'frames': self.frames,
            'detections': self.detections,
            'driver_warnings': self.driver_warnings,
            'broadcasts': self.broadcasts,
            'sdsm_encoded': self.sdsm_encoded,
            'datagrams_sent': self.datagrams_sent,
            'send_failures': self.send_failures,
            'alert_duplicates_suppressed': self.alert_duplicates_suppressed,
            'nominal_fps': round(self.nominal_fps, 3),
            'effective_fps': round(self.effective_fps, 3),
            'delivery': self.delivery.to_dict(),
            'latency': latency_distribution(self.timings),
            'provenance': dict(self.provenance),
            'budget': self.budget.to_dict() if self.budget is not None else None,
            'events': list(self.events),
            'receiver_alerts': list(self.receiver_alerts),
            'timings': [t.to_dict() for t in self.timings],
        }


def latency_distribution(timings: List[StageTimings]) -> Dict[str, Optional[Dict[str, float]]]:
    """min/median/p95/max per stage over the frames where that stage ran."""
    if not timings:
        return {stage: None for stage in STAGES + ('total_ms',)}

    frame = pd.DataFrame([{stage: getattr(t, stage) for stage in STAGES + ('total_ms',)} for t in timings])
    result: Dict[str, Optional[Dict[str, float]]] = {}
    for stage in frame.columns:
        samples = frame.loc[frame[stage] > 0, stage]
        if samples.empty:
            result[stage] = None
            continue
        result[stage] = {
            'count': int(samples.size),
            'min': round(float(samples.min()), 3),
            'median': round(float(samples.median()), 3),
            'p95': round(float(samples.quantile(0.95)), 3),
            'max': round(float(samples.max()), 3),
        }
    return result


def check_budgets(report: SimReport) -> BudgetCheck:
    """
    Flag every frame whose total exceeds 160 ms and every stage above its
    maximum, and report whether the median frame total is under 100 ms.
    """
    violations: List[BudgetViolation] = []
    for timing in report.timings:
        for stage in STAGES:
            value = getattr(timing, stage)
            if value > STAGE_MAX_MS[stage]:
                violations.append(BudgetViolation(timing.frame_id, stage, value, STAGE_MAX_MS[stage]))
        if timing.total_ms > FRAME_MAX_MS:
            violations.append(BudgetViolation(timing.frame_id, 'total_ms', timing.total_ms, FRAME_MAX_MS))

    if not report.timings:
        return BudgetCheck(violations, None, None)

    median_total = float(pd.Series([t.total_ms for t in report.timings]).median())
    if math.isnan(median_total):
        return BudgetCheck(violations, None, None)
    return BudgetCheck(violations, median_total, median_total < MEDIAN_TARGET_MS)


def render_summary(report: SimReport) -> str:
    """Human-readable run summary with the per-stage latency distribution."""
    counts = pd.DataFrame([
        ('frames', report.frames),
        ('detections', report.detections),
        ('driver warnings', report.driver_warnings),
        ('broadcasts', report.broadcasts),
        ('datagrams sent', report.datagrams_sent),
        ('send failures', report.send_failures),
        ('delivered copies', report.delivery.delivered),
        ('RSU relays', report.delivery.relayed),
        ('receiver alerts', len(report.receiver_alerts)),
    ], columns=['counter', 'value'])

    rows = []
    for stage, stats in latency_distribution(report.timings).items():
        if stats is None:
            rows.append((stage, 0, '-', '-', '-', '-', report.provenance.get(stage, '-')))
            continue
        rows.append((stage, stats['count'], stats['min'], stats['median'], stats['p95'], stats['max'],
                     report.provenance.get(stage, '-')))
    latency = pd.DataFrame(rows, columns=['stage', 'frames', 'min', 'median', 'p95', 'max', 'source'])

    budget = report.budget or check_budgets(report)
    verdict = 'within budget' if budget.ok else f"{len(budget.violations)} budget violations"
    lines = [
        f"scenario {report.scenario}: {report.status}" + (f" ({report.error})" if report.error else ''),
        counts.to_string(index=False),
        '',
        latency.to_string(index=False),
        '',
        f"median total {budget.median_total_ms if budget.median_total_ms is not None else '-'} ms, {verdict}",
    ]
    return '\n'.join(lines)
