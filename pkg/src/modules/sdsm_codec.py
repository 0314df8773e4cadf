"""
SDSM Codec
Builds Sensor Data Sharing Messages from confirmed tracks and packs them into a
fixed big-endian bit layout (a documented subset inspired by SAE J2735).
"""

import math
import numbers
from dataclasses import dataclass, field
from enum import IntEnum
from functools import lru_cache
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import bitstruct

from .errors import (
    CodecError,
    ConfigurationError,
    EncodeRangeError,
    LengthMismatchError,
    PaddingError,
    SemanticDecodeError,
    TruncationError,
)
from .preprocessing import MODEL_INPUT_SIZE
from .tracking import Track

FEET_TO_DM = 3.048
HEADING_UNITS_PER_CIRCLE = 28800  # 0.0125 degree units
LAT_LIMIT = 900000000
LON_LIMIT = 1800000000
MAX_OBJECTS = 255
MAX_CONFIDENCE_PCT = 100
DEFAULT_CAMERA_HFOV_DEG = 56.0


class ObjectType(IntEnum):
    UNKNOWN = 0
    VEHICLE = 1
    VRU = 2
    ANIMAL = 3


class FieldSpec(NamedTuple):
    name: str
    bits: int
    signed: bool = False

    @property
    def code(self) -> str:
        return f"{'s' if self.signed else 'u'}{self.bits}"

    @property
    def limits(self) -> Tuple[int, int]:
        if self.signed:
            return -(1 << (self.bits - 1)), (1 << (self.bits - 1)) - 1
        return 0, (1 << self.bits) - 1


HEADER_FIELDS = (
    FieldSpec('msg_count', 7),
    FieldSpec('source_id', 32),
    FieldSpec('sdsm_time_ms', 64),
    FieldSpec('ref_lat', 31, signed=True),
    FieldSpec('ref_lon', 32, signed=True),
    FieldSpec('ref_elev_dm', 16, signed=True),
    FieldSpec('object_count', 8),
)

OBJECT_FIELDS = (
    FieldSpec('obj_type', 4),
    FieldSpec('obj_id', 16),
    FieldSpec('time_offset_ms', 16),
    FieldSpec('pos_offset_x_dm', 16, signed=True),
    FieldSpec('pos_offset_y_dm', 16, signed=True),
    FieldSpec('speed_units', 16),
    FieldSpec('heading_units', 16),
    FieldSpec('confidence_pct', 7),
)

HEADER_BITS = sum(f.bits for f in HEADER_FIELDS)
OBJECT_BITS = sum(f.bits for f in OBJECT_FIELDS)

HEADER_FORMAT = bitstruct.compile(''.join(f.code for f in HEADER_FIELDS))


@dataclass(frozen=True)
class DetectedObject:
    obj_type: int
    obj_id: int
    time_offset_ms: int
    pos_offset_x_dm: int
    pos_offset_y_dm: int
    speed_units: int
    heading_units: int
    confidence_pct: int


@dataclass(frozen=True)
class SensorDataSharingMessage:
    msg_count: int
    source_id: int
    sdsm_time_ms: int
    ref_lat: int
    ref_lon: int
    ref_elev_dm: int
    objects: Tuple[DetectedObject, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, 'objects', tuple(self.objects))


@dataclass(frozen=True)
class EgoPose:
    lat: float
    lon: float
    elev_m: float = 0.0
    heading_deg: float = 0.0
    speed_mps: float = 0.0


@dataclass(frozen=True)
class CameraModel:
    hfov_deg: float = DEFAULT_CAMERA_HFOV_DEG
    image_width: int = MODEL_INPUT_SIZE


def encoded_length(object_count: int) -> int:
    """Bytes on the wire for a message carrying object_count objects."""
    return (HEADER_BITS + OBJECT_BITS * object_count + 7) // 8


def message_key(msg: SensorDataSharingMessage) -> Tuple[int, int, int]:
    """Identity used for relay deduplication."""
    return msg.source_id, msg.msg_count, msg.sdsm_time_ms


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def _clamp(value: int, spec: FieldSpec) -> int:
    low, high = spec.limits
    return max(low, min(high, value))


_OBJECT_SPECS = {f.name: f for f in OBJECT_FIELDS}
_HEADER_SPECS = {f.name: f for f in HEADER_FIELDS}


def _position_offset_dm(track: Track, ego: EgoPose, camera: CameraModel) -> Tuple[int, int]:
    if track.est_distance_ft is None:
        return 0, 0

    center_x = (track.last_bbox[0] + track.last_bbox[2]) / 2
    bearing = ego.heading_deg + camera.hfov_deg * (center_x / camera.image_width - 0.5)
    distance_dm = track.est_distance_ft * FEET_TO_DM

    east = _round_half_up(distance_dm * math.sin(math.radians(bearing)))
    north = _round_half_up(distance_dm * math.cos(math.radians(bearing)))
    return (_clamp(east, _OBJECT_SPECS['pos_offset_x_dm']),
            _clamp(north, _OBJECT_SPECS['pos_offset_y_dm']))


def build_sdsm(track: Track, ego: Optional[EgoPose], now_ms: int, msg_count: int,
               source_id: int = 0, camera: CameraModel = CameraModel()) -> SensorDataSharingMessage:
    """Single-object animal SDSM for a track that passed the broadcast decision."""
    if ego is None:
        raise ConfigurationError("build_sdsm needs an ego pose for the reference position")

    pos_x, pos_y = _position_offset_dm(track, ego, camera)
    detected = DetectedObject(
        obj_type=ObjectType.ANIMAL,
        obj_id=track.track_id % 65536,
        time_offset_ms=_clamp(now_ms - track.last_update_ms, _OBJECT_SPECS['time_offset_ms']),
        pos_offset_x_dm=pos_x,
        pos_offset_y_dm=pos_y,
        speed_units=0,
        heading_units=0,
        confidence_pct=min(MAX_CONFIDENCE_PCT, _round_half_up(100 * track.peak_confidence)),
    )

    return SensorDataSharingMessage(
        msg_count=msg_count % 128,
        source_id=source_id,
        sdsm_time_ms=now_ms,
        ref_lat=_round_half_up(ego.lat * 1e7),
        ref_lon=_round_half_up(ego.lon * 1e7),
        ref_elev_dm=_clamp(_round_half_up(ego.elev_m * 10), _HEADER_SPECS['ref_elev_dm']),
        objects=(detected,),
    )


@lru_cache(maxsize=None)
def _message_format(object_count: int):
    codes = [f.code for f in HEADER_FIELDS] + [f.code for f in OBJECT_FIELDS] * object_count
    pad = encoded_length(object_count) * 8 - (HEADER_BITS + OBJECT_BITS * object_count)
    if pad:
        codes.append(f"u{pad}")
    return bitstruct.compile(''.join(codes)), pad


def _checked(name: str, value, spec: FieldSpec, low: int = None, high: int = None) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise EncodeRangeError(name, value, "not an integer")
    spec_low, spec_high = spec.limits
    low = spec_low if low is None else max(low, spec_low)
    high = spec_high if high is None else min(high, spec_high)
    if not low <= value <= high:
        raise EncodeRangeError(name, value, f"allowed {low}..{high}")
    return int(value)


def _header_values(msg: SensorDataSharingMessage) -> List[int]:
    count = len(msg.objects)
    if not 1 <= count <= MAX_OBJECTS:
        raise EncodeRangeError('object_count', count, f"allowed 1..{MAX_OBJECTS}")

    bounds = {
        'ref_lat': (-LAT_LIMIT, LAT_LIMIT),
        'ref_lon': (-LON_LIMIT, LON_LIMIT),
    }
    values = []
    for spec in HEADER_FIELDS:
        if spec.name == 'object_count':
            values.append(count)
            continue
        low, high = bounds.get(spec.name, (None, None))
        values.append(_checked(spec.name, getattr(msg, spec.name), spec, low, high))
    return values


def _object_values(index: int, obj: DetectedObject) -> List[int]:
    bounds = {
        'obj_type': (min(ObjectType), max(ObjectType)),
        'heading_units': (0, HEADING_UNITS_PER_CIRCLE - 1),
        'confidence_pct': (0, MAX_CONFIDENCE_PCT),
    }
    values = []
    for spec in OBJECT_FIELDS:
        low, high = bounds.get(spec.name, (None, None))
        values.append(_checked(f"objects[{index}].{spec.name}", getattr(obj, spec.name), spec, low, high))
    return values


def encode(msg: SensorDataSharingMessage) -> bytes:
    """Pack msg per the wire table; trailing pad bits are zero."""
    values = _header_values(msg)
    for index, obj in enumerate(msg.objects):
        values.extend(_object_values(index, obj))

    packer, pad = _message_format(len(msg.objects))
    if pad:
        values.append(0)
    return packer.pack(*values)


def _semantic_checks(msg: SensorDataSharingMessage) -> None:
    if not -LAT_LIMIT <= msg.ref_lat <= LAT_LIMIT:
        raise SemanticDecodeError(f"ref_lat {msg.ref_lat} outside +/-{LAT_LIMIT}")
    if not -LON_LIMIT <= msg.ref_lon <= LON_LIMIT:
        raise SemanticDecodeError(f"ref_lon {msg.ref_lon} outside +/-{LON_LIMIT}")
    for index, obj in enumerate(msg.objects):
        if obj.obj_type not in ObjectType._value2member_map_:
            raise SemanticDecodeError(f"objects[{index}].obj_type {obj.obj_type} is not a known type")
        if obj.heading_units >= HEADING_UNITS_PER_CIRCLE:
            raise SemanticDecodeError(f"objects[{index}].heading_units {obj.heading_units} >= 360 degrees")
        if obj.confidence_pct > MAX_CONFIDENCE_PCT:
            raise SemanticDecodeError(f"objects[{index}].confidence_pct {obj.confidence_pct} > 100")


def decode(data: bytes) -> SensorDataSharingMessage:
    """Inverse of encode, with length, padding and invariant validation."""
    data = bytes(data)
    actual_bits = len(data) * 8
    if actual_bits < HEADER_BITS:
        raise TruncationError(HEADER_BITS, actual_bits)

    object_count = HEADER_FORMAT.unpack(data)[-1]
    required_bits = HEADER_BITS + OBJECT_BITS * object_count
    if actual_bits < required_bits:
        raise TruncationError(required_bits, actual_bits)
    if len(data) != encoded_length(object_count):
        raise LengthMismatchError(encoded_length(object_count), len(data))
    if object_count == 0:
        raise SemanticDecodeError("SDSM carries no objects")

    unpacker, pad = _message_format(object_count)
    values = list(unpacker.unpack(data))
    if pad and values.pop() != 0:
        raise PaddingError(f"{pad} trailing pad bits are not zero")

    header = values[:len(HEADER_FIELDS)]
    objects = []
    per_object = len(OBJECT_FIELDS)
    for offset in range(len(HEADER_FIELDS), len(values), per_object):
        raw = dict(zip((f.name for f in OBJECT_FIELDS), values[offset:offset + per_object]))
        if raw['obj_type'] in ObjectType._value2member_map_:
            raw['obj_type'] = ObjectType(raw['obj_type'])
        objects.append(DetectedObject(**raw))

    msg = SensorDataSharingMessage(
        msg_count=header[0],
        source_id=header[1],
        sdsm_time_ms=header[2],
        ref_lat=header[3],
        ref_lon=header[4],
        ref_elev_dm=header[5],
        objects=tuple(objects),
    )
    _semantic_checks(msg)
    return msg


def message_to_dict(msg: SensorDataSharingMessage) -> Dict[str, Any]:
    """Canonical JSON form (wire field order)."""
    return {
        'msg_count': msg.msg_count,
        'source_id': msg.source_id,
        'sdsm_time_ms': msg.sdsm_time_ms,
        'ref_lat': msg.ref_lat,
        'ref_lon': msg.ref_lon,
        'ref_elev_dm': msg.ref_elev_dm,
        'objects': [
            {spec.name: int(getattr(obj, spec.name)) for spec in OBJECT_FIELDS}
            for obj in msg.objects
        ],
    }


def message_from_dict(payload: Dict[str, Any]) -> SensorDataSharingMessage:
    try:
        objects = tuple(
            DetectedObject(**{spec.name: obj[spec.name] for spec in OBJECT_FIELDS})
            for obj in payload['objects']
        )
        return SensorDataSharingMessage(
            msg_count=payload['msg_count'],
            source_id=payload['source_id'],
            sdsm_time_ms=payload['sdsm_time_ms'],
            ref_lat=payload['ref_lat'],
            ref_lon=payload['ref_lon'],
            ref_elev_dm=payload['ref_elev_dm'],
            objects=objects,
        )
    except KeyError as e:
        raise CodecError(f"SDSM JSON is missing field {e.args[0]!r}")
    except TypeError as e:
        raise CodecError(f"SDSM JSON is malformed: {e}")


def dump(data: bytes) -> str:
    """Annotated hex listing: raw bytes, then every field with its bit offset and value."""
    data = bytes(data)
    msg = decode(data)
    lines = [f"SDSM {len(data)} bytes, {len(msg.objects)} object(s)"]

    for offset in range(0, len(data), 16):
        chunk = data[offset:offset + 16]
        lines.append(f"{offset:04x}: {' '.join(f'{b:02x}' for b in chunk)}")

    lines.append("")
    lines.append(f"{'bit':>5}  {'width':>5}  {'field':<28} value")

    bit = 0

    def row(name: str, spec: FieldSpec, value) -> None:
        nonlocal bit
        lines.append(f"{bit:>5}  {spec.bits:>5}  {name:<28} {value}")
        bit += spec.bits

    header = message_to_dict(msg)
    header['object_count'] = len(msg.objects)
    for spec in HEADER_FIELDS:
        row(spec.name, spec, header[spec.name])

    for index, obj in enumerate(msg.objects):
        for spec in OBJECT_FIELDS:
            value = getattr(obj, spec.name)
            if spec.name == 'obj_type':
                value = f"{int(value)} ({ObjectType(value).name.lower()})"
            row(f"objects[{index}].{spec.name}", spec, value)

    lines.append("")
    lines.append(f"data bits: {bit}")
    lines.append(f"pad bits: {len(data) * 8 - bit}")
    return '\n'.join(lines)
