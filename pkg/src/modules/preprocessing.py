"""
Preprocessing Service
Handles thermal frame normalization, model-input resizing and heatmap rendering.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Any, Union

import numpy as np
from loguru import logger

from .errors import InvalidFrameError

SENSOR_WIDTH = 256
SENSOR_HEIGHT = 192
MODEL_INPUT_SIZE = 256

RAW_HEADER_DTYPE = np.dtype('<u4')
RAW_PIXEL_DTYPE = np.dtype('<u2')

# gray level -> rgb control points of the false-color palette
HEATMAP_CONTROL_POINTS = (
    (0, (0, 0, 0)),
    (64, (0, 0, 255)),
    (128, (255, 0, 255)),
    (192, (255, 128, 0)),
    (255, (255, 255, 255)),
)

GRAYSCALE_SHARE = 0.70
COMPOSITION_TOLERANCE = 0.01


def _frozen(pixels: np.ndarray) -> np.ndarray:
    pixels = np.ascontiguousarray(pixels)
    pixels.setflags(write=False)
    return pixels


def _check_dimensions(width: int, height: int, pixels: np.ndarray) -> None:
    if width <= 0 or height <= 0:
        raise InvalidFrameError(f"frame dimensions must be positive, got {width}x{height}")
    if pixels.size == 0:
        raise InvalidFrameError("empty pixel buffer")
    if pixels.size != width * height:
        raise InvalidFrameError(
            f"pixel buffer holds {pixels.size} values, expected {width * height}"
        )


@dataclass(frozen=True)
class ThermalFrame:
    """Raw 16-bit radiometric raster as delivered by the thermal camera."""
    frame_id: int
    t_ms: int
    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        _check_dimensions(self.width, self.height, pixels)
        if pixels.min() < 0 or pixels.max() > 0xFFFF:
            raise InvalidFrameError("thermal counts must fit in 16 bits")
        object.__setattr__(self, 'pixels', _frozen(pixels.reshape(self.height, self.width).astype(np.uint16)))


@dataclass(frozen=True)
class GrayFrame:
    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        _check_dimensions(self.width, self.height, pixels)
        if pixels.min() < 0 or pixels.max() > 255:
            raise InvalidFrameError("gray intensities must lie in [0, 255]")
        object.__setattr__(self, 'pixels', _frozen(pixels.reshape(self.height, self.width).astype(np.uint8)))


@dataclass(frozen=True)
class HeatmapFrame:
    width: int
    height: int
    pixels: np.ndarray  # (height, width, 3) uint8

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.size != self.width * self.height * 3:
            raise InvalidFrameError("heatmap buffer must hold one rgb triple per pixel")
        object.__setattr__(self, 'pixels', _frozen(pixels.reshape(self.height, self.width, 3).astype(np.uint8)))


def normalize_frame(frame: ThermalFrame) -> GrayFrame:
    """
    Per-frame min-max stretch of radiometric counts to 8-bit gray.

    g = round_half_up(255 * (v - min) / (max - min)); a constant frame maps to 0.
    Integer arithmetic keeps the result exact.
    """
    counts = frame.pixels.astype(np.int64)
    low = int(counts.min())
    span = int(counts.max()) - low

    if span == 0:
        return GrayFrame(frame.width, frame.height, np.zeros_like(counts, dtype=np.uint8))

    gray = (2 * 255 * (counts - low) + span) // (2 * span)
    return GrayFrame(frame.width, frame.height, gray.astype(np.uint8))


def resize_to_model_input(frame: GrayFrame, size: int = MODEL_INPUT_SIZE) -> GrayFrame:
    """Nearest-neighbor stretch to size x size without letterboxing."""
    if frame.width == size and frame.height == size:
        return frame

    rows = (np.arange(size) * frame.height) // size
    cols = (np.arange(size) * frame.width) // size
    return GrayFrame(size, size, frame.pixels[np.ix_(rows, cols)])


def _build_heatmap_lut() -> np.ndarray:
    levels = np.arange(256, dtype=np.float64)
    anchors = [gray for gray, _ in HEATMAP_CONTROL_POINTS]
    lut = np.empty((256, 3), dtype=np.uint8)
    for channel in range(3):
        values = [rgb[channel] for _, rgb in HEATMAP_CONTROL_POINTS]
        lut[:, channel] = np.floor(np.interp(levels, anchors, values) + 0.5).astype(np.uint8)
    lut.setflags(write=False)
    return lut


HEATMAP_LUT = _build_heatmap_lut()


def render_heatmap(frame: GrayFrame) -> HeatmapFrame:
    """False-color rendering through the fixed five-point palette."""
    return HeatmapFrame(frame.width, frame.height, HEATMAP_LUT[frame.pixels])


def preprocess(frame: ThermalFrame, representation: str = 'grayscale') -> Union[GrayFrame, HeatmapFrame]:
    """Full chain from raw counts to a 256x256 model input."""
    model_input = resize_to_model_input(normalize_frame(frame))
    if representation == 'grayscale':
        return model_input
    if representation == 'heatmap':
        return render_heatmap(model_input)
    raise InvalidFrameError(f"unknown representation '{representation}'")


def read_raw_frame(path: Union[str, Path], frame_id: int = 0, t_ms: int = 0) -> ThermalFrame:
    """
    Read a raw fixture: 8-byte header (width u32 LE, height u32 LE)
    followed by width*height little-endian u16 counts.
    """
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise InvalidFrameError(f"{path}: missing 8-byte raster header")

    width, height = (int(v) for v in np.frombuffer(data[:8], dtype=RAW_HEADER_DTYPE))
    body = data[8:]
    expected = width * height * RAW_PIXEL_DTYPE.itemsize
    if len(body) != expected:
        raise InvalidFrameError(f"{path}: expected {expected} pixel bytes, found {len(body)}")

    pixels = np.frombuffer(body, dtype=RAW_PIXEL_DTYPE)
    return ThermalFrame(frame_id, t_ms, width, height, pixels)


def write_raw_frame(frame: ThermalFrame, path: Union[str, Path]) -> None:
    header = np.array([frame.width, frame.height], dtype=RAW_HEADER_DTYPE).tobytes()
    body = frame.pixels.astype(RAW_PIXEL_DTYPE).tobytes()
    Path(path).write_bytes(header + body)


def synthetic_frame(frame_id: int, t_ms: int, seed: int,
                    width: int = SENSOR_WIDTH, height: int = SENSOR_HEIGHT) -> ThermalFrame:
    """Deterministic background raster for scenarios without recorded frames."""
    rng = np.random.default_rng([seed, frame_id])
    background = rng.integers(7400, 7800, size=(height, width), dtype=np.uint16)
    return ThermalFrame(frame_id, t_ms, width, height, background)


def composition_check(gray_count: int, heatmap_count: int,
                      target_gray_share: float = GRAYSCALE_SHARE,
                      tolerance: float = COMPOSITION_TOLERANCE) -> Dict[str, Any]:
    """Grayscale/heatmap mix of a dataset against the 70/30 composition."""
    total = gray_count + heatmap_count
    if total <= 0:
        return {'passed': False, 'gray_share': None, 'heatmap_share': None,
                'issues': ['empty dataset']}

    gray_share = gray_count / total
    passed = abs(gray_share - target_gray_share) <= tolerance + 1e-12
    issues = [] if passed else [
        f"grayscale share {gray_share:.4f} deviates from {target_gray_share:.2f} by more than {tolerance:.2f}"
    ]
    if not passed:
        logger.warning(issues[0])

    return {
        'passed': passed,
        'gray_share': round(gray_share, 4),
        'heatmap_share': round(1 - gray_share, 4),
        'issues': issues,
    }
