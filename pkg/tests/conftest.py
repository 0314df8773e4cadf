"""
Shared test setup: src on the import path, fixture locations and small builders.
"""

import sys
from pathlib import Path

import pytest
from loguru import logger

ROOT = Path(__file__).resolve().parent.parent

# Add src to path
sys.path.insert(0, str(ROOT / 'src'))

FIXTURES = ROOT / 'tests' / 'fixtures'
BUNDLED = ROOT / 'fixtures'


@pytest.fixture(autouse=True)
def quiet_logger():
    """Route log output through whatever sys.stderr is current (CliRunner swaps it)."""
    logger.remove()
    logger.add(lambda message: sys.stderr.write(message), level='WARNING')
    yield
    logger.remove()


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def bundled_dir() -> Path:
    return BUNDLED


@pytest.fixture
def make_track():
    from modules.tracking import Track

    def _make(track_id=1, bbox=(112.0, 100.0, 144.0, 124.0), confidence=0.82, hits=3,
              peak=None, issued=False, last_update_ms=0, distance_ft=55.0):
        return Track(
            track_id=track_id,
            last_bbox=bbox,
            last_confidence=confidence,
            consecutive_hits=hits,
            age_frames=0,
            peak_confidence=confidence if peak is None else peak,
            broadcast_issued=issued,
            last_update_ms=last_update_ms,
            est_distance_ft=distance_ft,
        )

    return _make


@pytest.fixture
def make_detection():
    from modules.data_ingestion import Detection

    def _make(frame_id=1, bbox=(112.0, 100.0, 144.0, 124.0), confidence=0.82, distance_ft=55.0):
        return Detection(frame_id=frame_id, bbox=bbox, confidence=confidence, est_distance_ft=distance_ft)

    return _make
