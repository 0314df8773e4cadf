"""
Validation Service
Threshold configuration and the two warning decision points:
driver warning issuance and SDSM broadcast.
"""

from dataclasses import dataclass

from loguru import logger

from .errors import ConfigurationError
from .tracking import Track

HOT_WEATHER_DRIVER_CONF = 0.65
HOT_WEATHER_TEMP_F = 90.0


@dataclass(frozen=True)
class ThresholdConfig:
    driver_warn_conf: float = 0.50
    broadcast_conf: float = 0.65
    confirm_frames: int = 3
    assoc_iou: float = 0.3
    max_age_frames: int = 5
    hot_weather_mode: bool = False
    # broadcast on confirmation alone, ignoring confidence (field testing)
    field_test_mode: bool = False

    def __post_init__(self):
        for name in ('driver_warn_conf', 'broadcast_conf', 'assoc_iou'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {value}")
        if self.confirm_frames < 1:
            raise ConfigurationError(f"confirm_frames must be >= 1, got {self.confirm_frames}")
        if self.max_age_frames < 0:
            raise ConfigurationError(f"max_age_frames must be >= 0, got {self.max_age_frames}")
        if self.effective_driver_warn_conf > self.broadcast_conf:
            raise ConfigurationError(
                f"driver warning threshold {self.effective_driver_warn_conf} exceeds "
                f"broadcast threshold {self.broadcast_conf}"
            )

    @property
    def effective_driver_warn_conf(self) -> float:
        if self.hot_weather_mode:
            return max(self.driver_warn_conf, HOT_WEATHER_DRIVER_CONF)
        return self.driver_warn_conf

    @classmethod
    def for_ambient(cls, ambient_temp_f: float = None, **fields) -> 'ThresholdConfig':
        """Build a config, switching hot-weather mode on above 90 F."""
        if ambient_temp_f is not None and ambient_temp_f > HOT_WEATHER_TEMP_F and not fields.get('hot_weather_mode'):
            logger.info(f"Ambient {ambient_temp_f}F above {HOT_WEATHER_TEMP_F}F - hot weather mode enabled")
            fields['hot_weather_mode'] = True
        return cls(**fields)


def evaluate_driver_warning(track: Track, cfg: ThresholdConfig) -> bool:
    """Warn the sensing vehicle's driver on any frame whose confidence clears the threshold."""
    return track.last_confidence >= cfg.effective_driver_warn_conf


def evaluate_broadcast(track: Track, cfg: ThresholdConfig) -> bool:
    """
    True once a track is confirmed, confident enough and not yet broadcast.

    The caller marks the track broadcast_issued after acting on a True result.
    """
    if track.broadcast_issued:
        return False
    if track.consecutive_hits < cfg.confirm_frames:
        return False
    if cfg.field_test_mode:
        return True
    return track.peak_confidence >= cfg.broadcast_conf
