"""
Storage Service
Handles persistence of reports and codec artifacts as JSON and binary files.
"""

import json
from pathlib import Path
from typing import Any, Dict, Union

from loguru import logger

from .errors import WildnetError


def dumps_report(payload: Dict[str, Any]) -> str:
    """Stable JSON rendering: insertion key order, two-space indent, trailing newline."""
    return json.dumps(payload, indent=2, ensure_ascii=False, allow_nan=False) + '\n'


class StorageService:
    """Handles report and artifact storage on the local filesystem."""

    def __init__(self, base_dir: Union[str, Path, None] = None):
        self.base_dir = Path(base_dir) if base_dir is not None else None
        logger.debug("Storage service initialized")

    def _target(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        if self.base_dir is not None and not path.is_absolute():
            path = self.base_dir / path
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def write_report(self, payload: Dict[str, Any], path: Union[str, Path]) -> Path:
        target = self._target(path)
        target.write_text(dumps_report(payload), encoding='utf-8')
        logger.info(f"Report stored to {target}")
        return target

    def write_bytes(self, data: bytes, path: Union[str, Path]) -> Path:
        target = self._target(path)
        target.write_bytes(data)
        logger.info(f"{len(data)} bytes stored to {target}")
        return target

    @staticmethod
    def read_json(path: Union[str, Path]) -> Any:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            raise WildnetError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}")
        except UnicodeDecodeError as e:
            raise WildnetError(f"{path}: not valid UTF-8 at byte {e.start}") from e
