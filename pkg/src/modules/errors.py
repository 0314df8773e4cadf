"""
Error Types
Exception tree shared by the detection, codec, network and evaluation modules.
"""

from typing import Optional


class WildnetError(Exception):
    """Base class for every error raised by this package."""


class InvalidFrameError(WildnetError):
    """Raised when a thermal or gray frame violates its shape or value rules."""


class InvalidDetectionError(WildnetError):
    """Raised when a detection box or confidence is malformed."""


class ReplayLogError(WildnetError):
    """Raised when a replay log record cannot be parsed."""

    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"replay log line {line_no}: {reason}")


class ConfigurationError(WildnetError):
    """Raised for missing or contradictory runtime configuration."""


class ScenarioError(WildnetError):
    """Raised when a scenario file cannot be parsed or is invalid."""


class CodecError(WildnetError):
    """Base class for SDSM wire format errors."""


class EncodeRangeError(CodecError):
    def __init__(self, field: str, value, detail: str = ""):
        self.field = field
        self.value = value
        message = f"field '{field}' out of range: {value!r}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class TruncationError(CodecError):
    def __init__(self, expected_bits: int, actual_bits: int):
        self.expected_bits = expected_bits
        self.actual_bits = actual_bits
        super().__init__(
            f"truncated SDSM: expected at least {expected_bits} bits, got {actual_bits}"
        )


class LengthMismatchError(CodecError):
    def __init__(self, expected_bytes: int, actual_bytes: int):
        self.expected_bytes = expected_bytes
        self.actual_bytes = actual_bytes
        super().__init__(
            f"SDSM length mismatch: object count implies {expected_bytes} bytes, got {actual_bytes}"
        )


class SemanticDecodeError(CodecError):
    """Raised when decoded fields violate message invariants."""


class PaddingError(CodecError):
    """Raised when trailing pad bits are not zero."""


class TransportError(WildnetError):
    def __init__(self, endpoint: str, reason: str):
        self.endpoint = endpoint
        self.reason = reason
        super().__init__(f"UDP {endpoint}: {reason}")


class PayloadTooLargeError(TransportError):
    pass


class EvaluationError(WildnetError):
    def __init__(self, message: str, offender: Optional[str] = None):
        self.offender = offender
        super().__init__(message)
