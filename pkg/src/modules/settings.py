"""
Settings
Environment-driven configuration and logging setup.
"""

import os
import sys
from typing import Tuple

from dotenv import load_dotenv
from loguru import logger

from .errors import ConfigurationError

# Load environment variables
load_dotenv()

DEFAULT_OBU_PORT = 4750
DEFAULT_OBU_ENDPOINT = f"127.0.0.1:{DEFAULT_OBU_PORT}"
OBU_ENDPOINT_ENV = "WILDNET_OBU_ENDPOINT"


def configure_logging(level: str = None, log_file: str = None) -> None:
    """Route loguru output to stderr and, when configured, a rotating log file."""
    log_level = level or os.getenv('LOG_LEVEL', 'INFO')
    log_file = log_file or os.getenv('LOG_FILE')

    logger.remove()
    logger.add(sys.stderr, level=log_level)
    if log_file:
        logger.add(log_file, rotation="10 MB", retention="30 days", level=log_level)


def obu_endpoint_from_env() -> str:
    return os.getenv(OBU_ENDPOINT_ENV, DEFAULT_OBU_ENDPOINT)


def parse_endpoint(endpoint: str) -> Tuple[str, int]:
    """Split 'host:port' into its parts; a bare host gets the default OBU port."""
    if not endpoint:
        raise ConfigurationError("empty OBU endpoint")

    host, sep, port_text = endpoint.rpartition(':')
    if not sep:
        return endpoint, DEFAULT_OBU_PORT
    if not host:
        raise ConfigurationError(f"OBU endpoint '{endpoint}' has no host")
    try:
        port = int(port_text)
    except ValueError:
        raise ConfigurationError(f"OBU endpoint '{endpoint}' has a non-numeric port")
    if not 0 < port < 65536:
        raise ConfigurationError(f"OBU endpoint '{endpoint}' port out of range")
    return host.strip('[]'), port
