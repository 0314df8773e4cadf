"""
OBU Transport Service
Handles the real-socket leg of the V2X pipeline: encoded SDSMs go to the
locally connected OBU as single UDP datagrams, and a listener decodes
datagrams arriving on a port into alert records.
"""

import asyncio
import socket
import time
from typing import Callable, Dict, List, Optional, Tuple

from loguru import logger

from modules.errors import CodecError, PayloadTooLargeError, TransportError
from modules.sdsm_codec import decode, message_to_dict
from modules.settings import obu_endpoint_from_env, parse_endpoint

MAX_UDP_PAYLOAD = 65507


def udp_send(payload: bytes, endpoint: str) -> int:
    """
    Send payload as exactly one datagram to endpoint ('host:port').

    Fire-and-forget: no retry, no acknowledgement beyond the byte count
    the kernel accepted.

    Returns:
        Number of bytes written
    """
    if len(payload) > MAX_UDP_PAYLOAD:
        raise PayloadTooLargeError(endpoint, f"{len(payload)} bytes exceeds {MAX_UDP_PAYLOAD}")

    host, port = parse_endpoint(endpoint)
    try:
        family = socket.AF_INET6 if ':' in host else socket.AF_INET
        with socket.socket(family, socket.SOCK_DGRAM) as sock:
            return sock.sendto(payload, (host, port))
    except OSError as e:
        raise TransportError(endpoint, f"send failed: {e}") from e


class ObuTransportService:
    """Service for pushing encoded SDSMs to the OBU over UDP."""

    def __init__(self, endpoint: Optional[str] = None, enabled: bool = True):
        """Resolve the OBU endpoint from the argument or WILDNET_OBU_ENDPOINT."""
        self.endpoint = endpoint or obu_endpoint_from_env()
        self.enabled = enabled
        self.datagrams_sent = 0
        self.send_failures = 0
        self.bytes_sent = 0

        # malformed endpoints are rejected here, not on the first send
        parse_endpoint(self.endpoint)

        if self.enabled:
            logger.info(f"OBU transport service initialized - endpoint {self.endpoint}")
        else:
            logger.info("OBU transport service initialized in dry-run mode (no sockets)")

    def send_sdsm(self, payload: bytes) -> Tuple[bool, str]:
        """
        Send one encoded SDSM. Failures are counted and reported, never raised.

        Returns:
            Tuple of (success: bool, bytes_written_or_error: str)
        """
        if not self.enabled:
            self.datagrams_sent += 1
            self.bytes_sent += len(payload)
            return True, str(len(payload))

        try:
            written = udp_send(payload, self.endpoint)
        except TransportError as e:
            self.send_failures += 1
            logger.warning(str(e))
            return False, str(e)

        self.datagrams_sent += 1
        self.bytes_sent += written
        logger.debug(f"SDSM datagram sent to {self.endpoint}: {written} bytes")
        return True, str(written)

    def get_stats(self) -> Dict[str, int]:
        return {
            'datagrams_sent': self.datagrams_sent,
            'send_failures': self.send_failures,
            'bytes_sent': self.bytes_sent,
        }


def alert_from_datagram(data: bytes, sender: Tuple[str, int],
                        received_at_ms: Optional[int] = None) -> Dict:
    """Decode one datagram into an alert record; raises CodecError for malformed input."""
    msg = decode(data)
    alert = message_to_dict(msg)
    alert['received_at_ms'] = int(time.time() * 1000) if received_at_ms is None else received_at_ms
    alert['sender'] = f"{sender[0]}:{sender[1]}"
    return alert


class AlertListener(asyncio.DatagramProtocol):
    """
    Receive loop for SDSM datagrams. Every decodable datagram becomes one
    alert passed to on_alert; malformed ones are logged and skipped.
    """

    def __init__(self, on_alert: Callable[[Dict], None], max_alerts: Optional[int] = None):
        self.on_alert = on_alert
        self.max_alerts = max_alerts
        self.alerts: List[Dict] = []
        self.malformed = 0
        self.done = asyncio.get_running_loop().create_future()
        self.transport = None

    def connection_made(self, transport) -> None:
        self.transport = transport
        logger.info(f"Alert listener bound on {transport.get_extra_info('sockname')}")

    def datagram_received(self, data: bytes, addr) -> None:
        try:
            alert = alert_from_datagram(data, addr[:2])
        except CodecError as e:
            self.malformed += 1
            logger.warning(f"Skipping malformed datagram from {addr[0]}:{addr[1]} ({len(data)} bytes): {e}")
            return

        self.alerts.append(alert)
        self.on_alert(alert)
        if self.max_alerts is not None and len(self.alerts) >= self.max_alerts and not self.done.done():
            self.done.set_result(len(self.alerts))

    def error_received(self, exc: Exception) -> None:
        logger.warning(f"Alert listener socket error: {exc}")

    def connection_lost(self, exc: Optional[Exception]) -> None:
        if not self.done.done():
            self.done.set_result(len(self.alerts))


async def listen_for_alerts(host: str, port: int, on_alert: Callable[[Dict], None],
                            count: Optional[int] = None, timeout: Optional[float] = None) -> int:
    """
    Bind host:port and feed decoded alerts to on_alert until count alerts
    arrive, timeout seconds pass, or the task is cancelled.

    Returns:
        Number of alerts received
    """
    loop = asyncio.get_running_loop()
    try:
        transport, protocol = await loop.create_datagram_endpoint(
            lambda: AlertListener(on_alert, max_alerts=count),
            local_addr=(host, port),
        )
    except OSError as e:
        raise TransportError(f"{host}:{port}", f"bind failed: {e}") from e

    try:
        await asyncio.wait_for(asyncio.shield(protocol.done), timeout)
    except asyncio.TimeoutError:
        logger.info(f"Alert listener timed out after {timeout}s")
    finally:
        transport.close()

    logger.info(f"Alert listener stopped - {len(protocol.alerts)} alerts, {protocol.malformed} malformed")
    return len(protocol.alerts)
