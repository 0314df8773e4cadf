"""
V2X Network Simulation
Range-limited over-the-air broadcast with Bernoulli loss, single-hop RSU relay
with deduplication, and delivery statistics.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Sequence, Set, Tuple

import numpy as np
from loguru import logger

from .errors import ConfigurationError
from .geo import LatLon, haversine_m
from .sdsm_codec import SensorDataSharingMessage, message_key

DEFAULT_RANGE_M = 1000.0
DEFAULT_DELIVERY_PROB = 0.98
DEFAULT_HOP_LATENCY_MS = (10.0, 20.0)
DEFAULT_SEED = 7

MessageKey = Tuple[int, int, int]


class StationKind(str, Enum):
    OBU = 'obu'
    RSU = 'rsu'


@dataclass(frozen=True)
class RxRecord:
    key: MessageKey
    payload: bytes
    t_ms: float
    hop_count: int
    via: int  # station id of the transmitter


@dataclass
class StationNode:
    station_id: int
    kind: StationKind
    position: LatLon
    range_m: float = DEFAULT_RANGE_M
    rx_log: List[RxRecord] = field(default_factory=list)
    relayed_keys: Set[MessageKey] = field(default_factory=set)

    def __post_init__(self):
        self.kind = StationKind(self.kind)
        if self.range_m <= 0:
            raise ConfigurationError(f"station {self.station_id}: range_m must be positive")
        if not 0 <= self.station_id <= 0xFFFFFFFF:
            raise ConfigurationError(f"station id {self.station_id} does not fit in 32 bits")


@dataclass(frozen=True)
class RadioModel:
    max_range_m: float = DEFAULT_RANGE_M
    in_range_delivery_prob: float = DEFAULT_DELIVERY_PROB
    per_hop_latency_ms: Tuple[float, float] = DEFAULT_HOP_LATENCY_MS
    rng_seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.max_range_m <= 0:
            raise ConfigurationError("max_range_m must be positive")
        if not 0.0 <= self.in_range_delivery_prob <= 1.0:
            raise ConfigurationError("in_range_delivery_prob must lie in [0, 1]")
        low, high = self.per_hop_latency_ms
        if low < 0 or low > high:
            raise ConfigurationError(f"per-hop latency window {self.per_hop_latency_ms} is invalid")
        if not 0 <= self.rng_seed < 2 ** 64:
            raise ConfigurationError("rng_seed must be a 64-bit unsigned value")


@dataclass
class DeliveryStats:
    sent: int = 0
    delivered: int = 0
    relayed: int = 0
    duplicates_suppressed: int = 0
    latency_samples_ms: Dict[int, List[float]] = field(default_factory=dict)

    def record_latency(self, station_id: int, latency_ms: float) -> None:
        self.latency_samples_ms.setdefault(station_id, []).append(latency_ms)

    def merge(self, other: 'DeliveryStats') -> 'DeliveryStats':
        self.sent += other.sent
        self.delivered += other.delivered
        self.relayed += other.relayed
        self.duplicates_suppressed += other.duplicates_suppressed
        for station_id, samples in other.latency_samples_ms.items():
            self.latency_samples_ms.setdefault(station_id, []).extend(samples)
        return self

    def to_dict(self) -> dict:
        return {
            'sent': self.sent,
            'delivered': self.delivered,
            'relayed': self.relayed,
            'duplicates_suppressed': self.duplicates_suppressed,
            'latency_samples_ms': {
                str(station_id): [round(v, 3) for v in samples]
                for station_id, samples in sorted(self.latency_samples_ms.items())
            },
        }


@dataclass(frozen=True)
class Delivery:
    station_id: int
    arrival_ms: float
    latency_ms: float
    hop_count: int


class RadioWorld:
    """
    In-process over-the-air layer. One owner advances it; every random draw
    comes from a generator seeded with radio.rng_seed.
    """

    def __init__(self, stations: Sequence[StationNode], radio: RadioModel):
        ids = [s.station_id for s in stations]
        if len(ids) != len(set(ids)):
            raise ConfigurationError("station ids must be unique within a scenario")

        self.stations = list(stations)
        self.radio = radio
        self.rng = np.random.default_rng(radio.rng_seed)
        self.deliveries: List[Delivery] = []

        logger.info(f"Radio world initialized - {len(self.stations)} stations, "
                    f"range {radio.max_range_m}m, delivery prob {radio.in_range_delivery_prob}, "
                    f"seed {radio.rng_seed}")

    def station(self, station_id: int) -> StationNode:
        for node in self.stations:
            if node.station_id == station_id:
                return node
        raise KeyError(station_id)

    def _transmit(self, payload: bytes, key: MessageKey, transmitter: StationNode,
                  now_ms: float, hop_count: int) -> Tuple[DeliveryStats, List[Tuple[StationNode, float]]]:
        stats = DeliveryStats(sent=1)
        low, high = self.radio.per_hop_latency_ms
        receivers = []

        for node in self.stations:
            if node.station_id == transmitter.station_id:
                continue
            if not self.in_range(transmitter, node):
                continue
            if self.rng.random() >= self.radio.in_range_delivery_prob:
                continue

            latency = float(self.rng.uniform(low, high))
            arrival = now_ms + latency
            node.rx_log.append(RxRecord(key, payload, arrival, hop_count, transmitter.station_id))
            self.deliveries.append(Delivery(node.station_id, arrival, latency, hop_count))
            stats.delivered += 1
            stats.record_latency(node.station_id, latency)
            receivers.append((node, arrival))

        return stats, receivers

    def broadcast(self, msg: SensorDataSharingMessage, payload: bytes, origin: StationNode,
                  now_ms: float, relay: bool = True) -> DeliveryStats:
        """
        Transmit from origin to every station within range. RSUs that receive
        the original transmission rebroadcast it once (single hop).
        """
        if origin not in self.stations:
            raise ConfigurationError(f"origin station {origin.station_id} is not part of the world")

        key = message_key(msg)
        stats, receivers = self._transmit(payload, key, origin, now_ms, hop_count=0)

        if relay:
            for node, arrival in receivers:
                if node.kind is StationKind.RSU:
                    stats.merge(self.rsu_relay(node, msg, payload, arrival))
        return stats

    def rsu_relay(self, rsu: StationNode, msg: SensorDataSharingMessage, payload: bytes,
                  now_ms: float) -> DeliveryStats:
        """Rebroadcast once per unique message key; later arrivals count as duplicates."""
        if rsu.kind is not StationKind.RSU:
            raise ConfigurationError(f"station {rsu.station_id} is not an RSU")

        key = message_key(msg)
        if key in rsu.relayed_keys:
            logger.debug(f"RSU {rsu.station_id} suppressed duplicate {key}")
            return DeliveryStats(duplicates_suppressed=1)

        rsu.relayed_keys.add(key)
        stats, _ = self._transmit(payload, key, rsu, now_ms, hop_count=1)
        stats.relayed = 1
        logger.debug(f"RSU {rsu.station_id} relayed {key} to {stats.delivered} stations")
        return stats

    def in_range(self, a: StationNode, b: StationNode) -> bool:
        return haversine_m(a.position, b.position) <= min(self.radio.max_range_m, a.range_m)


def receive_unique(node: StationNode, since: int = 0) -> List[RxRecord]:
    """First copy of each message in node's rx_log, from index since onwards."""
    seen = {record.key for record in node.rx_log[:since]}
    unique = []
    for record in node.rx_log[since:]:
        if record.key in seen:
            continue
        seen.add(record.key)
        unique.append(record)
    return unique
