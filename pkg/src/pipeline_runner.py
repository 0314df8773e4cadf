#!/usr/bin/env python3
"""
Deer Warning Pipeline Runner
Drives a scenario frame by frame: capture, preprocess, detect, track, warn,
broadcast an SDSM to the OBU and over the simulated air, then decode and alert
at the receiving vehicles.
"""

import time
from contextlib import contextmanager
from typing import Dict, Optional, Set, Tuple

import numpy as np
from loguru import logger

from modules.data_ingestion import ReplayDetector
from modules.errors import WildnetError
from modules.preprocessing import preprocess, read_raw_frame, synthetic_frame
from modules.scenario import STAGE_TYPICAL_MS, Scenario, SimReport, StageTimings, check_budgets
from modules.sdsm_codec import build_sdsm, decode, encode, message_key
from modules.tracking import TrackManager
from modules.v2x_net import RadioWorld, StationKind
from modules.validation import evaluate_broadcast, evaluate_driver_warning
from services.obu_transport import ObuTransportService

RAW_FRAME_PATTERN = 'frame_{frame_id:06d}.raw'


class _Stopwatch:
    def __init__(self):
        self.elapsed_ms = 0.0


@contextmanager
def _measure():
    watch = _Stopwatch()
    start = time.perf_counter()
    try:
        yield watch
    finally:
        watch.elapsed_ms = (time.perf_counter() - start) * 1000.0


class PipelineRunner:
    """Runs the detection-to-alert pipeline over one scenario."""

    def __init__(self, scenario: Scenario, transport: Optional[ObuTransportService] = None):
        self.scenario = scenario
        self.thresholds = scenario.threshold_config()
        self.radio = scenario.radio_model()
        self.camera = scenario.camera_model()
        self.seed = self.radio.rng_seed

        if scenario.detection_log is not None:
            self.detector = ReplayDetector.from_jsonl(scenario.detection_log)
        else:
            self.detector = ReplayDetector()

        self.tracks = TrackManager(self.thresholds)
        self.world = RadioWorld(scenario.station_nodes(), self.radio)
        self.ego_node = self.world.station(scenario.ego.station_id)
        self.transport = transport or ObuTransportService(scenario.obu_endpoint)

        # stage timings draw from a stream separate from the radio
        self.timing_rng = np.random.default_rng(np.random.SeedSequence(self.seed).spawn(1)[0])
        self.msg_count = 0
        self.rx_cursor: Dict[int, int] = {node.station_id: 0 for node in self.world.stations}
        self.alerted: Dict[int, Set[Tuple[int, int, int]]] = {node.station_id: set() for node in self.world.stations}

        logger.info(f"Pipeline runner initialized - scenario '{scenario.name}', "
                    f"{scenario.frame_count} frames, timing mode {scenario.timing_mode}")

    @property
    def measured(self) -> bool:
        return self.scenario.timing_mode == 'measured'

    def _sample(self, stage: str) -> float:
        low, high = STAGE_TYPICAL_MS[stage]
        return float(self.timing_rng.uniform(low, high))

    def _provenance(self) -> Dict[str, str]:
        real = 'measured' if self.measured else 'simulated'
        return {
            'capture_ms': real,
            'inference_ms': 'replay_log',
            'sdsm_gen_ms': real,
            'v2x_tx_ms': 'radio_model',
            'rx_decode_ms': 'simulated',
            'alert_ms': 'simulated',
        }

    def _capture(self, frame_id: int, t_ms: int):
        if self.scenario.frames_dir is not None:
            path = self.scenario.frames_dir / RAW_FRAME_PATTERN.format(frame_id=frame_id)
            return read_raw_frame(path, frame_id=frame_id, t_ms=t_ms)
        return synthetic_frame(frame_id, t_ms, self.seed)

    def _collect_alerts(self, frame_id: int, report: SimReport, sent) -> int:
        """Decode newly received copies at every OBU other than the source; one alert per message per station."""
        raised = 0
        for node in self.world.stations:
            since = self.rx_cursor[node.station_id]
            fresh = node.rx_log[since:]
            self.rx_cursor[node.station_id] = len(node.rx_log)
            if node.kind is not StationKind.OBU or node.station_id == self.ego_node.station_id:
                continue

            for record in fresh:
                if record.key in self.alerted[node.station_id]:
                    report.alert_duplicates_suppressed += 1
                    continue
                msg = decode(record.payload)
                if msg != sent.get(record.key):
                    raise WildnetError(f"station {node.station_id} decoded a message that differs from the one sent")

                self.alerted[node.station_id].add(record.key)
                obj = msg.objects[0]
                report.receiver_alerts.append({
                    'frame_id': frame_id,
                    'station_id': node.station_id,
                    'source_id': msg.source_id,
                    'msg_count': msg.msg_count,
                    'sdsm_time_ms': msg.sdsm_time_ms,
                    'obj_id': obj.obj_id,
                    'confidence_pct': obj.confidence_pct,
                    'hop_count': record.hop_count,
                    'via': record.via,
                    'arrival_ms': round(record.t_ms, 3),
                })
                raised += 1
        return raised

    def _process_frame(self, tick: int, report: SimReport, sent) -> StageTimings:
        frame_id = tick + 1
        now_ms = self.scenario.frame_time_ms(tick)
        offset_ms = now_ms - self.scenario.epoch_ms
        ego = self.scenario.ego_pose_at(offset_ms)
        self.ego_node.position = (ego.lat, ego.lon)

        with _measure() as capture_watch:
            frame = self._capture(frame_id, now_ms)
            preprocess(frame, self.scenario.representation)
        capture_ms = capture_watch.elapsed_ms if self.measured else self._sample('capture_ms')

        detections, inference_ms = self.detector.detect(frame)
        report.detections += len(detections)

        tracks = self.tracks.update(detections, now_ms)
        sdsm_gen_ms = 0.0
        v2x_tx_ms = 0.0
        deliveries_before = len(self.world.deliveries)

        for track in tracks:
            if track.last_update_ms != now_ms:
                continue
            if evaluate_driver_warning(track, self.thresholds):
                report.driver_warnings += 1
                report.events.append({
                    'frame_id': frame_id, 't_ms': now_ms, 'event': 'driver_warning',
                    'track_id': track.track_id, 'confidence': round(track.last_confidence, 6),
                })
            if not evaluate_broadcast(track, self.thresholds):
                continue

            track = self.tracks.mark_broadcast(track.track_id)
            with _measure() as sdsm_watch:
                msg = build_sdsm(track, ego, now_ms, self.msg_count,
                                 source_id=self.ego_node.station_id, camera=self.camera)
                payload = encode(msg)
            self.msg_count = (self.msg_count + 1) % 128
            report.sdsm_encoded += 1
            sdsm_gen_ms += sdsm_watch.elapsed_ms if self.measured else self._sample('sdsm_gen_ms')
            sent[message_key(msg)] = msg

            ok, _ = self.transport.send_sdsm(payload)
            report.datagrams_sent += 1
            if not ok:
                report.send_failures += 1

            report.delivery.merge(self.world.broadcast(msg, payload, self.ego_node, now_ms))
            report.broadcasts += 1
            report.events.append({
                'frame_id': frame_id, 't_ms': now_ms, 'event': 'broadcast',
                'track_id': track.track_id, 'confidence_pct': msg.objects[0].confidence_pct,
                'msg_count': msg.msg_count, 'bytes': len(payload),
            })
            logger.info(f"Frame {frame_id}: broadcast SDSM for track {track.track_id} "
                        f"({len(payload)} bytes, confidence {msg.objects[0].confidence_pct}%)")

        hop0 = [d.latency_ms for d in self.world.deliveries[deliveries_before:] if d.hop_count == 0]
        if hop0:
            v2x_tx_ms = max(hop0)

        rx_decode_ms = 0.0
        alert_ms = 0.0
        if self._collect_alerts(frame_id, report, sent):
            rx_decode_ms = self._sample('rx_decode_ms')
            alert_ms = self._sample('alert_ms')

        return StageTimings(
            capture_ms=capture_ms,
            inference_ms=inference_ms,
            sdsm_gen_ms=sdsm_gen_ms,
            v2x_tx_ms=v2x_tx_ms,
            rx_decode_ms=rx_decode_ms,
            alert_ms=alert_ms,
            frame_id=frame_id,
        )

    def run(self) -> SimReport:
        """
        Execute the scenario:
        1. Prepare the report
        2. Process every frame tick in order
        3. Check latency budgets
        """
        report = SimReport(
            scenario=self.scenario.name,
            timing_mode=self.scenario.timing_mode,
            seed=self.seed,
            nominal_fps=1000.0 / self.scenario.frame_period_ms,
            provenance=self._provenance(),
        )
        sent = {}

        logger.info(f"Step 1: Running {self.scenario.frame_count} frames "
                    f"at {self.scenario.frame_period_ms}ms per frame...")
        try:
            for tick in range(self.scenario.frame_count):
                report.timings.append(self._process_frame(tick, report, sent))
                report.frames += 1
        except (OSError, WildnetError) as e:
            report.status = 'incomplete'
            report.error = str(e)
            logger.error(f"Pipeline aborted at frame {report.frames + 1}: {e}")

        logger.info(f"Step 2: Processed {report.frames} frames - {report.detections} detections, "
                    f"{report.driver_warnings} driver warnings, {report.broadcasts} broadcasts, "
                    f"{len(report.receiver_alerts)} receiver alerts")

        logger.info("Step 3: Checking latency budgets...")
        report.budget = check_budgets(report)
        if report.budget.violations:
            logger.warning(f"{len(report.budget.violations)} latency budget violations")

        return report


def run(scenario: Scenario, transport: Optional[ObuTransportService] = None) -> SimReport:
    """Run one scenario end to end and return its report."""
    return PipelineRunner(scenario, transport).run()
