#!/usr/bin/env python3
"""
Wildnet - Main Application Entry Point
Command-line surface for the thermal deer warning pipeline: scenario
simulation, the SDSM codec, detection evaluation and a UDP alert listener.
"""

import asyncio
import json
from enum import Enum
from pathlib import Path
from typing import NoReturn, Optional

import typer
from loguru import logger

from modules.errors import WildnetError
from modules.evaluation import evaluate, load_ground_truth, load_predictions, render_metrics_table, render_range_table
from modules.scenario import load_scenario, render_summary
from modules.sdsm_codec import decode, dump, encode, message_from_dict, message_to_dict
from modules.settings import DEFAULT_OBU_PORT, configure_logging
from modules.storage import StorageService, dumps_report
from pipeline_runner import run
from services.obu_transport import ObuTransportService, listen_for_alerts

EXIT_ERROR = 1
EXIT_BUDGET_VIOLATION = 2

app = typer.Typer(help="Thermal deer detection and V2X warning toolkit.", no_args_is_help=True,
                  add_completion=False)
codec_app = typer.Typer(help="Encode, decode and inspect SDSM wire messages.", no_args_is_help=True)
app.add_typer(codec_app, name="codec")


class OutputFormat(str, Enum):
    json = "json"
    text = "text"


def _fail(message: str) -> NoReturn:
    typer.echo(f"error: {message}", err=True)
    raise typer.Exit(code=EXIT_ERROR)


def _emit(payload: dict, out: Optional[Path]) -> None:
    if out is None:
        typer.echo(dumps_report(payload), nl=False)
    else:
        StorageService().write_report(payload, out)


@app.callback()
def main_callback(
    log_level: Optional[str] = typer.Option(None, "--log-level", help="Log level (default: LOG_LEVEL or INFO)."),
):
    configure_logging(log_level)


@app.command()
def simulate(
    scenario_path: Path = typer.Argument(..., metavar="SCENARIO", help="Scenario JSON file."),
    seed: Optional[int] = typer.Option(None, "--seed", min=0, help="Radio RNG seed (scenario value, 7 if unset)."),
    obu_endpoint: Optional[str] = typer.Option(None, "--obu-endpoint",
                                               help="OBU host:port (falls back to WILDNET_OBU_ENDPOINT)."),
    output_format: OutputFormat = typer.Option(OutputFormat.json, "--format"),
    out: Optional[Path] = typer.Option(None, "--out", help="Write the JSON report here instead of stdout."),
    no_udp: bool = typer.Option(False, "--no-udp", help="Skip the real UDP send to the OBU."),
    driver_warn_conf: Optional[float] = typer.Option(None, "--driver-warn-conf", min=0.0, max=1.0),
    broadcast_conf: Optional[float] = typer.Option(None, "--broadcast-conf", min=0.0, max=1.0),
    confirm_frames: Optional[int] = typer.Option(None, "--confirm-frames", min=1),
    hot_weather: Optional[bool] = typer.Option(None, "--hot-weather/--no-hot-weather"),
    field_test: Optional[bool] = typer.Option(None, "--field-test/--no-field-test"),
):
    """Run a scenario end to end. Exit 2 when a latency budget is violated."""
    try:
        scenario = load_scenario(scenario_path)
        overrides = {
            'driver_warn_conf': driver_warn_conf,
            'broadcast_conf': broadcast_conf,
            'confirm_frames': confirm_frames,
            'hot_weather_mode': hot_weather,
            'field_test_mode': field_test,
        }
        overrides = {k: v for k, v in overrides.items() if v is not None}
        if overrides:
            scenario.thresholds = scenario.thresholds.model_copy(update=overrides)
        if seed is not None:
            scenario.radio = scenario.radio.model_copy(update={'rng_seed': seed})
        scenario.threshold_config()

        transport = ObuTransportService(obu_endpoint or scenario.obu_endpoint, enabled=not no_udp)
        report = run(scenario, transport)
    except (WildnetError, OSError) as e:
        _fail(str(e))

    payload = report.to_dict()
    summary = render_summary(report)
    if output_format is OutputFormat.json:
        _emit(payload, out)
        typer.echo(summary, err=True)
    else:
        typer.echo(summary)
        if out is not None:
            _emit(payload, out)

    if report.status != 'completed':
        raise typer.Exit(code=EXIT_ERROR)
    if report.budget is not None and report.budget.violations:
        raise typer.Exit(code=EXIT_BUDGET_VIOLATION)


@codec_app.command("encode")
def codec_encode(
    input_path: Path = typer.Argument(..., metavar="MESSAGE_JSON"),
    out: Optional[Path] = typer.Option(None, "--out", help="Binary output file (hex to stdout if omitted)."),
):
    """JSON message to wire bytes."""
    try:
        payload = StorageService.read_json(input_path)
        data = encode(message_from_dict(payload))
        if out is not None:
            StorageService().write_bytes(data, out)
        else:
            typer.echo(data.hex())
    except (WildnetError, OSError) as e:
        _fail(str(e))


@codec_app.command("decode")
def codec_decode(input_path: Path = typer.Argument(..., metavar="MESSAGE_BIN")):
    """Wire bytes to canonical JSON."""
    try:
        msg = decode(input_path.read_bytes())
    except (WildnetError, OSError) as e:
        _fail(str(e))
    typer.echo(json.dumps(message_to_dict(msg), indent=2))


@codec_app.command("dump")
def codec_dump(input_path: Path = typer.Argument(..., metavar="MESSAGE_BIN")):
    """Annotated hex with per-field bit offsets."""
    try:
        text = dump(input_path.read_bytes())
    except (WildnetError, OSError) as e:
        _fail(str(e))
    typer.echo(text)


@app.command("eval")
def eval_command(
    gt_path: Path = typer.Argument(..., metavar="GROUND_TRUTH"),
    pred_path: Path = typer.Argument(..., metavar="PREDICTIONS"),
    conf: float = typer.Option(0.5, "--conf", min=0.0, max=1.0, help="Operating confidence threshold."),
    iou_thresh: float = typer.Option(0.5, "--iou", min=0.0, max=1.0, help="IoU threshold for P/R/F1 and the PR curve."),
    output_format: OutputFormat = typer.Option(OutputFormat.json, "--format"),
    out: Optional[Path] = typer.Option(None, "--out"),
    table: bool = typer.Option(False, "--table", help="Render the model performance table."),
    bins: bool = typer.Option(False, "--bins", help="Render accuracy by detection range."),
):
    """Evaluate predictions against ground truth."""
    try:
        report = evaluate(load_ground_truth(gt_path), load_predictions(pred_path),
                          conf_thresh=conf, iou_thresh=iou_thresh)
    except (WildnetError, OSError) as e:
        _fail(str(e))

    blocks = []
    if table or output_format is OutputFormat.text:
        blocks.append(render_metrics_table(report))
    if bins or output_format is OutputFormat.text:
        blocks.append(render_range_table(report))

    if output_format is OutputFormat.json:
        _emit(report.to_dict(), out)
        for block in blocks:
            typer.echo(block, err=True)
    else:
        typer.echo('\n\n'.join(blocks))
        if out is not None:
            _emit(report.to_dict(), out)


@app.command()
def listen(
    port: int = typer.Option(DEFAULT_OBU_PORT, "--port", min=1, max=65535),
    host: str = typer.Option("127.0.0.1", "--host"),
    count: Optional[int] = typer.Option(None, "--count", min=1, help="Stop after this many alerts."),
    timeout: Optional[float] = typer.Option(None, "--timeout", min=0.0, help="Stop after this many seconds."),
):
    """Print one JSON line per decoded SDSM received on a UDP port."""

    def on_alert(alert: dict) -> None:
        typer.echo(json.dumps(alert))

    try:
        asyncio.run(listen_for_alerts(host, port, on_alert, count=count, timeout=timeout))
    except KeyboardInterrupt:
        logger.info("Listener interrupted")
    except (WildnetError, OSError) as e:
        _fail(str(e))


def main():
    """Main entry point."""
    app()


if __name__ == "__main__":
    main()
