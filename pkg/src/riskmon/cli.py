"""
Command-line client for the monitoring service.

Every subcommand is a thin client: it reads input files, sends their content
to the service API, and writes the response bytes back to files unchanged.
By default the service runs in-process (no server needed, outputs are
deterministic); pass --url to target a running server instead.

Exit status of ``monitor``: 0 means the stream completed with no alarm
(censored), 3 means an alarm was raised; 1 is any runtime or validation
error and 2 a usage error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Optional

import click
import httpx

from .config import RunConfig, load_config_text

EXIT_ALARM = 3


class ServiceClient:
    """httpx wrapper: in-process ASGI client unless a URL is given."""

    def __init__(self, url: Optional[str] = None):
        if url:
            self._client: httpx.Client = httpx.Client(base_url=url, timeout=None)
        else:
            from fastapi.testclient import TestClient

            from .service import app

            self._client = TestClient(app)

    def post(self, path: str, payload: dict) -> httpx.Response:
        resp = self._client.post(path, json=payload)
        if resp.status_code >= 400:
            try:
                detail = resp.json().get("detail", resp.text)
            except (json.JSONDecodeError, ValueError):
                detail = resp.text
            raise click.ClickException(f"{path} failed ({resp.status_code}): {detail}")
        return resp


def _load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        return load_config_text(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise click.ClickException(f"config file not found: {path}")
    except ValueError as exc:
        raise click.ClickException(f"invalid config {path}: {exc}")


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise click.ClickException(f"file not found: {path}")


def _write(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _scenario_payload(cfg: RunConfig, seed: Optional[int], horizon: Optional[int]) -> dict:
    scenario = cfg.scenario.model_copy(
        update={
            k: v
            for k, v in (("seed", seed), ("horizon", horizon))
            if v is not None
        }
    )
    return scenario.model_dump()


@click.group()
def main() -> None:
    """Online risk monitoring from mixed labeled/unlabeled loss streams."""


_url_option = click.option("--url", default=None, help="Remote service URL (default: in-process).")
_config_option = click.option("--config", "config_path", default=None, type=click.Path(), help="JSON config file.")


@main.command()
@_config_option
@click.option("--seed", type=int, default=None, help="Override scenario seed.")
@click.option("--horizon", type=int, default=None, help="Override scenario horizon.")
@click.option("-o", "--output", default=None, help="Stream file to write (default stdout).")
@_url_option
def simulate(config_path, seed, horizon, output, url) -> None:
    """Generate a synthetic loss stream file from the configured scenario."""
    cfg = _load_config(config_path)
    client = ServiceClient(url)
    resp = client.post("/simulate", {"scenario": _scenario_payload(cfg, seed, horizon)})
    _write(output, resp.text)


@main.command()
@click.argument("source_file", type=click.Path())
@_config_option
@click.option(
    "--method",
    type=click.Choice(["hoeffding_labeled_only", "betting_ppi", "urm"]),
    default=None,
    help="Source bound method (default: from config).",
)
@click.option("-o", "--output", default=None, help="Calibration JSON to write (default stdout).")
@_url_option
def calibrate(source_file, config_path, method, output, url) -> None:
    """Calibrate the source risk bound from a stream-format source file."""
    cfg = _load_config(config_path)
    client = ServiceClient(url)
    resp = client.post(
        "/calibrate",
        {
            "source": _read(source_file),
            "monitor": cfg.monitor.model_dump(),
            "method": method or cfg.monitor.source_bound_method,
        },
    )
    _write(output, resp.text)


@main.command()
@click.argument("stream_file", type=click.Path())
@click.option("--calibration", "calibration_path", required=True, type=click.Path(), help="Calibration JSON file.")
@_config_option
@click.option(
    "--method",
    type=click.Choice(["srm", "pprm_fixed", "pprm_adaptive", "urm"]),
    default="pprm_adaptive",
    show_default=True,
)
@click.option("-o", "--output", default=None, help="Trace CSV to write (default stdout).")
@click.option("--summary", "summary_path", default=None, help="Summary JSON to write.")
@_url_option
def monitor(stream_file, calibration_path, config_path, method, output, summary_path, url) -> None:
    """Run a monitor over a stream file; exit 3 if an alarm was raised."""
    cfg = _load_config(config_path)
    client = ServiceClient(url)
    resp = client.post(
        "/monitor",
        {
            "stream": _read(stream_file),
            "calibration": _read(calibration_path),
            "monitor": cfg.monitor.model_dump(),
            "method": method,
        },
    )
    body = resp.json()
    _write(output, body["trace_csv"])
    summary = body["summary"]
    summary_text = json.dumps(summary, separators=(",", ":")) + "\n"
    if summary_path:
        _write(summary_path, summary_text)
    else:
        click.echo(summary_text, nl=False, err=output is None)
    if summary["alarm_time"] is not None:
        sys.exit(EXIT_ALARM)


@main.command()
@_config_option
@click.option("--seed", type=int, default=None, help="Override experiment base seed.")
@click.option("--horizon", type=int, default=None, help="Override scenario horizon.")
@click.option("--method", "methods", multiple=True, help="Methods to run (repeatable; default from config).")
@click.option("-o", "--output", default=None, help="Summary JSON to write (default stdout).")
@click.option("--output-dir", default=None, type=click.Path(), help="Also write per-method mean trace CSVs here.")
@_url_option
def experiment(config_path, seed, horizon, methods, output, output_dir, url) -> None:
    """Run a replicated Monte Carlo monitoring experiment."""
    cfg = _load_config(config_path)
    updates: dict = {}
    if seed is not None:
        updates["base_seed"] = seed
    if methods:
        updates["methods"] = list(methods)
    if updates:
        cfg = cfg.model_copy(update={"experiment": cfg.experiment.model_copy(update=updates)})
    if horizon is not None:
        cfg = cfg.model_copy(update={"scenario": cfg.scenario.model_copy(update={"horizon": horizon})})
    client = ServiceClient(url)
    resp = client.post("/experiment", {"config": cfg.model_dump()})
    doc = resp.json()
    _write(output, json.dumps(doc, separators=(",", ":")) + "\n")
    if output_dir:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, m in doc["methods"].items():
            lines = ["t,mean_lower_bound,mean_running_estimate"]
            for i, (lb, re_) in enumerate(zip(m["mean_lower_bound"], m["mean_running_estimate"]), start=1):
                lines.append(f"{i},{lb!r},{re_!r}")
            (out / f"{name}_mean_trace.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host, port) -> None:
    """Run the monitoring service as an HTTP server."""
    import uvicorn

    uvicorn.run("riskmon.service:app", host=host, port=port)


if __name__ == "__main__":
    main()
