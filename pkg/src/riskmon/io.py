"""
Canonical file formats: line-delimited JSON streams of step batches, CSV
bound traces, and JSON calibration/summary documents.

Serialization is canonical and deterministic: fixed key order, compact
separators, and shortest round-trip float rendering (Python ``repr``), so
``serialize(parse(text)) == text`` holds for canonical files and golden
outputs are stable byte for byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

from .estimators import LabeledLossPair, StepBatch
from .harness import ExperimentSummary
from .monitors import BoundTrace, SourceCalibration, UrmCalibration

__all__ = [
    "ParseError",
    "StreamRecord",
    "serialize_stream_record",
    "parse_stream_line",
    "stream_to_text",
    "parse_stream_text",
    "trace_to_csv",
    "parse_trace_csv",
    "calibration_to_json",
    "parse_calibration_json",
    "monitor_summary_json",
    "experiment_summary_to_dict",
    "experiment_summary_json",
]

TRACE_COLUMNS = (
    "t",
    "step_estimate",
    "running_estimate",
    "lower_bound",
    "upper_bound_source",
    "eta_t",
    "v_t",
    "alarm",
)


class ParseError(ValueError):
    """Malformed input file; carries the 1-based line number when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class StreamRecord:
    """One serialized step: a batch plus optional label-free proxy values."""

    batch: StepBatch
    proxies: Optional[tuple[float, ...]] = None

    @property
    def t(self) -> int:
        return self.batch.t


def serialize_stream_record(record: StreamRecord) -> str:
    # json renders floats via repr, the shortest round-trip form
    batch = record.batch
    doc: dict = {
        "t": batch.t,
        "labeled": [
            {"true": p.true_loss, "synth": p.synth_loss} for p in batch.labeled
        ],
        "unlabeled": list(batch.unlabeled_synth),
    }
    if record.proxies is not None:
        doc["proxies"] = list(record.proxies)
    return json.dumps(doc, separators=(",", ":"))


def _require(cond: bool, message: str, line: int) -> None:
    if not cond:
        raise ParseError(message, line=line)


def _check_loss(value: object, what: str, line: int) -> float:
    _require(isinstance(value, (int, float)) and not isinstance(value, bool),
             f"{what} must be a number, got {value!r}", line)
    v = float(value)
    _require(math.isfinite(v) and 0.0 <= v <= 1.0,
             f"{what} must lie in [0, 1], got {v}", line)
    return v


def parse_stream_line(line: str, lineno: int) -> StreamRecord:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc.msg})", line=lineno) from exc
    _require(isinstance(doc, dict), "record must be a JSON object", lineno)
    unknown = set(doc) - {"t", "labeled", "unlabeled", "proxies"}
    _require(not unknown, f"unknown keys {sorted(unknown)}", lineno)
    _require("t" in doc and "labeled" in doc and "unlabeled" in doc,
             "record requires keys t, labeled, unlabeled", lineno)
    t = doc["t"]
    _require(isinstance(t, int) and not isinstance(t, bool) and t >= 1,
             f"t must be a positive integer, got {t!r}", lineno)
    _require(isinstance(doc["labeled"], list) and len(doc["labeled"]) >= 1,
             "labeled must be a nonempty array", lineno)
    labeled = []
    for i, item in enumerate(doc["labeled"]):
        _require(isinstance(item, dict) and set(item) == {"true", "synth"},
                 f"labeled[{i}] must be an object with keys true, synth", lineno)
        labeled.append(
            LabeledLossPair(
                true_loss=_check_loss(item["true"], f"labeled[{i}].true", lineno),
                synth_loss=_check_loss(item["synth"], f"labeled[{i}].synth", lineno),
            )
        )
    _require(isinstance(doc["unlabeled"], list), "unlabeled must be an array", lineno)
    unlabeled = tuple(
        _check_loss(v, f"unlabeled[{i}]", lineno) for i, v in enumerate(doc["unlabeled"])
    )
    proxies = None
    if "proxies" in doc:
        _require(isinstance(doc["proxies"], list), "proxies must be an array", lineno)
        proxies = tuple(float(v) for v in doc["proxies"])
        for i, v in enumerate(proxies):
            _require(math.isfinite(v), f"proxies[{i}] must be finite", lineno)
    batch = StepBatch(t=t, labeled=tuple(labeled), unlabeled_synth=unlabeled)
    return StreamRecord(batch=batch, proxies=proxies)


def stream_to_text(records: Sequence[StreamRecord]) -> str:
    return "".join(serialize_stream_record(r) + "\n" for r in records)


def parse_stream_text(text: str) -> list[StreamRecord]:
    """Parse a line-delimited stream, enforcing strictly increasing t."""
    records = []
    last_t = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        record = parse_stream_line(line, lineno)
        _require(record.t > last_t,
                 f"t={record.t} does not increase past previous t={last_t}", lineno)
        last_t = record.t
        records.append(record)
    return records


def _cell(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def trace_to_csv(rows: Sequence[BoundTrace]) -> str:
    lines = [",".join(TRACE_COLUMNS)]
    for r in rows:
        lines.append(
            ",".join(
                (
                    str(r.t),
                    _cell(r.step_estimate),
                    _cell(r.running_estimate),
                    _cell(r.lower_bound),
                    _cell(r.upper_bound_source),
                    _cell(r.eta_t),
                    _cell(r.v_t),
                    "1" if r.alarm else "0",
                )
            )
        )
    return "\n".join(lines) + "\n"


def parse_trace_csv(text: str) -> list[BoundTrace]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParseError("empty trace file", line=1)
    header = tuple(lines[0].split(","))
    if header != TRACE_COLUMNS:
        raise ParseError(f"unexpected header {lines[0]!r}", line=1)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(TRACE_COLUMNS):
            raise ParseError(f"expected {len(TRACE_COLUMNS)} fields", line=lineno)
        try:
            rows.append(
                BoundTrace(
                    t=int(parts[0]),
                    step_estimate=float(parts[1]),
                    running_estimate=float(parts[2]),
                    lower_bound=float(parts[3]),
                    upper_bound_source=float(parts[4]),
                    eta_t=float(parts[5]),
                    v_t=float(parts[6]),
                    alarm=parts[7] == "1",
                )
            )
        except ValueError as exc:
            raise ParseError(f"bad value ({exc})", line=lineno) from exc
    return rows


def calibration_to_json(calib: Union[SourceCalibration, UrmCalibration]) -> str:
    if isinstance(calib, SourceCalibration):
        doc = {
            "kind": "risk",
            "method": calib.method,
            "estimate": calib.estimate,
            "upper_bound": calib.upper_bound,
            "n0": calib.n0,
            "N0": calib.N0,
            "eta0": calib.eta0,
        }
    else:
        doc = {
            "kind": "urm",
            "tau": calib.tau,
            "beta0": calib.beta0,
            "pfp0_ucb": calib.pfp0_ucb,
            "source_estimate": calib.source_estimate,
            "source_upper_bound": calib.source_upper_bound,
            "n0": calib.n0,
        }
    return json.dumps(doc, separators=(",", ":")) + "\n"


def parse_calibration_json(text: str) -> Union[SourceCalibration, UrmCalibration]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid calibration JSON ({exc.msg})") from exc
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ParseError("calibration document requires a 'kind' key")
    try:
        if doc["kind"] == "risk":
            return SourceCalibration(
                estimate=float(doc["estimate"]),
                upper_bound=float(doc["upper_bound"]),
                n0=int(doc["n0"]),
                N0=int(doc["N0"]),
                eta0=float(doc["eta0"]),
                method=str(doc["method"]),
            )
        if doc["kind"] == "urm":
            return UrmCalibration(
                tau=float(doc["tau"]),
                beta0=float(doc["beta0"]),
                pfp0_ucb=float(doc["pfp0_ucb"]),
                source_estimate=float(doc["source_estimate"]),
                source_upper_bound=float(doc["source_upper_bound"]),
                n0=int(doc["n0"]),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"calibration document incomplete or malformed: {exc}") from exc
    raise ParseError(f"unknown calibration kind {doc['kind']!r}")


def monitor_summary_json(alarm_time: Optional[int], steps: int) -> str:
    doc = {
        "alarm_time": alarm_time,
        "censored": alarm_time is None,
        "steps": steps,
    }
    return json.dumps(doc, separators=(",", ":")) + "\n"


def experiment_summary_to_dict(summary: ExperimentSummary) -> dict:
    return {
        "replications": summary.replications,
        "horizon": summary.horizon,
        "methods": {
            name: {
                "alarm_fraction": m.alarm_fraction,
                "censored": m.censored,
                "mean_alarm_time": m.mean_alarm_time,
                "min_alarm_time": m.min_alarm_time,
                "max_alarm_time": m.max_alarm_time,
                "alarm_times": m.alarm_times,
                "mean_lower_bound": m.mean_lower_bound,
                "mean_running_estimate": m.mean_running_estimate,
            }
            for name, m in summary.per_method.items()
        },
    }


def experiment_summary_json(summary: ExperimentSummary) -> str:
    return json.dumps(experiment_summary_to_dict(summary), separators=(",", ":")) + "\n"
