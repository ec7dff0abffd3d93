"""
HTTP service wrapping the monitoring engine.

File-driven endpoints (/simulate, /calibrate, /monitor, /experiment) accept
and return the canonical text formats unchanged, so a thin client can move
bytes between files and the service without touching their content. Session
endpoints (/monitors/...) run a live monitor across requests for step-at-a-
time feeding.
"""

from __future__ import annotations

import threading
from dataclasses import replace
from typing import Literal, Optional, Union

from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel, ConfigDict, Field

from .config import MonitorModel, RunConfig, ScenarioModel
from .estimators import LabeledLossPair, StepBatch
from .harness import method_config, run_experiment
from .io import (
    ParseError,
    StreamRecord,
    calibration_to_json,
    experiment_summary_to_dict,
    parse_calibration_json,
    parse_stream_text,
    stream_to_text,
    trace_to_csv,
)
from .monitors import (
    BoundTrace,
    CalibrationError,
    Monitor,
    SequencingError,
    SourceCalibration,
    UrmCalibration,
    UrmMonitor,
    calibrate_source,
    calibrate_urm,
    first_alarm_time,
)
from .simulator import generate_stream

app = FastAPI(title="riskmon", version="0.1.0")

_NDJSON = "application/x-ndjson"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SimulateRequest(_Strict):
    scenario: ScenarioModel = Field(default_factory=ScenarioModel)


class CalibrateRequest(_Strict):
    source: str
    monitor: MonitorModel = Field(default_factory=MonitorModel)
    method: Literal["hoeffding_labeled_only", "betting_ppi", "urm"] = "betting_ppi"


class MonitorRequest(_Strict):
    stream: str
    calibration: str
    monitor: MonitorModel = Field(default_factory=MonitorModel)
    method: Literal["srm", "pprm_fixed", "pprm_adaptive", "urm"] = "pprm_adaptive"


class MonitorSummary(_Strict):
    alarm_time: Optional[int]
    censored: bool
    steps: int


class MonitorResponse(_Strict):
    trace_csv: str
    summary: MonitorSummary


class ExperimentRequest(_Strict):
    config: RunConfig = Field(default_factory=RunConfig)


class LabeledPairModel(_Strict):
    true: float
    synth: float


class StepBatchModel(_Strict):
    t: int
    labeled: list[LabeledPairModel]
    unlabeled: list[float] = Field(default_factory=list)
    proxies: Optional[list[float]] = None

    def to_record(self) -> StreamRecord:
        batch = StepBatch(
            t=self.t,
            labeled=tuple(
                LabeledLossPair(true_loss=p.true, synth_loss=p.synth) for p in self.labeled
            ),
            unlabeled_synth=tuple(self.unlabeled),
        )
        return StreamRecord(batch=batch, proxies=tuple(self.proxies) if self.proxies else None)


class SessionCreateRequest(_Strict):
    calibration: str
    monitor: MonitorModel = Field(default_factory=MonitorModel)
    method: Literal["srm", "pprm_fixed", "pprm_adaptive", "urm"] = "pprm_adaptive"


class BoundTraceModel(_Strict):
    t: int
    step_estimate: float
    running_estimate: float
    lower_bound: float
    upper_bound_source: float
    eta_t: float
    v_t: float
    alarm: bool

    @classmethod
    def from_core(cls, row: BoundTrace) -> "BoundTraceModel":
        return cls(
            t=row.t,
            step_estimate=row.step_estimate,
            running_estimate=row.running_estimate,
            lower_bound=row.lower_bound,
            upper_bound_source=row.upper_bound_source,
            eta_t=row.eta_t,
            v_t=row.v_t,
            alarm=row.alarm,
        )


class SessionInfo(_Strict):
    monitor_id: str
    method: str
    steps: int
    alarm_time: Optional[int]
    alarm_latched: bool


def _bad_request(exc: Exception, status: int = 422) -> HTTPException:
    return HTTPException(status_code=status, detail=str(exc))


def _build_runner(
    method: str,
    calibration_text: str,
    monitor_model: MonitorModel,
) -> Union[Monitor, UrmMonitor]:
    calib = parse_calibration_json(calibration_text)
    base = monitor_model.to_core()
    cfg = method_config(base, method)
    if method == "urm":
        if not isinstance(calib, UrmCalibration):
            raise CalibrationError("method 'urm' requires a urm calibration document")
        return UrmMonitor(calib, cfg)
    if not isinstance(calib, SourceCalibration):
        raise CalibrationError(f"method {method!r} requires a risk calibration document")
    return Monitor(calib, cfg)


def _feed(runner: Union[Monitor, UrmMonitor], record: StreamRecord) -> BoundTrace:
    if isinstance(runner, UrmMonitor):
        proxies = record.proxies
        if proxies is None:
            # synthetic losses are label-free, so they stand in as proxies
            proxies = tuple(p.synth_loss for p in record.batch.labeled) + record.batch.unlabeled_synth
        return runner.step(proxies)
    return runner.step(record.batch)


@app.get("/health")
def health() -> dict:
    return {"status": "ok"}


@app.get("/defaults")
def defaults() -> RunConfig:
    return RunConfig()


@app.post("/simulate", response_class=PlainTextResponse)
def simulate(req: SimulateRequest) -> PlainTextResponse:
    try:
        scenario = req.scenario.to_core()
    except ValueError as exc:
        raise _bad_request(exc)
    stream = generate_stream(scenario)
    text = stream_to_text([StreamRecord(batch=b) for b in stream])
    return PlainTextResponse(content=text, media_type=_NDJSON)


@app.post("/calibrate", response_class=PlainTextResponse)
def calibrate(req: CalibrateRequest) -> PlainTextResponse:
    try:
        records = parse_stream_text(req.source)
        if not records:
            raise CalibrationError("source file contains no records")
        labeled = [p for r in records for p in r.batch.labeled]
        unlabeled = [v for r in records for v in r.batch.unlabeled_synth]
        cfg = req.monitor.to_core()
        if req.method == "urm":
            calib: Union[SourceCalibration, UrmCalibration] = calibrate_urm(
                source_losses=[p.true_loss for p in labeled],
                source_proxies=[p.synth_loss for p in labeled],
                config=cfg,
            )
        else:
            cfg = replace(cfg, source_bound_method=req.method)
            calib = calibrate_source(labeled, unlabeled, cfg)
    except (ParseError, CalibrationError, ValueError) as exc:
        raise _bad_request(exc)
    return PlainTextResponse(content=calibration_to_json(calib), media_type="application/json")


@app.post("/monitor", response_model=MonitorResponse)
def monitor(req: MonitorRequest) -> MonitorResponse:
    try:
        records = parse_stream_text(req.stream)
        runner = _build_runner(req.method, req.calibration, req.monitor)
        trace = [_feed(runner, record) for record in records]
    except (ParseError, CalibrationError, SequencingError, ValueError) as exc:
        raise _bad_request(exc)
    alarm_t = first_alarm_time(trace)
    return MonitorResponse(
        trace_csv=trace_to_csv(trace),
        summary=MonitorSummary(
            alarm_time=alarm_t, censored=alarm_t is None, steps=len(trace)
        ),
    )


@app.post("/experiment")
def experiment(req: ExperimentRequest) -> dict:
    try:
        plan = req.config.to_plan()
    except ValueError as exc:
        raise _bad_request(exc)
    summary = run_experiment(plan, workers=req.config.experiment.workers)
    return experiment_summary_to_dict(summary)


# ---------------------------------------------------------------------------
# Live monitor sessions
# ---------------------------------------------------------------------------


class _Session:
    def __init__(self, monitor_id: str, method: str, runner: Union[Monitor, UrmMonitor]):
        self.monitor_id = monitor_id
        self.method = method
        self.runner = runner
        self.trace: list[BoundTrace] = []
        self.lock = threading.Lock()

    def info(self) -> SessionInfo:
        return SessionInfo(
            monitor_id=self.monitor_id,
            method=self.method,
            steps=len(self.trace),
            alarm_time=first_alarm_time(self.trace),
            alarm_latched=bool(self.trace and self.trace[-1].alarm),
        )


_sessions: dict[str, _Session] = {}
_sessions_lock = threading.Lock()
_session_counter = 0


def _get_session(monitor_id: str) -> _Session:
    with _sessions_lock:
        session = _sessions.get(monitor_id)
    if session is None:
        raise HTTPException(status_code=404, detail=f"no monitor session {monitor_id!r}")
    return session


@app.post("/monitors", response_model=SessionInfo)
def create_session(req: SessionCreateRequest) -> SessionInfo:
    global _session_counter
    try:
        runner = _build_runner(req.method, req.calibration, req.monitor)
    except (ParseError, CalibrationError, ValueError) as exc:
        raise _bad_request(exc)
    with _sessions_lock:
        _session_counter += 1
        monitor_id = f"m-{_session_counter}"
        session = _Session(monitor_id, req.method, runner)
        _sessions[monitor_id] = session
    return session.info()


@app.get("/monitors/{monitor_id}", response_model=SessionInfo)
def session_info(monitor_id: str) -> SessionInfo:
    return _get_session(monitor_id).info()


@app.post("/monitors/{monitor_id}/steps", response_model=BoundTraceModel)
def session_step(monitor_id: str, batch: StepBatchModel) -> BoundTraceModel:
    session = _get_session(monitor_id)
    try:
        record = batch.to_record()
    except ValueError as exc:
        raise _bad_request(exc)
    with session.lock:
        try:
            row = _feed(session.runner, record)
        except SequencingError as exc:
            raise _bad_request(exc, status=409)
        except ValueError as exc:
            raise _bad_request(exc)
        session.trace.append(row)
    return BoundTraceModel.from_core(row)


@app.get("/monitors/{monitor_id}/trace", response_class=PlainTextResponse)
def session_trace(monitor_id: str) -> PlainTextResponse:
    session = _get_session(monitor_id)
    with session.lock:
        text = trace_to_csv(session.trace)
    return PlainTextResponse(content=text, media_type="text/csv")


@app.delete("/monitors/{monitor_id}")
def delete_session(monitor_id: str) -> dict:
    with _sessions_lock:
        if monitor_id not in _sessions:
            raise HTTPException(status_code=404, detail=f"no monitor session {monitor_id!r}")
        del _sessions[monitor_id]
    return {"deleted": monitor_id}
