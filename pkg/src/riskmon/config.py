"""
Declarative run configuration: validated, strict (unknown keys rejected so a
mistyped risk budget cannot silently pass), and convertible to the core
dataclasses. Used both for config files on the CLI side and as request
models of the service.

Every default is the documented artifact default: delta_s=0.05, delta_t=0.2,
eps_tol=0.05, eta fixed/init=1 with eta_max=1 and window 60, one labeled and
fifteen unlabeled samples per step, and a +0.25 step shift at t=200 as the
default drift scenario.
"""

from __future__ import annotations

from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field

from . import simulator
from .bounds import BettingSpec, ConfidenceSequenceSpec
from .estimators import EtaPolicy
from .harness import ExperimentPlan
from .monitors import MonitorConfig

__all__ = [
    "EtaPolicyModel",
    "ConfidenceSequenceModel",
    "BettingModel",
    "MonitorModel",
    "ScheduleModel",
    "ScenarioModel",
    "ExperimentModel",
    "RunConfig",
    "load_config_text",
]

MonitorMethod = Literal["srm", "pprm_fixed", "pprm_adaptive", "pprm_ideal", "urm"]
CalibrateMethod = Literal["hoeffding_labeled_only", "betting_ppi", "urm"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EtaPolicyModel(_Strict):
    mode: Literal["fixed", "adaptive"] = "adaptive"
    eta_fixed: float = 1.0
    eta_init: float = 1.0
    eta_max: float = Field(default=1.0, ge=0.0)
    window_l: int = Field(default=60, ge=1)

    def to_core(self) -> EtaPolicy:
        return EtaPolicy(
            mode=self.mode,
            eta_fixed=self.eta_fixed,
            eta_init=self.eta_init,
            eta_max=self.eta_max,
            window_l=self.window_l,
        )


class ConfidenceSequenceModel(_Strict):
    lambda_max: float = Field(default=0.95, gt=0.0, lt=1.0)
    quadrature_nodes: int = Field(default=200, ge=16)
    root_tol: float = Field(default=1e-6, gt=0.0)
    s_cap: float = Field(default=1e6, gt=1.0)


class BettingModel(_Strict):
    grid_size: int = Field(default=1000, ge=100)
    bet_cap: float = Field(default=0.75, gt=0.0, lt=1.0)
    variance_floor: float = Field(default=1e-4, gt=0.0)


class MonitorModel(_Strict):
    delta_s: float = Field(default=0.05, gt=0.0, lt=1.0)
    delta_t: float = Field(default=0.2, gt=0.0, lt=1.0)
    eps_tol: float = Field(default=0.05, gt=0.0)
    source_bound_method: Literal["hoeffding_labeled_only", "betting_ppi"] = "betting_ppi"
    initial_predictor: float = Field(default=0.5, ge=0.0, le=1.0)
    eta: EtaPolicyModel = Field(default_factory=EtaPolicyModel)
    confidence_sequence: ConfidenceSequenceModel = Field(default_factory=ConfidenceSequenceModel)
    betting: BettingModel = Field(default_factory=BettingModel)

    def to_core(self) -> MonitorConfig:
        cs = self.confidence_sequence
        bet = self.betting
        return MonitorConfig(
            delta_s=self.delta_s,
            delta_t=self.delta_t,
            eps_tol=self.eps_tol,
            eta_policy=self.eta.to_core(),
            cs_spec=ConfidenceSequenceSpec(
                delta_t=self.delta_t,
                lambda_max=cs.lambda_max,
                quadrature_nodes=cs.quadrature_nodes,
                root_tol=cs.root_tol,
                s_cap=cs.s_cap,
            ),
            betting_spec=BettingSpec(
                delta_s=self.delta_s,
                grid_size=bet.grid_size,
                bet_cap=bet.bet_cap,
                variance_floor=bet.variance_floor,
            ),
            source_bound_method=self.source_bound_method,
            initial_predictor=self.initial_predictor,
        )


class ConstantScheduleModel(_Strict):
    kind: Literal["constant"] = "constant"
    p: float = Field(ge=0.0, le=1.0)

    def to_core(self) -> simulator.ConstantSchedule:
        return simulator.ConstantSchedule(p=self.p)


class StepScheduleModel(_Strict):
    kind: Literal["step"] = "step"
    t0: int = Field(ge=1)
    p_before: float = Field(ge=0.0, le=1.0)
    p_after: float = Field(ge=0.0, le=1.0)

    def to_core(self) -> simulator.StepSchedule:
        return simulator.StepSchedule(t0=self.t0, p_before=self.p_before, p_after=self.p_after)


class RampScheduleModel(_Strict):
    kind: Literal["ramp"] = "ramp"
    t0: int = Field(ge=1)
    t1: int = Field(ge=1)
    p_before: float = Field(ge=0.0, le=1.0)
    p_after: float = Field(ge=0.0, le=1.0)

    def to_core(self) -> simulator.RampSchedule:
        return simulator.RampSchedule(
            t0=self.t0, t1=self.t1, p_before=self.p_before, p_after=self.p_after
        )


class PulseScheduleModel(_Strict):
    kind: Literal["pulse"] = "pulse"
    t0: int = Field(ge=1)
    t1: int = Field(ge=1)
    p_base: float = Field(ge=0.0, le=1.0)
    p_peak: float = Field(ge=0.0, le=1.0)

    def to_core(self) -> simulator.PulseSchedule:
        return simulator.PulseSchedule(
            t0=self.t0, t1=self.t1, p_base=self.p_base, p_peak=self.p_peak
        )


ScheduleModel = Annotated[
    Union[ConstantScheduleModel, StepScheduleModel, RampScheduleModel, PulseScheduleModel],
    Field(discriminator="kind"),
]


def _default_schedule() -> StepScheduleModel:
    return StepScheduleModel(t0=200, p_before=0.3, p_after=0.55)


class ScenarioModel(_Strict):
    loss_model: Literal["bernoulli", "bounded_continuous"] = "bernoulli"
    schedule: ScheduleModel = Field(default_factory=_default_schedule)
    agreement: float = Field(default=0.95, ge=-1.0, le=1.0)
    n_per_step: int = Field(default=1, ge=1)
    N_per_step: int = Field(default=15, ge=0)
    horizon: int = Field(default=1000, ge=1)
    seed: int = 0

    def to_core(self) -> simulator.DriftScenario:
        return simulator.DriftScenario(
            schedule=self.schedule.to_core(),
            loss_model=self.loss_model,
            agreement=self.agreement,
            n_per_step=self.n_per_step,
            N_per_step=self.N_per_step,
            horizon=self.horizon,
            seed=self.seed,
        )


class ExperimentModel(_Strict):
    methods: list[MonitorMethod] = Field(default_factory=lambda: ["srm", "pprm_adaptive"])
    replications: int = Field(default=100, ge=1)
    base_seed: int = 0
    source_n0: int = Field(default=1000, ge=1)
    source_N0: int = Field(default=15000, ge=0)
    workers: int = Field(default=1, ge=1)


class RunConfig(_Strict):
    """Top-level configuration document (all sections optional)."""

    monitor: MonitorModel = Field(default_factory=MonitorModel)
    scenario: ScenarioModel = Field(default_factory=ScenarioModel)
    experiment: ExperimentModel = Field(default_factory=ExperimentModel)

    def to_plan(self) -> ExperimentPlan:
        exp = self.experiment
        return ExperimentPlan(
            scenario=self.scenario.to_core(),
            methods=tuple(exp.methods),
            replications=exp.replications,
            base_seed=exp.base_seed,
            config=self.monitor.to_core(),
            source_n0=exp.source_n0,
            source_N0=exp.source_N0,
        )


def load_config_text(text: str) -> RunConfig:
    """Parse and validate a JSON config document (strict: unknown keys fail)."""
    return RunConfig.model_validate_json(text)
