"""Boundary tension schedules tau_bar(t), shared by the chain and the PDE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConstantSchedule:
    tau0: float = 0.0

    def __call__(self, t):
        return self.tau0 + 0.0 * np.asarray(t) if np.ndim(t) else self.tau0

    def to_dict(self):
        return {"kind": "constant", "tau0": self.tau0}


@dataclass(frozen=True)
class RampSchedule:
    """Cubic-eased ramp from tau0 to tau1 over [0, t1], then hold.

    The smoothstep ease keeps the time derivative bounded by
    1.5 |tau1 - tau0| / t1.
    """

    tau0: float = 0.0
    tau1: float = 0.5
    t1: float = 1.0

    def __post_init__(self):
        if self.t1 <= 0.0:
            raise ValueError(f"ramp duration must be positive, got {self.t1}")

    def __call__(self, t):
        u = np.clip(np.asarray(t, dtype=float) / self.t1, 0.0, 1.0)
        val = self.tau0 + (self.tau1 - self.tau0) * u * u * (3.0 - 2.0 * u)
        return float(val) if val.ndim == 0 else val

    def to_dict(self):
        return {"kind": "ramp", "tau0": self.tau0, "tau1": self.tau1, "t1": self.t1}


@dataclass(frozen=True)
class StepSchedule:
    """Discontinuous jump at t_step (shock preset)."""

    tau0: float = 0.0
    tau1: float = 0.5
    t_step: float = 0.0

    def __call__(self, t):
        val = np.where(np.asarray(t, dtype=float) < self.t_step, self.tau0, self.tau1)
        return float(val) if val.ndim == 0 else val

    def to_dict(self):
        return {"kind": "step", "tau0": self.tau0, "tau1": self.tau1, "t_step": self.t_step}


def schedule_from_dict(d) -> ConstantSchedule | RampSchedule | StepSchedule:
    kind = d["kind"]
    if kind == "constant":
        return ConstantSchedule(tau0=d["tau0"])
    if kind == "ramp":
        return RampSchedule(tau0=d["tau0"], tau1=d["tau1"], t1=d["t1"])
    if kind == "step":
        return StepSchedule(tau0=d["tau0"], tau1=d["tau1"], t_step=d["t_step"])
    raise ValueError(f"unknown schedule kind {kind!r}")
