"""Energy accuracy metric and open-loop evaluation of generated control sequences."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .env import EnvConfig, TakeoffEnv, denormalize_action
from .errors import ContractViolation
from .reference import DatasetEntry
from .transformer import TrajectoryTransformer, generate
from .vehicle import VehicleConfig


def accuracy(e_gen: float, e_ref: float) -> float:
    """Relative energy accuracy 1 - |E_gen - E_ref| / E_ref."""
    if not e_ref > 0:
        raise ContractViolation(f"reference energy must be positive, got {e_ref}")
    return 1.0 - abs(e_gen - e_ref) / e_ref


@dataclass(frozen=True)
class AccuracyReport:
    e_generated: float
    e_reference: float
    ra: float

    @classmethod
    def of(cls, e_gen: float, e_ref: float) -> "AccuracyReport":
        return cls(e_gen, e_ref, accuracy(e_gen, e_ref))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ExecutedSequence:
    energy_wh: float
    cause: str
    steps: int


def execute_normalized(controls: np.ndarray, vehicle: VehicleConfig, env_cfg: EnvConfig | None = None) -> ExecutedSequence:
    """Run normalized (P, theta) actions open loop until the episode ends.

    If the sequence is exhausted first, its last action is held.
    """
    env = TakeoffEnv(vehicle, env_cfg, guided=False)
    env.reset()
    i, res = 0, None
    while res is None or not res.terminated:
        a = controls[min(i, len(controls) - 1)]
        res = env.step(denormalize_action(float(a[0]), float(a[1])))
        i += 1
    return ExecutedSequence(res.energy_so_far, res.termination_cause, env.steps)


@dataclass
class GenerationReport:
    reports: list[AccuracyReport]
    causes: list[str]

    @property
    def mean_ra(self) -> float:
        return float(np.mean([r.ra for r in self.reports]))

    @property
    def success_rate(self) -> float:
        return float(np.mean([c == "took_off" for c in self.causes]))


def evaluate_generation(
    model: TrajectoryTransformer,
    entries: list[DatasetEntry],
    base: VehicleConfig | None = None,
    mode: str = "mean",
    seed: int = 0,
) -> GenerationReport:
    """Generate from each entry's first action, fly it under the entry's condition, compare energy."""
    if not entries:
        raise ContractViolation("no entries to evaluate")
    reports, causes = [], []
    for k, e in enumerate(entries):
        seq = generate(model, e.controls[0], model.cfg.max_len - 1, mode=mode, seed=seed + k)
        run = execute_normalized(seq, e.condition.vehicle(base))
        reports.append(AccuracyReport.of(run.energy_wh, e.energy_wh))
        causes.append(run.cause)
    return GenerationReport(reports, causes)
