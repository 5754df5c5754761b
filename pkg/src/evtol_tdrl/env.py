"""Episodic takeoff environment: rewards, termination and energy accounting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .vehicle import (
    POWER_MAX,
    POWER_MIN,
    THETA_MAX,
    THETA_MIN,
    ControlInput,
    KinematicState,
    VehicleConfig,
    check_control,
    simulate_step,
)

PAD = 7.0

CAUSES = ("took_off", "ground", "negative_freestream", "timeout", "none")

LOG_COLUMNS = (
    "t", "x", "y", "v_x", "v_y", "P", "theta", "reward",
    "R_y", "R_Vx", "R_P", "energy_Wh", "cause",
)


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 0.1
    t_max: float = 40.0
    target_altitude: float = 305.0
    target_speed: float = 67.0
    rho_w: float = 2.0
    cc: float = 0.5
    k: float = 0.05
    power_norm: float = 310000.0
    y0: float = 0.1
    vx0: float = 0.1
    vy0: float = 0.1

    def __post_init__(self) -> None:
        for name in ("dt", "t_max", "target_altitude", "target_speed", "rho_w", "cc", "k", "power_norm"):
            if not getattr(self, name) > 0:
                raise ContractViolation(f"EnvConfig.{name} must be positive")
        ratio = self.t_max / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ContractViolation("t_max must be an integer number of steps")

    @property
    def max_steps(self) -> int:
        return int(round(self.t_max / self.dt))


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    reward_parts: tuple[float, float, float, float]
    terminated: bool
    termination_cause: str
    energy_so_far: float  # Wh
    state: KinematicState = field(repr=False, default=None)


def _shaped(value: float, target: float, cfg: EnvConfig) -> float:
    e_cc = math.exp(cfg.cc)
    gap = abs(1.0 - value / target)
    return cfg.k * e_cc * (math.exp(-cfg.cc * gap) - 1.0) / (3.0 * (e_cc - 1.0) * (cfg.rho_w + 1.0))


def altitude_reward(y: float, cfg: EnvConfig) -> float:
    return _shaped(y, cfg.target_altitude, cfg)


def speed_reward(vx: float, cfg: EnvConfig) -> float:
    return _shaped(vx, cfg.target_speed, cfg)


def power_reward(power: float, cfg: EnvConfig) -> float:
    return -cfg.rho_w * cfg.k * power / (cfg.power_norm * (cfg.rho_w + 1.0))


def reward_components(state: KinematicState, u: ControlInput, cfg: EnvConfig) -> tuple[float, float, float]:
    return altitude_reward(state.y, cfg), speed_reward(state.vx, cfg), power_reward(u.power, cfg)


def terminal_penalty(t: float, cfg: EnvConfig) -> float:
    """Unweighted energy penalty for every step left in the episode."""
    return -10.0 * cfg.k * (cfg.t_max - t)


def normalize_action(power: float, theta: float) -> tuple[float, float]:
    return (power - POWER_MIN) / (POWER_MAX - POWER_MIN), (theta - THETA_MIN) / (THETA_MAX - THETA_MIN)


def denormalize_action(p_norm: float, theta_norm: float) -> ControlInput:
    p_norm = min(max(p_norm, 0.0), 1.0)
    theta_norm = min(max(theta_norm, 0.0), 1.0)
    return ControlInput(
        POWER_MIN + p_norm * (POWER_MAX - POWER_MIN),
        THETA_MIN + theta_norm * (THETA_MAX - THETA_MIN),
    )


class TakeoffEnv:
    """Reset/step environment around :func:`evtol_tdrl.vehicle.simulate_step`.

    ``guided=True`` gives 7-slot observations whose last four slots hold the
    current proposal (normalized units) or the pad value 7.0; otherwise the
    observation is just ``(y, v_x, v_y)``.
    """

    def __init__(
        self,
        vehicle: VehicleConfig | None = None,
        config: EnvConfig | None = None,
        guided: bool = True,
        record: bool = False,
    ) -> None:
        self.vehicle = vehicle or VehicleConfig()
        self.config = config or EnvConfig()
        self.guided = guided
        self.record = record
        self.log: list[dict] = []
        self._state: KinematicState | None = None
        self._proposal = np.full(4, PAD)
        self._energy_j = 0.0
        self._steps = 0
        self._done = True

    @property
    def obs_dim(self) -> int:
        return 7 if self.guided else 3

    @property
    def state(self) -> KinematicState:
        return self._state

    @property
    def steps(self) -> int:
        return self._steps

    @property
    def energy_wh(self) -> float:
        return self._energy_j / 3600.0

    def reset(self, seed: int | None = None) -> np.ndarray:
        # the dynamics are deterministic; the seed is accepted for API symmetry
        c = self.config
        self._state = KinematicState(0.0, c.y0, c.vx0, c.vy0, 0.0)
        self._proposal = np.full(4, PAD)
        self._energy_j = 0.0
        self._steps = 0
        self._done = False
        self.log = []
        return self.observation()

    def observation(self) -> np.ndarray:
        s = self._state
        head = [s.y, s.vx, s.vy]
        if not self.guided:
            return np.array(head)
        return np.concatenate([head, self._proposal])

    def set_proposal(self, mu, var) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        var = np.asarray(var, dtype=float)
        if np.any(var < 0):
            raise ContractViolation("proposal variance must be non-negative")
        self._proposal = np.concatenate([mu, var])
        return self.observation()

    def step(self, u: ControlInput) -> StepResult:
        if self._done:
            raise ContractViolation("step() called on a finished episode; call reset()")
        u = ControlInput(float(u[0]), float(u[1]))
        check_control(u)
        c = self.config
        state, forces = simulate_step(self._state, u, c.dt, self.vehicle)
        self._state = state
        self._steps += 1
        self._energy_j += u.power * c.dt

        r_y, r_vx, r_p = reward_components(state, u, c)
        r_term = 0.0
        cause = "none"
        if state.y < 0.0:
            cause = "ground"
        elif forces.chordwise_speed < 0.0:
            cause = "negative_freestream"
        if cause != "none":
            r_term = terminal_penalty(self._steps * c.dt, c)
        elif state.y >= c.target_altitude and state.vx >= c.target_speed:
            cause = "took_off"
        elif self._steps >= c.max_steps:
            cause = "timeout"
        terminated = cause != "none"
        self._done = terminated
        reward = r_y + r_vx + r_p + r_term
        if self.record:
            self.log.append(
                dict(
                    t=self._steps * c.dt, x=state.x, y=state.y, v_x=state.vx, v_y=state.vy,
                    P=u.power, theta=u.theta, reward=reward, R_y=r_y, R_Vx=r_vx, R_P=r_p,
                    energy_Wh=self.energy_wh, cause=cause,
                )
            )
        return StepResult(
            observation=self.observation(),
            reward=reward,
            reward_parts=(r_y, r_vx, r_p, r_term),
            terminated=terminated,
            termination_cause=cause,
            energy_so_far=self.energy_wh,
            state=state,
        )


def fmt(value) -> str:
    return format(value, ".17g") if isinstance(value, float) else str(value)


def write_log_csv(rows: list[dict], path, extra_columns: tuple[str, ...] = ()) -> None:
    columns = LOG_COLUMNS + tuple(extra_columns)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(row.get(col, "")) for col in columns])
