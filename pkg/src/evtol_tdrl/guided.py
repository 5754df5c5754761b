"""Transformer-guided action selection for the takeoff environment.

The agent emits z-scores in [-1, 1]^2.  Before any proposal exists the z is
mapped affinely onto the full normalized action box; afterwards the executed
normalized action is ``mu + z * sigma`` clamped to [0, 1].  Executed actions
feed the frozen transformer, whose next proposal fills observation slots 4-7.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .env import EnvConfig, TakeoffEnv, denormalize_action, write_log_csv
from .errors import ContractViolation
from .sac import SacConfig, SacResult, train_sac
from .transformer import IncrementalDecoder, TrajectoryTransformer
from .vehicle import ControlInput, VehicleConfig

# agent-side observation scaling; the environment itself reports raw units
OBS_SCALE_HEAD = np.array([1.0 / 305.0, 1.0 / 67.0, 1.0 / 67.0])

GUIDED_LOG_COLUMNS = ("mu_P", "mu_theta", "var_P", "var_theta", "z_P", "z_theta")


def map_z_to_action(z, proposal: tuple[np.ndarray, np.ndarray] | None) -> tuple[np.ndarray, ControlInput]:
    """Normalized executed action and its physical control for a z-score pair."""
    z = np.asarray(z, dtype=float)
    if z.shape != (2,) or np.any(np.abs(z) > 1.0) or not np.all(np.isfinite(z)):
        raise ContractViolation(f"z must be a finite pair within [-1, 1], got {z}")
    if proposal is None:
        a = (z + 1.0) / 2.0
    else:
        mu, var = proposal
        a = np.clip(np.asarray(mu, dtype=float) + z * np.sqrt(np.asarray(var, dtype=float)), 0.0, 1.0)
    return a, denormalize_action(float(a[0]), float(a[1]))


def envelope(proposal: tuple[np.ndarray, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Clamped one-sigma band; a mean outside [0, 1] collapses it onto the nearer bound."""
    mu, var = proposal
    sd = np.sqrt(var)
    return np.clip(mu - sd, 0.0, 1.0), np.clip(mu + sd, 0.0, 1.0)


@dataclass
class GuidedEpisodeState:
    history: list[np.ndarray] = field(default_factory=list)
    proposal: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def step_index(self) -> int:
        return len(self.history)


class GuidedTakeoff:
    """Environment adapter exposing the guided loop through the SAC interface."""

    obs_dim = 7
    act_dim = 2

    def __init__(
        self,
        model: TrajectoryTransformer,
        vehicle: VehicleConfig | None = None,
        config: EnvConfig | None = None,
        record: bool = False,
    ) -> None:
        self.env = TakeoffEnv(vehicle, config, guided=True, record=record)
        self.model = model
        self.decoder = IncrementalDecoder(model)
        self.state = GuidedEpisodeState()
        self.z_log: list[np.ndarray] = []

    def _agent_obs(self, obs: np.ndarray) -> np.ndarray:
        out = obs.copy()
        out[:3] *= OBS_SCALE_HEAD
        return out

    def reset(self, seed: int | None = None) -> np.ndarray:
        obs = self.env.reset(seed)
        self.decoder.reset()
        self.state = GuidedEpisodeState()
        self.z_log = []
        return self._agent_obs(obs)

    def step(self, z):
        """Map z, advance the physics, record the executed action, refresh the proposal."""
        st = self.state
        proposal = st.proposal
        a, u = map_z_to_action(z, proposal)
        res = self.env.step(u)
        st.history.append(a)
        self.z_log.append(np.asarray(z, dtype=float))
        if self.env.record:
            row = self.env.log[-1]
            mu, var = proposal if proposal is not None else (np.full(2, math.nan), np.full(2, math.nan))
            row.update(mu_P=mu[0], mu_theta=mu[1], var_P=var[0], var_theta=var[1], z_P=float(z[0]), z_theta=float(z[1]))
        obs = res.observation
        if not res.terminated:
            mu, var = self.decoder.append(a)
            st.proposal = (mu, var)
            obs = self.env.set_proposal(mu, var)
        info = {
            "success": res.termination_cause == "took_off",
            "cause": res.termination_cause,
            "executed": a,
            "proposal": proposal,
            "energy_wh": res.energy_so_far,
        }
        return self._agent_obs(obs), res.reward, res.terminated, False, info


class VanillaTakeoff:
    """Plain SAC adapter: agent actions map affinely onto the action bounds."""

    obs_dim = 3
    act_dim = 2

    def __init__(self, vehicle: VehicleConfig | None = None, config: EnvConfig | None = None, record: bool = False):
        self.env = TakeoffEnv(vehicle, config, guided=False, record=record)

    def reset(self, seed: int | None = None) -> np.ndarray:
        return self.env.reset(seed) * OBS_SCALE_HEAD

    def step(self, action):
        a = (np.clip(np.asarray(action, dtype=float), -1.0, 1.0) + 1.0) / 2.0
        res = self.env.step(denormalize_action(float(a[0]), float(a[1])))
        info = {"success": res.termination_cause == "took_off", "cause": res.termination_cause,
                "executed": a, "energy_wh": res.energy_so_far}
        return res.observation * OBS_SCALE_HEAD, res.reward, res.terminated, False, info


def weights_digest(model) -> str:
    h = hashlib.sha256()
    for name, p in model.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return h.hexdigest()


@dataclass
class GuidedRunResult:
    sac: SacResult
    envelope_violations: int
    checked_actions: int
    transformer_frozen: bool


def train_guided(
    model: TrajectoryTransformer,
    cfg: SacConfig,
    seed: int = 0,
    vehicle: VehicleConfig | None = None,
    stop_on_success: bool = False,
    metrics_path=None,
) -> GuidedRunResult:
    """SAC over z-scores with the transformer frozen; every executed action is envelope-checked."""
    before = weights_digest(model)
    env = GuidedTakeoff(model, vehicle)
    eval_env = GuidedTakeoff(model, vehicle)
    counts = {"bad": 0, "checked": 0}

    def on_step(step, action, info):
        proposal = info["proposal"]
        if proposal is None:
            return
        lo, hi = envelope(proposal)
        a = info["executed"]
        counts["checked"] += 1
        if np.any(a < lo) or np.any(a > hi):
            counts["bad"] += 1

    res = train_sac(env, eval_env, cfg, seed, stop_on_success, metrics_path, on_step)
    return GuidedRunResult(res, counts["bad"], counts["checked"], weights_digest(model) == before)


def train_vanilla(cfg: SacConfig, seed: int = 0, vehicle: VehicleConfig | None = None,
                  stop_on_success: bool = False, metrics_path=None) -> SacResult:
    return train_sac(VanillaTakeoff(vehicle), VanillaTakeoff(vehicle), cfg, seed, stop_on_success, metrics_path)


def run_episode(agent, env, record_path=None) -> dict:
    """One deterministic episode; optionally writes the step log as CSV."""
    obs = env.reset(seed=0)
    ret, over, info = 0.0, False, {}
    while not over:
        obs, r, done, trunc, info = env.step(agent.select_action(obs, deterministic=True))
        ret += r
        over = done or trunc
    if record_path is not None:
        extra = GUIDED_LOG_COLUMNS if isinstance(env, GuidedTakeoff) else ()
        write_log_csv(env.env.log, record_path, extra)
    return {"return": ret, "cause": info.get("cause"), "energy_wh": info.get("energy_wh"), "steps": env.env.steps}
