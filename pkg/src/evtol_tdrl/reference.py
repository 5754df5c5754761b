"""Minimum-energy reference trajectories by B-spline direct shooting.

The design vector is 20 power points, 20 wing-angle points and the takeoff
time.  Constraints are handled with an augmented Lagrangian whose inner
minimizer is a seeded CMA-ES.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

from . import batch
from .env import EnvConfig, normalize_action
from .errors import ContractViolation, ThrustSolverError
from .vehicle import (
    DEG,
    POWER_MAX,
    POWER_MIN,
    THETA_MAX,
    THETA_MIN,
    ControlInput,
    KinematicState,
    VehicleConfig,
    accelerations,
    simulate_step,
)

log = logging.getLogger(__name__)

N_POINTS = 20
DEGREE = 3
T_MIN, T_MAX = 5.0, 40.0
DATASET_VERSION = 1

CONDITION_RANGES = {
    "alpha_max_deg": (10.0, 15.0),
    "a_max_g": (0.2, 0.4),
    "k_w": (0.3, 1.0),
    "eta": (0.7, 0.9),
    "s_ref": (0.9, 1.0),
}


@dataclass(frozen=True)
class FlightCondition:
    alpha_max_deg: float
    a_max_g: float
    k_w: float
    eta: float
    s_ref: float
    path_constraints: bool = True

    def __post_init__(self) -> None:
        for name, (lo, hi) in CONDITION_RANGES.items():
            value = getattr(self, name)
            if not lo - 1e-12 <= value <= hi + 1e-12:
                raise ContractViolation(f"{name}={value} outside [{lo}, {hi}]")

    def vehicle(self, base: VehicleConfig | None = None) -> VehicleConfig:
        return (base or VehicleConfig()).replace(k_w=self.k_w, eta=self.eta, s_ref=self.s_ref)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def verification_condition() -> FlightCondition:
    """k_w = 1, eta = 0.9, S_ref = 1 with only the takeoff constraints active."""
    return FlightCondition(15.0, 0.4, 1.0, 0.9, 1.0, path_constraints=False)


@dataclass(frozen=True)
class BSplineControl:
    power: tuple[float, ...]
    theta: tuple[float, ...]
    t_takeoff: float

    def __post_init__(self) -> None:
        if len(self.power) != N_POINTS or len(self.theta) != N_POINTS:
            raise ContractViolation(f"need exactly {N_POINTS} power and angle points")
        if not 0.0 < self.t_takeoff <= T_MAX:
            raise ContractViolation(f"t_takeoff {self.t_takeoff} outside (0, {T_MAX}]")

    @classmethod
    def initial_guess(cls) -> "BSplineControl":
        theta = np.linspace(0.0, 80.0 * DEG, N_POINTS)
        return cls((2.6e5,) * N_POINTS, tuple(map(float, theta)), 25.0)

    @classmethod
    def gentle_guess(cls) -> "BSplineControl":
        """Slower start used when acceleration and AoA limits are active."""
        power = np.linspace(2.2e5, 3.0e5, N_POINTS)
        theta = np.linspace(6.0 * DEG, 90.0 * DEG, N_POINTS)
        return cls(tuple(map(float, power)), tuple(map(float, theta)), 38.0)

    def to_vector(self) -> np.ndarray:
        """Normalized design vector in [0, 1]^41."""
        p = (np.asarray(self.power) - POWER_MIN) / (POWER_MAX - POWER_MIN)
        th = (np.asarray(self.theta) - THETA_MIN) / (THETA_MAX - THETA_MIN)
        return np.concatenate([p, th, [(self.t_takeoff - T_MIN) / (T_MAX - T_MIN)]])

    @classmethod
    def from_vector(cls, z: np.ndarray) -> "BSplineControl":
        z = np.clip(np.asarray(z, dtype=float), 0.0, 1.0)
        p = POWER_MIN + z[:N_POINTS] * (POWER_MAX - POWER_MIN)
        th = THETA_MIN + z[N_POINTS : 2 * N_POINTS] * (THETA_MAX - THETA_MIN)
        t = T_MIN + z[-1] * (T_MAX - T_MIN)
        return cls(tuple(map(float, p)), tuple(map(float, th)), float(t))

    def to_dict(self) -> dict:
        return {"power": list(self.power), "theta": list(self.theta), "t_takeoff": self.t_takeoff}

    @classmethod
    def from_dict(cls, d: dict) -> "BSplineControl":
        return cls(tuple(d["power"]), tuple(d["theta"]), float(d["t_takeoff"]))


def _knots(t_end: float) -> np.ndarray:
    n_inner = N_POINTS - DEGREE - 1
    inner = [t_end * i / (n_inner + 1) for i in range(1, n_inner + 1)]
    return np.array([0.0] * (DEGREE + 1) + inner + [t_end] * (DEGREE + 1))


def _curves(ctrl: BSplineControl) -> tuple[BSpline, BSpline]:
    k = _knots(ctrl.t_takeoff)
    return BSpline(k, np.asarray(ctrl.power), DEGREE), BSpline(k, np.asarray(ctrl.theta), DEGREE)


def eval_spline(ctrl: BSplineControl, t: float) -> ControlInput:
    if not 0.0 <= t <= ctrl.t_takeoff:
        raise ContractViolation(f"t={t} outside [0, {ctrl.t_takeoff}]")
    p, th = _curves(ctrl)
    return ControlInput(
        float(np.clip(p(t), POWER_MIN, POWER_MAX)), float(np.clip(th(t), THETA_MIN, THETA_MAX))
    )


def n_steps(t_takeoff: float, dt: float) -> int:
    return int(math.ceil(t_takeoff / dt - 1e-9))


def sample_controls(ctrl: BSplineControl, dt: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Physical (P, theta) at every step start ``i * dt`` inside the horizon."""
    n = n_steps(ctrl.t_takeoff, dt)
    times = np.minimum(np.arange(n) * dt, ctrl.t_takeoff)
    p, th = _curves(ctrl)
    return np.clip(p(times), POWER_MIN, POWER_MAX), np.clip(th(times), THETA_MIN, THETA_MAX)


# ----------------------------------------------------------------------------
# rollout


@dataclass
class Rollout:
    energy_wh: float
    constraints: dict[str, float]  # signed; <= 0 means satisfied
    powers: np.ndarray
    thetas: np.ndarray
    states: list[KinematicState] = field(repr=False)
    took_off: bool = False
    failed: bool = False

    @property
    def residuals(self) -> dict[str, float]:
        return {k: max(v, 0.0) for k, v in self.constraints.items()}

    @property
    def feasible(self) -> bool:
        return is_feasible(self.constraints, self.failed)


CONSTRAINT_SCALES = {
    "final_altitude": 305.0,
    "final_speed": 67.0,
    "ground": 1.0,
    "freestream": 1.0,
    "alpha": 1.0,
    "accel": 9.80665,
}


def is_feasible(constraints: dict[str, float], failed: bool = False) -> bool:
    if failed:
        return False
    c = constraints
    ok = c["final_altitude"] <= 1e-3 and c["final_speed"] <= 1e-3 and c["ground"] <= 1e-6
    ok = ok and c["freestream"] <= 1e-6
    for key in ("alpha", "accel"):
        if key in c:
            ok = ok and c[key] / CONSTRAINT_SCALES[key] <= 1e-3
    return ok


def rollout_controls(
    powers: np.ndarray,
    thetas: np.ndarray,
    cond: FlightCondition,
    cfg: VehicleConfig | None = None,
    env: EnvConfig | None = None,
) -> Rollout:
    """Simulate a sampled control sequence, stopping at takeoff like the environment."""
    env = env or EnvConfig()
    vehicle = cond.vehicle(cfg)
    dt = env.dt
    state = KinematicState(0.0, env.y0, env.vx0, env.vy0, 0.0)
    states = [state]
    energy_j = 0.0
    min_y = state.y
    min_u = math.inf
    max_alpha = -math.inf
    max_acc = -math.inf
    took_off = failed = False
    a_lim = cond.a_max_g * vehicle.gravity
    alpha_lim = cond.alpha_max_deg * DEG
    used = 0
    for p, th in zip(powers, thetas):
        u = ControlInput(float(p), float(th))
        try:
            new_state, forces = simulate_step(state, u, dt, vehicle)
        except ThrustSolverError:
            failed = True
            break
        energy_j += u.power * dt
        used += 1
        if cond.path_constraints:
            ax, ay = accelerations(forces, u.theta, vehicle)
            max_acc = max(max_acc, math.hypot(ax, ay) - a_lim)
            max_alpha = max(max_alpha, forces.alpha_efs - alpha_lim)
        min_u = min(min_u, forces.chordwise_speed)
        state = new_state
        states.append(state)
        if not all(map(math.isfinite, state)):
            failed = True
            break
        min_y = min(min_y, state.y)
        if state.y >= env.target_altitude and state.vx >= env.target_speed:
            took_off = True
            break
    constraints = {
        "final_altitude": env.target_altitude - state.y,
        "final_speed": env.target_speed - state.vx,
        "ground": -min_y,
        "freestream": -min_u if math.isfinite(min_u) else 0.0,
    }
    if cond.path_constraints:
        constraints["alpha"] = max_alpha
        constraints["accel"] = max_acc
    if failed:
        constraints = {k: (math.inf if not math.isfinite(v) else max(v, 1e3)) for k, v in constraints.items()}
    return Rollout(
        energy_wh=energy_j / 3600.0,
        constraints=constraints,
        powers=np.asarray(powers[:used], dtype=float),
        thetas=np.asarray(thetas[:used], dtype=float),
        states=states,
        took_off=took_off,
        failed=failed,
    )


def rollout(
    ctrl: BSplineControl,
    cond: FlightCondition,
    cfg: VehicleConfig | None = None,
    env: EnvConfig | None = None,
) -> Rollout:
    env = env or EnvConfig()
    p, th = sample_controls(ctrl, env.dt)
    return rollout_controls(p, th, cond, cfg, env)


def rollout_population(
    ctrls: list[BSplineControl],
    cond: FlightCondition,
    cfg: VehicleConfig | None = None,
    env: EnvConfig | None = None,
) -> list[tuple[float, dict[str, float], bool]]:
    """Vectorized :func:`rollout` over many designs: ``(energy_wh, constraints, failed)``."""
    env = env or EnvConfig()
    vehicle = cond.vehicle(cfg)
    dt = env.dt
    samples = [sample_controls(c, dt) for c in ctrls]
    lengths = np.array([len(p) for p, _ in samples])
    n_max = int(lengths.max())
    B = len(ctrls)
    P = np.empty((B, n_max))
    TH = np.empty((B, n_max))
    for b, (p, th) in enumerate(samples):
        P[b, : len(p)], P[b, len(p) :] = p, p[-1]
        TH[b, : len(th)], TH[b, len(th) :] = th, th[-1]

    x = np.zeros(B)
    y = np.full(B, env.y0)
    vx = np.full(B, env.vx0)
    vy = np.full(B, env.vy0)
    energy = np.zeros(B)
    min_y = y.copy()
    min_u = np.full(B, np.inf)
    max_alpha = np.full(B, -np.inf)
    max_acc = np.full(B, -np.inf)
    active = np.ones(B, bool)
    failed = np.zeros(B, bool)
    t_prev = np.zeros(B)
    a_lim = cond.a_max_g * vehicle.gravity
    alpha_lim = cond.alpha_max_deg * DEG
    with np.errstate(all="ignore"):
        for i in range(n_max):
            active &= i < lengths
            if not active.any():
                break
            idx = np.flatnonzero(active)
            try:
                nx, ny, nvx, nvy, ax, ay, a_efs, u, t_prev[idx] = batch.step(
                    x[idx], y[idx], vx[idx], vy[idx], P[idx, i], TH[idx, i], dt, vehicle, t_prev[idx]
                )
            except ThrustSolverError:
                failed[idx] = True
                break
            energy[idx] += P[idx, i] * dt
            if cond.path_constraints:
                max_acc[idx] = np.maximum(max_acc[idx], np.hypot(ax, ay) - a_lim)
                max_alpha[idx] = np.maximum(max_alpha[idx], a_efs - alpha_lim)
            min_u[idx] = np.minimum(min_u[idx], u)
            x[idx], y[idx], vx[idx], vy[idx] = nx, ny, nvx, nvy
            bad = ~(np.isfinite(nx) & np.isfinite(ny) & np.isfinite(nvx) & np.isfinite(nvy))
            failed[idx[bad]] = True
            min_y[idx] = np.minimum(min_y[idx], ny)
            done = (ny >= env.target_altitude) & (nvx >= env.target_speed)
            active[idx[bad | done]] = False
    out = []
    for b in range(B):
        c = {
            "final_altitude": env.target_altitude - y[b],
            "final_speed": env.target_speed - vx[b],
            "ground": -min_y[b],
            "freestream": -min_u[b] if np.isfinite(min_u[b]) else 0.0,
        }
        if cond.path_constraints:
            c["alpha"] = max_alpha[b]
            c["accel"] = max_acc[b]
        c = {k: float(v) for k, v in c.items()}
        if failed[b]:
            c = {k: (math.inf if not math.isfinite(v) else max(v, 1e3)) for k, v in c.items()}
        out.append((float(energy[b]) / 3600.0, c, bool(failed[b])))
    return out


# ----------------------------------------------------------------------------
# CMA-ES (rank-one + rank-mu covariance update)


class CMAES:
    def __init__(self, mean: np.ndarray, sigma: float, popsize: int, rng: np.random.Generator) -> None:
        n = mean.size
        self.n = n
        self.mean = mean.astype(float).copy()
        self.sigma = sigma
        self.lam = popsize
        self.mu = popsize // 2
        w = np.log(self.mu + 0.5) - np.log(np.arange(1, self.mu + 1))
        self.weights = w / w.sum()
        self.mueff = 1.0 / np.sum(self.weights**2)
        self.cc = (4 + self.mueff / n) / (n + 4 + 2 * self.mueff / n)
        self.cs = (self.mueff + 2) / (n + self.mueff + 5)
        self.c1 = 2 / ((n + 1.3) ** 2 + self.mueff)
        self.cmu = min(1 - self.c1, 2 * (self.mueff - 2 + 1 / self.mueff) / ((n + 2) ** 2 + self.mueff))
        self.damps = 1 + 2 * max(0.0, math.sqrt((self.mueff - 1) / (n + 1)) - 1) + self.cs
        self.chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
        self.pc = np.zeros(n)
        self.ps = np.zeros(n)
        self.C = np.eye(n)
        self.B = np.eye(n)
        self.D = np.ones(n)
        self.gen = 0
        self.rng = rng

    def ask(self) -> np.ndarray:
        z = self.rng.standard_normal((self.lam, self.n))
        return self.mean + self.sigma * (z * self.D) @ self.B.T

    def tell(self, xs: np.ndarray, fitness: np.ndarray) -> None:
        order = np.argsort(fitness, kind="stable")
        sel = xs[order[: self.mu]]
        old = self.mean
        self.mean = self.weights @ sel
        y = (self.mean - old) / self.sigma
        inv_sqrt = self.B @ np.diag(1.0 / self.D) @ self.B.T
        self.ps = (1 - self.cs) * self.ps + math.sqrt(self.cs * (2 - self.cs) * self.mueff) * inv_sqrt @ y
        self.gen += 1
        norm_ps = np.linalg.norm(self.ps)
        hsig = norm_ps / math.sqrt(1 - (1 - self.cs) ** (2 * self.gen)) / self.chi_n < 1.4 + 2 / (self.n + 1)
        self.pc = (1 - self.cc) * self.pc + hsig * math.sqrt(self.cc * (2 - self.cc) * self.mueff) * y
        artmp = (sel - old) / self.sigma
        self.C = (
            (1 - self.c1 - self.cmu) * self.C
            + self.c1 * (np.outer(self.pc, self.pc) + (1 - hsig) * self.cc * (2 - self.cc) * self.C)
            + self.cmu * (artmp.T * self.weights) @ artmp
        )
        self.sigma *= math.exp((self.cs / self.damps) * (norm_ps / self.chi_n - 1))
        self.sigma = min(self.sigma, 1.0)
        self.C = np.triu(self.C) + np.triu(self.C, 1).T
        d2, self.B = np.linalg.eigh(self.C)
        self.D = np.sqrt(np.maximum(d2, 1e-20))


# ----------------------------------------------------------------------------
# augmented Lagrangian driver


@dataclass
class OptimizerSettings:
    popsize: int = 32
    sigma0: float = 0.1
    penalty0: float = 10.0
    penalty_growth: float = 2.0
    generations_per_outer: int = 25
    energy_scale: float = 1000.0


@dataclass
class OptimizeResult:
    control: BSplineControl
    energy_wh: float
    feasible: bool
    residuals: dict[str, float]
    evaluations: int
    history: list[float] = field(default_factory=list)


def _scaled(constraints: dict[str, float]) -> dict[str, float]:
    return {k: v / CONSTRAINT_SCALES[k] for k, v in constraints.items()}


def optimize(
    cond: FlightCondition,
    cfg: VehicleConfig | None = None,
    budget: int = 20000,
    seed: int = 0,
    x0: BSplineControl | None = None,
    settings: OptimizerSettings | None = None,
    env: EnvConfig | None = None,
) -> OptimizeResult:
    """Augmented-Lagrangian CMA-ES over the 41 normalized design variables.

    Returns the lowest-energy feasible design seen; if none was feasible, the
    design with the smallest worst scaled residual, flagged infeasible.
    ``budget`` counts rollouts; the initial point is always evaluated.
    """
    if budget < 0:
        raise ContractViolation("budget must be non-negative")
    s = settings or OptimizerSettings()
    rng = np.random.default_rng(seed)
    x0 = x0 or BSplineControl.initial_guess()
    z0 = x0.to_vector()

    first = rollout(x0, cond, cfg, env)
    evals = 1
    history = [first.energy_wh]
    if budget <= 1:
        return _result(x0, first, evals, history)

    # candidates ranked as (is_infeasible, key); key is energy or worst residual
    best: tuple[tuple[int, float], np.ndarray] = (_rank(first.energy_wh, first.constraints, first.failed), z0)
    names = list(first.constraints)
    lam = {k: 0.0 for k in names}
    penalty = s.penalty0
    prev_worst = math.inf

    def merit(energy: float, constraints: dict[str, float], failed: bool, z: np.ndarray) -> float:
        bound = 1e3 * float(np.sum((z - np.clip(z, 0, 1)) ** 2))
        if failed:
            return 1e6 + bound
        val = energy / s.energy_scale
        for k, c in _scaled(constraints).items():
            val += (max(0.0, lam[k] + penalty * c) ** 2 - lam[k] ** 2) / (2.0 * penalty)
        return val + bound

    es = CMAES(z0, s.sigma0, s.popsize, rng)
    while evals + s.popsize <= budget:
        gen_best = None
        for _ in range(s.generations_per_outer):
            if evals + s.popsize > budget:
                break
            xs = es.ask()
            results = rollout_population([BSplineControl.from_vector(z) for z in xs], cond, cfg, env)
            evals += len(xs)
            fit = np.array([merit(*r, z) for r, z in zip(results, xs)])
            es.tell(xs, fit)
            for r, z in zip(results, xs):
                key = _rank(*r)
                if key < best[0]:
                    best = (key, np.clip(z, 0.0, 1.0))
            i = int(np.argmin(fit))
            if gen_best is None or fit[i] < gen_best[0]:
                gen_best = (fit[i], results[i])
        if gen_best is None:
            break
        energy, constraints, _ = gen_best[1]
        history.append(energy)
        scaled = _scaled(constraints)
        for k in names:
            lam[k] = max(0.0, lam[k] + penalty * scaled[k])
        worst = max(max(v, 0.0) for v in scaled.values())
        if worst > 0.5 * prev_worst:
            penalty *= s.penalty_growth
        prev_worst = worst

    ctrl = BSplineControl.from_vector(best[1]) if best[1] is not z0 else x0
    ro = rollout(ctrl, cond, cfg, env)
    if not ro.feasible and first.feasible:
        ctrl, ro = x0, first
    return _result(ctrl, ro, evals, history)


def _rank(energy: float, constraints: dict[str, float], failed: bool) -> tuple[int, float]:
    if is_feasible(constraints, failed):
        return (0, energy)
    return (1, max(max(v, 0.0) for v in _scaled(constraints).values()))


def _result(ctrl: BSplineControl, ro: Rollout, evals: int, history: list[float]) -> OptimizeResult:
    return OptimizeResult(
        control=ctrl,
        energy_wh=ro.energy_wh,
        feasible=ro.feasible,
        residuals=ro.residuals,
        evaluations=evals,
        history=history,
    )


# ----------------------------------------------------------------------------
# dataset


def lhs_sample(n: int, seed: int) -> list[FlightCondition]:
    """Latin hypercube over the five flight-condition ranges."""
    if n < 1:
        raise ContractViolation("need at least one sample")
    rng = np.random.default_rng(seed)
    cols = {}
    for name, (lo, hi) in CONDITION_RANGES.items():
        strata = (rng.permutation(n) + rng.random(n)) / n
        cols[name] = lo + strata * (hi - lo)
    return [FlightCondition(**{k: float(v[i]) for k, v in cols.items()}) for i in range(n)]


@dataclass
class DatasetEntry:
    condition: FlightCondition
    controls: np.ndarray  # (n, 2) normalized (P, theta) at dt spacing
    energy_wh: float
    feasible: bool
    split: str
    dt: float = 0.1

    def physical_controls(self) -> tuple[np.ndarray, np.ndarray]:
        p = POWER_MIN + self.controls[:, 0] * (POWER_MAX - POWER_MIN)
        th = THETA_MIN + self.controls[:, 1] * (THETA_MAX - THETA_MIN)
        return p, th

    def to_json(self) -> str:
        doc = {
            "v": DATASET_VERSION,
            "condition": self.condition.to_dict(),
            "dt": self.dt,
            "energy_wh": self.energy_wh,
            "feasible": self.feasible,
            "split": self.split,
            "controls": self.controls.tolist(),
        }
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "DatasetEntry":
        doc = json.loads(line)
        if doc.get("v") != DATASET_VERSION:
            raise ContractViolation(f"unsupported dataset version {doc.get('v')!r}")
        return cls(
            condition=FlightCondition(**doc["condition"]),
            controls=np.array(doc["controls"], dtype=float).reshape(-1, 2),
            energy_wh=float(doc["energy_wh"]),
            feasible=bool(doc["feasible"]),
            split=doc["split"],
            dt=float(doc["dt"]),
        )


def save_dataset(entries: list[DatasetEntry], path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        for e in entries:
            fh.write(e.to_json() + "\n")
    os.replace(tmp, path)


def load_dataset(path) -> list[DatasetEntry]:
    with open(path) as fh:
        return [DatasetEntry.from_json(line) for line in fh if line.strip()]


def split_counts(n: int, split=(0.75, 0.15, 0.10)) -> tuple[int, int, int]:
    if abs(sum(split) - 1.0) > 1e-9:
        raise ContractViolation(f"split fractions must sum to 1, got {split}")
    n_train = int(math.floor(split[0] * n + 1e-9))
    n_val = int(math.floor(split[1] * n + 1e-9))
    return n_train, n_val, n - n_train - n_val


# path-constrained searches need the penalty to bite within a few thousand rollouts
DATASET_SETTINGS = OptimizerSettings(penalty0=100.0, generations_per_outer=10)


def _solve_condition(args) -> DatasetEntry | None:
    cond, cfg, budget, seed, x0, split = args
    if x0 is None:
        x0 = BSplineControl.gentle_guess() if cond.path_constraints else BSplineControl.initial_guess()
    res = optimize(cond, cfg, budget=budget, seed=seed, x0=x0, settings=DATASET_SETTINGS)
    log.info("condition %s: feasible=%s energy=%.1f Wh", cond.to_dict(), res.feasible, res.energy_wh)
    ro = rollout(res.control, cond, cfg)
    p_norm, th_norm = normalize_action(ro.powers, ro.thetas)
    controls = np.stack([p_norm, th_norm], axis=1)
    return DatasetEntry(cond, controls, ro.energy_wh, ro.feasible, split)


def worker_count(requested: int | None = None) -> int:
    cap = os.environ.get("EVTOL_THREADS")
    n = requested or os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def build_dataset(
    n: int,
    seed: int,
    split=(0.75, 0.15, 0.10),
    budget: int = 8000,
    cfg: VehicleConfig | None = None,
    x0: BSplineControl | None = None,
    workers: int | None = None,
) -> list[DatasetEntry]:
    """Optimize ``n`` LHS conditions and label them train/val/test.

    Infeasible optima are dropped (and logged); the split labels are drawn
    before dropping so the surviving labels stay seed-deterministic.
    """
    n_train, n_val, _ = split_counts(n, split)
    conds = lhs_sample(n, seed)
    rng = np.random.default_rng(seed + 1)
    order = rng.permutation(n)
    labels = ["test"] * n
    for rank, idx in enumerate(order):
        labels[idx] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    seeds = np.random.SeedSequence(seed).generate_state(n)
    jobs = [(c, cfg, budget, int(s), x0, lab) for c, s, lab in zip(conds, seeds, labels)]
    nw = min(worker_count(workers), n)
    if nw > 1:
        with ProcessPoolExecutor(max_workers=nw) as pool:
            entries = list(pool.map(_solve_condition, jobs))
    else:
        entries = [_solve_condition(j) for j in jobs]
    kept = [e for e in entries if e.feasible]
    if len(kept) < len(entries):
        log.warning("excluded %d infeasible conditions out of %d", len(entries) - len(kept), len(entries))
    return kept
