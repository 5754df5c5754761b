"""Soft actor-critic with a fixed entropy coefficient.

Actions live in [-1, 1]^d (tanh-squashed Gaussian policy).  Environments are
plain objects with ``reset(seed) -> obs`` and
``step(action) -> (obs, reward, done, truncated, info)``; ``done`` stops
bootstrapping, ``truncated`` only ends the episode.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .autodiff import AdamState, Tape, adam_step
from .errors import ContractViolation, NumericalFailure
from .nn import MLP, Module

log = logging.getLogger(__name__)

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
LOG2 = math.log(2.0)


@dataclass(frozen=True)
class SacConfig:
    hidden: tuple[int, ...] = (512, 512, 512)
    lr: float = 4e-4
    batch_size: int = 256
    tau: float = 5e-3
    gamma: float = 0.98
    alpha: float = 0.01
    buffer_capacity: int = 5_000_000
    total_steps: int = 5_000_000
    eval_interval: int = 10_000
    eval_episodes: int = 5
    warmup: int = 1000
    updates_per_step: int = 1

    def __post_init__(self) -> None:
        if not 0.0 < self.tau <= 1.0:
            raise ContractViolation(f"tau must lie in (0, 1], got {self.tau}")
        if not 0.0 < self.gamma < 1.0:
            raise ContractViolation(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.buffer_capacity < self.batch_size:
            raise ContractViolation("buffer capacity must be at least the batch size")
        if self.lr <= 0 or self.total_steps < 1 or self.eval_interval < 1 or self.eval_episodes < 1:
            raise ContractViolation("lr, total_steps, eval_interval and eval_episodes must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def lr_at(self, step: int) -> float:
        """Linear anneal from ``lr`` at step 0 to zero at ``total_steps``."""
        return self.lr * max(0.0, 1.0 - step / self.total_steps)


# ----------------------------------------------------------------------------
# replay


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int) -> None:
        if capacity < 1:
            raise ContractViolation("capacity must be positive")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, act_dim))
        self.rew = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def add(self, obs, act, rew: float, next_obs, done: bool) -> None:
        i = self.cursor
        self.obs[i] = obs
        self.act[i] = act
        self.rew[i] = rew
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator):
        if self.size < n:
            raise ContractViolation(f"buffer holds {self.size} transitions, batch needs {n}")
        idx = rng.integers(0, self.size, n)
        return self.obs[idx], self.act[idx], self.rew[idx], self.next_obs[idx], self.done[idx]


# ----------------------------------------------------------------------------
# policy


def squash_correction(u):
    """log(1 - tanh(u)^2) in a form that stays finite for large |u|."""
    return ad.mul(ad.sub(ad.sub(LOG2, u), ad.softplus(ad.mul(u, -2.0))), 2.0)


def squashed_log_prob(u, mu, log_std):
    """Per-sample log density of ``tanh(u)`` where u ~ N(mu, exp(log_std)^2)."""
    z = ad.div(ad.sub(u, mu), ad.exp(log_std))
    gauss = ad.sub(ad.sub(ad.mul(ad.square(z), -0.5), log_std), HALF_LOG_2PI)
    return ad.tsum(ad.sub(gauss, squash_correction(u)), axis=-1)


class Actor(Module):
    def __init__(self, obs_dim: int, act_dim: int, hidden, rng: np.random.Generator) -> None:
        self.net = MLP(obs_dim, hidden, 2 * act_dim, rng, zero_last=True)
        self.act_dim = act_dim

    def dist(self, obs):
        out = self.net(obs)
        mu = out[..., : self.act_dim]
        log_std = ad.clip(out[..., self.act_dim :], LOG_STD_MIN, LOG_STD_MAX)
        return mu, log_std

    def sample(self, obs, eps: np.ndarray):
        """Reparameterized draw: returns (action, log prob)."""
        mu, log_std = self.dist(obs)
        u = ad.add(mu, ad.mul(ad.exp(log_std), eps))
        return ad.tanh(u), squashed_log_prob(u, mu, log_std)


class Critic(Module):
    def __init__(self, obs_dim: int, act_dim: int, hidden, rng: np.random.Generator) -> None:
        self.net = MLP(obs_dim + act_dim, hidden, 1, rng)

    def __call__(self, obs, act):
        return self.net(ad.concat([ad.as_tensor(obs), ad.as_tensor(act)], axis=-1))[..., 0]


def soft_update(target: Module, online: Module, tau: float) -> None:
    for t, o in zip(target.parameters(), online.parameters()):
        t.data *= 1.0 - tau
        t.data += tau * o.data


class SacAgent:
    def __init__(self, obs_dim: int, act_dim: int, cfg: SacConfig, seed: int = 0) -> None:
        self.cfg = cfg
        self.obs_dim, self.act_dim = obs_dim, act_dim
        rng = np.random.default_rng(seed)
        self.actor = Actor(obs_dim, act_dim, cfg.hidden, rng)
        self.q1 = Critic(obs_dim, act_dim, cfg.hidden, rng)
        self.q2 = Critic(obs_dim, act_dim, cfg.hidden, rng)
        self.q1_target = Critic(obs_dim, act_dim, cfg.hidden, rng)
        self.q2_target = Critic(obs_dim, act_dim, cfg.hidden, rng)
        self.q1_target.copy_from(self.q1)
        self.q2_target.copy_from(self.q2)
        self.actor_opt = AdamState(lr=cfg.lr)
        self.critic_opt = AdamState(lr=cfg.lr)
        self.updates = 0

    def select_action(self, obs, deterministic: bool, rng: np.random.Generator | None = None) -> np.ndarray:
        mu, log_std = self.actor.dist(np.asarray(obs, dtype=float)[None])
        if deterministic:
            return np.tanh(mu.data[0])
        if rng is None:
            raise ContractViolation("stochastic action selection needs an rng")
        u = mu.data[0] + np.exp(log_std.data[0]) * rng.standard_normal(self.act_dim)
        return np.tanh(u)

    def critic_targets(self, rew, next_obs, done, eps: np.ndarray) -> np.ndarray:
        a2, logp2 = self.actor.sample(next_obs, eps)
        q_next = np.minimum(self.q1_target(next_obs, a2).data, self.q2_target(next_obs, a2).data)
        return rew + self.cfg.gamma * (1.0 - done) * (q_next - self.cfg.alpha * logp2.data)

    def update(self, batch, rng: np.random.Generator, lr: float | None = None) -> tuple[float, float, float]:
        """One gradient step on both critics and the actor, then a soft target update."""
        obs, act, rew, next_obs, done = batch
        lr = self.cfg.lr if lr is None else lr
        n = len(rew)
        y = self.critic_targets(rew, next_obs, done, rng.standard_normal((n, self.act_dim)))

        critics = self.q1.parameters() + self.q2.parameters()
        for p in critics:
            p.zero_grad()
        with Tape() as tape:
            l1 = ad.mean(ad.square(ad.sub(self.q1(obs, act), y)))
            l2 = ad.mean(ad.square(ad.sub(self.q2(obs, act), y)))
            critic_loss = ad.add(l1, l2)
        self._check(critic_loss, "critic")
        tape.backward(critic_loss)
        adam_step(critics, [p.grad for p in critics], self.critic_opt, lr)

        actor_params = self.actor.parameters()
        for p in actor_params:
            p.zero_grad()
        with Tape() as tape:
            a, logp = self.actor.sample(obs, rng.standard_normal((n, self.act_dim)))
            q = ad.minimum(self.q1(obs, a), self.q2(obs, a))
            actor_loss = ad.mean(ad.sub(ad.mul(logp, self.cfg.alpha), q))
        self._check(actor_loss, "actor")
        tape.backward(actor_loss)
        adam_step(actor_params, [p.grad for p in actor_params], self.actor_opt, lr)
        for p in critics:
            p.zero_grad()

        soft_update(self.q1_target, self.q1, self.cfg.tau)
        soft_update(self.q2_target, self.q2, self.cfg.tau)
        self.updates += 1
        return actor_loss.item(), l1.item(), l2.item()

    @staticmethod
    def _check(loss, which: str) -> None:
        if not math.isfinite(loss.item()):
            raise NumericalFailure(f"non-finite {which} loss {loss.item()}")

    def modules(self) -> dict[str, Module]:
        return {"actor": self.actor, "q1": self.q1, "q2": self.q2, "q1_target": self.q1_target, "q2_target": self.q2_target}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {f"{k}.{n}": v for k, m in self.modules().items() for n, v in m.state_dict().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, m in self.modules().items():
            m.load_state_dict({n[len(k) + 1 :]: v for n, v in state.items() if n.startswith(k + ".")})

    def save(self, path, seed: int, extra: dict | None = None) -> None:
        meta = {"kind": "sac", "config": self.cfg.to_dict(), "obs_dim": self.obs_dim, "act_dim": self.act_dim, "seed": seed}
        checkpoint.save(path, self.state_dict(), {**meta, **(extra or {})})

    @classmethod
    def load(cls, path) -> tuple["SacAgent", dict]:
        arrays, meta = checkpoint.load(path)
        if meta.get("kind") != "sac":
            raise ContractViolation(f"{path} is not a SAC checkpoint")
        cfg = SacConfig(**meta["config"])
        agent = cls(meta["obs_dim"], meta["act_dim"], cfg, meta.get("seed", 0))
        agent.load_state_dict(arrays)
        return agent, meta


# ----------------------------------------------------------------------------
# toy environment


class DoubleIntegrator:
    """Point mass on a line: drive x from 0 to 1 with acceleration in [-1, 1]."""

    obs_dim = 2
    act_dim = 1

    def __init__(self, target: float = 1.0, dt: float = 0.1, horizon: int = 100) -> None:
        self.target, self.dt, self.horizon = target, dt, horizon
        self.reset()

    def reset(self, seed: int | None = None) -> np.ndarray:
        self.x = self.v = 0.0
        self.t = 0
        return np.array([self.x, self.v])

    def step(self, action):
        a = float(np.clip(np.asarray(action, dtype=float).reshape(-1)[0], -1.0, 1.0))
        self.x += self.v * self.dt
        self.v += a * self.dt
        self.t += 1
        reward = -abs(self.x - self.target) * self.dt
        return np.array([self.x, self.v]), reward, False, self.t >= self.horizon, {}


# ----------------------------------------------------------------------------
# training loop


@dataclass
class EvalRecord:
    step: int
    eval_return: float
    actor_loss: float
    critic1_loss: float
    critic2_loss: float
    lr: float
    successes: int


@dataclass
class SacResult:
    agent: SacAgent
    best_return: float
    best_step: int
    steps: int
    evals: list[EvalRecord] = field(default_factory=list)
    episodes: int = 0
    successes: int = 0
    first_success_step: int | None = None
    wall_seconds: float = 0.0


def evaluate(agent: SacAgent, env, episodes: int, seed: int) -> tuple[float, int]:
    """Mean deterministic return and number of successful episodes."""
    total, wins = 0.0, 0
    for k in range(episodes):
        obs = env.reset(seed=seed + k)
        ret, over = 0.0, False
        while not over:
            obs, r, done, trunc, info = env.step(agent.select_action(obs, deterministic=True))
            ret += r
            over = done or trunc
        total += ret
        wins += bool(info.get("success", False))
    return total / episodes, wins


def train_sac(
    env,
    eval_env,
    cfg: SacConfig,
    seed: int = 0,
    stop_on_success: bool = False,
    metrics_path=None,
    on_step=None,
) -> SacResult:
    """Off-policy loop: uniform warmup, then one update per environment step.

    The actor and critics of the best evaluation are kept.  ``on_step`` is
    called with ``(step, action, info)`` after every environment step.
    """
    t_start = time.perf_counter()
    rng = np.random.default_rng(seed)
    agent = SacAgent(env.obs_dim, env.act_dim, cfg, seed)
    buf = ReplayBuffer(min(cfg.buffer_capacity, cfg.total_steps), env.obs_dim, env.act_dim)
    evals: list[EvalRecord] = []
    losses = (math.nan, math.nan, math.nan)
    best_state, best_ret, best_step = agent.state_dict(), -math.inf, 0
    episodes = successes = 0
    first_success = None
    writer = fh = None
    if metrics_path is not None:
        Path(metrics_path).parent.mkdir(parents=True, exist_ok=True)
        fh = open(metrics_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["step", "eval_return", "actor_loss", "critic1_loss", "critic2_loss", "lr", "successes"])

    def run_eval(step: int) -> None:
        nonlocal best_state, best_ret, best_step
        ret, wins = evaluate(agent, eval_env, cfg.eval_episodes, seed + 10_000)
        rec = EvalRecord(step, ret, *losses, cfg.lr_at(step), successes)
        evals.append(rec)
        if writer is not None:
            writer.writerow([rec.step, repr(rec.eval_return), repr(rec.actor_loss), repr(rec.critic1_loss),
                             repr(rec.critic2_loss), repr(rec.lr), rec.successes])
            fh.flush()
        log.info("step %d eval return %.4f (%d eval successes)", step, ret, wins)
        if ret > best_ret:
            best_ret, best_step, best_state = ret, step, agent.state_dict()

    try:
        run_eval(0)
        obs = env.reset(seed=seed)
        step = 0
        while step < cfg.total_steps:
            if step < cfg.warmup:
                act = rng.uniform(-1.0, 1.0, env.act_dim)
            else:
                act = agent.select_action(obs, deterministic=False, rng=rng)
            next_obs, r, done, trunc, info = env.step(act)
            buf.add(obs, act, r, next_obs, done)
            step += 1
            if on_step is not None:
                on_step(step, act, info)
            if step >= cfg.warmup and buf.size >= cfg.batch_size:
                for _ in range(cfg.updates_per_step):
                    losses = agent.update(buf.sample(cfg.batch_size, rng), rng, cfg.lr_at(step - 1))
            if done or trunc:
                episodes += 1
                if info.get("success", False):
                    successes += 1
                    if first_success is None:
                        first_success = step
                        log.info("first successful episode ends at step %d", step)
                obs = env.reset(seed=seed + episodes)
            else:
                obs = next_obs
            if step % cfg.eval_interval == 0:
                run_eval(step)
            if stop_on_success and first_success is not None:
                break
    finally:
        if fh is not None:
            fh.close()
    agent.load_state_dict(best_state)
    return SacResult(agent, best_ret, best_step, step, evals, episodes, successes, first_success,
                     time.perf_counter() - t_start)


def desk_config(**overrides) -> SacConfig:
    """Small networks and batches that train in minutes on one core."""
    base = SacConfig(hidden=(64, 64), batch_size=64, total_steps=50_000, eval_interval=2_500,
                     eval_episodes=1, warmup=1000, buffer_capacity=1_000_000)
    return replace(base, **overrides)
