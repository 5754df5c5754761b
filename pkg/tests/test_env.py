import csv
import math

import numpy as np
import pytest

from evtol_tdrl.env import (
    PAD,
    EnvConfig,
    TakeoffEnv,
    altitude_reward,
    denormalize_action,
    normalize_action,
    power_reward,
    reward_components,
    speed_reward,
    terminal_penalty,
    write_log_csv,
)
from evtol_tdrl.errors import ContractViolation
from evtol_tdrl.vehicle import ControlInput, KinematicState, VehicleConfig

CFG = EnvConfig()


def _hand_shaped(value, target, k=0.05, cc=0.5, rho_w=2.0):
    # written independently from the reward table: k e^cc (e^(-cc |1 - v/target|) - 1) / (3 (e^cc - 1)(rho_w + 1))
    gap = abs(1 - value / target)
    return k * math.exp(cc) * (math.exp(-cc * gap) - 1) / (3 * (math.exp(cc) - 1) * (rho_w + 1))


class TestRewards:
    def test_zero_at_targets(self):
        assert altitude_reward(305.0, CFG) == 0.0
        assert speed_reward(67.0, CFG) == 0.0

    def test_power_reward_at_normalizer(self):
        assert power_reward(310000.0, CFG) == pytest.approx(-1.0 / 30.0, rel=1e-14)

    def test_altitude_reward_on_ground(self):
        # the closed form collapses to -k / (3 (rho_w + 1)) = -1/180
        assert altitude_reward(0.0, CFG) == pytest.approx(-1.0 / 180.0, rel=1e-12)
        assert altitude_reward(0.0, CFG) == pytest.approx(_hand_shaped(0.0, 305.0), rel=1e-14)

    def test_matches_hand_formula(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            y, vx = rng.uniform(0, 600), rng.uniform(-20, 120)
            assert altitude_reward(y, CFG) == pytest.approx(_hand_shaped(y, 305.0), rel=1e-13)
            assert speed_reward(vx, CFG) == pytest.approx(_hand_shaped(vx, 67.0), rel=1e-13)

    def test_altitude_reward_increasing_below_target(self):
        ys = np.linspace(0, 305, 400)
        assert np.all(np.diff([altitude_reward(y, CFG) for y in ys]) > 0)

    def test_components_non_positive_and_bounded(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            s = KinematicState(0, rng.uniform(0, 610), rng.uniform(-67, 134), 0, 0)
            u = ControlInput(rng.uniform(1.8e5, 3.11e5), 0.0)
            parts = reward_components(s, u, CFG)
            assert all(p <= 0 for p in parts)
            assert sum(parts) >= -0.0673

    def test_terminal_penalty(self):
        assert terminal_penalty(0.0, CFG) == pytest.approx(-20.0)
        assert terminal_penalty(40.0, CFG) == 0.0


class TestActionScaling:
    def test_roundtrip(self):
        u = denormalize_action(*normalize_action(2.2e5, 0.4))
        assert u.power == pytest.approx(2.2e5) and u.theta == pytest.approx(0.4)

    def test_clamped(self):
        u = denormalize_action(-0.5, 1.7)
        assert u.power == 1.8e5 and u.theta == pytest.approx(math.pi / 2)


class TestEnv:
    def test_reset_observation(self):
        env = TakeoffEnv()
        obs = env.reset(seed=3)
        assert np.array_equal(obs, [0.1, 0.1, 0.1, PAD, PAD, PAD, PAD])
        assert np.array_equal(env.reset(seed=3), obs)
        assert env.energy_wh == 0.0

    def test_vanilla_observation(self):
        assert np.array_equal(TakeoffEnv(guided=False).reset(), [0.1, 0.1, 0.1])

    def test_set_proposal(self):
        env = TakeoffEnv()
        env.reset()
        obs = env.set_proposal([0.5, 0.5], [0.01, 0.01])
        assert np.array_equal(obs[3:], [0.5, 0.5, 0.01, 0.01])
        obs = env.set_proposal([0.2, 0.3], [0.04, 0.05])
        assert np.array_equal(obs[3:], [0.2, 0.3, 0.04, 0.05])
        with pytest.raises(ContractViolation):
            env.set_proposal([0.2, 0.3], [-1.0, 0.05])

    def test_out_of_bounds_action(self):
        env = TakeoffEnv()
        env.reset()
        with pytest.raises(ContractViolation):
            env.step(ControlInput(3.2e5, 0.0))

    def test_step_after_termination(self):
        env = TakeoffEnv()
        env.reset()
        res = None
        while res is None or not res.terminated:
            res = env.step(ControlInput(1.8e5, 0.0))
        with pytest.raises(ContractViolation):
            env.step(ControlInput(1.8e5, 0.0))

    def test_energy_is_exact_sum(self):
        env = TakeoffEnv()
        env.reset()
        rng = np.random.default_rng(2)
        powers = []
        for _ in range(50):
            p = rng.uniform(2.6e5, 3.11e5)
            powers.append(p)
            res = env.step(ControlInput(p, 0.05))
            if res.terminated:
                break
        joules = 0.0
        for p in powers:
            joules += p * 0.1
        assert res.energy_so_far == joules / 3600.0

    def test_reward_is_sum_of_parts(self):
        env = TakeoffEnv()
        env.reset()
        for i in range(30):
            res = env.step(ControlInput(3.0e5, 0.02 * i))
            assert res.reward == sum(res.reward_parts)
            assert res.terminated == (res.termination_cause != "none")

    def test_sinking_with_vertical_wing_is_negative_freestream(self):
        env = TakeoffEnv(vehicle=VehicleConfig(eta=0.7))
        env.reset()
        n, res = 0, None
        while res is None or not res.terminated:
            res = env.step(ControlInput(1.8e5, 0.0))
            n += 1
        assert res.termination_cause == "negative_freestream"
        assert res.reward_parts[3] == pytest.approx(-10 * 0.05 * (40 - n * 0.1))

    def test_ground_contact_with_horizontal_wing(self):
        env = TakeoffEnv()
        env.reset()
        n, res = 0, None
        while res is None or not res.terminated:
            res = env.step(ControlInput(1.8e5, math.pi / 2))
            n += 1
        assert res.termination_cause == "ground"
        assert res.state.y < 0
        assert res.reward_parts[3] == pytest.approx(-10 * 0.05 * (40 - n * 0.1))

    def test_negative_freestream(self):
        # tilt fully forward while climbing straight up: flow hits the disk from behind
        env = TakeoffEnv()
        env.reset()
        for _ in range(20):
            env.step(ControlInput(3.11e5, 0.0))
        res = env.step(ControlInput(1.8e5, math.pi / 2))
        while not res.terminated:
            res = env.step(ControlInput(1.8e5, math.pi / 2))
        assert res.termination_cause in ("negative_freestream", "ground")
        assert res.reward_parts[3] < 0

    def test_timeout_after_400_steps(self):
        # hold a gentle climb with the wing vertical so neither success nor failure occurs
        env = TakeoffEnv(vehicle=VehicleConfig(eta=0.7))
        env.reset()
        steps = 0
        res = None
        while res is None or not res.terminated:
            p = 2.0e5 if env.state.vy < 1.0 else 1.9e5
            res = env.step(ControlInput(p, 0.0))
            steps += 1
        assert res.termination_cause == "timeout"
        assert steps == 400

    def test_guided_and_vanilla_share_physics(self):
        a, b = TakeoffEnv(guided=True), TakeoffEnv(guided=False)
        a.reset(), b.reset()
        rng = np.random.default_rng(4)
        for _ in range(100):
            u = ControlInput(rng.uniform(2.6e5, 3.11e5), rng.uniform(0, 0.5))
            a.set_proposal(rng.random(2), rng.random(2))
            ra, rb = a.step(u), b.step(u)
            assert ra.state == rb.state and ra.reward == rb.reward
            assert np.array_equal(ra.observation[:3], rb.observation)
            if ra.terminated:
                break

    def test_config_validation(self):
        with pytest.raises(ContractViolation):
            EnvConfig(dt=0.3)
        with pytest.raises(ContractViolation):
            EnvConfig(k=0.0)
        assert CFG.max_steps == 400


def test_log_csv(tmp_path):
    env = TakeoffEnv(record=True)
    env.reset()
    for _ in range(5):
        env.step(ControlInput(3.0e5, 0.1))
    path = tmp_path / "log.csv"
    write_log_csv(env.log, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x", "y", "v_x", "v_y", "P", "theta", "reward", "R_y", "R_Vx", "R_P", "energy_Wh", "cause"]
    assert len(rows) == 6
    assert float(rows[-1][2]) == env.state.y
