"""Vectorized twin of the scalar physics, used only for optimizer population search.

Every function mirrors its scalar counterpart in :mod:`evtol_tdrl.vehicle`
element by element.  Results agree to round-off; anything that is stored or
reported is re-simulated with the scalar code.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ThrustSolverError
from .vehicle import (
    DEG,
    NEWTON_MAX_ITER,
    NEWTON_RTOL,
    TANDEM_SPAN_EFFICIENCY,
    VehicleConfig,
    _drag_table,
    effective_solidity,
)


def _ks_max(a, b, rho):
    m = np.maximum(a, b)
    return m + np.log(np.exp(rho * (a - m)) + np.exp(rho * (b - m))) / rho


def lift_coeff(alpha: np.ndarray, cfg: VehicleConfig) -> np.ndarray:
    a = np.minimum(np.abs(alpha), math.pi / 2)
    zero = a == 0.0
    a_safe = np.where(zero, 1.0, a)
    c1 = 1.1 + 0.018 * cfg.aspect_ratio
    sa, ca = math.sin(cfg.stall_angle), math.cos(cfg.stall_angle)
    a2 = (cfg.cl_stall - c1 * sa * ca) * sa / (ca * ca)
    post = c1 / 2.0 * np.sin(2.0 * a_safe) + a2 * np.cos(a_safe) ** 2 / np.sin(a_safe)
    linear = cfg.lift_slope * a_safe
    cl = -_ks_max(-linear, -post, cfg.ks_rho)
    return np.where(zero, 0.0, np.copysign(cl, alpha))


def drag_coeff(alpha: np.ndarray, cfg: VehicleConfig) -> np.ndarray:
    a = np.minimum(np.abs(alpha), math.pi / 2)
    xs, ys, ms, cd_max, b2 = _drag_table(cfg)
    xs_a, ys_a, ms_a = np.array(xs), np.array(ys), np.array(ms)
    i = np.clip(np.searchsorted(xs_a, a, side="left") - 1, 0, len(xs) - 2)
    h = xs_a[i + 1] - xs_a[i]
    s = (a - xs_a[i]) / h
    inner = (
        (1 + 2 * s) * (1 - s) ** 2 * ys_a[i]
        + s * (1 - s) ** 2 * h * ms_a[i]
        + s * s * (3 - 2 * s) * ys_a[i + 1]
        + s * s * (s - 1) * h * ms_a[i + 1]
    )
    table = np.where(
        a <= xs[0], ys[0] + ms[0] * (a - xs[0]), np.where(a >= xs[-1], ys[-1] + ms[-1] * (a - xs[-1]), inner)
    )
    high = cd_max * np.sin(a) + b2 * np.cos(a)
    z = cfg.ks_rho * (a - xs[-1])
    w = 0.5 * (1.0 + np.tanh(0.5 * z))
    post = (1.0 - w) * table + w * high
    return _ks_max(cfg.cd_prestall, post, cfg.ks_rho)


def thrust_from_power(p_disk: np.ndarray, v_perp: np.ndarray, cfg: VehicleConfig, t0=None) -> np.ndarray:
    """Newton inversion; ``t0`` (e.g. the previous step's thrust) replaces the default start."""
    c = 1.0 / (2.0 * cfg.air_density * cfg.disk_area)
    kappa = cfg.kappa
    t = np.full_like(p_disk, 1.2 * cfg.mass * cfg.gravity / cfg.n_props)
    if t0 is not None:
        t = np.where(t0 > 0, t0, t)
    active = p_disk > 0.0
    t = np.where(active, t, 0.0)
    vv = v_perp * v_perp / 4.0
    for _ in range(NEWTON_MAX_ITER):
        root = np.sqrt(vv + t * c)
        res = t * v_perp + kappa * t * (-v_perp / 2.0 + root) - p_disk
        active &= ~(np.abs(res) <= NEWTON_RTOL * p_disk)
        if not active.any():
            return t
        slope = v_perp + kappa * (-v_perp / 2.0 + root) + kappa * t * c / (2.0 * root)
        t_next = t - res / slope
        t = np.where(active, np.where(t_next > 0, t_next, 0.5 * t), t)
    raise ThrustSolverError("batched thrust Newton iteration did not converge", float("nan"), float("nan"))


def normal_force(thrust, vx, vy, st, ct, cfg: VehicleConfig) -> np.ndarray:
    u = vx * st + vy * ct
    w = vx * ct - vy * st
    s2 = 0.5 * cfg.air_density
    tau = thrust / cfg.disk_area
    sgn = np.where(u >= 0, 1.0, -1.0)
    term1 = s2 * u * w
    term2 = 0.5 * w * (sgn * math.sqrt(s2) * np.sqrt(s2 * u * u + tau) - s2 * u)
    denom = 2.0 * s2 * u * u + tau
    term3 = np.where(denom > 0, s2 * u * w * tau / (4.0 * np.where(denom > 0, denom, 1.0)), 0.0)
    sig = effective_solidity(cfg)
    beta = 35.0 * DEG * np.minimum(np.hypot(vx, vy) / 67.0, 1.0)
    n = 4.25 * sig * np.sin(beta + 8.0 * DEG) * cfg.disk_area * (term1 + term2 + term3) / (1.0 + 2.0 * sig)
    return np.where(w == 0.0, 0.0, n)


def step(x, y, vx, vy, power, theta, dt: float, cfg: VehicleConfig, t0=None):
    """Advance arrays of states one Euler step.

    Returns ``(x, y, vx, vy, ax, ay, alpha_efs, chordwise, thrust_per_prop)``.
    """
    st, ct = np.sin(theta), np.cos(theta)
    u = vx * st + vy * ct
    w = vx * ct - vy * st
    v_perp = np.maximum(u, 0.0)
    n = cfg.n_props
    tip = cfg.rotor_speed * cfg.prop_radius
    mu = np.abs(w) / tip
    p_prof = cfg.solidity * cfg.prop_cd0 / 8.0 * (1.0 + 4.6 * mu * mu) * cfg.air_density * cfg.disk_area * tip**3
    p_disk = np.maximum(cfg.eta * (power / n) - p_prof, 0.0)
    t_prop = thrust_from_power(p_disk, v_perp, cfg, t0)
    root = np.sqrt(v_perp * v_perp / 4.0 + t_prop / (2.0 * cfg.air_density * cfg.disk_area))
    v_i = -v_perp / 2.0 + (1.0 if cfg.momentum_consistent else 2.0) * root

    ue = u + cfg.k_w * v_i
    alpha_inf = np.arctan2(w, u)
    alpha_efs = np.arctan2(w, ue)
    v_efs = np.hypot(w, ue)
    rho = cfg.air_density
    q_efs = 0.5 * rho * v_efs * v_efs
    area = cfg.wing_area
    cl = lift_coeff(alpha_efs, cfg)
    cd = drag_coeff(alpha_efs, cfg)
    lift = cfg.n_wings * q_efs * area * cl
    d_ind = 2.0 * q_efs * (area * cl) ** 2 / (TANDEM_SPAN_EFFICIENCY * math.pi * cfg.span**2)
    drag_w = cfg.n_wings * q_efs * area * cd + d_ind
    drag_f = 0.5 * rho * (vx * vx + vy * vy) * cfg.fuselage_drag_area
    normal = n * normal_force(t_prop, vx, vy, st, ct, cfg)
    thrust = n * t_prop

    phi_inf = theta + alpha_inf
    phi_efs = theta + alpha_efs
    s_inf, c_inf = np.sin(phi_inf), np.cos(phi_inf)
    s_efs, c_efs = np.sin(phi_efs), np.cos(phi_efs)
    lift_y = -lift * s_efs if cfg.printed_lift_sign else lift * s_efs
    m = cfg.mass
    ax = (thrust * st - drag_f * s_inf - drag_w * s_efs - lift * c_efs - normal * ct) / m
    ay = (thrust * ct - drag_f * c_inf - drag_w * c_efs + lift_y + normal * st - m * cfg.gravity) / m
    return x + vx * dt, y + vy * dt, vx + ax * dt, vy + ay * dt, ax, ay, alpha_efs, u, t_prop
