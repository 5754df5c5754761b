"""Point-mass flight physics of a tandem tilt-wing eVTOL.

Angles: ``theta`` is the wing (and thrust-line) angle from vertical, so the
chord axis in the inertial frame is ``(sin theta, cos theta)``.  Angle of
attack is measured from the chord to the freestream, positive nose-up.

Everything here is scalar ``math`` on floats.  The environment and the
reference optimizer both call :func:`simulate_step`, which keeps their energy
accounting bit-identical.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import ContractViolation, ThrustSolverError

DEG = math.pi / 180.0

# Tangler--Ostowari drag points between stall and the post-stall model
DRAG_TABLE_DEG = (16.0, 20.0, 25.0, 27.5)
DRAG_TABLE_CD = (0.100, 0.175, 0.275, 0.363)

# tandem-wing span efficiency after the biplane interference correction
TANDEM_SPAN_EFFICIENCY = 0.68

POWER_MIN = 1.8e5
POWER_MAX = 3.11e5
THETA_MIN = 0.0
THETA_MAX = math.pi / 2

NEWTON_RTOL = 1e-10
NEWTON_MAX_ITER = 100


@dataclass(frozen=True)
class VehicleConfig:
    """Physical constants and flight-condition parameters.

    ``stall_lift=None`` means "continuous with the pre-stall slope", i.e.
    ``lift_slope * stall_angle``.
    """

    span: float = 6.0
    chord: float = 1.5
    thickness_ratio: float = 0.12
    n_wings: int = 2
    s_ref: float = 1.0
    props_per_wing: int = 4
    prop_radius: float = 0.75
    n_blades: int = 3
    blade_chord: float = 0.1
    rotor_speed: float = 181.0
    solidity: float = 0.13
    prop_cd0: float = 0.012
    kappa: float = 1.2
    fuselage_drag_area: float = 0.35
    mass: float = 725.0
    gravity: float = 9.80665
    air_density: float = 1.225
    eta: float = 0.9
    k_w: float = 1.0
    stall_angle: float = 16.0 * DEG
    stall_lift: float | None = None
    stall_drag: float = 0.100
    ks_rho: float = 50.0
    cd_prestall: float = 0.012
    momentum_consistent: bool = False
    printed_lift_sign: bool = False

    def __post_init__(self) -> None:
        positive = (
            "span chord thickness_ratio n_wings props_per_wing prop_radius n_blades "
            "blade_chord rotor_speed solidity prop_cd0 kappa fuselage_drag_area mass "
            "gravity air_density eta stall_angle stall_drag ks_rho cd_prestall"
        ).split()
        for name in positive:
            if not getattr(self, name) > 0:
                raise ContractViolation(f"VehicleConfig.{name} must be positive")
        if not 0.0 < self.s_ref <= 1.5:
            raise ContractViolation(f"s_ref must lie in (0, 1.5], got {self.s_ref}")
        if self.k_w < 0:
            raise ContractViolation("k_w must be non-negative")

    @property
    def aspect_ratio(self) -> float:
        return self.span / self.chord

    @property
    def disk_area(self) -> float:
        return math.pi * self.prop_radius**2

    @property
    def n_props(self) -> int:
        return self.n_wings * self.props_per_wing

    @property
    def wing_area(self) -> float:
        return self.s_ref * self.span * self.chord

    @property
    def lift_slope(self) -> float:
        return 2.0 * math.pi / (1.0 + 2.0 / self.aspect_ratio)

    @property
    def cl_stall(self) -> float:
        return self.lift_slope * self.stall_angle if self.stall_lift is None else self.stall_lift

    def replace(self, **changes) -> "VehicleConfig":
        return dataclasses.replace(self, **changes)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "VehicleConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ContractViolation(f"unknown VehicleConfig fields: {unknown}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "VehicleConfig":
        return cls.from_dict(json.loads(text))


class KinematicState(NamedTuple):
    x: float
    y: float
    vx: float
    vy: float
    t: float


class ControlInput(NamedTuple):
    power: float  # total electrical power, W
    theta: float  # wing angle from vertical, rad


class ForceBreakdown(NamedTuple):
    thrust: float
    lift: float
    drag_wings: float
    drag_fuse: float
    normal: float
    alpha_inf: float
    alpha_efs: float
    v_induced: float
    p_disk: float
    p_profile: float
    chordwise_speed: float
    power_clamped: bool


def check_control(u: ControlInput) -> None:
    if not POWER_MIN <= u.power <= POWER_MAX:
        raise ContractViolation(f"power {u.power} W outside [{POWER_MIN}, {POWER_MAX}]")
    if not THETA_MIN <= u.theta <= THETA_MAX:
        raise ContractViolation(f"theta {u.theta} rad outside [0, pi/2]")


# ----------------------------------------------------------------------------
# aerodynamics


@functools.lru_cache(maxsize=64)
def _drag_table(cfg: VehicleConfig):
    """Hermite data for the monotone table spline plus the high-angle drag constants."""
    xs = np.array(DRAG_TABLE_DEG) * DEG
    ys = np.array(DRAG_TABLE_CD)
    slopes = PchipInterpolator(xs, ys).derivative()(xs)
    cd_max = (1.0 + 0.065 * cfg.aspect_ratio) / (0.9 + cfg.thickness_ratio)
    # anchor the high-angle branch on the last table point so the two meet exactly
    a_end, cd_end = xs[-1], ys[-1]
    b2 = (cd_end - cd_max * math.sin(a_end)) / math.cos(a_end)
    return tuple(map(float, xs)), tuple(map(float, ys)), tuple(map(float, slopes)), cd_max, b2


def _table_cd(a: float, xs, ys, ms) -> float:
    """Monotone cubic through the table, extended linearly past both ends."""
    if a <= xs[0]:
        return ys[0] + ms[0] * (a - xs[0])
    if a >= xs[-1]:
        return ys[-1] + ms[-1] * (a - xs[-1])
    i = 0
    while a > xs[i + 1]:
        i += 1
    h = xs[i + 1] - xs[i]
    s = (a - xs[i]) / h
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    return h00 * ys[i] + h10 * h * ms[i] + h01 * ys[i + 1] + h11 * h * ms[i + 1]


def _ks_max(a: float, b: float, rho: float) -> float:
    m = a if a > b else b
    return m + math.log(math.exp(rho * (a - m)) + math.exp(rho * (b - m))) / rho


def _ks_min(a: float, b: float, rho: float) -> float:
    return -_ks_max(-a, -b, rho)


def _logistic(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def post_stall_lift(alpha: float, cfg: VehicleConfig) -> float:
    """Tangler--Ostowari lift for ``alpha`` in (0, pi/2]."""
    c1 = 1.1 + 0.018 * cfg.aspect_ratio
    a1 = c1 / 2.0
    sa, ca = math.sin(cfg.stall_angle), math.cos(cfg.stall_angle)
    a2 = (cfg.cl_stall - c1 * sa * ca) * sa / (ca * ca)
    s = math.sin(alpha)
    return a1 * math.sin(2.0 * alpha) + a2 * math.cos(alpha) ** 2 / s


def post_stall_drag(alpha: float, cfg: VehicleConfig) -> float:
    _, _, _, cd_max, b2 = _drag_table(cfg)
    return cd_max * math.sin(alpha) + b2 * math.cos(alpha)


def lift_coeff(alpha: float, cfg: VehicleConfig) -> float:
    """Lift coefficient: linear pre-stall, post-stall model above, KS smooth-min between."""
    a = abs(alpha)
    if a == 0.0:
        return 0.0
    a = min(a, math.pi / 2)
    linear = cfg.lift_slope * a
    post = post_stall_lift(a, cfg)
    cl = _ks_min(linear, post, cfg.ks_rho) if math.isfinite(post) else linear
    return math.copysign(cl, alpha)


def drag_coeff(alpha: float, cfg: VehicleConfig) -> float:
    """Profile drag coefficient (even in ``alpha``).

    Constant below stall, table spline from 16 to 27.5 deg, post-stall model
    above; the junctions are blended with KS aggregation (smooth max against
    the pre-stall floor) and a KS switching weight at 27.5 deg.
    """
    a = min(abs(alpha), math.pi / 2)
    xs, ys, ms, cd_max, b2 = _drag_table(cfg)
    table = _table_cd(a, xs, ys, ms)
    high = cd_max * math.sin(a) + b2 * math.cos(a)
    w = _logistic(cfg.ks_rho * (a - xs[-1]))
    post = (1.0 - w) * table + w * high
    return _ks_max(cfg.cd_prestall, post, cfg.ks_rho)


def induced_drag(lift_per_wing: float, q: float, cfg: VehicleConfig) -> float:
    """Induced drag of both tandem wings together."""
    if q <= 0:
        raise ContractViolation(f"dynamic pressure must be positive, got {q}")
    return 2.0 * lift_per_wing**2 / (TANDEM_SPAN_EFFICIENCY * math.pi * q * cfg.span**2)


# ----------------------------------------------------------------------------
# propulsion


def disk_power_for_thrust(thrust: float, v_perp: float, cfg: VehicleConfig) -> float:
    """Momentum-theory power at the disk for one propeller (forward map)."""
    root = math.sqrt(v_perp * v_perp / 4.0 + thrust / (2.0 * cfg.air_density * cfg.disk_area))
    return thrust * v_perp + cfg.kappa * thrust * (-v_perp / 2.0 + root)


def thrust_from_power(p_disk: float, v_perp: float, cfg: VehicleConfig) -> float:
    """Invert :func:`disk_power_for_thrust` by Newton--Raphson."""
    if p_disk < 0 or v_perp < 0:
        raise ContractViolation(f"need p_disk >= 0 and v_perp >= 0, got {p_disk}, {v_perp}")
    if p_disk == 0.0:
        return 0.0
    c = 1.0 / (2.0 * cfg.air_density * cfg.disk_area)
    kappa = cfg.kappa
    t = 1.2 * cfg.mass * cfg.gravity / cfg.n_props
    res = math.inf
    for _ in range(NEWTON_MAX_ITER):
        root = math.sqrt(v_perp * v_perp / 4.0 + t * c)
        res = t * v_perp + kappa * t * (-v_perp / 2.0 + root) - p_disk
        if abs(res) <= NEWTON_RTOL * p_disk:
            return t
        slope = v_perp + kappa * (-v_perp / 2.0 + root) + kappa * t * c / (2.0 * root)
        t_next = t - res / slope
        t = t_next if t_next > 0 else 0.5 * t
    raise ThrustSolverError("thrust Newton iteration did not converge", t, res)


def profile_power(v_par: float, cfg: VehicleConfig) -> float:
    """Blade profile power of one propeller."""
    tip_speed = cfg.rotor_speed * cfg.prop_radius
    mu = v_par / tip_speed
    cp = cfg.solidity * cfg.prop_cd0 / 8.0 * (1.0 + 4.6 * mu * mu)
    return cp * cfg.air_density * cfg.disk_area * tip_speed**3


def disk_power(p_electrical: float, p_profile: float, cfg: VehicleConfig) -> tuple[float, bool]:
    """Power reaching the disk of one propeller; floored at zero (flag set)."""
    p = cfg.eta * p_electrical - p_profile
    if p < 0:
        return 0.0, True
    return p, False


def blade_pitch(speed: float) -> float:
    """Blade pitch at 3/4 radius, 0 deg at rest rising linearly to 35 deg at 67 m/s."""
    return 35.0 * DEG * min(max(speed, 0.0) / 67.0, 1.0)


def effective_solidity(cfg: VehicleConfig) -> float:
    return 2.0 * cfg.n_blades * cfg.blade_chord / (3.0 * math.pi * cfg.prop_radius)


def normal_force(thrust: float, vx: float, vy: float, theta: float, cfg: VehicleConfig) -> float:
    """De Young in-plane force of one propeller, positive along (-cos theta, sin theta).

    ``q_perp`` is the dynamic pressure of the axial inflow ``u`` and the
    incidence is ``tan(alpha_in) = w / u``.  The product ``f * q_perp * tan``
    is expanded so that every term carries an explicit factor of ``u`` or
    ``sqrt(q_perp)``; the expression stays finite as ``u -> 0``.
    """
    if thrust < 0:
        raise ContractViolation(f"thrust must be non-negative, got {thrust}")
    st, ct = math.sin(theta), math.cos(theta)
    u = vx * st + vy * ct
    w = vx * ct - vy * st
    if w == 0.0:
        return 0.0
    s2 = 0.5 * cfg.air_density
    tau = thrust / cfg.disk_area
    sgn = 1.0 if u >= 0 else -1.0
    term1 = s2 * u * w
    term2 = 0.5 * w * (sgn * math.sqrt(s2) * math.sqrt(s2 * u * u + tau) - s2 * u)
    denom = 2.0 * s2 * u * u + tau
    term3 = s2 * u * w * tau / (4.0 * denom) if denom > 0 else 0.0
    fq_tan = term1 + term2 + term3
    sig = effective_solidity(cfg)
    speed = math.hypot(vx, vy)
    beta = blade_pitch(speed)
    return 4.25 * sig * math.sin(beta + 8.0 * DEG) * cfg.disk_area * fq_tan / (1.0 + 2.0 * sig)


def induced_velocity(thrust: float, v_perp: float, cfg: VehicleConfig) -> float:
    """Propeller induced velocity seen by the wing.

    By default the factor of 2 in front of the square root is kept as
    printed; ``momentum_consistent`` switches to the form that matches the
    power balance in :func:`disk_power_for_thrust`.
    """
    root = math.sqrt(v_perp * v_perp / 4.0 + thrust / (2.0 * cfg.air_density * cfg.disk_area))
    factor = 1.0 if cfg.momentum_consistent else 2.0
    return -v_perp / 2.0 + factor * root


def effective_freestream(
    vx: float, vy: float, theta: float, v_i: float, cfg: VehicleConfig
) -> tuple[float, float, float]:
    """Return ``(alpha_inf, alpha_efs, v_efs)`` with the prop wash added chordwise."""
    st, ct = math.sin(theta), math.cos(theta)
    u = vx * st + vy * ct
    w = vx * ct - vy * st
    ue = u + cfg.k_w * v_i
    return math.atan2(w, u), math.atan2(w, ue), math.hypot(w, ue)


# ----------------------------------------------------------------------------
# assembly and integration


def assemble_forces(state: KinematicState, u: ControlInput, cfg: VehicleConfig) -> ForceBreakdown:
    vx, vy, theta = state.vx, state.vy, u.theta
    st, ct = math.sin(theta), math.cos(theta)
    chordwise = vx * st + vy * ct
    normal_speed = vx * ct - vy * st
    v_perp = max(chordwise, 0.0)

    n = cfg.n_props
    p_prof = profile_power(abs(normal_speed), cfg)
    p_disk, clamped = disk_power(u.power / n, p_prof, cfg)
    t_prop = thrust_from_power(p_disk, v_perp, cfg)
    v_i = induced_velocity(t_prop, v_perp, cfg)

    alpha_inf, alpha_efs, v_efs = effective_freestream(vx, vy, theta, v_i, cfg)
    rho = cfg.air_density
    q_efs = 0.5 * rho * v_efs * v_efs
    area = cfg.wing_area
    cl = lift_coeff(alpha_efs, cfg)
    cd = drag_coeff(alpha_efs, cfg)
    lift_wing = q_efs * area * cl
    # induced drag written as q S^2 CL^2 so it is defined at q = 0
    d_induced = 2.0 * q_efs * (area * cl) ** 2 / (TANDEM_SPAN_EFFICIENCY * math.pi * cfg.span**2)
    drag_wings = cfg.n_wings * q_efs * area * cd + d_induced

    q_inf = 0.5 * rho * (vx * vx + vy * vy)
    drag_fuse = q_inf * cfg.fuselage_drag_area
    normal = n * normal_force(t_prop, vx, vy, theta, cfg)

    return ForceBreakdown(
        thrust=n * t_prop,
        lift=cfg.n_wings * lift_wing,
        drag_wings=drag_wings,
        drag_fuse=drag_fuse,
        normal=normal,
        alpha_inf=alpha_inf,
        alpha_efs=alpha_efs,
        v_induced=v_i,
        p_disk=p_disk,
        p_profile=p_prof,
        chordwise_speed=chordwise,
        power_clamped=clamped,
    )


def accelerations(f: ForceBreakdown, theta: float, cfg: VehicleConfig) -> tuple[float, float]:
    """Horizontal and vertical acceleration from the force breakdown."""
    st, ct = math.sin(theta), math.cos(theta)
    phi_inf = theta + f.alpha_inf
    phi_efs = theta + f.alpha_efs
    s_inf, c_inf = math.sin(phi_inf), math.cos(phi_inf)
    s_efs, c_efs = math.sin(phi_efs), math.cos(phi_efs)
    lift_y = -f.lift * s_efs if cfg.printed_lift_sign else f.lift * s_efs
    m = cfg.mass
    ax = (f.thrust * st - f.drag_fuse * s_inf - f.drag_wings * s_efs - f.lift * c_efs - f.normal * ct) / m
    ay = (
        f.thrust * ct - f.drag_fuse * c_inf - f.drag_wings * c_efs + lift_y + f.normal * st - m * cfg.gravity
    ) / m
    return ax, ay


def step_dynamics(
    state: KinematicState, forces: ForceBreakdown, theta: float, dt: float, cfg: VehicleConfig
) -> KinematicState:
    """One forward-Euler step; positions advance with the pre-update velocity."""
    if dt <= 0:
        raise ContractViolation(f"time step must be positive, got {dt}")
    ax, ay = accelerations(forces, theta, cfg)
    return KinematicState(
        x=state.x + state.vx * dt,
        y=state.y + state.vy * dt,
        vx=state.vx + ax * dt,
        vy=state.vy + ay * dt,
        t=state.t + dt,
    )


def simulate_step(
    state: KinematicState, u: ControlInput, dt: float, cfg: VehicleConfig
) -> tuple[KinematicState, ForceBreakdown]:
    forces = assemble_forces(state, u, cfg)
    return step_dynamics(state, forces, u.theta, dt, cfg), forces
