"""Kinematics-only vehicle state estimation from on-board sensors.

Pipeline per run: project wheel encoders to a longitudinal speed, two-way
filter the slow channels, undo the bank/roll geometry on the lateral
accelerometer and gyro, then integrate a stabilized kinematic observer for
(V_x, V_y). Sideslip, sideslip rate, and yaw-rate excess derive from those.
Everything is offline (whole log available), which is what makes zero-phase
filtering legitimate.

The observer gains blend encoder feedback into the integration: longitudinal
feedback strengthens with yaw activity, lateral zeroing fades with it, so
straight driving pins the lateral state near zero without fighting real
cornering sideslip.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .filters import FilterSpec, two_way_filter, zero_phase_smooth
from .road import RoadSection
from .vehsim import G, SensorLog, VehicleParams


@dataclass(frozen=True)
class ObserverParams:
    """Tuned observer constants.

    alpha0/alpha1 drive V_x toward the encoder speed (stronger when turning);
    alpha2 feeds encoder speed into the lateral channel; the lateral leak
    gate F = gamma * exp(-|omega_z| / omega_ref) zeroes V_y when driving
    straight and releases in curves. The sigma_* activation-shaping constants
    are carried for completeness but inert in this gate.
    """

    alpha0: float = 15.0
    alpha1: float = 14.0
    alpha2: float = 5.0
    ax_threshold: float = 1.0       # m/s^2; above this, distrust the encoders
    ax_trust_scale: float = 0.2
    gamma: float = 1.0              # 1/s
    omega_ref: float = 0.05         # rad/s
    divergence_factor: float = 3.0
    low_speed_floor: float = 1.0    # m/s
    roll_gain_rad_per_g: float = 0.05
    roll_smooth_tau_s: float = 0.5
    sigma_domega1: float = 4.5
    sigma_domega2: float = 1.0
    sigma_omegaz: float = 0.22
    sigma_domegaz: float = 0.22
    sigma_delta: float = 0.12
    sigma_ddelta: float = 0.08
    sigma_betadot: float = 0.05
    sigma_dbetadot: float = 0.3
    filter_spec: FilterSpec = field(default_factory=FilterSpec)

    def __post_init__(self):
        for name in ("alpha0", "alpha1", "alpha2", "ax_threshold", "gamma",
                     "omega_ref", "divergence_factor", "low_speed_floor"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


DEFAULT_OBSERVER = ObserverParams()


@dataclass
class RoadFrameInputs:
    """Filtered sensor channels corrected into the local road plane."""

    dt_s: float
    accel_x: np.ndarray       # in-plane longitudinal [m/s^2]
    accel_y: np.ndarray       # in-plane lateral, gravity component removed
    yaw_rate: np.ndarray      # road-plane yaw rate [rad/s]
    v_enc: np.ndarray         # encoder speed, filtered [m/s]
    steer: np.ndarray         # filtered road-wheel angle [rad]
    arclength: np.ndarray     # odometry-based position along the section [m]
    bank: np.ndarray          # signed bank under the vehicle [rad]
    roll: np.ndarray          # estimated chassis roll [rad]


@dataclass
class VehicleStateTrace:
    """Estimated 100 Hz state series aligned with the source log."""

    run_id: str
    scenario: str
    dt_s: float
    vx_hat: np.ndarray
    vy_hat: np.ndarray
    sideslip: np.ndarray          # rad
    sideslip_rate: np.ndarray     # rad/s
    yaw_excess: np.ndarray        # rad/s
    speed: np.ndarray             # encoder speed [m/s]
    steer: np.ndarray             # rad
    diverged: bool = False
    low_speed: bool = False
    control_loss: bool = False

    @property
    def flagged(self) -> bool:
        return self.diverged or self.low_speed or self.control_loss

    def __len__(self) -> int:
        return len(self.vx_hat)

    def export_csv(self, target) -> None:
        """Write the trace as CSV (time plus the estimated channels)."""
        import csv

        def _write(fh):
            w = csv.writer(fh)
            w.writerow(["t", "vx_hat", "vy_hat", "sideslip", "sideslip_rate",
                        "yaw_excess", "speed", "steer"])
            for i in range(len(self)):
                w.writerow([
                    repr(round(i * self.dt_s, 6)),
                    repr(float(self.vx_hat[i])), repr(float(self.vy_hat[i])),
                    repr(float(self.sideslip[i])), repr(float(self.sideslip_rate[i])),
                    repr(float(self.yaw_excess[i])), repr(float(self.speed[i])),
                    repr(float(self.steer[i])),
                ])

        if isinstance(target, (str, bytes)) or hasattr(target, "__fspath__"):
            with open(target, "w", newline="", encoding="utf-8") as fh:
                _write(fh)
        else:
            _write(target)


def encoder_speed(log: SensorLog, vp: VehicleParams,
                  spec: FilterSpec | None = None) -> np.ndarray:
    """Longitudinal CoG speed from the four wheel encoders, filtered.

    Each wheel's rolling speed is projected back through the steering angle
    and the yaw-rate-induced track-width split before averaging.
    """
    spec = spec or FilterSpec()
    half_track = vp.track_m / 2.0
    a_f = vp.dist_front_m
    rw = vp.wheel_radius_m
    omega = log.yaw_rate
    cos_d = np.cos(log.steer)
    sin_d = np.sin(log.steer)

    fl = (log.wheel_speeds[0] * rw - a_f * omega * sin_d) / cos_d + omega * half_track
    fr = (log.wheel_speeds[1] * rw - a_f * omega * sin_d) / cos_d - omega * half_track
    rl = log.wheel_speeds[2] * rw + omega * half_track
    rr = log.wheel_speeds[3] * rw - omega * half_track
    return two_way_filter((fl + fr + rl + rr) / 4.0, spec)


def road_frame_inputs(log: SensorLog, section: RoadSection, vp: VehicleParams,
                      params: ObserverParams = DEFAULT_OBSERVER) -> RoadFrameInputs:
    """Filter the slow channels and undo bank/roll on the lateral ones.

    The accelerometer reports specific force in the rolled chassis frame:
    A_y = f_y*cos(roll) - g*cos(bank)*sin(roll). Roll itself follows the
    lateral force through a calibrated gain, so f_y comes out of a fixed
    point rather than a direct inversion; the gyro sees the road-plane yaw
    rate scaled by cos(bank + roll).
    """
    spec = params.filter_spec
    ax_f = two_way_filter(log.accel_x, spec)
    ay_f = two_way_filter(log.accel_y, spec)
    steer_f = two_way_filter(log.steer, spec)
    v_enc = encoder_speed(log, vp, spec)

    # odometric position along the section locates the bank profile
    s_hat = np.concatenate([[0.0], np.cumsum(v_enc[:-1] * log.dt_s)])
    bank = section.interp(s_hat, "signed_bank")
    cos_bank = np.cos(bank)

    k_roll = params.roll_gain_rad_per_g
    roll = np.zeros_like(ay_f)
    for _ in range(4):
        fy = (ay_f + G * cos_bank * np.sin(roll)) / np.cos(roll)
        roll = -k_roll * fy / G
    roll = zero_phase_smooth(roll, params.roll_smooth_tau_s, 1.0 / log.dt_s)
    fy = (ay_f + G * cos_bank * np.sin(roll)) / np.cos(roll)

    ay_plane = fy + G * np.sin(bank)
    omega = log.yaw_rate / np.cos(bank + roll)
    return RoadFrameInputs(
        dt_s=log.dt_s, accel_x=ax_f, accel_y=ay_plane, yaw_rate=omega,
        v_enc=v_enc, steer=steer_f, arclength=s_hat, bank=bank, roll=roll)


def _observer_gains(ax, omega, p: ObserverParams):
    trust = np.where(np.abs(ax) > p.ax_threshold, p.ax_trust_scale, 1.0)
    k_long = (p.alpha0 + p.alpha1 * np.abs(omega)) * trust
    leak = p.gamma * np.exp(-np.abs(omega) / p.omega_ref)
    return k_long, leak


def integrate_observer(inputs: RoadFrameInputs,
                       params: ObserverParams = DEFAULT_OBSERVER):
    """Forward-Euler integration of the stabilized observer at the log rate.

    Returns raw (vx_hat, vy_hat); filtering happens in estimate_states.
    """
    out = integrate_observer_batch([inputs], params)
    return out[0]


def integrate_observer_batch(inputs_list, params: ObserverParams = DEFAULT_OBSERVER):
    """Integrate many runs in lockstep (padded to the longest log).

    Forward Euler is causal, so padding one run with zeros cannot influence
    its own in-range samples; results equal the one-at-a-time loop.
    """
    if not inputs_list:
        return []
    lens = [len(inp.accel_x) for inp in inputs_list]
    t_max = max(lens)
    n = len(inputs_list)

    def padded(attr):
        arr = np.zeros((n, t_max))
        for i, inp in enumerate(inputs_list):
            arr[i, :lens[i]] = getattr(inp, attr)
        return arr

    ax = padded("accel_x")
    ay = padded("accel_y")
    omega = padded("yaw_rate")
    venc = padded("v_enc")
    dt = inputs_list[0].dt_s
    if any(inp.dt_s != dt for inp in inputs_list):
        raise ValueError("mixed sample rates in one batch")

    k_long, leak = _observer_gains(ax, omega, params)
    a2 = params.alpha2

    vx = venc[:, 0].copy()
    vy = np.zeros(n)
    vx_out = np.empty((n, t_max))
    vy_out = np.empty((n, t_max))
    for t in range(t_max):
        vx_out[:, t] = vx
        vy_out[:, t] = vy
        om = omega[:, t]
        dvx = -k_long[:, t] * vx + om * vy + ax[:, t] + k_long[:, t] * venc[:, t]
        dvy = -(a2 + 1.0) * om * vx - leak[:, t] * vy + ay[:, t] + a2 * om * venc[:, t]
        vx = vx + dt * dvx
        vy = vy + dt * dvy
    return [(vx_out[i, :lens[i]], vy_out[i, :lens[i]]) for i in range(n)]


def yaw_rate_excess(omega: np.ndarray, v_enc: np.ndarray, steer: np.ndarray,
                    vp: VehicleParams) -> np.ndarray:
    """Measured yaw rate minus the no-slip yaw rate implied by the steering.

    The intended rate comes from the Ackermann geometry of wheel base b and
    track L: omega_intended = 2 v tan(delta) / (2b + L tan(delta)).
    """
    tan_d = np.tan(steer)
    intended = 2.0 * v_enc * tan_d / (2.0 * vp.wheel_base_m + vp.track_m * tan_d)
    return omega - intended


def sideslip_and_rate(vx_hat, vy_hat, ay_plane, omega, v_enc,
                      spec: FilterSpec | None = None):
    """(sideslip, sideslip rate) from observer states and corrected inputs.

    beta = arctan(vy/vx) on the filtered observer states; the rate estimate
    (A_y - omega * v_enc) / v_enc bypasses the observer entirely.
    """
    spec = spec or FilterSpec()
    beta = two_way_filter(np.arctan2(vy_hat, vx_hat), spec)
    denom = np.maximum(v_enc, 0.5)
    beta_rate = two_way_filter((ay_plane - omega * v_enc) / denom, spec)
    return beta, beta_rate


def estimate_states(log: SensorLog, section: RoadSection, vp: VehicleParams,
                    params: ObserverParams = DEFAULT_OBSERVER) -> VehicleStateTrace:
    """Full estimation pipeline for one run."""
    return estimate_states_batch([log], section, vp, params)[0]


def estimate_states_batch(logs, section: RoadSection, vp: VehicleParams,
                          params: ObserverParams = DEFAULT_OBSERVER):
    """Estimation pipeline over many logs of the same section."""
    inputs = [road_frame_inputs(log, section, vp, params) for log in logs]
    states = integrate_observer_batch(inputs, params)
    spec = params.filter_spec
    traces = []
    for log, inp, (vx_raw, vy_raw) in zip(logs, inputs, states):
        vx_hat = two_way_filter(vx_raw, spec)
        vy_hat = two_way_filter(vy_raw, spec)
        beta, beta_rate = sideslip_and_rate(
            vx_hat, vy_hat, inp.accel_y, inp.yaw_rate, inp.v_enc, spec)
        excess = yaw_rate_excess(inp.yaw_rate, inp.v_enc, inp.steer, vp)
        v_mag = np.hypot(vx_raw, vy_raw)
        diverged = bool(np.any(v_mag > params.divergence_factor * inp.v_enc.max()))
        low_speed = bool(np.any(vx_hat <= params.low_speed_floor))
        traces.append(VehicleStateTrace(
            run_id=log.run_id, scenario=log.scenario, dt_s=log.dt_s,
            vx_hat=vx_hat, vy_hat=vy_hat, sideslip=beta, sideslip_rate=beta_rate,
            yaw_excess=excess, speed=inp.v_enc, steer=inp.steer,
            diverged=diverged, low_speed=low_speed, control_loss=log.control_loss))
    return traces
