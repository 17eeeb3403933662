"""Single-track vehicle simulation over road sections.

A nonlinear bicycle model with saturating lateral tyre forces follows each
section behind a pure-pursuit driver. Integration runs at 1 ms internally and
is decimated to 100 Hz output. Sensor noise is drawn per run from the run's
own seed after integration, so results are byte-identical no matter how runs
are batched.

Conventions: body x forward, y left; positive curvature and yaw rate mean a
left turn; bank angles lean into the turn. The accelerometer channels are
specific force in the chassis frame, which on a banked road with a rolled
chassis differs from the in-plane acceleration the observer wants back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .road import RoadSection, build_scenario, scenario_spec

G = 9.81
OUTPUT_RATE_HZ = 100.0
INTERNAL_DT_S = 1e-3
DECIMATION = 10

MU_GRID = tuple(round(0.20 + 0.05 * i, 2) for i in range(11))
EXTREME_MU_GRID = tuple(round(0.20 + 0.10 * i, 2) for i in range(9))

ACCEL_NOISE_STD = 0.05          # m/s^2
GYRO_NOISE_STD = 0.002          # rad/s
GYRO_BIAS_WALK_STD = 1e-4       # rad/s per sqrt(s)
ENCODER_NOISE_STD = 0.03        # m/s equivalent at the contact patch


@dataclass(frozen=True)
class VehicleParams:
    """Geometry and inertia of the simulated vehicle (mid-size SUV)."""

    mass_kg: float = 2100.0
    yaw_inertia: float = 3800.0
    dist_front_m: float = 1.40    # CoG to front axle
    dist_rear_m: float = 1.55     # CoG to rear axle
    track_m: float = 1.66
    wheel_radius_m: float = 0.35
    cog_height_m: float = 0.65
    roll_gain_rad_per_g: float = 0.05

    def __post_init__(self):
        for name in ("mass_kg", "yaw_inertia", "dist_front_m", "dist_rear_m",
                     "track_m", "wheel_radius_m", "cog_height_m"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.wheel_base_m <= 0.5 or self.track_m <= 0.5:
            raise ValueError("wheel base and track must exceed 0.5 m")

    @property
    def wheel_base_m(self) -> float:
        return self.dist_front_m + self.dist_rear_m


@dataclass(frozen=True)
class TyreParams:
    """Saturating lateral tyre curve F = mu_eff * Fz * sin(C * arctan(B * a)).

    The small-slip cornering stiffness is mu_eff * Fz * B * C, so grip level
    scales both the saturation and the initial slope.
    """

    shape_b: float = 10.0
    shape_c: float = 1.5
    wear_factor: float = 1.0

    def __post_init__(self):
        if self.shape_b <= 0 or not 1.0 <= self.shape_c <= 2.0:
            raise ValueError("tyre shape out of range")
        if not 0.5 <= self.wear_factor <= 1.0:
            raise ValueError("wear factor out of range")

    @property
    def nominal_cornering_stiffness(self) -> float:
        """Stiffness in N/rad at a 5 kN load on a nominal mu = 1 surface."""
        return self.shape_b * self.shape_c * 5000.0


def lateral_tyre_force(slip_angle, normal_load, mu_eff, shape_b=10.0, shape_c=1.5):
    """Lateral force [N]; odd in slip angle, saturating at mu_eff * load."""
    load = np.asarray(normal_load, dtype=float)
    if np.any(load < 0):
        raise ValueError("normal load must be non-negative")
    if np.any(np.asarray(mu_eff) <= 0):
        raise ValueError("effective friction must be positive")
    return mu_eff * load * np.sin(shape_c * np.arctan(shape_b * np.asarray(slip_angle)))


@dataclass(frozen=True)
class DriverParams:
    """Path-tracking steering plus a curve-speed planner.

    Steering is curvature feedforward plus heading and cross-track feedback;
    the heading term countersteers when yaw runs ahead of the road, which
    keeps the car recoverable near the grip limit. The planner caps the
    tyre's lateral demand at min(lat_budget_frac * mu_eff * g,
    comfort_lat_cap), credits banking for the rest, and brakes ahead of
    curves along a backward-propagated speed profile. Extreme profiles raise
    the caps to overdrive the geometry.
    """

    preview_time_s: float = 0.25
    heading_gain: float = 1.2
    cross_gain: float = 0.8
    char_speed_mps: float = 4.0
    speed_gain: float = 0.7
    accel_limit: float = 1.8
    brake_frac: float = 0.5
    brake_cap: float = 2.5
    lat_budget_frac: float = 0.70
    comfort_lat_cap: float = 3.0
    steer_limit_rad: float = 0.62
    steer_tau_s: float = 0.08
    coast: bool = False


NORMAL_DRIVER = DriverParams()
EXTREME_DRIVER = DriverParams(
    speed_gain=1.0, accel_limit=2.5, brake_frac=0.7, brake_cap=6.0,
    lat_budget_frac=0.95, comfort_lat_cap=12.0,
)


@dataclass(frozen=True)
class FrictionMap:
    """Base friction along the section: right-open zones [edge, next_edge)."""

    edges_s: tuple[float, ...]     # interior zone boundaries, ascending
    values: tuple[float, ...]      # one per zone, len(edges) + 1

    def __post_init__(self):
        if len(self.values) != len(self.edges_s) + 1:
            raise ValueError("need one value per zone")
        if any(v <= 0 for v in self.values):
            raise ValueError("friction must be positive")
        if list(self.edges_s) != sorted(self.edges_s):
            raise ValueError("zone edges must ascend")

    def mu_at(self, s):
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(np.asarray(self.edges_s), s, side="right")
        return np.asarray(self.values, dtype=float)[idx]

    def minimum(self) -> float:
        return min(self.values)


def _on_grid(mu: float) -> bool:
    return abs(mu / 0.05 - round(mu / 0.05)) < 1e-9


@dataclass(frozen=True)
class RunConfig:
    """One simulated traversal: surface, tyre wear, driver intent, noise seed."""

    run_id: str
    scenario: str
    mu_base: float
    wear_factor: float
    target_speed_kph: float
    seed: int
    mu_secondary: float | None = None
    driver: DriverParams = NORMAL_DRIVER

    def __post_init__(self):
        if not (0.05 <= self.mu_base <= 1.2 and _on_grid(self.mu_base)):
            raise ValueError(f"mu_base {self.mu_base} not on the 0.05 grid")
        if self.mu_secondary is not None and not (
                0.05 <= self.mu_secondary <= 1.2 and _on_grid(self.mu_secondary)):
            raise ValueError(f"mu_secondary {self.mu_secondary} not on the 0.05 grid")
        if not 0.8 <= self.wear_factor <= 1.0:
            raise ValueError("wear factor outside [0.8, 1.0]")
        if self.target_speed_kph <= 0:
            raise ValueError("target speed must be positive")
        if not 0 <= self.seed < 2**63:
            raise ValueError("seed out of range")

    def friction_map(self, section: RoadSection) -> FrictionMap:
        splits = section.friction_zone_splits
        if not splits:
            return FrictionMap((), (self.mu_base,))
        second = self.mu_secondary if self.mu_secondary is not None else self.mu_base
        values = [self.mu_base] + [second] * len(splits)
        return FrictionMap(tuple(f * section.length_m for f in splits), tuple(values))


@dataclass
class SensorLog:
    """Noisy on-board measurements at 100 Hz, truncated to the section."""

    run_id: str
    scenario: str
    dt_s: float
    accel_x: np.ndarray          # chassis-frame specific force [m/s^2]
    accel_y: np.ndarray
    yaw_rate: np.ndarray         # chassis z gyro [rad/s]
    wheel_speeds: np.ndarray     # (4, n) FL FR RL RR [rad/s]
    steer: np.ndarray            # road-wheel angle [rad]
    control_loss: bool = False

    def __post_init__(self):
        n = len(self.accel_x)
        if any(len(a) != n for a in (self.accel_y, self.yaw_rate, self.steer)):
            raise ValueError("channel length mismatch")
        if self.wheel_speeds.shape != (4, n):
            raise ValueError("wheel speed array must be (4, n)")
        for arr in (self.accel_x, self.accel_y, self.yaw_rate, self.steer, self.wheel_speeds):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite sensor sample")

    def __len__(self) -> int:
        return len(self.accel_x)


@dataclass
class GroundTruth:
    """Noise-free states aligned sample-for-sample with the log."""

    vx: np.ndarray
    vy: np.ndarray
    sideslip: np.ndarray         # arctan(vy / vx) [rad]
    yaw_rate: np.ndarray
    mu_label: float              # wear * minimum base friction encountered
    target_speed_mps: float


DEFAULT_TYRE = TyreParams()


def tyre_for(cfg: RunConfig, base: TyreParams = DEFAULT_TYRE) -> TyreParams:
    return replace(base, wear_factor=cfg.wear_factor)


def sample_run_configs(scenario: str, n_runs: int, seed: int,
                       mu_grid=MU_GRID, driver: DriverParams = NORMAL_DRIVER,
                       id_prefix: str | None = None) -> list[RunConfig]:
    """Equal runs per grid level; wear ~ U[0.8, 1], speed ~ triangular about rated.

    Each run also gets its own steering style, drawn as multiplicative spreads
    around the base driver. Without that spread every run steers identically
    and the input channels become redundant copies of each other.

    n_runs must divide evenly over the grid. Draw order is fixed, so one seed
    always yields the same list.
    """
    grid = tuple(mu_grid)
    if n_runs <= 0 or n_runs % len(grid) != 0:
        raise ValueError(f"n_runs must be a positive multiple of {len(grid)}")
    spec = scenario_spec(scenario)
    rated = spec.rated_speed_kph
    rng = np.random.default_rng(seed)
    per_level = n_runs // len(grid)
    prefix = id_prefix if id_prefix is not None else scenario
    configs = []
    idx = 0
    for mu in grid:
        for _ in range(per_level):
            wear = float(rng.uniform(0.8, 1.0))
            speed = float(rng.triangular(0.8 * rated, rated, 1.2 * rated))
            run_seed = int(rng.integers(0, 2**63))
            mu_secondary = None
            if spec.friction_zone_splits:
                higher = [g for g in grid if g > mu + 1e-9]
                mu_secondary = float(rng.choice(higher)) if higher else mu
            style = replace(
                driver,
                lat_budget_frac=min(0.97, driver.lat_budget_frac
                                    * float(rng.uniform(0.79, 1.21))),
                heading_gain=driver.heading_gain * float(rng.uniform(0.85, 1.25)),
                cross_gain=driver.cross_gain * float(rng.uniform(0.75, 1.25)),
                preview_time_s=driver.preview_time_s * float(rng.uniform(0.8, 1.2)),
            )
            configs.append(RunConfig(
                run_id=f"{prefix}-{idx:05d}", scenario=scenario, mu_base=mu,
                wear_factor=wear, target_speed_kph=speed, seed=run_seed,
                mu_secondary=mu_secondary, driver=style))
            idx += 1
    return configs


# --- simulation core --------------------------------------------------------

_LEAD_IN_M = 60.0
_TAIL_M = 20.0
_VMAX_MPS = 70.0


def _speed_profile(v_limit: np.ndarray, brake: np.ndarray, ds: float) -> np.ndarray:
    """Backward pass: highest speed at each sample that still allows slowing
    to every downstream limit. v_limit and brake are (n, S); brake may vary
    along the section because cornering consumes part of the friction circle."""
    v_allow = v_limit.copy()
    for i in range(v_limit.shape[1] - 2, -1, -1):
        reachable = np.sqrt(v_allow[:, i + 1] ** 2 + 2.0 * ds * brake[:, i])
        np.minimum(v_allow[:, i], reachable, out=v_allow[:, i])
    return v_allow


def _wrap_angle(a: np.ndarray) -> np.ndarray:
    return np.arctan2(np.sin(a), np.cos(a))


def _simulate_chunk(section: RoadSection, vp: VehicleParams, tyres, cfgs):
    n = len(cfgs)
    ds = section.spacing_m
    length = section.length_m

    s_grid = np.arange(-_LEAD_IN_M, length + _TAIL_M + ds, ds)
    gx = section.interp(s_grid, "x")
    gy = section.interp(s_grid, "y")
    gh = section.interp(s_grid, "heading")
    gk = section.interp(s_grid, "kappa")
    gbank = section.interp(s_grid, "signed_bank")
    n_grid = len(s_grid)

    target = np.array([cfg.target_speed_kph / 3.6 for cfg in cfgs])
    wear = np.array([cfg.wear_factor for cfg in cfgs])
    shape_b = np.array([t.shape_b for t in tyres])
    shape_c = np.array([t.shape_c for t in tyres])
    # Every run carries its own driver style, so lift the fields into arrays.
    # Coast is control flow, not a gain, and must agree across the chunk.
    drivers = [cfg.driver for cfg in cfgs]
    coast = drivers[0].coast
    if any(d.coast != coast for d in drivers):
        raise ValueError("coasting and driven runs cannot share a batch")

    def _drv(field: str) -> np.ndarray:
        return np.array([getattr(d, field) for d in drivers])

    lat_budget = _drv("lat_budget_frac")
    comfort_cap = _drv("comfort_lat_cap")
    brake_frac = _drv("brake_frac")
    brake_cap = _drv("brake_cap")
    preview = _drv("preview_time_s")
    heading_gain = _drv("heading_gain")
    cross_gain = _drv("cross_gain")
    char_speed = _drv("char_speed_mps")
    steer_limit = _drv("steer_limit_rad")
    steer_tau = _drv("steer_tau_s")
    speed_gain = _drv("speed_gain")
    accel_limit = _drv("accel_limit")

    # per-run friction along the grid (split surfaces change mu with s)
    maps = [cfg.friction_map(section) for cfg in cfgs]
    mu_grid_runs = np.stack([m.mu_at(np.clip(s_grid, 0.0, length)) for m in maps]) * wear[:, None]

    # Curve speeds budget the tyre demand, not total lateral acceleration:
    # banking leans the car into the turn, so gravity covers g*sin(bank) of
    # the centripetal need and only the remainder loads the tyres.
    tyre_budget = np.minimum(lat_budget[:, None] * mu_grid_runs * G, comfort_cap[:, None])
    bank_assist = G * np.abs(np.sin(gbank))[None, :]
    with np.errstate(divide="ignore"):
        v_curve = np.sqrt((tyre_budget + bank_assist) / np.maximum(np.abs(gk)[None, :], 1e-9))
    v_limit = np.minimum(v_curve, _VMAX_MPS)
    brake = np.minimum(brake_frac * np.min(mu_grid_runs, axis=1) * G, brake_cap)
    # The plan must honour the same friction circle the controller enforces:
    # where the limit speed already loads the tyres laterally, little decel
    # is left, so braking has to happen before the spiral, not inside it.
    lat_plan = np.clip(v_limit**2 * np.abs(gk)[None, :] - bank_assist, 0.0, None)
    circle = np.clip(1.0 - (lat_plan / (0.97 * np.maximum(mu_grid_runs, 1e-9) * G)) ** 2, 0.0, None)
    v_allow = _speed_profile(v_limit, brake[:, None] * np.sqrt(circle), ds)

    m = vp.mass_kg
    izz = vp.yaw_inertia
    a_f = vp.dist_front_m
    b_r = vp.dist_rear_m
    fzf = m * G * b_r / vp.wheel_base_m
    fzr = m * G * a_f / vp.wheel_base_m
    c_rr = 0.012
    k_aero = 0.38

    # states; entry speed respects the planned profile, as a driver slows for
    # a known curve before reaching it, so the low-mu brake floor is not asked
    # to shed the whole surplus inside the lead-in
    vx = np.minimum(target, v_allow[:, 0])
    vy = np.zeros(n)
    r = np.zeros(n)
    psi = np.full(n, gh[0])
    x = np.full(n, gx[0])
    y = np.full(n, gy[0])
    steer = np.zeros(n)
    s_prog = np.full(n, -_LEAD_IN_M)
    control_loss = np.zeros(n, dtype=bool)
    finished = np.zeros(n, dtype=bool)

    # Per-run step budget so a run's trace never depends on its batch mates.
    total_len = length + _LEAD_IN_M + _TAIL_M
    steps_cap = (40.0 + 4.0 * total_len / np.maximum(3.0, 0.6 * target)) / INTERNAL_DT_S
    steps_cap = steps_cap.astype(np.int64)
    max_steps = int(steps_cap.max())

    rec: dict[str, list[np.ndarray]] = {k: [] for k in (
        "s", "vx", "vy", "r", "ax", "fy_road", "bank", "steer", "wfl", "wfr", "wrl", "wrr")}
    # Index of the last record taken while a run was still active; later
    # records are frozen padding and must not enter that run's log.
    last_rec = np.full(n, -1, dtype=np.int64)

    dt = INTERNAL_DT_S
    half_track = vp.track_m / 2.0
    eps_v = 0.5

    run_rows = np.arange(n)
    for step in range(max_steps):
        idx = np.clip(((s_prog + _LEAD_IN_M) / ds).astype(np.int64), 0, n_grid - 1)
        mu_here = mu_grid_runs[run_rows, idx]
        bank_here = gbank[idx]

        # driver steering: feedforward on previewed curvature, feedback on
        # heading and cross-track error
        tangent_x = np.cos(gh[idx])
        tangent_y = np.sin(gh[idx])
        e_lat = -(x - gx[idx]) * tangent_y + (y - gy[idx]) * tangent_x
        idx_pre = np.clip(((s_prog + preview * vx + _LEAD_IN_M) / ds).astype(np.int64),
                          0, n_grid - 1)
        h_err = _wrap_angle(gh[idx] - psi)
        steer_cmd = (np.arctan(vp.wheel_base_m * gk[idx_pre])
                     + heading_gain * h_err
                     - np.arctan(cross_gain * e_lat / (char_speed + vx)))
        np.clip(steer_cmd, -steer_limit, steer_limit, out=steer_cmd)
        steer += (dt / steer_tau) * (steer_cmd - steer)

        # slip angles and lateral forces
        vx_safe = np.maximum(vx, eps_v)
        alpha_f = steer - np.arctan2(vy + a_f * r, vx_safe)
        alpha_r = -np.arctan2(vy - b_r * r, vx_safe)
        fyf = mu_here * fzf * np.sin(shape_c * np.arctan(shape_b * alpha_f))
        fyr = mu_here * fzr * np.sin(shape_c * np.arctan(shape_b * alpha_r))

        cos_steer = np.cos(steer)
        fy_road = (fyf * cos_steer + fyr) / m   # tyre-induced lateral specific force

        # longitudinal command tracking the planned speed profile
        f_res = c_rr * m * G + k_aero * vx * vx
        if coast:
            f_drive = np.zeros(n)
        else:
            # proportional tracking lags a falling reference by roughly one
            # gain time constant, so read the plan that far ahead as well
            idx_brk = np.clip(((s_prog + vx / speed_gain + _LEAD_IN_M) / ds).astype(np.int64),
                              0, n_grid - 1)
            v_des = np.minimum(target, np.minimum(v_allow[run_rows, idx],
                                                  v_allow[run_rows, idx_brk]))
            a_cmd = np.clip(speed_gain * (v_des - vx), -brake, accel_limit)
            ax_room = np.sqrt(np.maximum((0.97 * mu_here * G) ** 2 - fy_road**2, 0.04))
            a_cmd = np.clip(a_cmd, -ax_room, ax_room)
            f_drive = m * a_cmd + f_res

        ax_plane = (f_drive - fyf * np.sin(steer) - f_res) / m
        vy_dot = fy_road + G * np.sin(bank_here) - r * vx
        r_dot = (a_f * fyf * cos_steer - b_r * fyr) / izz

        if step % DECIMATION == 0:
            last_rec[~finished] = len(rec["s"])
            rec["s"].append(s_prog.copy())
            rec["vx"].append(vx.copy())
            rec["vy"].append(vy.copy())
            rec["r"].append(r.copy())
            rec["ax"].append(ax_plane.copy())
            rec["fy_road"].append(fy_road.copy())
            rec["bank"].append(bank_here.copy())
            rec["steer"].append(steer.copy())
            rec["wfl"].append(((vx - r * half_track) * cos_steer + (vy + a_f * r) * np.sin(steer)) / vp.wheel_radius_m)
            rec["wfr"].append(((vx + r * half_track) * cos_steer + (vy + a_f * r) * np.sin(steer)) / vp.wheel_radius_m)
            rec["wrl"].append((vx - r * half_track) / vp.wheel_radius_m)
            rec["wrr"].append((vx + r * half_track) / vp.wheel_radius_m)

        active = ~finished
        adv = np.where(active, dt, 0.0)
        vx = vx + adv * (ax_plane + r * vy)
        np.maximum(vx, 0.1, out=vx)
        vy = vy + adv * vy_dot
        r = r + adv * r_dot
        psi = psi + adv * r
        wx = vx * np.cos(psi) - vy * np.sin(psi)
        wy = vx * np.sin(psi) + vy * np.cos(psi)
        x = x + adv * wx
        y = y + adv * wy

        s_prog = s_prog + adv * (wx * tangent_x + wy * tangent_y)

        control_loss |= (np.abs(e_lat) > 2.0) & active & (s_prog > -5.0)

        finished |= s_prog > length + 3.0
        # Runs that spun out stop early; runs that stall hit their step budget.
        finished |= control_loss & (np.abs(e_lat) > 8.0)
        timed_out = (step + 1 >= steps_cap) & ~finished
        control_loss |= timed_out
        finished |= timed_out
        if finished.all():
            break

    stacked = {k: np.stack(v, axis=0) for k, v in rec.items()}
    return stacked, control_loss, last_rec


def _assemble_run(section, vp, cfg, stacked, col, lost, last_rec):
    s_col = stacked["s"][:, col]
    in_section = (s_col >= 0.0) & (s_col < section.length_m)
    in_section &= np.arange(len(s_col)) <= last_rec
    if not np.any(in_section):
        # Spun out or stalled before reaching the section: empty flagged log.
        sl = slice(0, 0)
        lost = True
    else:
        i0 = int(np.argmax(in_section))
        i1 = int(len(in_section) - np.argmax(in_section[::-1]))
        sl = slice(i0, i1)

    vx = stacked["vx"][sl, col]
    vy = stacked["vy"][sl, col]
    yaw = stacked["r"][sl, col]
    ax_plane = stacked["ax"][sl, col]
    fy_road = stacked["fy_road"][sl, col]
    bank = stacked["bank"][sl, col]
    steer = stacked["steer"][sl, col]
    wheels = np.stack([stacked[k][sl, col] for k in ("wfl", "wfr", "wrl", "wrr")])
    n_s = len(vx)

    # chassis roll proportional to lateral specific force, leaning outward
    roll = -vp.roll_gain_rad_per_g * fy_road / G
    ay_meas = fy_road * np.cos(roll) - G * np.cos(bank) * np.sin(roll)
    gyro_clean = yaw * np.cos(bank + roll)

    rng = np.random.default_rng(cfg.seed)
    dt_out = 1.0 / OUTPUT_RATE_HZ
    accel_x = ax_plane + rng.normal(0.0, ACCEL_NOISE_STD, n_s)
    accel_y = ay_meas + rng.normal(0.0, ACCEL_NOISE_STD, n_s)
    walk = rng.normal(0.0, GYRO_BIAS_WALK_STD * math.sqrt(dt_out), n_s)
    if n_s:
        walk[0] = 0.0   # bias starts at zero and drifts from there
    bias = np.cumsum(walk)
    yaw_meas = gyro_clean + bias + rng.normal(0.0, GYRO_NOISE_STD, n_s)
    wheel_meas = wheels + rng.normal(
        0.0, ENCODER_NOISE_STD / vp.wheel_radius_m, (4, n_s))

    log = SensorLog(
        run_id=cfg.run_id, scenario=cfg.scenario, dt_s=dt_out,
        accel_x=accel_x, accel_y=accel_y, yaw_rate=yaw_meas,
        wheel_speeds=wheel_meas, steer=steer.copy(), control_loss=bool(lost))
    truth = GroundTruth(
        vx=vx.copy(), vy=vy.copy(), sideslip=np.arctan2(vy, np.maximum(vx, 0.1)),
        yaw_rate=yaw.copy(),
        mu_label=cfg.wear_factor * cfg.friction_map(section).minimum(),
        target_speed_mps=cfg.target_speed_kph / 3.6)
    return log, truth


def simulate_batch(section: RoadSection, vp: VehicleParams, cfgs,
                   tyre_base: TyreParams = DEFAULT_TYRE, chunk_size: int = 256):
    """Simulate many runs over one section; returns [(SensorLog, GroundTruth)].

    Runs are integrated in lockstep chunks for speed; per-run outputs do not
    depend on the chunking because noise comes from each run's own generator.
    """
    results = []
    for lo in range(0, len(cfgs), chunk_size):
        part = list(cfgs[lo:lo + chunk_size])
        tyres = [tyre_for(cfg, tyre_base) for cfg in part]
        for cfg in part:
            if not 0.8 * section.rated_speed_kph - 1e-6 <= cfg.target_speed_kph <= 1.2 * section.rated_speed_kph + 1e-6:
                raise ValueError(
                    f"target speed {cfg.target_speed_kph} outside 20% of rated "
                    f"{section.rated_speed_kph}")
        stacked, lost, last_rec = _simulate_chunk(section, vp, tyres, part)
        for col, cfg in enumerate(part):
            results.append(_assemble_run(
                section, vp, cfg, stacked, col, lost[col], last_rec[col]))
    return results


def simulate_run(section: RoadSection, vp: VehicleParams, tp: TyreParams,
                 cfg: RunConfig):
    """Single traversal; see simulate_batch."""
    if abs(tp.wear_factor - cfg.wear_factor) > 1e-12:
        raise ValueError("tyre wear does not match the run config")
    return simulate_batch(section, vp, [cfg], tyre_base=tp, chunk_size=1)[0]


def section_for(scenario: str) -> RoadSection:
    return build_scenario(scenario_spec(scenario))
