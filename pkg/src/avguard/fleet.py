"""Deterministic synthetic vehicle fleet.

Generates per-vehicle multi-sensor time series (GPS, IMU, radar, LiDAR
summary, control) under a scheduled driving context. Kinematics are a
smooth mean-reverting driver model; sensor channels are ground truth
plus zero-mean Gaussian noise whose scale depends on the weather.

Everything is a pure function of (config, seed): per-vehicle substreams
make the output independent of generation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import ConfigError, InputError
from .rng import substream

V_MAX = 40.0  # hard speed ceiling, m/s

# sensor/health channel groups, in declared record order
HEALTH_CHANNELS = ("gps", "imu", "radar", "lidar", "control")


class RoadClass(Enum):
    URBAN = "urban"
    HIGHWAY = "highway"


class Weather(Enum):
    CLEAR = "clear"
    RAIN = "rain"
    FOG = "fog"


# weather multipliers applied to gps and lidar noise sigmas
WEATHER_NOISE_SCALE = {Weather.CLEAR: 1.0, Weather.RAIN: 1.5, Weather.FOG: 2.0}

_TARGET_SPEED = {RoadClass.URBAN: 12.0, RoadClass.HIGHWAY: 27.0}
_LIDAR_RANGE_BASE = {RoadClass.URBAN: 25.0, RoadClass.HIGHWAY: 60.0}
_LIDAR_DENSITY_BASE = {RoadClass.URBAN: 40.0, RoadClass.HIGHWAY: 18.0}
_DENSITY_WEATHER = {Weather.CLEAR: 1.0, Weather.RAIN: 0.85, Weather.FOG: 0.6}
_OCCLUSION_BASE = {Weather.CLEAR: 0.02, Weather.RAIN: 0.08, Weather.FOG: 0.18}


@dataclass(frozen=True)
class DrivingContext:
    road_class: RoadClass
    weather: Weather
    start_s: float
    end_s: float

    def __post_init__(self):
        if not self.start_s < self.end_s:
            raise ConfigError(f"context window [{self.start_s}, {self.end_s}) is empty")

    @property
    def key(self) -> str:
        return f"{self.road_class.value}/{self.weather.value}"


def validate_schedule(schedule: list[DrivingContext], duration_s: float) -> None:
    """Windows must tile [0, duration) without gaps or overlap."""
    if not schedule:
        raise ConfigError("empty context schedule")
    ordered = sorted(schedule, key=lambda c: c.start_s)
    if ordered[0].start_s != 0.0:
        raise ConfigError("schedule must start at t=0")
    for prev, cur in zip(ordered, ordered[1:]):
        if prev.end_s != cur.start_s:
            raise ConfigError(
                f"schedule gap/overlap at t={prev.end_s} vs {cur.start_s}")
    if ordered[-1].end_s < duration_s:
        raise ConfigError("schedule does not cover the full run")


def context_at(schedule: list[DrivingContext], t: float) -> DrivingContext:
    for ctx in schedule:
        if ctx.start_s <= t < ctx.end_s:
            return ctx
    return schedule[-1]


@dataclass(frozen=True)
class NoiseModel:
    gps: float = 0.5            # m per axis
    imu: float = 0.05           # m/s^2 per axis
    gyro: float = 0.005         # rad/s
    radar: float = 0.2          # m/s
    lidar_range: float = 0.1    # m
    lidar_density: float = 1.0  # pts/m^2
    lidar_occlusion: float = 0.01

    def silent(self) -> "NoiseModel":
        """All sensor sigmas zero (ground-truth sensors)."""
        return NoiseModel(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass
class VehicleState:
    vehicle_id: int
    position: np.ndarray      # (2,) m
    velocity: np.ndarray      # (2,) m/s
    heading: float            # rad, [-pi, pi]
    clock: float              # simulated s

    def speed(self) -> float:
        return float(np.hypot(self.velocity[0], self.velocity[1]))

    def check_finite(self) -> None:
        vals = [*self.position, *self.velocity, self.heading, self.clock]
        if not all(math.isfinite(float(v)) for v in vals):
            raise InputError(f"non-finite vehicle state for vehicle {self.vehicle_id}")


@dataclass
class DriverState:
    """Slow-varying internals of the driving/scene model (OU processes)."""
    accel_ou: float = 0.0
    steer: float = 0.0
    range_wander: float = 0.0
    density_wander: float = 0.0
    speed_factor: float = 1.0  # per-vehicle preference around the context target


@dataclass
class SensorFrame:
    vehicle_id: int
    timestamp: float
    gps: np.ndarray           # (2,) m
    imu_accel: np.ndarray     # (2,) m/s^2, body frame (long, lat)
    imu_gyro: float           # rad/s
    radar_speed: float        # m/s
    lidar_summary: np.ndarray  # (3,) mean_range m, density pts/m^2, occlusion
    control: np.ndarray       # (2,) throttle [0,1], steer [-1,1]
    health: dict              # channel -> bool

    def values_row(self) -> list[float]:
        return [
            float(self.gps[0]), float(self.gps[1]),
            float(self.imu_accel[0]), float(self.imu_accel[1]),
            float(self.imu_gyro), float(self.radar_speed),
            float(self.lidar_summary[0]), float(self.lidar_summary[1]),
            float(self.lidar_summary[2]),
            float(self.control[0]), float(self.control[1]),
        ]


# one row of standard normals consumed per step, in this order:
# [accel_ou, steer_ou, gps_x, gps_y, imu_x, imu_y, gyro, radar,
#  lidar_range, lidar_density, lidar_occlusion, range_wander, density_wander]
NOISE_DRAWS_PER_STEP = 13

_TAU_ACCEL = 3.0
_SIGMA_ACCEL = 0.6
_TAU_STEER = 4.0
_SIGMA_STEER = 0.15
_TAU_WANDER = 10.0
_SIGMA_RANGE_WANDER = 0.4
_SIGMA_DENSITY_WANDER = 1.5
_SPEED_GAIN = 0.25          # 1/s, pull toward target speed
_SAFE_MODE_DECEL = 10.0     # m/s^2


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def _advance(state: VehicleState, driver: DriverState, ctx: DrivingContext,
             dt: float, z: np.ndarray, noise: NoiseModel,
             speed_cap: float | None = None,
             t_next: float | None = None) -> SensorFrame:
    """Advance state/driver in place by dt and emit the sensor frame.

    `z` is one row of NOISE_DRAWS_PER_STEP standard normals. `t_next`
    overrides the post-step clock so trace timestamps can be exact
    multiples of 1/f_s instead of an accumulated float sum.
    """
    v = state.speed()
    if dt > 0.0:
        # driver processes
        a_relax = math.exp(-dt / _TAU_ACCEL)
        driver.accel_ou = (driver.accel_ou * a_relax
                           + _SIGMA_ACCEL * math.sqrt(1.0 - a_relax * a_relax) * float(z[0]))
        s_relax = math.exp(-dt / _TAU_STEER)
        driver.steer = (driver.steer * s_relax
                        + _SIGMA_STEER * math.sqrt(1.0 - s_relax * s_relax) * float(z[1]))
        driver.steer = min(1.0, max(-1.0, driver.steer))

        v_target = _TARGET_SPEED[ctx.road_class] * driver.speed_factor
        a_cmd = _SPEED_GAIN * (v_target - v) + driver.accel_ou
        if speed_cap is not None and v > speed_cap:
            a_cmd = -_SAFE_MODE_DECEL
        yaw_rate = driver.steer * 0.25 * (v / (v + 5.0))

        # integrate with the pre-step velocity, then update it
        state.position = state.position + state.velocity * dt
        v_new = min(max(v + a_cmd * dt, 0.0), V_MAX)
        if speed_cap is not None:
            v_new = min(v_new, max(speed_cap, 0.0)) if v <= speed_cap else v_new
        heading_new = _wrap_angle(state.heading + yaw_rate * dt)
        state.velocity = np.array([v_new * math.cos(heading_new),
                                   v_new * math.sin(heading_new)])
        state.heading = heading_new
        state.clock = (state.clock + dt) if t_next is None else t_next

        a_long = (v_new - v) / dt
        a_lat = v * yaw_rate
        w_relax = math.exp(-dt / _TAU_WANDER)
        w_fac = math.sqrt(1.0 - w_relax * w_relax)
        driver.range_wander = driver.range_wander * w_relax + _SIGMA_RANGE_WANDER * w_fac * float(z[11])
        driver.density_wander = (driver.density_wander * w_relax
                                 + _SIGMA_DENSITY_WANDER * w_fac * float(z[12]))
        throttle = min(1.0, max(0.0, (a_cmd + 0.1 * v) / 4.0))
    else:
        a_long = 0.0
        a_lat = 0.0
        v_target = _TARGET_SPEED[ctx.road_class] * driver.speed_factor
        throttle = min(1.0, max(0.0, (_SPEED_GAIN * (v_target - v) + driver.accel_ou + 0.1 * v) / 4.0))

    w = WEATHER_NOISE_SCALE[ctx.weather]
    gps = state.position + noise.gps * w * z[2:4]
    imu = np.array([a_long + noise.imu * float(z[4]),
                    a_lat + noise.imu * float(z[5])])
    gyro = (driver.steer * 0.25 * (state.speed() / (state.speed() + 5.0))
            + noise.gyro * float(z[6]))
    radar = state.speed() + noise.radar * float(z[7])
    mean_range = (_LIDAR_RANGE_BASE[ctx.road_class] + driver.range_wander
                  + noise.lidar_range * w * float(z[8]))
    density = (_LIDAR_DENSITY_BASE[ctx.road_class] * _DENSITY_WEATHER[ctx.weather]
               + driver.density_wander + noise.lidar_density * w * float(z[9]))
    occlusion = min(1.0, max(0.0, _OCCLUSION_BASE[ctx.weather]
                             + noise.lidar_occlusion * w * float(z[10])))
    return SensorFrame(
        vehicle_id=state.vehicle_id,
        timestamp=state.clock,
        gps=gps,
        imu_accel=imu,
        imu_gyro=float(gyro),
        radar_speed=float(radar),
        lidar_summary=np.array([mean_range, density, occlusion]),
        control=np.array([throttle, float(driver.steer)]),
        health={ch: True for ch in HEALTH_CHANNELS},
    )


def step_vehicle(state: VehicleState, ctx: DrivingContext, dt: float,
                 rng: np.random.Generator, driver: DriverState | None = None,
                 noise: NoiseModel | None = None,
                 speed_cap: float | None = None) -> tuple[VehicleState, SensorFrame]:
    """Advance one vehicle by dt and return (new state, sensor frame)."""
    if dt < 0.0 or not math.isfinite(dt):
        raise InputError(f"bad dt {dt}")
    state.check_finite()
    if driver is None:
        driver = DriverState()
    if noise is None:
        noise = NoiseModel()
    new_state = replace(state, position=state.position.copy(),
                        velocity=state.velocity.copy())
    z = rng.standard_normal(NOISE_DRAWS_PER_STEP)
    frame = _advance(new_state, driver, ctx, dt, z, noise, speed_cap)
    return new_state, frame


# ---------------------------------------------------------------------------
# fleet traces

FRAME_FIELDS = (
    "gps_x", "gps_y", "imu_ax", "imu_ay", "imu_gyro", "radar_speed",
    "lidar_range", "lidar_density", "lidar_occlusion", "throttle", "steer",
)


@dataclass
class VehicleTrack:
    """Columnar frame storage for one vehicle."""
    vehicle_id: int
    t: np.ndarray                  # (T,)
    values: np.ndarray             # (T, len(FRAME_FIELDS))
    health: np.ndarray             # (T, len(HEALTH_CHANNELS)) bool

    def n_frames(self) -> int:
        return len(self.t)

    def copy(self) -> "VehicleTrack":
        return VehicleTrack(self.vehicle_id, self.t.copy(),
                            self.values.copy(), self.health.copy())

    def col(self, name: str) -> np.ndarray:
        return self.values[:, FRAME_FIELDS.index(name)]


@dataclass
class FleetTrace:
    tracks: dict  # vehicle_id -> VehicleTrack
    schedule: list
    f_s: float
    seed: int

    def n_vehicles(self) -> int:
        return len(self.tracks)

    def duration_s(self) -> float:
        any_track = next(iter(self.tracks.values()))
        return len(any_track.t) / self.f_s

    def copy(self) -> "FleetTrace":
        return FleetTrace({vid: tr.copy() for vid, tr in self.tracks.items()},
                          list(self.schedule), self.f_s, self.seed)


@dataclass(frozen=True)
class FleetConfig:
    n_vehicles: int = 10
    duration_s: float = 60.0
    f_s: float = 10.0
    schedule: tuple = ()
    noise: NoiseModel = field(default_factory=NoiseModel)

    def __post_init__(self):
        if self.n_vehicles < 1:
            raise ConfigError("n_vehicles must be >= 1")
        if not (1 <= self.f_s <= 100) or self.f_s != int(self.f_s):
            raise ConfigError(f"f_s must be an integer in 1..100, got {self.f_s}")
        n_frames = self.duration_s * self.f_s
        if abs(n_frames - round(n_frames)) > 1e-9:
            raise ConfigError(
                f"duration_s*f_s = {n_frames} is not an integer frame count")
        sched = list(self.schedule) or [
            DrivingContext(RoadClass.URBAN, Weather.CLEAR, 0.0, self.duration_s)]
        validate_schedule(sched, self.duration_s)
        object.__setattr__(self, "schedule", tuple(sched))

    def n_frames(self) -> int:
        return int(round(self.duration_s * self.f_s))


def init_vehicle(config: FleetConfig, seed: int, vehicle_id: int
                 ) -> tuple[VehicleState, DriverState]:
    """Deterministic initial state for one vehicle."""
    rng = substream(seed, "fleet-init", vehicle_id)
    ctx0 = config.schedule[0]
    heading = float(rng.uniform(-math.pi, math.pi))
    speed_factor = float(rng.uniform(0.9, 1.1))
    v0 = _TARGET_SPEED[ctx0.road_class] * speed_factor
    pos = rng.uniform(0.0, 2000.0, size=2)
    state = VehicleState(
        vehicle_id=vehicle_id,
        position=pos,
        velocity=np.array([v0 * math.cos(heading), v0 * math.sin(heading)]),
        heading=heading,
        clock=0.0,
    )
    driver = DriverState(speed_factor=speed_factor)
    return state, driver


def vehicle_noise_matrix(seed: int, vehicle_id: int, n_frames: int) -> np.ndarray:
    rng = substream(seed, "fleet-noise", vehicle_id)
    return rng.standard_normal((n_frames, NOISE_DRAWS_PER_STEP))


def gen_vehicle_track(config: FleetConfig, seed: int, vehicle_id: int) -> VehicleTrack:
    n = config.n_frames()
    dt = 1.0 / config.f_s
    state, driver = init_vehicle(config, seed, vehicle_id)
    zmat = vehicle_noise_matrix(seed, vehicle_id, n)
    t = np.empty(n)
    values = np.empty((n, len(FRAME_FIELDS)))
    health = np.ones((n, len(HEALTH_CHANNELS)), dtype=bool)
    schedule = list(config.schedule)
    for i in range(n):
        ctx = context_at(schedule, state.clock)
        frame = _advance(state, driver, ctx, dt, zmat[i], config.noise,
                         t_next=(i + 1) / config.f_s)
        t[i] = frame.timestamp
        values[i] = frame.values_row()
    return VehicleTrack(vehicle_id, t, values, health)


def gen_fleet_trace(config: FleetConfig, seed: int) -> FleetTrace:
    """Generate the full fleet; pure in (config, seed)."""
    tracks = {vid: gen_vehicle_track(config, seed, vid)
              for vid in range(config.n_vehicles)}
    return FleetTrace(tracks, list(config.schedule), config.f_s, seed)


# ---------------------------------------------------------------------------
# newline-delimited trace records

def export_trace(trace: FleetTrace) -> str:
    """One frame per line: vehicle, timestamp, values, health bits."""
    lines = []
    for vid in sorted(trace.tracks):
        tr = trace.tracks[vid]
        for i in range(tr.n_frames()):
            vals = " ".join(repr(float(v)) for v in tr.values[i])
            hbits = " ".join("1" if b else "0" for b in tr.health[i])
            lines.append(f"{vid} {repr(float(tr.t[i]))} {vals} {hbits}")
    return "\n".join(lines) + "\n"


def import_trace(text: str, schedule: list, f_s: float, seed: int = 0) -> FleetTrace:
    rows: dict[int, list] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        parts = line.split()
        vid = int(parts[0])
        rows.setdefault(vid, []).append(parts[1:])
    tracks = {}
    nv = len(FRAME_FIELDS)
    for vid, rlist in rows.items():
        t = np.array([float(r[0]) for r in rlist])
        values = np.array([[float(x) for x in r[1:1 + nv]] for r in rlist])
        health = np.array([[x == "1" for x in r[1 + nv:]] for r in rlist], dtype=bool)
        tracks[vid] = VehicleTrack(vid, t, values, health)
    return FleetTrace(tracks, schedule, f_s, seed)
