"""Attack and fault injection.

Applies one of four tamper laws to a clean fleet trace and produces
per-frame ground-truth labels. Labels depend only on the scenario
geometry (target vehicle x time window), never on sensor values. Frames
outside the window, and every other vehicle, stay byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, InputError
from .fleet import FRAME_FIELDS, FleetTrace, NoiseModel, VehicleTrack
from .rng import substream


class AttackKind(Enum):
    GPS_SPOOF = "gps_spoof"
    LIDAR_MANIPULATION = "lidar_manipulation"
    HARDWARE_FAILURE = "hardware_failure"
    GRADUAL_DRIFT = "gradual_drift"


class FailureMode(Enum):
    STUCK = "stuck"
    DROPOUT = "dropout"
    NOISE_BURST = "noise_burst"


# which frame fields belong to each health-flag channel group
GROUP_FIELDS = {
    "gps": ("gps_x", "gps_y"),
    "imu": ("imu_ax", "imu_ay", "imu_gyro"),
    "radar": ("radar_speed",),
    "lidar": ("lidar_range", "lidar_density", "lidar_occlusion"),
    "control": ("throttle", "steer"),
}

FIELD_GROUP = {f: g for g, fields in GROUP_FIELDS.items() for f in fields}

# nominal per-field noise sigma (clear weather), used by noise_burst
def _field_sigmas(noise: NoiseModel) -> dict:
    return {
        "gps_x": noise.gps, "gps_y": noise.gps,
        "imu_ax": noise.imu, "imu_ay": noise.imu, "imu_gyro": noise.gyro,
        "radar_speed": noise.radar,
        "lidar_range": noise.lidar_range, "lidar_density": noise.lidar_density,
        "lidar_occlusion": noise.lidar_occlusion,
        "throttle": 0.01, "steer": 0.01,
    }


@dataclass(frozen=True)
class AttackScenario:
    kind: AttackKind
    target_vehicle: int
    target_channel: str          # group name; for drift, a single field name
    start_s: float
    duration_s: float
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.duration_s < 0:
            raise ConfigError("duration_s must be >= 0")
        for v in self.params.values():
            if isinstance(v, (int, float)) and not np.isfinite(v):
                raise ConfigError(f"non-finite scenario param: {self.params}")

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_s

    def affected_fields(self) -> tuple:
        if self.kind is AttackKind.GRADUAL_DRIFT:
            return (self.target_channel,)
        return GROUP_FIELDS[self.target_channel]


@dataclass
class LabeledTrace:
    trace: FleetTrace
    labels: dict               # vehicle_id -> (T,) bool
    scenario: AttackScenario


def _window_mask(t: np.ndarray, scenario: AttackScenario) -> np.ndarray:
    return (t >= scenario.start_s) & (t < scenario.end_s)


def apply_to_track(track: VehicleTrack, scenario: AttackScenario,
                   rng: np.random.Generator, noise: NoiseModel | None = None) -> None:
    """Apply the tamper law in place to the target vehicle's track."""
    noise = noise or NoiseModel()
    mask = _window_mask(track.t, scenario)
    idx = np.nonzero(mask)[0]
    if len(idx) == 0:
        return
    kind = scenario.kind
    p = scenario.params
    if kind is AttackKind.GPS_SPOOF:
        track.col("gps_x")[idx] += p["offset_x"]
        track.col("gps_y")[idx] += p["offset_y"]
    elif kind is AttackKind.LIDAR_MANIPULATION:
        track.col("lidar_density")[idx] *= p["density_scale"]
        track.col("lidar_range")[idx] += p["phantom_range_bias"]
    elif kind is AttackKind.HARDWARE_FAILURE:
        fields = GROUP_FIELDS[scenario.target_channel]
        mode = FailureMode(p["mode"])
        if mode is FailureMode.STUCK:
            for f in fields:
                col = track.col(f)
                col[idx] = col[idx[0]]
        elif mode is FailureMode.DROPOUT:
            from .fleet import HEALTH_CHANNELS
            gi = HEALTH_CHANNELS.index(scenario.target_channel)
            for f in fields:
                track.col(f)[idx] = np.nan
            track.health[idx, gi] = False
        elif mode is FailureMode.NOISE_BURST:
            # sigma x10 overall: add sqrt(99)*sigma on top of the base draw
            sigmas = _field_sigmas(noise)
            extra = np.sqrt(99.0)
            for f in fields:
                track.col(f)[idx] += extra * sigmas[f] * rng.standard_normal(len(idx))
    elif kind is AttackKind.GRADUAL_DRIFT:
        rate = p["rate"]
        track.col(scenario.target_channel)[idx] += rate * (track.t[idx] - scenario.start_s)
    else:  # pragma: no cover - enum is closed
        raise InputError(f"unknown attack kind {kind}")


def inject(trace: FleetTrace, scenario: AttackScenario,
           rng: np.random.Generator | None = None,
           noise: NoiseModel | None = None) -> LabeledTrace:
    """Tamper a copy of the trace and label the attacked frames."""
    if scenario.target_vehicle not in trace.tracks:
        raise InputError(f"target vehicle {scenario.target_vehicle} not in trace")
    duration = trace.duration_s()
    if scenario.start_s < 0 or scenario.end_s > duration + 1e-9:
        raise InputError(
            f"attack window [{scenario.start_s}, {scenario.end_s}) outside trace"
            f" duration {duration}")
    if scenario.kind is AttackKind.GRADUAL_DRIFT:
        if scenario.target_channel not in FRAME_FIELDS:
            raise InputError(f"drift target must be a field, got {scenario.target_channel}")
    elif scenario.target_channel not in GROUP_FIELDS:
        raise InputError(f"target channel group {scenario.target_channel!r} unknown")
    if rng is None:
        rng = substream(trace.seed, "inject")
    tampered = trace.copy()
    apply_to_track(tampered.tracks[scenario.target_vehicle], scenario, rng, noise)
    labels = {}
    for vid, tr in trace.tracks.items():
        if vid == scenario.target_vehicle:
            labels[vid] = _window_mask(tr.t, scenario)
        else:
            labels[vid] = np.zeros(tr.n_frames(), dtype=bool)
    return LabeledTrace(tampered, labels, scenario)


class StreamingInjector:
    """Frame-at-a-time version of the same tamper laws, for the live pipeline.

    Must produce values identical to `inject` on an untouched vehicle
    stream (verified by tests).
    """

    def __init__(self, scenario: AttackScenario, rng: np.random.Generator,
                 noise: NoiseModel | None = None):
        self.scenario = scenario
        self.rng = rng
        self.noise = noise or NoiseModel()
        self._stuck_values: dict | None = None

    def active(self, t: float) -> bool:
        return self.scenario.start_s <= t < self.scenario.end_s

    def apply(self, vehicle_id: int, t: float, values: np.ndarray,
              health: np.ndarray) -> bool:
        """Tamper one frame row in place; returns the label."""
        s = self.scenario
        if vehicle_id != s.target_vehicle or not self.active(t):
            return False
        p = s.params
        if s.kind is AttackKind.GPS_SPOOF:
            values[FRAME_FIELDS.index("gps_x")] += p["offset_x"]
            values[FRAME_FIELDS.index("gps_y")] += p["offset_y"]
        elif s.kind is AttackKind.LIDAR_MANIPULATION:
            values[FRAME_FIELDS.index("lidar_density")] *= p["density_scale"]
            values[FRAME_FIELDS.index("lidar_range")] += p["phantom_range_bias"]
        elif s.kind is AttackKind.HARDWARE_FAILURE:
            fields = GROUP_FIELDS[s.target_channel]
            mode = FailureMode(p["mode"])
            if mode is FailureMode.STUCK:
                if self._stuck_values is None:
                    self._stuck_values = {f: values[FRAME_FIELDS.index(f)] for f in fields}
                for f in fields:
                    values[FRAME_FIELDS.index(f)] = self._stuck_values[f]
            elif mode is FailureMode.DROPOUT:
                from .fleet import HEALTH_CHANNELS
                for f in fields:
                    values[FRAME_FIELDS.index(f)] = np.nan
                health[HEALTH_CHANNELS.index(s.target_channel)] = False
            elif mode is FailureMode.NOISE_BURST:
                sigmas = _field_sigmas(self.noise)
                extra = np.sqrt(99.0)
                for f in fields:
                    values[FRAME_FIELDS.index(f)] += (
                        extra * sigmas[f] * self.rng.standard_normal())
        elif s.kind is AttackKind.GRADUAL_DRIFT:
            values[FRAME_FIELDS.index(s.target_channel)] += p["rate"] * (t - s.start_s)
        return True


# ---------------------------------------------------------------------------
# campaign sampling

@dataclass(frozen=True)
class AttackRanges:
    """Uniform sampling ranges for campaign scenario parameters."""
    spoof_offset_m: tuple = (2.0, 20.0)
    density_scale: tuple = (0.3, 0.9)
    phantom_range_bias_m: tuple = (0.5, 5.0)
    drift_rate: tuple = (0.01, 0.2)
    start_s: tuple = (20.0, 30.0)
    duration_s: tuple = (10.0, 25.0)
    failure_groups: tuple = ("gps", "radar", "lidar", "imu")
    drift_fields: tuple = ("radar_speed", "lidar_range")
    # drift persists to the end of the run: real sensor drift does not
    # spontaneously revert, and a synthetic snap-back at window end would
    # dominate what the detector sees
    drift_runs_to_end: bool = True

    def check(self):
        for name in ("spoof_offset_m", "density_scale", "phantom_range_bias_m",
                     "drift_rate", "start_s", "duration_s"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ConfigError(f"empty param range {name}=({lo}, {hi})")
        if not self.failure_groups or not self.drift_fields:
            raise ConfigError("empty target channel list")


def _uniform(rng, lohi) -> float:
    lo, hi = lohi
    if hi == lo:
        return float(lo)
    return float(rng.uniform(lo, hi))


def sample_scenario(kind: AttackKind, ranges: AttackRanges, n_vehicles: int,
                    trace_duration_s: float, rng: np.random.Generator) -> AttackScenario:
    target = int(rng.integers(0, n_vehicles))
    start = _uniform(rng, ranges.start_s)
    duration = _uniform(rng, ranges.duration_s)
    duration = min(duration, trace_duration_s - start)
    if kind is AttackKind.GPS_SPOOF:
        mag = _uniform(rng, ranges.spoof_offset_m)
        ang = float(rng.uniform(0.0, 2.0 * np.pi))
        return AttackScenario(kind, target, "gps", start, duration,
                              {"offset_x": mag * np.cos(ang), "offset_y": mag * np.sin(ang)})
    if kind is AttackKind.LIDAR_MANIPULATION:
        return AttackScenario(kind, target, "lidar", start, duration,
                              {"density_scale": _uniform(rng, ranges.density_scale),
                               "phantom_range_bias": _uniform(rng, ranges.phantom_range_bias_m)})
    if kind is AttackKind.HARDWARE_FAILURE:
        group = ranges.failure_groups[int(rng.integers(0, len(ranges.failure_groups)))]
        mode = list(FailureMode)[int(rng.integers(0, len(FailureMode)))]
        return AttackScenario(kind, target, group, start, duration, {"mode": mode.value})
    if kind is AttackKind.GRADUAL_DRIFT:
        fld = ranges.drift_fields[int(rng.integers(0, len(ranges.drift_fields)))]
        if ranges.drift_runs_to_end:
            duration = trace_duration_s - start
        return AttackScenario(kind, target, fld, start, duration,
                              {"rate": _uniform(rng, ranges.drift_rate)})
    raise InputError(f"unknown kind {kind}")


def make_campaign(scenario_kinds, runs_per_kind: int, ranges: AttackRanges,
                  n_vehicles: int, trace_duration_s: float, seed: int) -> list:
    """Deterministic list of scenarios: runs_per_kind per kind, in kind order."""
    if runs_per_kind < 1:
        raise ConfigError("runs_per_kind must be >= 1")
    ranges.check()
    out = []
    for kind in scenario_kinds:
        for i in range(runs_per_kind):
            rng = substream(seed, "campaign", kind.value, i)
            out.append(sample_scenario(kind, ranges, n_vehicles, trace_duration_s, rng))
    return out
