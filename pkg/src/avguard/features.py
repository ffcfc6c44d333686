"""Windowed feature engineering.

Raw frames are first mapped to a set of derived, roughly stationary
channels (GPS-derived speed, redundant-sensor residuals, scene
statistics, controls). Sliding windows over those channels are then
summarized as statistical moments, DFT band energies, and cross-channel
Pearson correlations, and z-normalized with statistics fitted on
training data.

Dropout frames carry NaN sentinels; they are excluded from moments and
mean-filled for the spectral/correlation computations, so no feature is
ever NaN or infinite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError
from .fleet import VehicleTrack

EPS_FLOOR = 1e-8

# derived channel set; each channel maps to the physical sensors it draws on
CHANNELS = (
    "gps_speed", "radar_speed", "speed_residual", "imu_long", "imu_gyro",
    "lidar_range", "lidar_density", "lidar_occlusion", "throttle", "steer",
)

CHANNEL_SENSORS = {
    "gps_speed": ("gps",),
    "radar_speed": ("radar",),
    "speed_residual": ("gps", "radar"),
    "imu_long": ("imu",),
    "imu_gyro": ("imu",),
    "lidar_range": ("lidar",),
    "lidar_density": ("lidar",),
    "lidar_occlusion": ("lidar",),
    "throttle": ("control",),
    "steer": ("control",),
}

DEFAULT_PAIRS = (
    ("gps_speed", "radar_speed"),
    ("imu_long", "throttle"),
    ("imu_gyro", "steer"),
    ("radar_speed", "throttle"),
    ("lidar_density", "lidar_range"),
    ("gps_speed", "imu_long"),
)

GPS_SPEED_LAG = 10  # frames used as the GPS differencing baseline

_MOMENT_NAMES = ("mean", "var", "skew", "kurt")


@dataclass(frozen=True)
class WindowSpec:
    length: int = 32
    stride: int = 1
    channels: tuple = CHANNELS
    n_bands: int = 4
    pairs: tuple = DEFAULT_PAIRS

    def __post_init__(self):
        if self.length < 4:
            raise ConfigError(f"window length {self.length} < 4")
        if self.stride < 1:
            raise ConfigError(f"stride {self.stride} < 1")
        for a, b in self.pairs:
            if a not in self.channels or b not in self.channels:
                raise ConfigError(f"pair ({a}, {b}) not in channel set")

    @property
    def dim(self) -> int:
        return len(self.channels) * (4 + self.n_bands) + len(self.pairs)


def feature_layout(spec: WindowSpec) -> list:
    """Per-dimension (name, contributing sensors) in output order."""
    layout = []
    for ch in spec.channels:
        sensors = CHANNEL_SENSORS[ch]
        for m in _MOMENT_NAMES:
            layout.append((f"{ch}.{m}", sensors))
        for b in range(spec.n_bands):
            layout.append((f"{ch}.band{b}", sensors))
    for a, b in spec.pairs:
        sensors = tuple(sorted(set(CHANNEL_SENSORS[a]) | set(CHANNEL_SENSORS[b])))
        layout.append((f"corr({a},{b})", sensors))
    return layout


# ---------------------------------------------------------------------------
# derived channels

def derive_channels(track: VehicleTrack, f_s: float,
                    channels: tuple = CHANNELS,
                    gps_override: np.ndarray | None = None) -> np.ndarray:
    """(T, C) derived channel matrix; NaN marks invalid samples.

    `gps_override` substitutes a replacement gps position series
    (sensor failover support).
    """
    T = track.n_frames()
    dt = 1.0 / f_s
    gx = gps_override[:, 0] if gps_override is not None else track.col("gps_x")
    gy = gps_override[:, 1] if gps_override is not None else track.col("gps_y")
    lags = np.minimum(np.arange(T), GPS_SPEED_LAG)
    src = np.arange(T) - lags
    with np.errstate(invalid="ignore", divide="ignore"):
        dx = gx - gx[src]
        dy = gy - gy[src]
        denom = np.maximum(lags, 1) * dt
        gps_speed = np.hypot(dx, dy) / denom
    if T > 1:
        gps_speed[0] = gps_speed[1]
    cols = {
        "gps_speed": gps_speed,
        "radar_speed": track.col("radar_speed"),
        "speed_residual": track.col("radar_speed") - gps_speed,
        "imu_long": track.col("imu_ax"),
        "imu_gyro": track.col("imu_gyro"),
        "lidar_range": track.col("lidar_range"),
        "lidar_density": track.col("lidar_density"),
        "lidar_occlusion": track.col("lidar_occlusion"),
        "throttle": track.col("throttle"),
        "steer": track.col("steer"),
    }
    return np.column_stack([cols[c] for c in channels])


# ---------------------------------------------------------------------------
# windowing

def window_count(T: int, length: int, stride: int) -> int:
    if T < length:
        return 0
    return (T - length) // stride + 1


def window_view(x: np.ndarray, spec: WindowSpec) -> tuple[np.ndarray, bool]:
    """(n_win, length, C) sliding windows; returns (windows, warned).

    warned is True when the series is shorter than one window.
    """
    T = x.shape[0]
    if T < spec.length:
        empty = np.empty((0, spec.length) + x.shape[1:])
        return empty, True
    win = np.lib.stride_tricks.sliding_window_view(x, spec.length, axis=0)
    # sliding_window_view puts the window axis last; move it next to n_win
    win = np.moveaxis(win, -1, 1)
    return win[::spec.stride], False


# ---------------------------------------------------------------------------
# per-window statistics (vectorized over windows)

def statistical_moments(win: np.ndarray) -> np.ndarray:
    """Population moments per (window, channel).

    win: (n, L, C) possibly containing NaN. Returns (n, C, 4) with
    [mean, var, skew, excess kurtosis]; all-NaN windows give zeros.
    """
    valid = np.isfinite(win)
    x = np.where(valid, win, 0.0)
    counts = valid.sum(axis=1)
    safe_n = np.maximum(counts, 1)
    mean = x.sum(axis=1) / safe_n
    c = np.where(valid, win - mean[:, None, :], 0.0)
    var = (c * c).sum(axis=1) / safe_n
    m3 = (c * c * c).sum(axis=1) / safe_n
    m4 = (c * c * c * c).sum(axis=1) / safe_n
    ok = var >= EPS_FLOOR
    with np.errstate(invalid="ignore", divide="ignore"):
        skew = np.where(ok, m3 / np.sqrt(np.maximum(var, EPS_FLOOR)) ** 3, 0.0)
        kurt = np.where(ok, m4 / np.maximum(var, EPS_FLOOR) ** 2 - 3.0, 0.0)
    missing = counts == 0
    mean = np.where(missing, 0.0, mean)
    var = np.where(missing, 0.0, var)
    return np.stack([mean, var, skew, kurt], axis=-1)


def _pad_pow2(win: np.ndarray) -> np.ndarray:
    L = win.shape[1]
    if L & (L - 1) == 0:
        return win
    target = 1 << (L - 1).bit_length()
    pad = target - L
    edge = win[:, -1:, :]
    return np.concatenate([win, np.repeat(edge, pad, axis=1)], axis=1)


def spectral_features(win: np.ndarray, n_bands: int = 4) -> np.ndarray:
    """DFT band energies per (window, channel), DC excluded.

    Energies are normalized so that DC energy + sum(bands) equals the
    mean square of the (mean-filled, power-of-two padded) signal.
    Returns (n, C, n_bands).
    """
    valid = np.isfinite(win)
    counts = np.maximum(valid.sum(axis=1), 1)
    mean = np.where(valid, win, 0.0).sum(axis=1) / counts
    filled = np.where(valid, win, mean[:, None, :])
    filled = _pad_pow2(filled)
    L = filled.shape[1]
    spec = np.fft.rfft(filled, axis=1)
    power = (spec.real ** 2 + spec.imag ** 2) / (L * L)
    # one-sided weights: interior bins count twice, DC and Nyquist once
    weights = np.full(power.shape[1], 2.0)
    weights[0] = 1.0
    weights[-1] = 1.0
    weighted = power * weights[None, :, None]
    bins = weighted[:, 1:, :]                   # DC excluded
    n_pos = bins.shape[1]
    if n_pos % n_bands != 0:
        raise ConfigError(f"{n_pos} positive bins not divisible into {n_bands} bands")
    per = n_pos // n_bands
    bands = bins.reshape(bins.shape[0], n_bands, per, bins.shape[2]).sum(axis=2)
    return np.moveaxis(bands, 1, 2)


def dc_energy(win: np.ndarray) -> np.ndarray:
    """|X_0|^2 / L^2 of the mean-filled padded signal, for Parseval checks."""
    valid = np.isfinite(win)
    counts = np.maximum(valid.sum(axis=1), 1)
    mean = np.where(valid, win, 0.0).sum(axis=1) / counts
    filled = np.where(valid, win, mean[:, None, :])
    filled = _pad_pow2(filled)
    L = filled.shape[1]
    x0 = filled.sum(axis=1)
    return (x0 * x0) / (L * L)


def cross_sensor_correlation(win: np.ndarray, channels: tuple,
                             pairs: tuple) -> np.ndarray:
    """Pearson coefficient per (window, pair); degenerate channels give 0.

    win: (n, L, C). Returns (n, len(pairs)) clipped to [-1, 1].
    """
    out = np.zeros((win.shape[0], len(pairs)))
    idx = {c: i for i, c in enumerate(channels)}
    for k, (a, b) in enumerate(pairs):
        xa = win[:, :, idx[a]]
        xb = win[:, :, idx[b]]
        valid = np.isfinite(xa) & np.isfinite(xb)
        n = np.maximum(valid.sum(axis=1), 1)
        xa0 = np.where(valid, xa, 0.0)
        xb0 = np.where(valid, xb, 0.0)
        ma = xa0.sum(axis=1) / n
        mb = xb0.sum(axis=1) / n
        da = np.where(valid, xa - ma[:, None], 0.0)
        db = np.where(valid, xb - mb[:, None], 0.0)
        va = (da * da).sum(axis=1) / n
        vb = (db * db).sum(axis=1) / n
        cov = (da * db).sum(axis=1) / n
        ok = (va >= EPS_FLOOR) & (vb >= EPS_FLOOR)
        with np.errstate(invalid="ignore", divide="ignore"):
            rho = np.where(ok, cov / np.sqrt(np.maximum(va * vb, EPS_FLOOR * EPS_FLOOR)), 0.0)
        out[:, k] = np.clip(rho, -1.0, 1.0)
    return out


def feature_matrix(win: np.ndarray, spec: WindowSpec) -> np.ndarray:
    """Assemble the full feature matrix (n_win, spec.dim)."""
    moments = statistical_moments(win)                       # (n, C, 4)
    bands = spectral_features(win, spec.n_bands)             # (n, C, nb)
    per_channel = np.concatenate([moments, bands], axis=2)   # (n, C, 4+nb)
    flat = per_channel.reshape(per_channel.shape[0], -1)
    corr = cross_sensor_correlation(win, spec.channels, spec.pairs)
    return np.concatenate([flat, corr], axis=1)


@dataclass
class FeatureBlock:
    """Features for one vehicle's windows."""
    vehicle_id: int
    end_times: np.ndarray        # (n,) timestamp of each window's last frame
    values: np.ndarray           # (n, dim)
    context_keys: list           # per-window context key at window end
    warned: bool = False


def extract_features(track: VehicleTrack, f_s: float, spec: WindowSpec,
                     schedule: list,
                     gps_override: np.ndarray | None = None) -> FeatureBlock:
    from .fleet import context_at
    chans = derive_channels(track, f_s, spec.channels, gps_override)
    win, warned = window_view(chans, spec)
    if warned:
        return FeatureBlock(track.vehicle_id, np.empty(0),
                            np.empty((0, spec.dim)), [], True)
    values = feature_matrix(win, spec)
    end_idx = np.arange(spec.length - 1, track.n_frames(), spec.stride)
    end_times = track.t[end_idx]
    ctx_keys = [context_at(schedule, t).key for t in end_times]
    if not np.all(np.isfinite(values)):
        raise InputError("non-finite feature values after missing-data handling")
    return FeatureBlock(track.vehicle_id, end_times, values, ctx_keys, False)


# ---------------------------------------------------------------------------
# normalization

@dataclass
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray              # floored at EPS_FLOOR

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std


def fit_normalizer(values: np.ndarray) -> NormalizationStats:
    if values.size == 0:
        raise InputError("cannot fit normalizer on empty feature set")
    mean = values.mean(axis=0)
    std = np.maximum(values.std(axis=0), EPS_FLOOR)
    return NormalizationStats(mean, std)


def apply_normalizer(values: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    return stats.apply(values)


def export_features(values: np.ndarray) -> str:
    """Delimited numeric text, one window per line."""
    return "\n".join(" ".join(repr(float(v)) for v in row) for row in values) + "\n"
