"""Anomaly scoring, adaptive thresholds, and signed alerts.

Score = mean over feature dimensions of the squared prediction error,
each dimension normalized by its training-residual std. Thresholds are
per (vehicle, driving context): mu + k*sigma over a rolling window of
recent scores, with above-threshold scores excluded from the rolling
update so long attacks cannot poison their own baseline. The
sensitivity k is calibrated per context against a false-positive-rate
target on clean validation scores.

Alerts are severity-graded from the score/threshold ratio, attributed
to the dominant contributing sensor, and signed by the vehicle's
identity over canonical alert bytes.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import crypto
from .crypto import Identity, enc_f64, enc_str, enc_u8, enc_u32
from .errors import ConfigError, InputError
from .features import (
    EPS_FLOOR,
    NormalizationStats,
    WindowSpec,
    feature_layout,
)
from .fleet import HEALTH_CHANNELS
from .lstm import LstmParams, MATRIX_NAMES, lstm_step

SEVERITY_RATIOS = (1.0, 2.0, 4.0, 8.0)
SAFETY_CRITICAL = ("gps", "lidar", "control")


class Severity(IntEnum):
    LOW = 0
    MEDIUM = 1
    HIGH = 2
    CRITICAL = 3


class SuspectedKind(IntEnum):
    CYBERATTACK = 0
    SENSOR_FAULT = 1
    UNKNOWN = 2


@dataclass
class AnomalyScore:
    vehicle_id: int
    timestamp: float
    score: float
    contributions: np.ndarray    # per-dimension squared normalized error


@dataclass
class AnomalyAlert:
    vehicle_id: int
    timestamp: float
    score: float
    threshold: float
    severity: Severity
    suspected_kind: SuspectedKind
    affected_channels: tuple     # sensor group names, dominant first
    signer_id: str = ""
    signature: bytes = b""

    def canonical_bytes(self) -> bytes:
        out = [enc_u32(self.vehicle_id), enc_f64(self.timestamp),
               enc_f64(self.score), enc_f64(self.threshold),
               enc_u8(int(self.severity)), enc_u8(int(self.suspected_kind)),
               enc_u8(len(self.affected_channels))]
        for ch in self.affected_channels:
            out.append(enc_u8(HEALTH_CHANNELS.index(ch)))
        out.append(enc_str(self.signer_id))
        return b"".join(out)


def score_vector(x: np.ndarray, pred: np.ndarray, resid_std: np.ndarray,
                 active: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Normalized squared prediction error, averaged over active dims."""
    if x.shape != pred.shape:
        raise InputError(f"shape mismatch {x.shape} vs {pred.shape}")
    z = (x - pred) / resid_std
    contrib = z * z
    if active is not None:
        contrib = np.where(active, contrib, 0.0)
        d = max(int(active.sum()), 1)
    else:
        d = len(x)
    return float(contrib.sum() / d), contrib


class RollingThreshold:
    """mu + k*sigma over the last K accepted scores for one (vehicle, context)."""

    def __init__(self, k: float, window: int = 300,
                 mu0: float = 0.0, sigma0: float = 0.0, seed_count: int = 50):
        self.k = k
        self.window = window
        self._scores = deque(maxlen=window)
        # seed the window with +/-sigma pairs: reproduces (mu0, sigma0)
        # exactly, so the threshold is defined from the first frame
        n = min(seed_count, window) // 2
        for _ in range(max(n, 1)):
            self._scores.append(mu0 - sigma0)
            self._scores.append(mu0 + sigma0)
        self._dirty = True
        self._mu = mu0
        self._sigma = sigma0

    def _refresh(self):
        if self._dirty:
            arr = np.fromiter(self._scores, dtype=float)
            self._mu = float(arr.mean()) if len(arr) else 0.0
            self._sigma = float(arr.std()) if len(arr) else 0.0
            self._dirty = False

    @property
    def mu(self) -> float:
        self._refresh()
        return self._mu

    @property
    def sigma(self) -> float:
        self._refresh()
        return self._sigma

    @property
    def threshold(self) -> float:
        self._refresh()
        return max(self._mu + self.k * self._sigma, 0.0)

    def update(self, score: float) -> None:
        """Fold a score into the baseline unless it is above threshold."""
        if score <= self.threshold:
            self._scores.append(score)
            self._dirty = True


def update_threshold(state: RollingThreshold, new_score: float) -> float:
    state.update(new_score)
    return state.threshold


# ---------------------------------------------------------------------------
# calibration

@dataclass
class ContextCalibration:
    mu0: float
    sigma0: float
    k: float
    fpr: float = 0.0
    recall: float = 0.0
    warned: bool = False


@dataclass
class CalibrationTable:
    contexts: dict = field(default_factory=dict)   # context key -> ContextCalibration
    severity_ratios: tuple = SEVERITY_RATIOS

    def for_context(self, key: str) -> ContextCalibration:
        if key in self.contexts:
            return self.contexts[key]
        if not self.contexts:
            raise ConfigError("empty calibration table")
        # unseen context: fall back to the most conservative known k
        worst = max(self.contexts.values(), key=lambda c: c.k)
        return worst


def calibrate(clean_scores: dict, anomaly_scores: dict, alpha: float = 0.01,
              k_grid: np.ndarray | None = None) -> CalibrationTable:
    """Pick per-context k: smallest k with validation FPR <= alpha.

    Smaller k means higher recall, so the smallest feasible k maximizes
    recall on the synthetic anomaly scores. Unattainable alpha falls
    back to the largest grid k with a warning flag.
    """
    if k_grid is None:
        k_grid = np.arange(1.0, 16.01, 0.25)
    if not clean_scores:
        raise InputError("no clean validation scores")
    table = CalibrationTable()
    for key, scores in clean_scores.items():
        scores = np.asarray(scores, dtype=float)
        if scores.size == 0:
            raise InputError(f"empty clean score set for context {key}")
        mu0 = float(scores.mean())
        sigma0 = float(scores.std())
        anoms = np.asarray(anomaly_scores.get(key, np.empty(0)), dtype=float)
        chosen = None
        for k in k_grid:
            thr = mu0 + k * sigma0
            fpr = float(np.mean(scores > thr))
            if fpr <= alpha:
                chosen = (float(k), fpr)
                break
        warned = chosen is None
        if chosen is None:
            chosen = (float(k_grid[-1]),
                      float(np.mean(scores > mu0 + k_grid[-1] * sigma0)))
        k, fpr = chosen
        thr = mu0 + k * sigma0
        recall = float(np.mean(anoms > thr)) if anoms.size else 0.0
        table.contexts[key] = ContextCalibration(mu0, sigma0, k, fpr, recall, warned)
    return table


def severity_from_ratio(ratio: float, dominant_sensor: str,
                        ratios: tuple = SEVERITY_RATIOS,
                        safety_critical: tuple = SAFETY_CRITICAL) -> Severity:
    grade = 0
    for i, cut in enumerate(ratios[1:], start=1):
        if ratio >= cut:
            grade = i
    if dominant_sensor in safety_critical:
        grade = min(grade + 1, int(Severity.CRITICAL))
    return Severity(grade)


# ---------------------------------------------------------------------------
# the assembled detector

@dataclass
class DetectorConfig:
    hidden: int = 32
    alpha: float = 0.01
    rolling_window: int = 300
    debounce: int = 2              # consecutive above-threshold scores to alert
    realert_interval_s: float = 5.0
    warmup_s: float = 8.0
    compute_delay_s: float = 0.01  # simulated per-window inference cost
    severity_ratios: tuple = SEVERITY_RATIOS
    safety_critical: tuple = SAFETY_CRITICAL
    confinement_share: float = 0.6
    attribution_floor: float = 0.35


@dataclass
class Detector:
    """Trained model plus everything needed to score a stream."""
    spec: WindowSpec
    params: LstmParams
    normalizer: NormalizationStats
    resid_std: np.ndarray
    calibration: CalibrationTable
    config: DetectorConfig = field(default_factory=DetectorConfig)

    def __post_init__(self):
        self._layout = feature_layout(self.spec)
        if len(self._layout) != self.params.input_dim:
            raise ConfigError("feature layout does not match model input dim")

    @property
    def layout(self) -> list:
        return self._layout

    def sensor_contributions(self, contributions: np.ndarray) -> dict:
        """Aggregate per-dim contributions up to physical sensors."""
        acc: dict[str, float] = {s: 0.0 for s in HEALTH_CHANNELS}
        for (name, sensors), c in zip(self._layout, contributions):
            share = float(c) / len(sensors)
            for s in sensors:
                acc[s] += share
        return acc

    def attribute(self, contributions: np.ndarray, degraded: tuple = ()
                  ) -> tuple[tuple, SuspectedKind]:
        by_sensor = self.sensor_contributions(contributions)
        total = sum(by_sensor.values())
        ranked = sorted(by_sensor, key=lambda s: (-by_sensor[s], s))
        if total <= 0.0:
            return (ranked[0],), SuspectedKind.UNKNOWN
        top_share = by_sensor[ranked[0]] / total
        affected = tuple(s for s in ranked if by_sensor[s] / total >= 0.15) or (ranked[0],)
        if degraded or top_share >= self.config.confinement_share:
            kind = SuspectedKind.SENSOR_FAULT
        elif top_share >= self.config.attribution_floor:
            kind = SuspectedKind.CYBERATTACK
        else:
            kind = SuspectedKind.UNKNOWN
        return affected, kind

    def emit_alert(self, identity: Identity, vehicle_id: int, timestamp: float,
                   score: float, threshold: float, contributions: np.ndarray,
                   degraded: tuple = ()) -> AnomalyAlert | None:
        """Build and sign an alert when score exceeds threshold."""
        if not score > threshold:
            return None
        affected, kind = self.attribute(contributions, degraded)
        if degraded:
            kind = SuspectedKind.SENSOR_FAULT
            affected = tuple(dict.fromkeys(list(degraded) + list(affected)))
        sev = severity_from_ratio(score / max(threshold, EPS_FLOOR), affected[0],
                                  self.config.severity_ratios,
                                  self.config.safety_critical)
        alert = AnomalyAlert(vehicle_id, timestamp, score, threshold, sev, kind,
                             affected, signer_id=identity.node_id)
        try:
            alert.signature = identity.sign(alert.canonical_bytes())
        except Exception:
            self.signing_failures = getattr(self, "signing_failures", 0) + 1
            return None
        return alert


# ---------------------------------------------------------------------------
# checkpointing

CHECKPOINT_VERSION = 1


def save_checkpoint(path, detector: Detector) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "spec": {"length": detector.spec.length, "stride": detector.spec.stride,
                 "channels": list(detector.spec.channels),
                 "n_bands": detector.spec.n_bands,
                 "pairs": [list(p) for p in detector.spec.pairs]},
        "config": {
            "hidden": detector.config.hidden,
            "alpha": detector.config.alpha,
            "rolling_window": detector.config.rolling_window,
            "debounce": detector.config.debounce,
            "realert_interval_s": detector.config.realert_interval_s,
            "warmup_s": detector.config.warmup_s,
            "compute_delay_s": detector.config.compute_delay_s,
            "severity_ratios": list(detector.config.severity_ratios),
            "safety_critical": list(detector.config.safety_critical),
            "confinement_share": detector.config.confinement_share,
            "attribution_floor": detector.config.attribution_floor,
        },
        "calibration": {
            "severity_ratios": list(detector.calibration.severity_ratios),
            "contexts": {
                key: {"mu0": c.mu0, "sigma0": c.sigma0, "k": c.k, "fpr": c.fpr,
                      "recall": c.recall, "warned": c.warned}
                for key, c in detector.calibration.contexts.items()
            },
        },
    }
    arrays = {f"lstm_{n}": getattr(detector.params, n) for n in MATRIX_NAMES}
    np.savez(path, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(),
                                      dtype=np.uint8),
             norm_mean=detector.normalizer.mean, norm_std=detector.normalizer.std,
             resid_std=detector.resid_std, **arrays)


def load_checkpoint(path) -> Detector:
    with np.load(path) as d:
        meta = json.loads(bytes(d["meta"]).decode())
        if meta["version"] != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {meta['version']}")
        spec = WindowSpec(length=meta["spec"]["length"], stride=meta["spec"]["stride"],
                          channels=tuple(meta["spec"]["channels"]),
                          n_bands=meta["spec"]["n_bands"],
                          pairs=tuple(tuple(p) for p in meta["spec"]["pairs"]))
        cfgm = meta["config"]
        config = DetectorConfig(
            hidden=cfgm["hidden"], alpha=cfgm["alpha"],
            rolling_window=cfgm["rolling_window"], debounce=cfgm["debounce"],
            realert_interval_s=cfgm["realert_interval_s"],
            warmup_s=cfgm["warmup_s"], compute_delay_s=cfgm["compute_delay_s"],
            severity_ratios=tuple(cfgm["severity_ratios"]),
            safety_critical=tuple(cfgm["safety_critical"]),
            confinement_share=cfgm["confinement_share"],
            attribution_floor=cfgm["attribution_floor"])
        table = CalibrationTable(severity_ratios=tuple(meta["calibration"]["severity_ratios"]))
        for key, c in meta["calibration"]["contexts"].items():
            table.contexts[key] = ContextCalibration(**c)
        params = LstmParams(*(d[f"lstm_{n}"] for n in MATRIX_NAMES))
        norm = NormalizationStats(d["norm_mean"], d["norm_std"])
        return Detector(spec, params, norm, d["resid_std"], table, config)


# ---------------------------------------------------------------------------
# batch scoring used by calibration and offline evaluation

def score_feature_sequence(detector: Detector, values: np.ndarray) -> np.ndarray:
    """Scores for one vehicle's consecutive (already extracted) features.

    values: (n, dim) raw feature rows, in window order. Returns (n,)
    scores; the first row has no prediction and scores 0.
    """
    normed = detector.normalizer.apply(values)
    n = normed.shape[0]
    scores = np.zeros(n)
    h = np.zeros(detector.params.hidden)
    c = np.zeros(detector.params.hidden)
    pred = None
    for t in range(n):
        x = normed[t]
        if pred is not None:
            scores[t], _ = score_vector(x, pred, detector.resid_std)
        pred, h, c = lstm_step(detector.params, x, h, c)
    return scores
