import numpy as np
import pytest

from avguard.attacks import (
    AttackKind,
    AttackRanges,
    AttackScenario,
    FailureMode,
    StreamingInjector,
    inject,
    make_campaign,
)
from avguard.errors import ConfigError, InputError
from avguard.fleet import FleetConfig, gen_fleet_trace, export_trace
from avguard.rng import substream


@pytest.fixture(scope="module")
def clean_trace():
    cfg = FleetConfig(n_vehicles=3, duration_s=60.0, f_s=10)
    return gen_fleet_trace(cfg, 101)


def test_empty_window_is_identity(clean_trace):
    sc = AttackScenario(AttackKind.GPS_SPOOF, 0, "gps", 10.0, 0.0,
                        {"offset_x": 5.0, "offset_y": 0.0})
    out = inject(clean_trace, sc)
    assert export_trace(out.trace) == export_trace(clean_trace)
    assert not any(lab.any() for lab in out.labels.values())


def test_gps_spoof_exact_offset_and_locality(clean_trace):
    sc = AttackScenario(AttackKind.GPS_SPOOF, 1, "gps", 10.0, 10.0,
                        {"offset_x": 5.0, "offset_y": 0.0})
    out = inject(clean_trace, sc)
    clean = clean_trace.tracks[1]
    tamp = out.trace.tracks[1]
    in_win = (clean.t >= 10.0) & (clean.t < 20.0)
    diff = tamp.col("gps_x") - clean.col("gps_x")
    assert np.all(diff[in_win] == 5.0)
    assert np.all(diff[~in_win] == 0.0)
    # all other fields and vehicles untouched, byte for byte
    other_fields = [f for f in ("gps_y",) if True]
    assert np.array_equal(tamp.col("gps_y")[in_win], clean.col("gps_y")[in_win] + 0.0)
    for vid in (0, 2):
        assert np.array_equal(out.trace.tracks[vid].values, clean_trace.tracks[vid].values)
    assert out.labels[1].sum() == in_win.sum()
    assert np.array_equal(out.labels[1], in_win)


def test_gradual_drift_linear_ramp(clean_trace):
    sc = AttackScenario(AttackKind.GRADUAL_DRIFT, 0, "gps_x", 30.0, 25.0,
                        {"rate": 0.1})
    out = inject(clean_trace, sc)
    clean = clean_trace.tracks[0]
    tamp = out.trace.tracks[0]
    i = int(np.argmin(np.abs(clean.t - 50.0)))
    assert abs(clean.t[i] - 50.0) < 1e-9
    assert abs((tamp.col("gps_x")[i] - clean.col("gps_x")[i]) - 2.0) < 1e-9
    # continuity at onset: first in-window frame offset is ~0
    j = int(np.searchsorted(clean.t, 30.0))
    onset = tamp.col("gps_x")[j] - clean.col("gps_x")[j]
    assert abs(onset) <= 0.1 * 0.1 + 1e-12


def test_hardware_stuck_freezes_channel(clean_trace):
    sc = AttackScenario(AttackKind.HARDWARE_FAILURE, 0, "radar", 20.0, 10.0,
                        {"mode": "stuck"})
    out = inject(clean_trace, sc)
    tr = out.trace.tracks[0]
    in_win = (tr.t >= 20.0) & (tr.t < 30.0)
    vals = tr.col("radar_speed")[in_win]
    assert np.all(vals == vals[0])


def test_hardware_dropout_sets_sentinel_and_flag(clean_trace):
    sc = AttackScenario(AttackKind.HARDWARE_FAILURE, 2, "lidar", 15.0, 5.0,
                        {"mode": "dropout"})
    out = inject(clean_trace, sc)
    tr = out.trace.tracks[2]
    in_win = (tr.t >= 15.0) & (tr.t < 20.0)
    assert np.all(np.isnan(tr.col("lidar_range")[in_win]))
    from avguard.fleet import HEALTH_CHANNELS
    li = HEALTH_CHANNELS.index("lidar")
    assert not tr.health[in_win, li].any()
    assert tr.health[~in_win, li].all()


def test_noise_burst_raises_sigma(clean_trace):
    sc = AttackScenario(AttackKind.HARDWARE_FAILURE, 0, "gps", 10.0, 40.0,
                        {"mode": "noise_burst"})
    out = inject(clean_trace, sc, rng=substream(5, "burst"))
    clean = clean_trace.tracks[0]
    tamp = out.trace.tracks[0]
    in_win = (clean.t >= 10.0) & (clean.t < 50.0)
    added = (tamp.col("gps_x") - clean.col("gps_x"))[in_win]
    # added noise std should be ~ sqrt(99)*0.5 ~ 4.97
    assert 3.5 < added.std() < 6.5


def test_lidar_manipulation_law(clean_trace):
    sc = AttackScenario(AttackKind.LIDAR_MANIPULATION, 1, "lidar", 10.0, 10.0,
                        {"density_scale": 0.5, "phantom_range_bias": 2.0})
    out = inject(clean_trace, sc)
    clean = clean_trace.tracks[1]
    tamp = out.trace.tracks[1]
    in_win = (clean.t >= 10.0) & (clean.t < 20.0)
    assert np.allclose(tamp.col("lidar_density")[in_win],
                       clean.col("lidar_density")[in_win] * 0.5)
    assert np.allclose(tamp.col("lidar_range")[in_win],
                       clean.col("lidar_range")[in_win] + 2.0)


def test_window_outside_trace_rejected(clean_trace):
    sc = AttackScenario(AttackKind.GPS_SPOOF, 0, "gps", 50.0, 20.0,
                        {"offset_x": 1.0, "offset_y": 0.0})
    with pytest.raises(InputError):
        inject(clean_trace, sc)


def test_unknown_target_rejected(clean_trace):
    sc = AttackScenario(AttackKind.GPS_SPOOF, 0, "bogus", 10.0, 5.0,
                        {"offset_x": 1.0, "offset_y": 0.0})
    with pytest.raises(InputError):
        inject(clean_trace, sc)


def test_streaming_injector_matches_batch(clean_trace):
    scenarios = [
        AttackScenario(AttackKind.GPS_SPOOF, 0, "gps", 10.0, 10.0,
                       {"offset_x": 3.0, "offset_y": -4.0}),
        AttackScenario(AttackKind.GRADUAL_DRIFT, 0, "radar_speed", 20.0, 30.0,
                       {"rate": 0.05}),
        AttackScenario(AttackKind.HARDWARE_FAILURE, 0, "radar", 15.0, 10.0,
                       {"mode": "stuck"}),
        AttackScenario(AttackKind.HARDWARE_FAILURE, 0, "lidar", 15.0, 10.0,
                       {"mode": "dropout"}),
    ]
    for sc in scenarios:
        batch = inject(clean_trace, sc, rng=substream(1, "x"))
        stream_track = clean_trace.tracks[0].copy()
        inj = StreamingInjector(sc, substream(1, "x"))
        labels = []
        for i in range(stream_track.n_frames()):
            lab = inj.apply(0, float(stream_track.t[i]), stream_track.values[i],
                            stream_track.health[i])
            labels.append(lab)
        expect = batch.trace.tracks[0].values
        assert np.array_equal(np.isnan(expect), np.isnan(stream_track.values))
        assert np.array_equal(np.nan_to_num(expect), np.nan_to_num(stream_track.values))
        assert np.array_equal(np.array(labels), batch.labels[0])


class TestCampaign:
    def test_counts(self):
        scenarios = make_campaign(list(AttackKind), 100, AttackRanges(), 10, 60.0, 7)
        assert len(scenarios) == 400
        for kind in AttackKind:
            assert sum(1 for s in scenarios if s.kind is kind) == 100

    def test_degenerate_range(self):
        r = AttackRanges(spoof_offset_m=(5.0, 5.0))
        scenarios = make_campaign([AttackKind.GPS_SPOOF], 1, r, 4, 60.0, 3)
        mag = np.hypot(scenarios[0].params["offset_x"], scenarios[0].params["offset_y"])
        assert abs(mag - 5.0) < 1e-9

    def test_determinism(self):
        a = make_campaign(list(AttackKind), 5, AttackRanges(), 10, 60.0, 99)
        b = make_campaign(list(AttackKind), 5, AttackRanges(), 10, 60.0, 99)
        assert a == b

    def test_empty_range_rejected(self):
        with pytest.raises(ConfigError):
            make_campaign([AttackKind.GPS_SPOOF], 1,
                          AttackRanges(spoof_offset_m=(5.0, 2.0)), 4, 60.0, 1)

    def test_windows_inside_trace(self):
        for sc in make_campaign(list(AttackKind), 50, AttackRanges(), 10, 60.0, 11):
            assert 0 <= sc.start_s
            assert sc.end_s <= 60.0 + 1e-9
