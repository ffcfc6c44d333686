import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from avguard.errors import ConfigError
from avguard.features import (
    CHANNELS,
    WindowSpec,
    cross_sensor_correlation,
    dc_energy,
    derive_channels,
    extract_features,
    feature_layout,
    feature_matrix,
    fit_normalizer,
    apply_normalizer,
    spectral_features,
    statistical_moments,
    window_count,
    window_view,
)
from avguard.fleet import FleetConfig, gen_fleet_trace
from avguard.rng import substream


def _win(arr):
    """Wrap a 1-D array as a (1, L, 1) window batch."""
    a = np.asarray(arr, dtype=float)
    return a[None, :, None]


class TestWindowing:
    def test_counting_formula(self):
        assert window_count(600, 32, 1) == 569
        assert window_count(32, 32, 1) == 1
        assert window_count(64, 32, 32) == 2

    def test_window_view_matches_count(self):
        x = np.arange(100, dtype=float)[:, None]
        spec = WindowSpec(length=32, stride=3, channels=("a",), pairs=())
        win, warned = window_view(x, spec)
        assert not warned
        assert win.shape[0] == window_count(100, 32, 3)
        assert np.array_equal(win[1, :, 0], np.arange(3, 35, dtype=float))

    def test_short_trace_warns_empty(self):
        x = np.zeros((10, 1))
        spec = WindowSpec(length=32, channels=("a",), pairs=())
        win, warned = window_view(x, spec)
        assert warned and win.shape[0] == 0

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            WindowSpec(length=3)
        with pytest.raises(ConfigError):
            WindowSpec(stride=0)


class TestMoments:
    def test_direct_formula(self):
        m = statistical_moments(_win([1.0, 2.0, 3.0, 4.0]))[0, 0]
        assert m[0] == 2.5
        assert m[1] == 1.25

    def test_constant_channel_degenerate(self):
        m = statistical_moments(_win([3.0] * 8))[0, 0]
        assert m[0] == 3.0
        assert m[1] == 0.0
        assert m[2] == 0.0
        assert m[3] == 0.0

    def test_mirror_negates_skew(self):
        x = np.array([0.0, 0.1, 0.2, 5.0, 0.3, 0.1, 0.0, 0.2])
        ma = statistical_moments(_win(x))[0, 0]
        mb = statistical_moments(_win(-x))[0, 0]
        assert abs(ma[1] - mb[1]) < 1e-12
        assert abs(ma[2] + mb[2]) < 1e-12

    def test_shift_invariance_beyond_mean(self):
        rng = substream(5, "m")
        x = rng.standard_normal(32)
        a = statistical_moments(_win(x))[0, 0]
        b = statistical_moments(_win(x + 1000.0))[0, 0]
        assert abs(a[1] - b[1]) <= 1e-9 * max(1.0, abs(a[1]))
        assert abs(a[2] - b[2]) <= 1e-6
        assert abs(a[3] - b[3]) <= 1e-6

    def test_all_dropout_window_gives_zeros(self):
        m = statistical_moments(_win([np.nan] * 8))[0, 0]
        assert np.array_equal(m, np.zeros(4))

    def test_partial_dropout_uses_valid_only(self):
        x = np.array([1.0, np.nan, 2.0, np.nan, 3.0, 4.0, np.nan, np.nan])
        m = statistical_moments(_win(x))[0, 0]
        assert m[0] == 2.5
        assert m[1] == 1.25


class TestSpectral:
    def test_zero_signal_zero_bands(self):
        bands = spectral_features(_win(np.zeros(32)))[0, 0]
        assert np.array_equal(bands, np.zeros(4))

    def test_sinusoid_energy_in_band(self):
        L = 32
        t = np.arange(L)
        # band 1 covers bins 5..8; bin 6 sits in band 1
        x = np.sin(2 * np.pi * 6 * t / L)
        bands = spectral_features(_win(x))[0, 0]
        assert bands[1] / bands.sum() >= 0.9

    def test_parseval_identity(self):
        rng = substream(9, "sp")
        x = rng.standard_normal(32)
        w = _win(x)
        bands = spectral_features(w)[0, 0]
        dc = dc_energy(w)[0, 0]
        mean_sq = np.mean(x * x)
        assert abs((dc + bands.sum()) - mean_sq) <= 1e-9 * mean_sq

    def test_non_pow2_padded_by_edge(self):
        x = np.ones(20)
        bands = spectral_features(_win(x))[0, 0]
        # constant signal: all energy at DC
        assert np.all(np.abs(bands) < 1e-18)


class TestCorrelation:
    def test_self_correlation_is_one(self):
        rng = substream(3, "c")
        x = rng.standard_normal(64)
        w = np.stack([x, x], axis=-1)[None]
        rho = cross_sensor_correlation(w, ("a", "b"), (("a", "b"),))[0, 0]
        assert abs(rho - 1.0) < 1e-12

    def test_antisymmetry(self):
        rng = substream(4, "c")
        x = rng.standard_normal(64)
        w = np.stack([x, -x], axis=-1)[None]
        rho = cross_sensor_correlation(w, ("a", "b"), (("a", "b"),))[0, 0]
        assert abs(rho + 1.0) < 1e-12

    def test_independent_channels_small_rho(self):
        rng = substream(5, "c")
        w = np.stack([rng.standard_normal(1024), rng.standard_normal(1024)], axis=-1)[None]
        rho = cross_sensor_correlation(w, ("a", "b"), (("a", "b"),))[0, 0]
        assert abs(rho) < 0.15

    def test_constant_channel_convention(self):
        w = np.stack([np.ones(32), np.arange(32.0)], axis=-1)[None]
        rho = cross_sensor_correlation(w, ("a", "b"), (("a", "b"),))[0, 0]
        assert rho == 0.0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_fuzzed_windows_bounded(self, seed):
        rng = np.random.default_rng(seed)
        w = rng.normal(scale=rng.uniform(0.001, 100.0), size=(4, 16, 2))
        rho = cross_sensor_correlation(w, ("a", "b"), (("a", "b"),))
        assert np.all(rho >= -1.0) and np.all(rho <= 1.0)


class TestNormalizer:
    def test_zscore_of_training_set(self):
        rng = substream(6, "n")
        X = rng.normal(5.0, 3.0, size=(500, 8))
        stats = fit_normalizer(X)
        Z = apply_normalizer(X, stats)
        assert np.all(np.abs(Z.mean(axis=0)) < 1e-6)
        assert np.all(np.abs(Z.std(axis=0) - 1.0) < 1e-6)

    def test_constant_dimension_floored(self):
        X = np.column_stack([np.full(100, 7.0), np.arange(100.0)])
        stats = fit_normalizer(X)
        Z = apply_normalizer(X, stats)
        assert np.all(Z[:, 0] == 0.0)

    def test_round_trip_persistence(self, tmp_path):
        rng = substream(7, "n")
        X = rng.standard_normal((50, 4))
        stats = fit_normalizer(X)
        p = tmp_path / "norm.npz"
        np.savez(p, mean=stats.mean, std=stats.std)
        with np.load(p) as d:
            from avguard.features import NormalizationStats
            back = NormalizationStats(d["mean"], d["std"])
        assert np.array_equal(apply_normalizer(X, back), apply_normalizer(X, stats))


class TestEndToEnd:
    def test_feature_dim_is_constant(self):
        cfg = FleetConfig(n_vehicles=2, duration_s=30.0, f_s=10)
        trace = gen_fleet_trace(cfg, 8)
        spec = WindowSpec()
        layout = feature_layout(spec)
        assert len(layout) == spec.dim
        for tr in trace.tracks.values():
            block = extract_features(tr, 10.0, spec, list(cfg.schedule))
            assert block.values.shape == (window_count(300, 32, 1), spec.dim)
            assert np.all(np.isfinite(block.values))

    def test_dropout_never_produces_nan_features(self):
        from avguard.attacks import AttackKind, AttackScenario, inject
        cfg = FleetConfig(n_vehicles=1, duration_s=30.0, f_s=10)
        trace = gen_fleet_trace(cfg, 8)
        sc = AttackScenario(AttackKind.HARDWARE_FAILURE, 0, "gps", 10.0, 10.0,
                            {"mode": "dropout"})
        out = inject(trace, sc)
        block = extract_features(out.trace.tracks[0], 10.0, WindowSpec(),
                                 list(cfg.schedule))
        assert np.all(np.isfinite(block.values))

    def test_single_window_matches_batch(self):
        cfg = FleetConfig(n_vehicles=1, duration_s=20.0, f_s=10)
        trace = gen_fleet_trace(cfg, 8)
        spec = WindowSpec()
        chans = derive_channels(trace.tracks[0], 10.0, spec.channels)
        win, _ = window_view(chans, spec)
        batch = feature_matrix(win, spec)
        for i in (0, 50, 100):
            single = feature_matrix(win[i:i + 1].copy(), spec)
            assert np.array_equal(single[0], batch[i])
