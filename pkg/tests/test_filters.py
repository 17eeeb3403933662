from __future__ import annotations

import numpy as np
import pytest

from roadgrip.filters import FilterSpec, two_way_filter, zero_phase_smooth


def sine(freq_hz, fs=100.0, seconds=6.0):
    t = np.arange(int(seconds * fs)) / fs
    return t, np.sin(2 * np.pi * freq_hz * t)


def central_gain(x, y, fs=100.0):
    lo, hi = int(fs), len(x) - int(fs)
    return float(np.std(y[lo:hi]) / np.std(x[lo:hi]))


class TestTwoWayFilter:
    def test_constant_passes_unchanged(self):
        x = np.full(400, 3.7)
        y = two_way_filter(x)
        assert np.allclose(y, 3.7, atol=1e-9)

    def test_passband_tone_keeps_amplitude_and_phase(self):
        t, x = sine(1.0)
        y = two_way_filter(x)
        assert central_gain(x, y) >= 0.99
        lo, hi = 100, len(x) - 100
        lags = np.arange(-20, 21)
        corr = [np.dot(x[lo:hi], np.roll(y, k)[lo:hi]) for k in lags]
        assert lags[int(np.argmax(corr))] == 0

    def test_stopband_tone_is_suppressed(self):
        t, x = sine(40.0)
        y = two_way_filter(x)
        assert central_gain(x, y) <= 0.01

    def test_mixed_tone_recovers_slow_component(self):
        t, slow = sine(0.5)
        _, fast = sine(35.0)
        y = two_way_filter(slow + 0.5 * fast)
        lo, hi = 100, len(slow) - 100
        assert np.max(np.abs(y[lo:hi] - slow[lo:hi])) < 0.02

    def test_rejects_short_signals(self):
        spec = FilterSpec()
        with pytest.raises(ValueError):
            two_way_filter(np.zeros(3 * spec.order), spec)

    def test_rejects_odd_order(self):
        with pytest.raises(ValueError):
            FilterSpec(order=31)

    def test_preserves_length_and_finiteness(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=500)
        y = two_way_filter(x)
        assert len(y) == len(x)
        assert np.all(np.isfinite(y))


class TestZeroPhaseSmooth:
    def test_constant_fixed_point(self):
        x = np.full(300, -1.25)
        assert np.allclose(zero_phase_smooth(x, 0.5), -1.25, atol=1e-9)

    def test_denoises_slow_signal_without_lag(self):
        # 0.05 Hz sits well under the 0.32 Hz corner of a 0.5 s smoother
        fs = 100.0
        t = np.arange(3000) / fs
        clean = np.sin(2 * np.pi * 0.05 * t)
        rng = np.random.default_rng(3)
        noisy = clean + rng.normal(scale=0.3, size=len(t))
        y = zero_phase_smooth(noisy, 0.5, fs)
        lo, hi = 200, len(t) - 200
        resid = y[lo:hi] - clean[lo:hi]
        assert np.sqrt(np.mean(resid**2)) < 0.08
        # peak positions line up (no phase delay)
        assert abs(int(np.argmax(y[lo:hi])) - int(np.argmax(clean[lo:hi]))) <= 25

    def test_rejects_bad_tau(self):
        with pytest.raises(ValueError):
            zero_phase_smooth(np.zeros(100), 0.0)
