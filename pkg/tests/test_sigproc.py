import numpy as np
import pytest

from sscirl import sigproc
from sscirl.sigproc import (BandpassSpec, Observation, SignalTrace, TraceError,
                            bandpass, bandpass_gain, downsample,
                            extract_window, oscillation_energy, segment)


def sine(freq, rate, duration, amp=1.0):
    t = np.arange(int(round(duration * rate))) / rate
    return SignalTrace(amp * np.sin(2 * np.pi * freq * t), rate)


def steady_amplitude(trace, settle=0.5):
    i = int(settle * trace.sample_rate)
    return np.max(np.abs(trace.samples[i:]))


class TestTraceValidation:
    def test_rejects_nan(self):
        with pytest.raises(TraceError):
            SignalTrace(np.array([0.0, np.nan]), 100.0)

    def test_rejects_nonpositive_rate(self):
        with pytest.raises(TraceError):
            SignalTrace(np.zeros(4), 0.0)

    def test_empty_trace_rejected_by_operators(self):
        empty = SignalTrace(np.array([]), 100.0)
        with pytest.raises(TraceError):
            downsample(empty, 10.0)


class TestDownsample:
    def test_table_rates(self):
        # 5 kHz, 50 000 samples -> 100 Hz, 1 000 samples
        trace = SignalTrace(np.random.default_rng(0).standard_normal(50000), 5000.0)
        out = downsample(trace, 100.0)
        assert out.sample_rate == 100.0
        assert len(out) == 1000

    def test_constant_invariance(self):
        trace = SignalTrace(np.full(5000, 0.7), 5000.0)
        out = downsample(trace, 100.0)
        assert np.allclose(out.samples, 0.7, atol=1e-12)

    def test_low_frequency_sine_preserved(self):
        # 1 Hz is deep inside the 45 Hz anti-aliasing passband
        out = downsample(sine(1.0, 5000.0, 10.0), 100.0)
        assert abs(steady_amplitude(out, settle=1.0) - 1.0) < 0.01

    def test_incompatible_rates(self):
        trace = sine(1.0, 5000.0, 1.0)
        with pytest.raises(TraceError, match="incompatible rates"):
            downsample(trace, 300.0)

    def test_linearity(self):
        rng = np.random.default_rng(1)
        x, y = rng.standard_normal(4000), rng.standard_normal(4000)
        a, b = 1.7, -0.4
        lhs = downsample(SignalTrace(a * x + b * y, 2000.0), 100.0).samples
        rhs = (a * downsample(SignalTrace(x, 2000.0), 100.0).samples
               + b * downsample(SignalTrace(y, 2000.0), 100.0).samples)
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(lhs))


class TestBandpass:
    SPEC = BandpassSpec(15.0, 55.0, 4)

    def test_dc_rejection(self):
        out = bandpass(SignalTrace(np.ones(25000), 5000.0), self.SPEC)
        assert steady_amplitude(out, settle=2.0) <= 1e-3

    def test_inband_gain_matches_transfer_function(self):
        # steady-state amplitude of a 48 Hz sine equals |H| of the design
        out = bandpass(sine(48.0, 5000.0, 20.0), self.SPEC)
        expected = bandpass_gain(self.SPEC, 5000.0, 48.0)[0]
        tail = out.samples[len(out) // 2:]
        measured = np.max(np.abs(tail))
        assert abs(measured - expected) < 1e-6

    def test_stopband_attenuation(self):
        out = bandpass(sine(5.0, 5000.0, 20.0), self.SPEC)
        assert steady_amplitude(out, settle=10.0) <= 0.05

    def test_nyquist_guard_names_frequencies(self):
        with pytest.raises(TraceError, match=r"55.*Nyquist.*50"):
            bandpass(sine(5.0, 100.0, 2.0), self.SPEC)

    def test_odd_order_rejected(self):
        with pytest.raises(TraceError):
            BandpassSpec(15.0, 55.0, 3)

    def test_linearity(self):
        rng = np.random.default_rng(2)
        x, y = rng.standard_normal(5000), rng.standard_normal(5000)
        a, b = 0.3, 2.1
        lhs = bandpass(SignalTrace(a * x + b * y, 5000.0), self.SPEC).samples
        rhs = (a * bandpass(SignalTrace(x, 5000.0), self.SPEC).samples
               + b * bandpass(SignalTrace(y, 5000.0), self.SPEC).samples)
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(lhs))

    def test_impulse_response_decays(self):
        rate = 5000.0
        n = int(10 * rate / self.SPEC.f_min)
        impulse = np.zeros(2 * n)
        impulse[0] = 1.0
        h = bandpass(SignalTrace(impulse, rate), self.SPEC).samples
        assert np.max(np.abs(h[n:2 * n])) < np.max(np.abs(h[:n]))


class TestExtractWindow:
    def make_trace(self):
        return SignalTrace(np.arange(1000, dtype=float), 100.0)

    def test_prefix_window(self):
        obs = extract_window(self.make_trace(), 0.0, 30)
        assert np.array_equal(obs.values, np.arange(30))
        assert obs.window_start == 0.0

    def test_boundary_error(self):
        with pytest.raises(TraceError, match="window exceeds trace"):
            extract_window(self.make_trace(), 9.8, 30)

    def test_window_spans_expected_duration(self):
        obs = extract_window(self.make_trace(), 4.63, 30)
        assert len(obs.values) == 30
        assert obs.window_start == pytest.approx(4.63)
        # 30 samples at 100 Hz span 0.3 s
        assert 29 / 100.0 == pytest.approx(0.29)

    def test_start_between_samples_rounds_up(self):
        obs = extract_window(self.make_trace(), 0.015, 5)
        assert obs.values[0] == 2  # first sample index with t >= 0.015


class TestOscillationEnergy:
    def test_zero_signal(self):
        trace = SignalTrace(np.zeros(1000), 100.0)
        assert oscillation_energy(trace, 0.0, 5.0) == 0.0

    def test_unit_sine_integer_periods(self):
        periods = 96  # exactly 2 s of 48 Hz
        horizon = periods / 48.0
        trace = sine(48.0, 5000.0, horizon + 0.01)
        energy = oscillation_energy(trace, 0.0, horizon)
        assert energy == pytest.approx(horizon / 2, rel=5e-3)

    def test_nominal_offset_cancels(self):
        trace = SignalTrace(np.full(500, 0.3), 100.0)
        assert oscillation_energy(trace, 0.3, 3.0) == 0.0

    def test_horizon_exceeds_trace(self):
        trace = SignalTrace(np.zeros(100), 100.0)
        with pytest.raises(TraceError):
            oscillation_energy(trace, 0.0, 2.0)

    def test_quadratic_scaling(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(2000)
        e1 = oscillation_energy(SignalTrace(x, 1000.0), 0.0, 1.5)
        e3 = oscillation_energy(SignalTrace(3.0 * x, 1000.0), 0.0, 1.5)
        assert abs(e3 - 9.0 * e1) <= 1e-12 * e3
        assert e1 > 0


class TestPipeline:
    def test_filter_then_decimate_commutes_for_inband_signals(self):
        # spectrum inside [15, min(55, 0.45 * target)]: 20 + 48 Hz content
        rate, target = 5000.0, 1000.0
        t = np.arange(100000) / rate
        x = np.sin(2 * np.pi * 20 * t) + 0.5 * np.sin(2 * np.pi * 48 * t)
        trace = SignalTrace(x, rate)
        spec = BandpassSpec(15.0, 55.0, 4)
        a = downsample(bandpass(trace, spec), target)
        b = bandpass(downsample(trace, target), spec)
        tail = slice(len(a) // 2, None)
        ref = np.max(np.abs(a.samples[tail]))
        assert np.max(np.abs(a.samples[tail] - b.samples[tail])) <= 0.02 * ref

    def test_post_decimation_clamps_and_warns(self):
        trace = sine(20.0, 5000.0, 4.0)
        with pytest.warns(UserWarning, match="clamped"):
            filtered, observed = sigproc.pipeline(
                trace, BandpassSpec(15.0, 55.0, 4), 100.0,
                stage=sigproc.POST_DECIMATION)
        assert filtered.sample_rate == 100.0
        assert observed is filtered

    def test_unknown_stage(self):
        with pytest.raises(TraceError):
            sigproc.pipeline(sine(20.0, 5000.0, 1.0),
                             BandpassSpec(15.0, 55.0, 4), 100.0, stage="bogus")


class TestCsvRoundTrip:
    def test_roundtrip(self, tmp_path):
        trace = sine(7.0, 5000.0, 1.0)
        path = tmp_path / "trace.csv"
        sigproc.write_trace_csv(trace, path)
        back = sigproc.read_trace_csv(path)
        assert back.sample_rate == pytest.approx(5000.0, abs=1e-6)
        assert np.array_equal(back.samples, trace.samples)
        assert back.t0 == trace.t0

    def test_nonuniform_spacing_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t,value\n0.0,1.0\n0.01,1.0\n0.03,1.0\n")
        with pytest.raises(TraceError, match="non-uniform"):
            sigproc.read_trace_csv(path)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,v\n0.0,1.0\n")
        with pytest.raises(TraceError, match="header"):
            sigproc.read_trace_csv(path)


def test_segment_bounds():
    trace = SignalTrace(np.arange(100, dtype=float), 100.0)
    seg = segment(trace, 0.25, 0.5)
    assert np.array_equal(seg.samples, np.arange(25, 50))
    assert seg.t0 == pytest.approx(0.25)
    with pytest.raises(TraceError):
        segment(trace, 5.0, 6.0)
