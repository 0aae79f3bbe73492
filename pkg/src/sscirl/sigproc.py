"""Signal conditioning for the oscillation-mitigation loop.

Down-sampling with anti-aliasing, Butterworth band-pass filtering,
observation window extraction, and the oscillation-energy functional
whose negation is the training reward.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import signal


class TraceError(ValueError):
    """Raised on invalid traces or incompatible operator arguments."""


def _as_finite_array(samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 1:
        raise TraceError(f"trace samples must be 1-D, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise TraceError("trace contains non-finite samples")
    return arr


@dataclass
class SignalTrace:
    """Uniformly sampled scalar time series.

    samples are per-unit active power; sample_rate in Hz; t0 is the time
    of the first sample in seconds.
    """

    samples: np.ndarray
    sample_rate: float
    t0: float = 0.0

    def __post_init__(self):
        self.samples = _as_finite_array(self.samples)
        if not (self.sample_rate > 0):
            raise TraceError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def duration(self) -> float:
        """Time span from the first to the last sample."""
        return (len(self) - 1) * self.dt

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self)) / self.sample_rate

    def _require_nonempty(self, op: str):
        if len(self) == 0:
            raise TraceError(f"{op}: empty trace")


@dataclass(frozen=True)
class BandpassSpec:
    """Butterworth band-pass design: pass band [f_min, f_max] Hz, even design order."""

    f_min: float
    f_max: float
    order: int = 4

    def __post_init__(self):
        if not (0 < self.f_min < self.f_max):
            raise TraceError(f"need 0 < f_min < f_max, got ({self.f_min}, {self.f_max})")
        if self.order < 2 or self.order % 2 != 0:
            raise TraceError(f"filter order must be a positive even integer, got {self.order}")


@dataclass
class Observation:
    """Fixed-length processed window fed to the policy."""

    values: np.ndarray
    window_start: float

    def __post_init__(self):
        self.values = _as_finite_array(self.values)


# ---------------------------------------------------------------------------
# operators

ANTI_ALIAS_ORDER = 8
ANTI_ALIAS_REL_CUTOFF = 0.45  # of the target rate


def downsample(trace: SignalTrace, target_rate: float) -> SignalTrace:
    """Decimate to target_rate after an anti-aliasing low-pass.

    The decimation factor must be an integer. The low-pass is an 8th-order
    Butterworth at 0.45*target_rate, initialized at step steady state so a
    constant trace passes through unchanged (unit DC gain, no start-up
    transient).
    """
    trace._require_nonempty("downsample")
    if not (target_rate > 0):
        raise TraceError(f"target_rate must be positive, got {target_rate}")
    factor = trace.sample_rate / target_rate
    if abs(factor - round(factor)) > 1e-9 or round(factor) < 1:
        raise TraceError(
            f"incompatible rates: {trace.sample_rate} Hz is not an integer "
            f"multiple of {target_rate} Hz"
        )
    factor = int(round(factor))
    if factor == 1:
        return SignalTrace(trace.samples.copy(), trace.sample_rate, trace.t0)

    cutoff = ANTI_ALIAS_REL_CUTOFF * target_rate
    sos = signal.butter(ANTI_ALIAS_ORDER, cutoff, btype="lowpass",
                        fs=trace.sample_rate, output="sos")
    zi = signal.sosfilt_zi(sos) * trace.samples[0]
    smooth, _ = signal.sosfilt(sos, trace.samples, zi=zi)
    return SignalTrace(smooth[::factor], target_rate, trace.t0)


def design_bandpass(spec: BandpassSpec, sample_rate: float) -> np.ndarray:
    """Second-order sections of the discrete band-pass (bilinear transform
    with frequency pre-warping, as done by scipy's butter)."""
    nyquist = 0.5 * sample_rate
    if spec.f_max >= nyquist:
        raise TraceError(
            f"band-pass upper cutoff {spec.f_max} Hz violates the Nyquist "
            f"frequency {nyquist} Hz at sample rate {sample_rate} Hz"
        )
    return signal.butter(spec.order, [spec.f_min, spec.f_max],
                         btype="bandpass", fs=sample_rate, output="sos")


def bandpass(trace: SignalTrace, spec: BandpassSpec) -> SignalTrace:
    """Causal single-pass Butterworth band-pass with zero initial state."""
    trace._require_nonempty("bandpass")
    sos = design_bandpass(spec, trace.sample_rate)
    return SignalTrace(signal.sosfilt(sos, trace.samples), trace.sample_rate, trace.t0)


def bandpass_gain(spec: BandpassSpec, sample_rate: float, freqs) -> np.ndarray:
    """Analytic magnitude of the designed discrete filter at the given
    frequencies (Hz). Independent of any time-domain filtering path."""
    sos = design_bandpass(spec, sample_rate)
    _, h = signal.sosfreqz(sos, worN=np.atleast_1d(np.asarray(freqs, dtype=float)),
                           fs=sample_rate)
    return np.abs(h)


def extract_window(trace: SignalTrace, start: float, d_obs: int) -> Observation:
    """Take d_obs consecutive samples beginning at the first sample with
    time >= start."""
    trace._require_nonempty("extract_window")
    if d_obs < 1:
        raise TraceError(f"d_obs must be >= 1, got {d_obs}")
    i0 = int(np.ceil((start - trace.t0) * trace.sample_rate - 1e-9))
    i0 = max(i0, 0)
    if i0 + d_obs > len(trace):
        raise TraceError(
            f"window exceeds trace: need {d_obs} samples from index {i0}, "
            f"trace has {len(trace)}"
        )
    return Observation(trace.samples[i0:i0 + d_obs].copy(),
                       trace.t0 + i0 / trace.sample_rate)


def oscillation_energy(trace: SignalTrace, p_nom: float, horizon: float) -> float:
    """Trapezoidal integral of (x - p_nom)^2 over the first `horizon`
    seconds of the trace."""
    trace._require_nonempty("oscillation_energy")
    if not np.isfinite(p_nom):
        raise TraceError("p_nom must be finite")
    n_end = horizon * trace.sample_rate
    if n_end > len(trace) - 1 + 1e-9:
        raise TraceError(
            f"horizon {horizon} s exceeds trace duration {trace.duration} s"
        )
    n_end = int(round(n_end))
    dev = trace.samples[:n_end + 1] - p_nom
    return float(np.trapezoid(dev * dev, dx=trace.dt))


def segment(trace: SignalTrace, t_start: float, t_end: float) -> SignalTrace:
    """Sub-trace of samples with t_start <= t < t_end."""
    trace._require_nonempty("segment")
    i0 = int(np.ceil((t_start - trace.t0) * trace.sample_rate - 1e-9))
    i1 = int(np.ceil((t_end - trace.t0) * trace.sample_rate - 1e-9))
    i0, i1 = max(i0, 0), min(max(i1, 0), len(trace))
    if i1 <= i0:
        raise TraceError(f"segment [{t_start}, {t_end}) contains no samples")
    return SignalTrace(trace.samples[i0:i1].copy(), trace.sample_rate,
                       trace.t0 + i0 / trace.sample_rate)


# ---------------------------------------------------------------------------
# observation pipeline

PRE_DECIMATION = "pre_decimation"
POST_DECIMATION = "post_decimation"


def pipeline(trace: SignalTrace, spec: BandpassSpec, target_rate: float,
             stage: str = PRE_DECIMATION) -> tuple[SignalTrace, SignalTrace]:
    """Full conditioning chain; returns (filtered, observed).

    pre_decimation (default): band-pass at the native rate, then decimate —
    keeps band content above the decimated Nyquist alive through the filter.
    `filtered` is the full-rate band-passed trace, `observed` its decimation.

    post_decimation: decimate first, then band-pass at the low rate with
    f_max clamped to 0.95x the decimated Nyquist (a warning is emitted when
    clamping occurs). Both returned traces are then the low-rate output.
    """
    if stage == PRE_DECIMATION:
        filtered = bandpass(trace, spec)
        return filtered, downsample(filtered, target_rate)
    if stage == POST_DECIMATION:
        low = downsample(trace, target_rate)
        nyq = 0.5 * target_rate
        f_max = spec.f_max
        if f_max >= 0.95 * nyq:
            f_max = 0.95 * nyq
            warnings.warn(
                f"band-pass upper cutoff {spec.f_max} Hz is infeasible at "
                f"{target_rate} Hz; clamped to {f_max} Hz", stacklevel=2)
        observed = bandpass(low, BandpassSpec(spec.f_min, f_max, spec.order))
        return observed, observed
    raise TraceError(f"unknown filter stage {stage!r}")


# ---------------------------------------------------------------------------
# CSV serialization

CSV_HEADER = "t,value"
UNIFORM_SPACING_TOL = 1e-9  # seconds


def write_trace_csv(trace: SignalTrace, path) -> None:
    """One row per sample, times with full float precision."""
    times = trace.times()
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for t, x in zip(times, trace.samples):
            fh.write(f"{float(t)!r},{float(x)!r}\n")


def read_trace_csv(path) -> SignalTrace:
    """Parse a trace CSV, verifying uniform sample spacing."""
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise TraceError(f"bad trace CSV header {header!r}, expected {CSV_HEADER!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        raise TraceError(f"empty trace CSV {path}")
    times, values = data[:, 0], data[:, 1]
    if len(times) > 1:
        dts = np.diff(times)
        dt = float(np.mean(dts))
        if np.max(np.abs(dts - dt)) > UNIFORM_SPACING_TOL:
            raise TraceError(f"non-uniform sample spacing in {path}")
        rate = 1.0 / dt
    else:
        raise TraceError(f"trace CSV {path} needs at least two samples")
    return SignalTrace(values, rate, float(times[0]))
