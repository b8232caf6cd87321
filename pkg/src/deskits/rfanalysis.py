"""IQ capture post-processing: PSD, average power, bursts, mask, linearity.

The two power formulas are deliberately a matched pair. Average power is

    P_avg = 10 log10( sum |x_i|^2 / (N_s R) ) + 30        [dBm]

and the per-bin PSD over an N_F-point segment is

    P(f_j) = 10 log10( |X_j|^2 / (R b) ) + 30             [dBm/Hz]

with X_j the DFT normalized by 1/N_F and b = fs/N_F the bin width.
Under that normalization Parseval ties them together exactly:
summing the linear PSD times b over all bins recovers the linear
average power, whenever the sample count is a multiple of N_F.

Captures travel in the IQC1 container: one ASCII header line

    IQC1 fs=<hz> fc=<hz> n=<count>

followed by n little-endian float32 (I, Q) pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_IMPEDANCE_OHM = 50.0
DEFAULT_N_FFT = 65536
IQC1_MAGIC = "IQC1"


@dataclass(frozen=True)
class IqCapture:
    fs_hz: float
    fc_hz: float
    samples: np.ndarray

    def __post_init__(self) -> None:
        if self.fs_hz <= 0:
            raise ValueError(f"fs must be > 0: {self.fs_hz}")
        if len(self.samples) == 0:
            raise ValueError("capture must be non-empty")


@dataclass(frozen=True)
class PsdEstimate:
    freqs_hz: np.ndarray
    psd_dbm_per_hz: np.ndarray
    n_fft: int
    bin_width_hz: float
    impedance_ohm: float
    n_segments: int

    def __post_init__(self) -> None:
        if len(self.freqs_hz) != self.n_fft \
                or len(self.psd_dbm_per_hz) != self.n_fft:
            raise ValueError("freqs/psd length must equal n_fft")


@dataclass(frozen=True)
class EmissionMask:
    """PSD limit vs offset from carrier, linearly interpolated in Hz-dB."""

    breakpoints: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if len(self.breakpoints) < 2:
            raise ValueError("mask needs at least 2 breakpoints")
        offsets = [b[0] for b in self.breakpoints]
        if any(b >= a for b, a in zip(offsets, offsets[1:])):
            raise ValueError("mask offsets must be strictly increasing")

    def limit_at(self, offset_hz: float) -> float | None:
        """Interpolated limit; None outside the mask extent."""
        pts = self.breakpoints
        if offset_hz < pts[0][0] or offset_hz > pts[-1][0]:
            return None
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            if x0 <= offset_hz <= x1:
                frac = (offset_hz - x0) / (x1 - x0)
                return y0 + frac * (y1 - y0)
        return None


@dataclass(frozen=True)
class MaskReport:
    compliant: bool
    violations: tuple[tuple[float, float, float], ...]
    checked_bins: int
    skipped_bins: int


@dataclass(frozen=True)
class LinearityFit:
    """OLS fit plus the slope-constrained-to-1 offset fit."""

    slope: float
    intercept_db: float
    residuals_db: tuple[float, ...]
    offset_db: float
    offset_residuals_db: tuple[float, ...]


@dataclass(frozen=True)
class BurstSegment:
    """Half-open sample index range [start, stop)."""

    start: int
    stop: int


def save_iq_capture(path: str, capture: IqCapture) -> None:
    samples = np.asarray(capture.samples, dtype=np.complex64)
    interleaved = np.empty(2 * len(samples), dtype="<f4")
    interleaved[0::2] = samples.real
    interleaved[1::2] = samples.imag
    header = (f"{IQC1_MAGIC} fs={capture.fs_hz!r} fc={capture.fc_hz!r} "
              f"n={len(samples)}\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(interleaved.tobytes())


def load_iq_capture(path: str) -> IqCapture:
    """Parse an IQC1 file bit-exactly.

    Raises ValueError on a bad magic and on any mismatch between the
    declared and actual sample count.
    """
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", errors="replace").strip()
        fields = header.split()
        if not fields or fields[0] != IQC1_MAGIC:
            raise ValueError(f"{path}: bad magic, expected {IQC1_MAGIC!r}")
        kv = {}
        for token in fields[1:]:
            if "=" not in token:
                raise ValueError(f"{path}: bad header token {token!r}")
            key, value = token.split("=", 1)
            kv[key] = value
        try:
            fs = float(kv["fs"])
            fc = float(kv["fc"])
            n = int(kv["n"])
        except (KeyError, ValueError) as exc:
            raise ValueError(f"{path}: bad header {header!r}") from exc
        raw = fh.read()
    floats = np.frombuffer(raw, dtype="<f4")
    if len(floats) != 2 * n:
        raise ValueError(
            f"{path}: expected {n} IQ pairs ({2 * n} floats), "
            f"got {len(floats) // 2} pairs ({len(floats)} floats)")
    samples = floats[0::2].astype(np.complex128) \
        + 1j * floats[1::2].astype(np.complex128)
    return IqCapture(fs_hz=fs, fc_hz=fc, samples=samples)


def normalized_dft(x: np.ndarray) -> np.ndarray:
    """DFT normalized by 1/N, the convention every formula here assumes."""
    x = np.asarray(x)
    return np.fft.fft(x) / len(x)


def compute_average_power_dbm(samples: np.ndarray,
                              r_ohm: float = DEFAULT_IMPEDANCE_OHM) -> float:
    """P_avg = 10 log10( sum |x_i|^2 / (N_s R) ) + 30."""
    samples = np.asarray(samples)
    if len(samples) == 0:
        raise ValueError("empty sample set")
    mean_sq = float(np.sum(np.abs(samples) ** 2)) / len(samples)
    if mean_sq == 0.0:
        return float("-inf")
    return 10.0 * math.log10(mean_sq / r_ohm) + 30.0


def compute_psd(samples: np.ndarray, n_fft: int = DEFAULT_N_FFT,
                fs_hz: float = 12.8e6, fc_hz: float = 5.9e9,
                r_ohm: float = DEFAULT_IMPEDANCE_OHM) -> PsdEstimate:
    """Segment-averaged periodogram in dBm/Hz.

    The capture is cut into floor(N_s / n_fft) full segments; |X_j|^2 is
    averaged across segments in the linear power domain (so the result
    does not depend on segment order), then converted. Rectangular
    window. Frequencies are absolute, centered on fc, strictly
    increasing.
    """
    samples = np.asarray(samples)
    if len(samples) < n_fft:
        raise ValueError(
            f"need at least n_fft={n_fft} samples, got {len(samples)}")
    n_segments = len(samples) // n_fft
    acc = np.zeros(n_fft, dtype=np.float64)
    for k in range(n_segments):
        seg = samples[k * n_fft:(k + 1) * n_fft]
        spectrum = normalized_dft(seg)
        acc += np.abs(spectrum) ** 2
    mean_power = acc / n_segments
    b = fs_hz / n_fft
    with np.errstate(divide="ignore"):
        psd = 10.0 * np.log10(mean_power / (r_ohm * b)) + 30.0
    offsets = np.fft.fftshift(np.fft.fftfreq(n_fft, d=1.0 / fs_hz))
    return PsdEstimate(
        freqs_hz=fc_hz + offsets,
        psd_dbm_per_hz=np.fft.fftshift(psd),
        n_fft=n_fft, bin_width_hz=b, impedance_ohm=r_ohm,
        n_segments=n_segments)


def psd_linear_watts(psd: PsdEstimate) -> np.ndarray:
    """Per-bin PSD back in W/Hz."""
    return 10.0 ** ((psd.psd_dbm_per_hz - 30.0) / 10.0)


def detect_bursts(capture: IqCapture, guard_db: float = 10.0,
                  window: int = 64) -> list[BurstSegment]:
    """Split signal from noise on sliding mean power.

    The noise floor is the median of the windowed mean powers; anything
    more than guard_db above it is signal. Returns maximal runs as
    sample index ranges (edges are accurate to about one window).
    """
    if window < 1:
        raise ValueError(f"window must be >= 1: {window}")
    power = np.abs(np.asarray(capture.samples)) ** 2
    if len(power) < window:
        return []
    kernel = np.ones(window) / window
    sliding = np.convolve(power, kernel, mode="valid")
    floor = float(np.median(sliding))
    threshold = floor * 10.0 ** (guard_db / 10.0)
    above = sliding > threshold
    segments: list[BurstSegment] = []
    start: int | None = None
    for i, flag in enumerate(above):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            segments.append(BurstSegment(start, i - 1 + window))
            start = None
    if start is not None:
        segments.append(BurstSegment(start, len(power)))
    return segments


def check_mask(psd: PsdEstimate, mask: EmissionMask) -> MaskReport:
    """Compare every bin against the interpolated limit.

    Offsets are taken from the PSD's own center frequency. Bins outside
    the mask extent are skipped and counted, not judged.
    """
    fc = float(psd.freqs_hz[psd.n_fft // 2])
    violations: list[tuple[float, float, float]] = []
    checked = 0
    skipped = 0
    for freq, value in zip(psd.freqs_hz, psd.psd_dbm_per_hz):
        limit = mask.limit_at(float(freq) - fc)
        if limit is None:
            skipped += 1
            continue
        checked += 1
        if value > limit:
            violations.append((float(freq), float(value), limit))
    return MaskReport(compliant=not violations,
                      violations=tuple(violations),
                      checked_bins=checked, skipped_bins=skipped)


def load_mask(path: str) -> EmissionMask:
    """Mask config: text lines `offset_hz limit_dbm_per_hz`.

    Blank lines and lines starting with '#' are ignored.
    """
    points: list[tuple[float, float]] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(
                    f"{path}:{lineno}: expected `offset_hz limit`, "
                    f"got {line!r}")
            points.append((float(parts[0]), float(parts[1])))
    return EmissionMask(breakpoints=tuple(points))


def fit_power_linearity(
        points: list[tuple[float, float]]) -> LinearityFit:
    """Fit output vs input power in dB-dB space.

    Returns both the ordinary least squares fit and the
    slope-constrained-to-1 fit, whose offset is mean(input - output).
    Degenerate input (fewer than 2 distinct input values) is rejected.
    """
    if len(points) < 2:
        raise ValueError("need at least 2 points")
    x = np.array([p[0] for p in points], dtype=np.float64)
    y = np.array([p[1] for p in points], dtype=np.float64)
    if np.all(x == x[0]):
        raise ValueError("degenerate fit: all input powers equal")
    slope, intercept = np.polyfit(x, y, 1)
    residuals = y - (slope * x + intercept)
    offset = float(np.mean(x - y))
    offset_residuals = y - (x - offset)
    return LinearityFit(
        slope=float(slope), intercept_db=float(intercept),
        residuals_db=tuple(float(r) for r in residuals),
        offset_db=offset,
        offset_residuals_db=tuple(float(r) for r in offset_residuals))
