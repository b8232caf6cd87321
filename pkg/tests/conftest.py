"""Shared test helpers: signal synthesis and trace construction."""

import numpy as np
import pytest

from deskits.core import GeoPosition, KinematicState, destination_point


def synth_from_psd(psd_dbm_per_hz: np.ndarray, fs_hz: float,
                   r_ohm: float = 50.0, seed: int = 0) -> np.ndarray:
    """Build one n_fft-long sample block whose single-segment PSD is
    exactly the given per-bin values (order: fftshifted, low to high).

    Works backwards through the analysis formulas: |X_j| chosen so
    10 log10(|X_j|^2/(R b)) + 30 hits the target, random phases, then
    x = N ifft(X) undoes the 1/N-normalized DFT.
    """
    n = len(psd_dbm_per_hz)
    b = fs_hz / n
    rng = np.random.default_rng(seed)
    mag = np.sqrt(10.0 ** ((np.asarray(psd_dbm_per_hz) - 30.0) / 10.0)
                  * r_ohm * b)
    phases = np.exp(2j * np.pi * rng.random(n))
    spectrum = np.fft.ifftshift(mag * phases)
    return n * np.fft.ifft(spectrum)


def brute_force_dft(x: np.ndarray) -> np.ndarray:
    """O(N^2) normalized DFT straight from the definition."""
    x = np.asarray(x, dtype=np.complex128)
    n = len(x)
    j = np.arange(n)
    kernel = np.exp(-2j * np.pi * np.outer(j, j) / n)
    return kernel @ x / n


def straight_trace(start_lat: float, start_lon: float, bearing_deg: float,
                   speed_mps: float, duration_s: float,
                   period_ms: int = 100) -> list[KinematicState]:
    """Constant-speed straight-line drive sampled at period_ms."""
    states = []
    for t_ms in range(0, int(duration_s * 1000), period_ms):
        dist = speed_mps * t_ms / 1000.0
        lat, lon = destination_point(start_lat, start_lon, bearing_deg, dist)
        states.append(KinematicState(
            position=GeoPosition(lat, lon), speed_mps=speed_mps,
            heading_deg=bearing_deg % 360.0, timestamp_ms=t_ms))
    return states


@pytest.fixture
def tmp_trace_file(tmp_path):
    """Factory fixture: write a trace to a temp CSV, return its path."""
    from deskits.gnss import save_trace

    def _write(states, name="trace.csv"):
        path = tmp_path / name
        save_trace(str(path), states)
        return str(path)

    return _write
