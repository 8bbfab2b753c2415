"""Shared numeric foundations: frequency grids, one-sided spectra, FFT pairs,
and log-frequency band weighting.

All spectra in this package are one-sided complex arrays of length
``fft_size // 2 + 1``; Hermitian symmetry is reconstructed only when a real
time-domain signal is needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, EmptyBandError, InvalidSpectrumError

DEFAULT_SAMPLE_RATE = 48_000.0
DEFAULT_FFT_SIZE = 512
DEFAULT_BAND = (100.0, 20_000.0)


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform one-sided DFT frequency grid with an evaluation band.

    Parameters
    ----------
    sample_rate_hz : float
        Sampling rate of the underlying time-domain signals.
    fft_size : int
        Even DFT length; the grid holds ``fft_size // 2 + 1`` bins.
    band_lo_hz, band_hi_hz : float
        Band over which log-frequency-weighted summaries are taken.
    """

    sample_rate_hz: float = DEFAULT_SAMPLE_RATE
    fft_size: int = DEFAULT_FFT_SIZE
    band_lo_hz: float = DEFAULT_BAND[0]
    band_hi_hz: float = DEFAULT_BAND[1]
    bin_freqs_hz: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ConfigurationError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if self.fft_size <= 0 or self.fft_size % 2 != 0:
            raise ConfigurationError(f"fft_size must be a positive even integer, got {self.fft_size}")
        if not (self.band_lo_hz < self.band_hi_hz <= self.sample_rate_hz / 2):
            raise ConfigurationError(
                f"band [{self.band_lo_hz}, {self.band_hi_hz}] must be increasing and "
                f"bounded by Nyquist {self.sample_rate_hz / 2}"
            )
        freqs = np.arange(self.fft_size // 2 + 1) * (self.sample_rate_hz / self.fft_size)
        object.__setattr__(self, "bin_freqs_hz", freqs)

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    def to_dict(self) -> dict:
        return {
            "sample_rate_hz": self.sample_rate_hz,
            "fft_size": self.fft_size,
            "band_lo_hz": self.band_lo_hz,
            "band_hi_hz": self.band_hi_hz,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FrequencyGrid":
        return cls(
            sample_rate_hz=float(d["sample_rate_hz"]),
            fft_size=int(d["fft_size"]),
            band_lo_hz=float(d["band_lo_hz"]),
            band_hi_hz=float(d["band_hi_hz"]),
        )


def forward_real_fft(signal: np.ndarray, fft_size: int) -> np.ndarray:
    """One-sided spectrum of a real signal, zero-padded to ``fft_size``.

    Returns a complex array of length ``fft_size // 2 + 1``.
    """
    if fft_size <= 0 or fft_size % 2 != 0:
        raise ConfigurationError(f"fft_size must be a positive even integer, got {fft_size}")
    signal = np.asarray(signal, dtype=float)
    if signal.ndim != 1:
        raise ConfigurationError("signal must be one-dimensional")
    if signal.size > fft_size:
        raise ConfigurationError(f"signal length {signal.size} exceeds fft_size {fft_size}")
    return np.fft.rfft(signal, n=fft_size)


def inverse_real_fft(spectrum: np.ndarray, fft_size: int, imag_tol: float = 1e-9) -> np.ndarray:
    """Real time-domain signal from a one-sided spectrum.

    The Hermitian extension is applied internally. The DC and Nyquist bins of a
    real signal's spectrum must be real; an imaginary part larger than
    ``imag_tol`` (relative to the spectrum's peak magnitude) raises
    :class:`InvalidSpectrumError`.
    """
    spectrum = np.asarray(spectrum, dtype=complex)
    if spectrum.ndim != 1 or spectrum.size != fft_size // 2 + 1:
        raise ConfigurationError(
            f"spectrum length {spectrum.size} does not match fft_size {fft_size}"
        )
    scale = max(float(np.max(np.abs(spectrum))), 1.0)
    for name, idx in (("DC", 0), ("Nyquist", spectrum.size - 1)):
        if abs(spectrum[idx].imag) > imag_tol * scale:
            raise InvalidSpectrumError(
                f"{name} bin has imaginary part {spectrum[idx].imag:.3e}; "
                "a real signal's spectrum must be real there"
            )
    return np.fft.irfft(spectrum, n=fft_size)


def log_band_weights(freqs_hz: np.ndarray, band_lo_hz: float, band_hi_hz: float) -> np.ndarray:
    """Per-bin weights proportional to each in-band bin's span in log-frequency.

    Each bin covers the interval between the geometric midpoints toward its
    neighbours (end bins extend their adjacent gap symmetrically), clipped to
    the band. Out-of-band bins (including any non-positive frequencies) get
    zero weight; in-band weights are normalized to sum to 1.
    """
    freqs_hz = np.asarray(freqs_hz, dtype=float)
    if np.any(np.diff(freqs_hz) <= 0):
        raise ConfigurationError("bin frequencies must be strictly increasing")
    weights = np.zeros(freqs_hz.size)
    in_band = (freqs_hz >= band_lo_hz) & (freqs_hz <= band_hi_hz) & (freqs_hz > 0)
    idx = np.flatnonzero(in_band)
    if idx.size == 0:
        raise EmptyBandError(f"no bins inside [{band_lo_hz}, {band_hi_hz}] Hz")

    positive = freqs_hz > 0
    lf = np.log(freqs_hz[positive])
    pos_index = {orig: j for j, orig in enumerate(np.flatnonzero(positive))}
    if lf.size == 1:
        weights[idx[0]] = 1.0
        return weights

    mids = 0.5 * (lf[:-1] + lf[1:])
    first_gap = lf[1] - lf[0]
    last_gap = lf[-1] - lf[-2]
    left_edges = np.concatenate([[lf[0] - 0.5 * first_gap], mids])
    right_edges = np.concatenate([mids, [lf[-1] + 0.5 * last_gap]])

    lo, hi = np.log(band_lo_hz), np.log(band_hi_hz)
    for orig in idx:
        j = pos_index[orig]
        span = min(right_edges[j], hi) - max(left_edges[j], lo)
        weights[orig] = max(span, 0.0)
    total = weights.sum()
    if total <= 0:
        raise EmptyBandError(f"band [{band_lo_hz}, {band_hi_hz}] Hz has zero log-span coverage")
    return weights / total


def log_frequency_weights(grid: FrequencyGrid) -> np.ndarray:
    """Band-limited log-frequency weights over the grid's bins (sum to 1)."""
    return log_band_weights(grid.bin_freqs_hz, grid.band_lo_hz, grid.band_hi_hz)
