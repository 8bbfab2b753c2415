"""Objective evaluation: isolation and crosstalk metrics, rendering, exports.

All metrics are energy ratios in dB, evaluated at the two ear reference
points of each listener (one point per ear), and summarized by log-frequency
weighted means over the grid's band. Ratios are epsilon-guarded and clipped
to +/- 120 dB so exported curves stay finite.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .core import FrequencyGrid, log_frequency_weights
from .errors import ConfigurationError
from .losses import bright_ears, effective_ear_matrix, pair_channels

DB_CAP = 120.0
METRIC_EPSILON = 1e-8
CURVE_COLUMNS = ("izi1_db", "izi2_db", "ipi1_db", "ipi2_db", "xtc1_db", "xtc2_db")


@dataclass
class MetricCurves:
    """Per-bin IZI/IPI/XTC curves (dB) plus their log-weighted means."""

    freqs_hz: np.ndarray
    izi1_db: np.ndarray
    izi2_db: np.ndarray
    ipi1_db: np.ndarray
    ipi2_db: np.ndarray
    xtc1_db: np.ndarray
    xtc2_db: np.ndarray
    means_db: dict[str, float]

    def curve(self, name: str) -> np.ndarray:
        return getattr(self, name)


def _ratio_db(num: np.ndarray, den: np.ndarray, epsilon: float, cap: float) -> np.ndarray:
    return np.clip(10.0 * np.log10(np.maximum(num, 1e-300) / (den + epsilon)), -cap, cap)


def _listener_energy(atf_vals: np.ndarray, bank: np.ndarray, listener: int, pair: int):
    """Total ear energy at ``listener`` driven by program pair ``pair``."""
    e0, e1 = bright_ears(listener)
    c0, c1 = pair_channels(pair)
    h = np.concatenate([atf_vals[e0], atf_vals[e1]], axis=0)  # (2M, L, N)
    w = bank[:, (c0, c1), :]  # (L, 2, N)
    y = np.einsum("mln,ljn->mjn", h, w)
    return np.sum(np.abs(y) ** 2, axis=(0, 1))  # (N,)


def compute_izi(
    atf, bank, grid: FrequencyGrid, epsilon: float = METRIC_EPSILON, cap: float = DB_CAP
) -> tuple[np.ndarray, np.ndarray]:
    """Inter-zone isolation per program: own listener's energy over the other's."""
    vals = atf.values if hasattr(atf, "values") else np.asarray(atf)
    curves = []
    for k in (0, 1):
        own = _listener_energy(vals, bank, k, k)
        other = _listener_energy(vals, bank, 1 - k, k)
        curves.append(_ratio_db(own, other, epsilon, cap))
    return curves[0], curves[1]


def compute_ipi(
    atf, bank, grid: FrequencyGrid, epsilon: float = METRIC_EPSILON, cap: float = DB_CAP
) -> tuple[np.ndarray, np.ndarray]:
    """Inter-program isolation per listener: intended program over the other one."""
    vals = atf.values if hasattr(atf, "values") else np.asarray(atf)
    curves = []
    for k in (0, 1):
        intended = _listener_energy(vals, bank, k, k)
        interfering = _listener_energy(vals, bank, k, 1 - k)
        curves.append(_ratio_db(intended, interfering, epsilon, cap))
    return curves[0], curves[1]


def compute_xtc(
    atf, bank, grid: FrequencyGrid, epsilon: float = METRIC_EPSILON, cap: float = DB_CAP
) -> tuple[np.ndarray, np.ndarray]:
    """Crosstalk cancellation per program: diagonal over off-diagonal ear energy.

    Uses the effective ear matrix at the ear reference points; with M > 1 the
    energies are summed over the control points.
    """
    curves = []
    for k in (0, 1):
        t_eff = effective_ear_matrix(atf, bank, k)
        diag = np.sum(
            np.abs(t_eff[:, 0, 0, :]) ** 2 + np.abs(t_eff[:, 1, 1, :]) ** 2, axis=0
        )
        off = np.sum(
            np.abs(t_eff[:, 0, 1, :]) ** 2 + np.abs(t_eff[:, 1, 0, :]) ** 2, axis=0
        )
        curves.append(_ratio_db(diag, off, epsilon, cap))
    return curves[0], curves[1]


def log_weighted_mean(curve_db: np.ndarray, grid: FrequencyGrid) -> float:
    """Inner product of a dB curve with the grid's log-frequency weights."""
    return float(log_frequency_weights(grid) @ np.asarray(curve_db, dtype=float))


def compute_metrics(atf, bank, grid: FrequencyGrid) -> MetricCurves:
    """All six curves and their log-weighted means for one plant and bank."""
    izi1, izi2 = compute_izi(atf, bank, grid)
    ipi1, ipi2 = compute_ipi(atf, bank, grid)
    xtc1, xtc2 = compute_xtc(atf, bank, grid)
    named = dict(
        izi1_db=izi1, izi2_db=izi2, ipi1_db=ipi1, ipi2_db=ipi2, xtc1_db=xtc1, xtc2_db=xtc2
    )
    means = {name: log_weighted_mean(c, grid) for name, c in named.items()}
    return MetricCurves(freqs_hz=grid.bin_freqs_hz, means_db=means, **named)


def render(bank, program: np.ndarray, grid: FrequencyGrid) -> np.ndarray:
    """Drive the loudspeakers: convolve program channels with the filter bank.

    ``program`` is (4, T); the result is (L, T + fft_size - 1), each channel
    the sum over programs of the full linear convolution with that filter's
    impulse response (Hermitian-extended inverse FFT of its spectrum).
    """
    bank = np.asarray(bank)
    program = np.atleast_2d(np.asarray(program, dtype=float))
    if program.shape[0] != bank.shape[1]:
        raise ConfigurationError(
            f"program has {program.shape[0]} channels, bank expects {bank.shape[1]}"
        )
    impulses = np.fft.irfft(bank, n=grid.fft_size, axis=-1)  # (L, 4, fft)
    out = fftconvolve(impulses, program[None, :, :], axes=-1)  # (L, 4, T+fft-1)
    return out.sum(axis=1)


def bank_to_impulses(bank, grid: FrequencyGrid) -> np.ndarray:
    """Per-(loudspeaker, program) impulse responses, shape (L, 4, fft_size)."""
    return np.fft.irfft(np.asarray(bank), n=grid.fft_size, axis=-1)


def export_curves(curves: MetricCurves, csv_path, sidecar_path=None) -> None:
    """CSV of per-bin curves plus a JSON sidecar of log-weighted means."""
    csv_path = str(csv_path)
    sidecar_path = str(sidecar_path) if sidecar_path else csv_path.rsplit(".", 1)[0] + "_means.json"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("freq_hz", *CURVE_COLUMNS))
        for i, f in enumerate(curves.freqs_hz):
            writer.writerow(
                [repr(float(f))] + [repr(float(curves.curve(c)[i])) for c in CURVE_COLUMNS]
            )
    with open(sidecar_path, "w") as fh:
        json.dump({"log_weighted_means_db": curves.means_db}, fh, indent=2, sort_keys=True)


def read_curves_csv(path) -> dict[str, np.ndarray]:
    """Parse an exported curve CSV back into arrays keyed by column name."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(x) for x in row] for row in reader]
    data = np.asarray(rows, dtype=float).reshape(len(rows), len(header))
    return {name: data[:, j] for j, name in enumerate(header)}
