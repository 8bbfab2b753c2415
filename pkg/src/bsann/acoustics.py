"""Physically informed acoustic transfer functions.

An ATF from loudspeaker ``l`` to control point ``m`` of ear ``e`` combines the
simulated room response, the loudspeaker's anechoic spectrum, an analytic
circular-piston directivity, and a rigid-sphere head scattering response:

    H[e,m,l] = FFT(h_dir) * A_l * D_l(theta) * H_sphere + FFT(h_refl) * A_l

The sphere response is normalized by the free-field Green's function
``exp(-j k d) / d`` between source and control point, so it tends to 1 as the
sphere vanishes. All phase conventions follow that Green's function (outgoing
waves carry ``exp(-j k r)``), which makes the radiating spherical Hankel
function ``h_n = j_n - i y_n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile
from scipy.special import j1 as bessel_j1
from scipy.special import spherical_jn, spherical_yn

from .core import FrequencyGrid, forward_real_fft
from .errors import (
    ConfigurationError,
    GeometryError,
    PropagationError,
    SeriesConvergenceError,
)

EAR_NAMES = ("L1", "R1", "L2", "R2")
NUM_EARS = 4
UP = np.array([0.0, 0.0, 1.0])

WOOFER_BAND_HZ = (100.0, 2000.0)
TWEETER_CUTOFF_HZ = 2000.0


@dataclass(frozen=True)
class HrtfConfig:
    """Truncation order and tolerance for the sphere scattering series.

    The default order of 80 keeps the series converged up to the default
    grid's Nyquist for control points out to ~0.15 m from the head center;
    the tail check below catches anything beyond that.
    """

    series_order: int = 80
    convergence_tol: float = 1e-6

    def validate_for(self, grid: FrequencyGrid, head_radius_m: float) -> None:
        """Require enough orders for the grid's top band frequency."""
        k_max = 2.0 * np.pi * grid.band_hi_hz / 343.0
        needed = int(np.ceil(k_max * head_radius_m)) + 20
        if self.series_order < needed:
            raise ConfigurationError(
                f"series_order {self.series_order} below {needed} required for "
                f"head radius {head_radius_m} m at {grid.band_hi_hz} Hz"
            )


@dataclass(frozen=True)
class DriverSpec:
    """One loudspeaker: placement, piston size, band, and anechoic spectrum.

    ``anechoic_response`` may be None in scene configs; the dataset builder
    then synthesizes the band model (or loads ``response_wav``) for its grid.
    """

    position_m: np.ndarray
    facing_unit: np.ndarray
    piston_radius_m: float
    band: str
    anechoic_response: np.ndarray | None = None
    response_wav: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "position_m", np.asarray(self.position_m, dtype=float))
        facing = np.asarray(self.facing_unit, dtype=float)
        if not np.isclose(np.linalg.norm(facing), 1.0, atol=1e-9):
            raise GeometryError(f"facing_unit must have unit norm, got {facing}")
        object.__setattr__(self, "facing_unit", facing)
        if not (0 < self.piston_radius_m < 0.5):
            raise GeometryError(f"piston radius {self.piston_radius_m} outside (0, 0.5) m")
        if self.band not in ("woofer", "tweeter"):
            raise ConfigurationError(f"unknown driver band {self.band!r}")
        if self.anechoic_response is not None:
            object.__setattr__(
                self, "anechoic_response", np.asarray(self.anechoic_response, dtype=complex)
            )

    def with_response(self, grid: FrequencyGrid) -> "DriverSpec":
        """Materialize the anechoic spectrum for ``grid`` if not already set."""
        if self.anechoic_response is not None:
            return self
        if self.response_wav is not None:
            resp = load_driver_response(self.response_wav, grid)
        else:
            resp = synth_driver_response(self.band, grid)
        return DriverSpec(
            position_m=self.position_m,
            facing_unit=self.facing_unit,
            piston_radius_m=self.piston_radius_m,
            band=self.band,
            anechoic_response=resp,
            response_wav=self.response_wav,
        )

    def to_dict(self) -> dict:
        return {
            "position_m": self.position_m.tolist(),
            "facing_unit": self.facing_unit.tolist(),
            "piston_radius_m": self.piston_radius_m,
            "band": self.band,
            "response_wav": self.response_wav,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DriverSpec":
        return cls(
            position_m=np.asarray(d["position_m"], dtype=float),
            facing_unit=np.asarray(d["facing_unit"], dtype=float),
            piston_radius_m=float(d["piston_radius_m"]),
            band=d["band"],
            response_wav=d.get("response_wav"),
        )


def left_unit_for(facing_unit: np.ndarray) -> np.ndarray:
    """Unit vector pointing to the listener's left, perpendicular to facing."""
    lateral = np.cross(UP, facing_unit)
    norm = np.linalg.norm(lateral)
    if norm < 1e-12:
        raise GeometryError("facing_unit may not be vertical")
    return lateral / norm


@dataclass(frozen=True)
class ListenerGeometry:
    """Rigid-sphere head with per-ear control point clouds.

    Ear reference points sit at ``head_center +/- (head_radius + ear_offset) *
    left_unit``; control points must lie strictly outside the sphere.
    """

    head_center_m: np.ndarray
    head_radius_m: float
    ear_offset_m: float
    facing_unit: np.ndarray
    control_points_left: np.ndarray
    control_points_right: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "head_center_m", np.asarray(self.head_center_m, dtype=float))
        facing = np.asarray(self.facing_unit, dtype=float)
        facing = facing / np.linalg.norm(facing)
        object.__setattr__(self, "facing_unit", facing)
        if self.head_radius_m <= 0:
            raise GeometryError("head_radius_m must be positive")
        if self.ear_offset_m < 0:
            raise GeometryError("ear_offset_m must be nonnegative")
        for name in ("control_points_left", "control_points_right"):
            pts = np.asarray(getattr(self, name), dtype=float)
            if pts.ndim != 2 or pts.shape[1] != 3:
                raise GeometryError(f"{name} must have shape (M, 3)")
            radii = np.linalg.norm(pts - self.head_center_m, axis=1)
            if np.any(radii <= self.head_radius_m):
                raise GeometryError(f"{name}: control point inside the rigid sphere")
            object.__setattr__(self, name, pts)
        if self.control_points_left.shape != self.control_points_right.shape:
            raise GeometryError("left/right control point counts differ")

    @property
    def num_control_points(self) -> int:
        return self.control_points_left.shape[0]

    def to_dict(self) -> dict:
        return {
            "head_center_m": self.head_center_m.tolist(),
            "head_radius_m": self.head_radius_m,
            "ear_offset_m": self.ear_offset_m,
            "facing_unit": self.facing_unit.tolist(),
            "control_points_left": self.control_points_left.tolist(),
            "control_points_right": self.control_points_right.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ListenerGeometry":
        return cls(
            head_center_m=np.asarray(d["head_center_m"], dtype=float),
            head_radius_m=float(d["head_radius_m"]),
            ear_offset_m=float(d["ear_offset_m"]),
            facing_unit=np.asarray(d["facing_unit"], dtype=float),
            control_points_left=np.asarray(d["control_points_left"], dtype=float),
            control_points_right=np.asarray(d["control_points_right"], dtype=float),
        )

    def ear_reference(self, side: str) -> np.ndarray:
        """Ear reference point for side ``"left"`` or ``"right"``."""
        sign = {"left": 1.0, "right": -1.0}[side]
        offset = (self.head_radius_m + self.ear_offset_m) * left_unit_for(self.facing_unit)
        return self.head_center_m + sign * offset

    def control_points(self, side: str) -> np.ndarray:
        return {"left": self.control_points_left, "right": self.control_points_right}[side]


@dataclass
class AtfTensor:
    """Complex transfer functions indexed [ear, control point, loudspeaker, bin]."""

    values: np.ndarray
    grid: FrequencyGrid

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 4 or self.values.shape[0] != NUM_EARS:
            raise ConfigurationError(
                f"ATF tensor must have shape (4, M, L, N), got {self.values.shape}"
            )
        if self.values.shape[-1] != grid_bins(self.grid):
            raise ConfigurationError("ATF bin count does not match the grid")
        if not np.all(np.isfinite(self.values)):
            bad = np.argwhere(~np.isfinite(self.values))[0]
            raise PropagationError(f"non-finite ATF value at (ear, m, l, bin) = {tuple(bad)}")

    @property
    def num_points(self) -> int:
        return self.values.shape[1]

    @property
    def num_drivers(self) -> int:
        return self.values.shape[2]


def grid_bins(grid: FrequencyGrid) -> int:
    return grid.fft_size // 2 + 1


def piston_directivity(k, a: float, theta) -> np.ndarray:
    """Circular-piston directivity 2 J1(x)/x with x = k a sin(theta).

    Defined as 1 at x = 0 by the analytic limit; magnitude never exceeds 1.
    Accepts scalars or broadcastable arrays for ``k`` and ``theta``.
    """
    k = np.asarray(k, dtype=float)
    if np.any(k < 0):
        raise ConfigurationError("wavenumber k must be nonnegative")
    if a <= 0:
        raise ConfigurationError("piston radius must be positive")
    x = k * a * np.sin(theta)
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    out = np.where(small, 1.0 - x * x / 8.0, 2.0 * bessel_j1(safe) / safe)
    return out if out.shape else float(out)


def legendre_all(n_max: int, x: float) -> np.ndarray:
    """Legendre polynomials P_0..P_nmax at scalar x via the three-term recurrence."""
    p = np.empty(n_max + 1)
    p[0] = 1.0
    if n_max >= 1:
        p[1] = x
    for n in range(1, n_max):
        p[n + 1] = ((2 * n + 1) * x * p[n] - n * p[n - 1]) / (n + 1)
    return p


def _spherical_hankel_out(n, x, derivative=False):
    """Radiating spherical Hankel ``j_n - i y_n`` for exp(-jkr) outgoing waves."""
    return spherical_jn(n, x, derivative=derivative) - 1j * spherical_yn(
        n, x, derivative=derivative
    )


def _sphere_series(
    r_src: float,
    r_ctrl: float,
    cos_gamma: float,
    head_radius: float,
    k: np.ndarray,
    order: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Scattering series summed over orders, plus the absolute tail magnitude.

    Returns ``(sum over n of (2n+1) S_n(k) P_n(cos_gamma), tail_abs)`` where
    each has shape ``k.shape`` and ``S_n`` pairs the interior/exterior radial
    solutions with the rigid-sphere scattering coefficient
    ``j_n'(ka) / h_n'(ka)``. ``tail_abs`` is the magnitude of the last two
    retained terms, in series units.
    """
    ns = np.arange(order + 1)[:, None]
    kk = np.atleast_1d(np.asarray(k, dtype=float))[None, :]
    r_less, r_more = min(r_src, r_ctrl), max(r_src, r_ctrl)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        j_less = spherical_jn(ns, kk * r_less)
        h_more = _spherical_hankel_out(ns, kk * r_more)
        h_src = _spherical_hankel_out(ns, kk * r_src)
        h_ctrl = _spherical_hankel_out(ns, kk * r_ctrl)
        ja_d = spherical_jn(ns, kk * head_radius, derivative=True)
        ha_d = _spherical_hankel_out(ns, kk * head_radius, derivative=True)
        alpha = ja_d / ha_d
        scattered = (alpha * h_src) * h_ctrl
        scattered[~np.isfinite(scattered)] = 0.0  # underflowed alpha times huge h
        s_n = j_less * h_more - scattered
        p_n = legendre_all(order, cos_gamma)[:, None]
        terms = (2 * ns + 1) * s_n * p_n
    total = terms.sum(axis=0)
    tail_abs = np.abs(terms[-1]) + np.abs(terms[-2])
    return total, tail_abs


def _tail_relative(total, tail_abs, k, dist):
    """Series tail rescaled to normalized-response units.

    The normalized result is ``k * dist * |total|``-scaled, and the free-field
    reference level is exactly 1, so the tail is compared against
    ``max(1, |result|)``: a truncation error far below the free-field level is
    harmless even at deep-shadow bins where the local response is tiny.
    """
    err = tail_abs * k * dist
    result_mag = np.abs(total) * k * dist
    return err / np.maximum(1.0, result_mag)


def rigid_sphere_hrtf(
    src_pos,
    ctrl_pos,
    head_center,
    head_radius: float,
    k,
    cfg: HrtfConfig = HrtfConfig(),
):
    """Normalized rigid-sphere scattering response between two exterior points.

    The result divides the scattered-plus-incident field by the free-field
    Green's function from source to control point, so a vanishing sphere gives
    1. ``k`` may be a positive scalar or array of wavenumbers (rad/m).

    Raises
    ------
    GeometryError
        If either point lies on or inside the sphere, or k <= 0.
    SeriesConvergenceError
        If the series tail at ``cfg.series_order`` exceeds the tolerance.
    """
    src = np.asarray(src_pos, dtype=float) - np.asarray(head_center, dtype=float)
    ctrl = np.asarray(ctrl_pos, dtype=float) - np.asarray(head_center, dtype=float)
    r_src = float(np.linalg.norm(src))
    r_ctrl = float(np.linalg.norm(ctrl))
    if r_src <= head_radius or r_ctrl <= head_radius:
        raise GeometryError("source and control point must lie strictly outside the sphere")
    k_arr = np.atleast_1d(np.asarray(k, dtype=float))
    if np.any(k_arr <= 0):
        raise GeometryError("wavenumber k must be positive")
    cos_gamma = float(np.clip(src @ ctrl / (r_src * r_ctrl), -1.0, 1.0))

    total, tail_abs = _sphere_series(
        r_src, r_ctrl, cos_gamma, head_radius, k_arr, cfg.series_order
    )
    dist = float(np.linalg.norm(src - ctrl))
    worst = float(_tail_relative(total, tail_abs, k_arr, dist).max())
    if worst > cfg.convergence_tol:
        raise SeriesConvergenceError(
            f"scattering series tail {worst:.3e} exceeds tol {cfg.convergence_tol:.1e} "
            f"at order {cfg.series_order}",
            tail_estimate=worst,
        )
    green = np.exp(-1j * k_arr * dist) / dist
    result = (-1j * k_arr) * total / green
    return result if np.ndim(k) else complex(result[0])


def _min_phase_from_magnitude(mag: np.ndarray, fft_size: int) -> np.ndarray:
    """Minimum-phase one-sided spectrum with exactly the given magnitude."""
    floor = max(float(mag.max()), 1e-30) * 1e-9
    log_mag = np.log(np.maximum(mag, floor))
    full = np.concatenate([log_mag, log_mag[-2:0:-1]])
    cep = np.fft.ifft(full).real
    folded = np.zeros_like(cep)
    folded[0] = cep[0]
    folded[1 : fft_size // 2] = 2.0 * cep[1 : fft_size // 2]
    folded[fft_size // 2] = cep[fft_size // 2]
    phase = np.fft.fft(folded).imag[: fft_size // 2 + 1]
    return mag * np.exp(1j * phase)


def synth_driver_response(band: str, grid: FrequencyGrid) -> np.ndarray:
    """Synthetic anechoic loudspeaker spectrum for one band.

    Woofer: second-order bandpass across 100-2000 Hz. Tweeter: second-order
    Butterworth high-pass at 2 kHz. Both minimum phase with unit passband gain
    and exactly zero response at DC.
    """
    f = grid.bin_freqs_hz
    w = 2.0 * np.pi * f
    if band == "woofer":
        w1, w2 = 2.0 * np.pi * WOOFER_BAND_HZ[0], 2.0 * np.pi * WOOFER_BAND_HZ[1]
        bw = w2 - w1
        mag = bw * w / np.sqrt((w1 * w2 - w**2) ** 2 + (bw * w) ** 2)
    elif band == "tweeter":
        w0 = 2.0 * np.pi * TWEETER_CUTOFF_HZ
        q = 1.0 / np.sqrt(2.0)
        mag = w**2 / np.sqrt((w0**2 - w**2) ** 2 + (w0 * w / q) ** 2)
    else:
        raise ConfigurationError(f"unknown driver band {band!r}")
    return _min_phase_from_magnitude(mag, grid.fft_size)


def load_driver_response(path, grid: FrequencyGrid) -> np.ndarray:
    """Anechoic spectrum from a 32-bit float mono WAV impulse response."""
    rate, data = wavfile.read(path)
    if rate != grid.sample_rate_hz:
        raise ConfigurationError(
            f"driver response sample rate {rate} does not match grid {grid.sample_rate_hz}"
        )
    if data.ndim != 1:
        raise ConfigurationError("driver response WAV must be mono")
    if data.dtype != np.float32:
        raise ConfigurationError(f"driver response WAV must be 32-bit float, got {data.dtype}")
    return forward_real_fft(np.asarray(data, dtype=float)[: grid.fft_size], grid.fft_size)


def _angle_between(v1: np.ndarray, v2: np.ndarray) -> float:
    denom = np.linalg.norm(v1) * np.linalg.norm(v2)
    return float(np.arccos(np.clip(v1 @ v2 / denom, -1.0, 1.0)))


class _ListenerSphereTables:
    """Radial-function tables shared across all source/control pairs of one head.

    Bessel evaluations dominate assembly cost; every pair reuses per-radius
    tables of shape (order+1, num_k) instead of recomputing them.
    """

    def __init__(self, listener: ListenerGeometry, drivers, k_pos, order: int):
        self.listener = listener
        self.order = order
        self.k_pos = k_pos
        center = listener.head_center_m
        self.src_rel = np.stack([d.position_m - center for d in drivers])
        self.src_radii = np.linalg.norm(self.src_rel, axis=1)
        self.ctrl_rel = {
            side: listener.control_points(side) - center for side in ("left", "right")
        }
        self.ctrl_radii = {
            side: np.linalg.norm(rel, axis=1) for side, rel in self.ctrl_rel.items()
        }
        if np.any(self.src_radii <= listener.head_radius_m):
            raise GeometryError("a driver lies inside a listener's rigid sphere")

        radii = np.concatenate(
            [self.src_radii, self.ctrl_radii["left"], self.ctrl_radii["right"]]
        )
        ns = np.arange(order + 1)[None, :, None]
        x = radii[:, None, None] * k_pos[None, None, :]
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            self.j_tab = spherical_jn(ns, x)
            self.h_tab = self.j_tab - 1j * spherical_yn(ns, x)
            xa = listener.head_radius_m * k_pos[None, :]
            na = np.arange(order + 1)[:, None]
            self.alpha = spherical_jn(na, xa, derivative=True) / _spherical_hankel_out(
                na, xa, derivative=True
            )
        self.num_drivers = len(drivers)

    def _index(self, kind: str, side: str, idx: int) -> int:
        if kind == "src":
            return idx
        offset = self.num_drivers if side == "left" else self.num_drivers + len(
            self.ctrl_radii["left"]
        )
        return offset + idx

    def series(self, side: str, m: int, l: int) -> tuple[np.ndarray, np.ndarray]:
        """Summed scattering series and absolute tail for one (point, driver) pair."""
        r_src = self.src_radii[l]
        r_ctrl = self.ctrl_radii[side][m]
        i_src = self._index("src", side, l)
        i_ctrl = self._index("ctrl", side, m)
        i_less, i_more = (i_ctrl, i_src) if r_ctrl <= r_src else (i_src, i_ctrl)
        cos_gamma = float(
            np.clip(
                self.src_rel[l] @ self.ctrl_rel[side][m] / (r_src * r_ctrl), -1.0, 1.0
            )
        )
        with np.errstate(invalid="ignore"):
            scattered = (self.alpha * self.h_tab[i_src]) * self.h_tab[i_ctrl]
            scattered[~np.isfinite(scattered)] = 0.0
            s_n = self.j_tab[i_less] * self.h_tab[i_more] - scattered
            p_n = legendre_all(self.order, cos_gamma)[:, None]
            terms = (2 * np.arange(self.order + 1)[:, None] + 1) * s_n * p_n
        total = terms.sum(axis=0)
        tail_abs = np.abs(terms[-1]) + np.abs(terms[-2])
        return total, tail_abs


def assemble_atf(
    h_dir: np.ndarray,
    h_refl: np.ndarray,
    drivers: list[DriverSpec],
    listeners: tuple[ListenerGeometry, ListenerGeometry],
    grid: FrequencyGrid,
    cfg: HrtfConfig = HrtfConfig(),
    speed_of_sound_mps: float = 343.0,
) -> AtfTensor:
    """Combine room responses, driver spectra, directivity, and head scattering.

    Parameters
    ----------
    h_dir, h_refl : ndarray, shape (4, M, L, fft_size)
        Direct and reflected impulse-response components per (ear, control
        point, loudspeaker), ear order (L1, R1, L2, R2).
    drivers : list of DriverSpec
    listeners : pair of ListenerGeometry
        Listener 1 then listener 2.
    """
    h_dir = np.asarray(h_dir, dtype=float)
    h_refl = np.asarray(h_refl, dtype=float)
    n_ears, n_points, n_drivers, n_taps = h_dir.shape
    if n_ears != NUM_EARS or n_drivers != len(drivers) or n_taps != grid.fft_size:
        raise ConfigurationError(f"h_dir shape {h_dir.shape} inconsistent with scene")
    if h_refl.shape != h_dir.shape:
        raise ConfigurationError("h_dir and h_refl shapes differ")
    for name, arr in (("h_dir", h_dir), ("h_refl", h_refl)):
        if not np.all(np.isfinite(arr)):
            bad = np.argwhere(~np.isfinite(arr))[0]
            raise PropagationError(f"non-finite {name} sample at (e, m, l, n) = {tuple(bad)}")

    n_bins = grid_bins(grid)
    k = 2.0 * np.pi * grid.bin_freqs_hz / speed_of_sound_mps
    k_pos = k[1:]  # DC handled analytically: no scattering, unit directivity

    spec_dir = np.fft.rfft(h_dir, n=grid.fft_size, axis=-1)
    spec_refl = np.fft.rfft(h_refl, n=grid.fft_size, axis=-1)

    if any(d.anechoic_response is None for d in drivers):
        raise ConfigurationError("drivers must carry materialized anechoic responses")
    responses = np.stack([d.anechoic_response for d in drivers])  # (L, N)
    if responses.shape[1] != n_bins:
        raise ConfigurationError("driver anechoic_response length does not match grid")
    piston_radii = np.array([d.piston_radius_m for d in drivers])

    values = np.empty((NUM_EARS, n_points, n_drivers, n_bins), dtype=complex)
    worst_tail = 0.0
    for li, listener in enumerate(listeners):
        cfg.validate_for(grid, listener.head_radius_m)
        tables = _ListenerSphereTables(listener, drivers, k_pos, cfg.series_order)
        for si, side in enumerate(("left", "right")):
            e = 2 * li + si
            points = listener.control_points(side)
            for m in range(n_points):
                hrtf = np.empty((n_drivers, n_bins), dtype=complex)
                theta = np.empty(n_drivers)
                for l, drv in enumerate(drivers):
                    total, tail_abs = tables.series(side, m, l)
                    dist = float(
                        np.linalg.norm(tables.src_rel[l] - tables.ctrl_rel[side][m])
                    )
                    worst_tail = max(
                        worst_tail, float(_tail_relative(total, tail_abs, k_pos, dist).max())
                    )
                    green = np.exp(-1j * k_pos * dist) / dist
                    hrtf[l, 1:] = (-1j * k_pos) * total / green
                    hrtf[l, 0] = 1.0
                    theta[l] = _angle_between(drv.facing_unit, points[m] - drv.position_m)
                x = k[None, :] * piston_radii[:, None] * np.sin(theta)[:, None]
                small = np.abs(x) < 1e-8
                safe = np.where(small, 1.0, x)
                direct = np.where(small, 1.0 - x * x / 8.0, 2.0 * bessel_j1(safe) / safe)
                values[e, m] = (
                    spec_dir[e, m] * responses * direct * hrtf + spec_refl[e, m] * responses
                )
    if worst_tail > cfg.convergence_tol:
        raise SeriesConvergenceError(
            f"scattering series tail {worst_tail:.3e} exceeds tol {cfg.convergence_tol:.1e}",
            tail_estimate=worst_tail,
        )
    return AtfTensor(values=values, grid=grid)
