"""Shoebox-room image-source simulator with a direct/reflected decomposition.

Per-image amplitude follows free-field spherical spreading, 1/(4*pi*d), times a
uniform wall reflection coefficient raised to the number of wall hits. The
reflection coefficient comes from the requested reverberation time through
Sabine's relation for uniform absorption. Arrivals are placed with a 16-tap
Hann-windowed-sinc fractional-delay kernel so interaural time differences
survive resampling.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import FrequencyGrid
from .errors import GeometryError, OverlapWarning, TruncationWarning

SINC_TAPS = 16
SABINE_CONSTANT = 0.161  # s/m, rt60 = 0.161 V / (S * absorption)
DEFAULT_GUARD_MS = 0.5


@dataclass(frozen=True)
class RoomSpec:
    """Rectangular room with uniform walls.

    ``rt60_s = 0`` means anechoic: reflections are omitted entirely.
    """

    dims_m: tuple[float, float, float]
    rt60_s: float = 0.0
    max_image_order: int = 0
    speed_of_sound_mps: float = 343.0

    def __post_init__(self):
        if any(d <= 0 for d in self.dims_m):
            raise GeometryError(f"room dimensions must be positive, got {self.dims_m}")
        if self.rt60_s < 0:
            raise GeometryError(f"rt60_s must be nonnegative, got {self.rt60_s}")
        if self.max_image_order < 0:
            raise GeometryError("max_image_order must be nonnegative")

    def reflection_coefficient(self) -> float:
        """Uniform pressure reflection coefficient from Sabine's relation."""
        if self.rt60_s == 0:
            return 0.0
        lx, ly, lz = self.dims_m
        volume = lx * ly * lz
        surface = 2 * (lx * ly + lx * lz + ly * lz)
        absorption = SABINE_CONSTANT * volume / (surface * self.rt60_s)
        absorption = min(absorption, 1.0)
        return float(np.sqrt(1.0 - absorption))

    def to_dict(self) -> dict:
        return {
            "dims_m": list(self.dims_m),
            "rt60_s": self.rt60_s,
            "max_image_order": self.max_image_order,
            "speed_of_sound_mps": self.speed_of_sound_mps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoomSpec":
        return cls(
            dims_m=tuple(float(x) for x in d["dims_m"]),
            rt60_s=float(d["rt60_s"]),
            max_image_order=int(d["max_image_order"]),
            speed_of_sound_mps=float(d["speed_of_sound_mps"]),
        )


@dataclass(frozen=True)
class RirPair:
    """Direct and reflected components of one impulse response.

    ``h_dir + h_refl`` reproduces the full simulated response sample-wise.
    """

    h_dir: np.ndarray
    h_refl: np.ndarray


def _check_inside(room: RoomSpec, pos: np.ndarray, what: str) -> None:
    if not np.all((pos > 0) & (pos < np.asarray(room.dims_m))):
        raise GeometryError(f"{what} {pos.tolist()} is not strictly inside room {room.dims_m}")


def enumerate_images(room: RoomSpec, src_pos) -> list[tuple[np.ndarray, int]]:
    """All image-source positions with total reflection counts up to the room's order.

    Along each axis the images of a source at ``u`` are ``2 n L + (-1)^q u``
    with ``|2 n - q|`` wall hits; the total order is the sum over axes.
    """
    src_pos = np.asarray(src_pos, dtype=float)
    order = room.max_image_order
    per_axis: list[list[tuple[float, int]]] = []
    for axis in range(3):
        length = room.dims_m[axis]
        u = src_pos[axis]
        entries = []
        n_max = order // 2 + 1
        for n in range(-n_max, n_max + 1):
            for q in (0, 1):
                hits = abs(2 * n - q)
                if hits <= order:
                    coord = 2 * n * length + (u if q == 0 else -u)
                    entries.append((coord, hits))
        per_axis.append(entries)
    images = []
    for cx, hx in per_axis[0]:
        for cy, hy in per_axis[1]:
            if hx + hy > order:
                continue
            for cz, hz in per_axis[2]:
                total = hx + hy + hz
                if total <= order:
                    images.append((np.array([cx, cy, cz]), total))
    return images


def fractional_delay_kernel(delay_samples: float, length: int) -> tuple[int, np.ndarray]:
    """16-tap Hann-windowed sinc kernel for one arrival.

    Returns the first tap index and the tap values; taps falling outside
    ``[0, length)`` are dropped by the caller.
    """
    center = int(round(delay_samples))
    offsets = np.arange(center - SINC_TAPS // 2, center + SINC_TAPS // 2) - delay_samples
    taps = np.sinc(offsets)
    half_width = SINC_TAPS / 2
    window = 0.5 * (1.0 + np.cos(np.pi * offsets / half_width))
    window[np.abs(offsets) > half_width] = 0.0
    return center - SINC_TAPS // 2, taps * window


def simulate_rir(
    room: RoomSpec, src_pos, mic_pos, grid: FrequencyGrid
) -> np.ndarray:
    """Image-source room impulse response of length ``grid.fft_size``.

    Arrivals beyond the buffer raise a :class:`TruncationWarning` and are
    dropped. ``rt60_s = 0`` or ``max_image_order = 0`` yields the free-field
    direct path only.
    """
    src_pos = np.asarray(src_pos, dtype=float)
    mic_pos = np.asarray(mic_pos, dtype=float)
    _check_inside(room, src_pos, "source")
    _check_inside(room, mic_pos, "microphone")
    if np.allclose(src_pos, mic_pos):
        raise GeometryError("source and microphone coincide")

    beta = room.reflection_coefficient()
    if room.rt60_s == 0 or beta == 0.0:
        images = [(src_pos, 0)]
    else:
        images = enumerate_images(room, src_pos)

    fs = grid.sample_rate_hz
    c = room.speed_of_sound_mps
    rir = np.zeros(grid.fft_size)
    truncated = False
    for pos, hits in images:
        dist = float(np.linalg.norm(pos - mic_pos))
        if dist == 0.0:
            raise GeometryError("an image source coincides with the microphone")
        amp = beta**hits / (4.0 * np.pi * dist) if hits > 0 else 1.0 / (4.0 * np.pi * dist)
        delay = dist / c * fs
        start, taps = fractional_delay_kernel(delay, grid.fft_size)
        stop = start + taps.size
        if start >= grid.fft_size:
            truncated = True
            continue
        if stop > grid.fft_size:
            truncated = True
            taps = taps[: grid.fft_size - start]
            stop = grid.fft_size
        lo = max(start, 0)
        rir[lo:stop] += amp * taps[lo - start :]
    if truncated:
        warnings.warn(
            f"impulse response exceeds fft_size={grid.fft_size} at rt60={room.rt60_s}s; "
            "late arrivals were cut",
            TruncationWarning,
            stacklevel=2,
        )
    return rir


def earliest_reflection_delay_s(room: RoomSpec, src_pos, mic_pos) -> float:
    """Arrival time of the earliest first-order image, in seconds."""
    src_pos = np.asarray(src_pos, dtype=float)
    mic_pos = np.asarray(mic_pos, dtype=float)
    best = np.inf
    for axis in range(3):
        for wall in (0.0, room.dims_m[axis]):
            img = src_pos.copy()
            img[axis] = 2 * wall - img[axis]
            best = min(best, float(np.linalg.norm(img - mic_pos)))
    return best / room.speed_of_sound_mps


def split_direct_reflected(
    rir: np.ndarray,
    src_pos,
    mic_pos,
    room: RoomSpec,
    grid: FrequencyGrid,
    guard_ms: float = DEFAULT_GUARD_MS,
) -> RirPair:
    """Gate the response around the line-of-sight delay.

    ``h_dir`` keeps samples within ``guard_ms`` of the line-of-sight arrival;
    ``h_refl`` is the remainder, so the two always sum to the input. A guard
    window reaching past the earliest first-order reflection raises
    :class:`OverlapWarning`.
    """
    rir = np.asarray(rir, dtype=float)
    src_pos = np.asarray(src_pos, dtype=float)
    mic_pos = np.asarray(mic_pos, dtype=float)
    fs = grid.sample_rate_hz
    t_los = float(np.linalg.norm(src_pos - mic_pos)) / room.speed_of_sound_mps
    guard_s = guard_ms * 1e-3
    if room.rt60_s > 0 and room.max_image_order > 0:
        t_first = earliest_reflection_delay_s(room, src_pos, mic_pos)
        if t_los + guard_s > t_first:
            warnings.warn(
                f"direct gate end {t_los + guard_s:.4f}s overlaps earliest reflection "
                f"at {t_first:.4f}s",
                OverlapWarning,
                stacklevel=2,
            )
    n = np.arange(rir.size)
    mask = (n >= (t_los - guard_s) * fs) & (n <= (t_los + guard_s) * fs)
    h_dir = np.where(mask, rir, 0.0)
    return RirPair(h_dir=h_dir, h_refl=rir - h_dir)
