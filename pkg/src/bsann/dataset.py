"""Randomized scene generation and dataset serialization.

A scene is one draw of room, array placement, listener poses, and head
geometry. Scene sampling is a pure function of (seed, ranges); the default
desk scene is the fixed point of fully degenerate ranges. Datasets are stored
as ``BSZ1`` files: magic bytes, a length-prefixed JSON header, then a
little-endian float32 blob of interleaved (re, im) transfer-function values in
index order [sample, ear, point, loudspeaker, bin].
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from .acoustics import (
    AtfTensor,
    DriverSpec,
    HrtfConfig,
    ListenerGeometry,
    assemble_atf,
    left_unit_for,
)
from .core import FrequencyGrid
from .errors import ChecksumError, ConfigurationError, DatasetFormatError, GeometryError
from .net import PoseInput
from .room import RoomSpec, simulate_rir, split_direct_reflected

MAGIC = b"BSZ1"
DATASET_VERSION = 1

DEFAULT_ROOM_DIMS = (6.0, 4.0, 2.5)
DEFAULT_ARRAY_CENTER = (3.0, 1.0, 1.2)
DEFAULT_LISTENER_DISTANCE = 1.0  # in front of the array plane
DEFAULT_LISTENER_LATERAL = 0.5  # to each side of the array center
ARC_RADIUS_M = 1.0
ARC_SPAN_DEG = 90.0
ROW_OFFSET_M = 0.06
WOOFER_PISTON_M = 0.04
TWEETER_PISTON_M = 0.012
DEFAULT_HEAD_RADIUS = 0.085
DEFAULT_EAR_OFFSET = 0.005
CONTROL_DISC_RADIUS = 0.05
DEFAULT_NUM_CONTROL_POINTS = 8
REJECTION_LIMIT = 1000


@dataclass(frozen=True)
class SceneRanges:
    """Uniform sampling ranges (lo, hi) per scene parameter; lo == hi pins it."""

    room_lx: tuple[float, float] = (DEFAULT_ROOM_DIMS[0], DEFAULT_ROOM_DIMS[0])
    room_ly: tuple[float, float] = (DEFAULT_ROOM_DIMS[1], DEFAULT_ROOM_DIMS[1])
    room_lz: tuple[float, float] = (DEFAULT_ROOM_DIMS[2], DEFAULT_ROOM_DIMS[2])
    rt60_s: tuple[float, float] = (0.0, 0.0)
    array_dx: tuple[float, float] = (0.0, 0.0)
    array_dy: tuple[float, float] = (0.0, 0.0)
    zone1_dx: tuple[float, float] = (0.0, 0.0)
    zone1_dy: tuple[float, float] = (0.0, 0.0)
    zone2_dx: tuple[float, float] = (0.0, 0.0)
    zone2_dy: tuple[float, float] = (0.0, 0.0)
    head_radius_m: tuple[float, float] = (DEFAULT_HEAD_RADIUS, DEFAULT_HEAD_RADIUS)
    ear_offset_m: tuple[float, float] = (DEFAULT_EAR_OFFSET, DEFAULT_EAR_OFFSET)
    max_image_order: int = 0
    num_control_points: int = DEFAULT_NUM_CONTROL_POINTS
    control_disc_radius_m: float = CONTROL_DISC_RADIUS
    # When set, every scene reuses one seeded disc layout (in ear-local frame),
    # so the plant is a deterministic function of the listener poses.
    fixed_control_layout_seed: int | None = None

    def __post_init__(self):
        for name in (
            "room_lx", "room_ly", "room_lz", "rt60_s", "array_dx", "array_dy",
            "zone1_dx", "zone1_dy", "zone2_dx", "zone2_dy", "head_radius_m", "ear_offset_m",
        ):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigurationError(f"range {name} has lo {lo} > hi {hi}")

    @classmethod
    def randomized(cls) -> "SceneRanges":
        """Full scene randomization: rooms, reverberation, array and zone centers."""
        return cls(
            room_lx=(4.0, 8.0),
            room_ly=(3.5, 7.0),
            room_lz=(2.4, 3.2),
            rt60_s=(0.1, 0.4),
            array_dx=(-0.4, 0.4),
            array_dy=(-0.3, 0.3),
            zone1_dx=(-0.25, 0.25),
            zone1_dy=(-0.25, 0.25),
            zone2_dx=(-0.25, 0.25),
            zone2_dy=(-0.25, 0.25),
            head_radius_m=(0.075, 0.095),
            ear_offset_m=(0.0, 0.01),
            max_image_order=3,
        )

    @classmethod
    def pose_only(cls, extent_m: float = 0.25, rt60_s: float = 0.0,
                  max_image_order: int = 0,
                  fixed_control_layout_seed: int | None = 0) -> "SceneRanges":
        """Default room and head, zone centers jittered within +/- extent.

        Control points default to a fixed layout that translates with the
        head, so pose alone determines the plant.
        """
        j = (-extent_m, extent_m)
        return cls(
            rt60_s=(rt60_s, rt60_s),
            zone1_dx=j, zone1_dy=j, zone2_dx=j, zone2_dy=j,
            max_image_order=max_image_order,
            fixed_control_layout_seed=fixed_control_layout_seed,
        )

    def pose_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Bounds of the 4-vector (x1, y1, x2, y2) over these ranges."""
        acx, acy, _ = DEFAULT_ARRAY_CENTER
        base = np.array([
            acx - DEFAULT_LISTENER_LATERAL, acy + DEFAULT_LISTENER_DISTANCE,
            acx + DEFAULT_LISTENER_LATERAL, acy + DEFAULT_LISTENER_DISTANCE,
        ])
        lo = base + np.array([
            self.array_dx[0] + self.zone1_dx[0], self.array_dy[0] + self.zone1_dy[0],
            self.array_dx[0] + self.zone2_dx[0], self.array_dy[0] + self.zone2_dy[0],
        ])
        hi = base + np.array([
            self.array_dx[1] + self.zone1_dx[1], self.array_dy[1] + self.zone1_dy[1],
            self.array_dx[1] + self.zone2_dx[1], self.array_dy[1] + self.zone2_dy[1],
        ])
        return lo, hi

    def to_dict(self) -> dict:
        return {
            name: list(v) if isinstance(v := getattr(self, name), tuple) else v
            for name in self.__dataclass_fields__
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneRanges":
        kwargs = {}
        for name, f in cls.__dataclass_fields__.items():
            if name not in d:
                continue
            v = d[name]
            kwargs[name] = tuple(v) if isinstance(v, list) else v
        return cls(**kwargs)


@dataclass(frozen=True)
class SceneConfig:
    """One concrete scene: room, driver array, and the two listeners."""

    room: RoomSpec
    drivers: list[DriverSpec]
    listeners: tuple[ListenerGeometry, ListenerGeometry]
    seed: int

    def __post_init__(self):
        dims = np.asarray(self.room.dims_m)
        for drv in self.drivers:
            if not np.all((drv.position_m > 0) & (drv.position_m < dims)):
                raise GeometryError(f"driver at {drv.position_m.tolist()} outside the room")
        for li, listener in enumerate(self.listeners):
            if not np.all((listener.head_center_m > 0) & (listener.head_center_m < dims)):
                raise GeometryError(f"listener {li + 1} head outside the room")
        gap = np.linalg.norm(self.listeners[0].head_center_m - self.listeners[1].head_center_m)
        if gap <= self.listeners[0].head_radius_m + self.listeners[1].head_radius_m:
            raise GeometryError("listener spheres overlap")

    @property
    def pose(self) -> PoseInput:
        return PoseInput(
            tuple(self.listeners[0].head_center_m[:2]),
            tuple(self.listeners[1].head_center_m[:2]),
        )

    def to_dict(self) -> dict:
        return {
            "room": self.room.to_dict(),
            "drivers": [d.to_dict() for d in self.drivers],
            "listeners": [l.to_dict() for l in self.listeners],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        return cls(
            room=RoomSpec.from_dict(d["room"]),
            drivers=[DriverSpec.from_dict(x) for x in d["drivers"]],
            listeners=tuple(ListenerGeometry.from_dict(x) for x in d["listeners"]),
            seed=int(d["seed"]),
        )


@dataclass
class SceneSample:
    """A built scene: its config, transfer-function tensor, and pose."""

    config: SceneConfig
    atf: AtfTensor
    pose: PoseInput


def _build_array(array_center: np.ndarray) -> list[DriverSpec]:
    """Two driver rows on an arc of radius 1 m about the listeners' midpoint.

    Woofers sit below, tweeters above; each row is equally spaced in angle
    (hence in arc length) and every driver faces the arc center.
    """
    focus = array_center + np.array([0.0, DEFAULT_LISTENER_DISTANCE, 0.0])
    drivers = []
    half = np.deg2rad(ARC_SPAN_DEG / 2)
    for band, z_off, radius in (
        ("woofer", -ROW_OFFSET_M, WOOFER_PISTON_M),
        ("tweeter", ROW_OFFSET_M, TWEETER_PISTON_M),
    ):
        for phi in np.linspace(-half, half, 4):
            pos = focus + np.array(
                [ARC_RADIUS_M * np.sin(phi), -ARC_RADIUS_M * np.cos(phi), z_off]
            )
            aim = focus - pos
            aim[2] = 0.0
            facing = aim / np.linalg.norm(aim)
            drivers.append(
                DriverSpec(
                    position_m=pos,
                    facing_unit=facing,
                    piston_radius_m=radius,
                    band=band,
                )
            )
    return drivers


def _sample_control_points(
    rng: np.random.Generator,
    ear_ref: np.ndarray,
    head_center: np.ndarray,
    head_radius: float,
    facing: np.ndarray,
    num_points: int,
    disc_radius: float,
) -> np.ndarray:
    """Uniform points in the disc around an ear, rejecting inside-sphere draws.

    The disc lies in the plane normal to the lateral (interaural) axis.
    """
    lateral = left_unit_for(facing)
    e1 = facing
    e2 = np.cross(lateral, facing)
    e2 = e2 / np.linalg.norm(e2)
    points = []
    attempts = 0
    while len(points) < num_points:
        if attempts >= REJECTION_LIMIT:
            raise GeometryError(
                f"control-point sampling failed after {REJECTION_LIMIT} attempts"
            )
        attempts += 1
        rho = disc_radius * np.sqrt(rng.uniform())
        phi = rng.uniform(0.0, 2.0 * np.pi)
        pt = ear_ref + rho * (np.cos(phi) * e1 + np.sin(phi) * e2)
        if np.linalg.norm(pt - head_center) > head_radius:
            points.append(pt)
    return np.stack(points)


def _uniform(rng: np.random.Generator, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    return lo if lo == hi else float(rng.uniform(lo, hi))


def sample_scene(rng_seed, ranges: SceneRanges) -> SceneConfig:
    """Draw one scene; deterministic in (seed, ranges).

    Draw order is fixed: room, reverberation, array offset, zone centers, per
    listener head radius / ear offset / control points.
    """
    rng = np.random.default_rng(rng_seed)
    dims = (
        _uniform(rng, ranges.room_lx),
        _uniform(rng, ranges.room_ly),
        _uniform(rng, ranges.room_lz),
    )
    rt60 = _uniform(rng, ranges.rt60_s)
    room = RoomSpec(
        dims_m=dims,
        rt60_s=rt60,
        max_image_order=ranges.max_image_order if rt60 > 0 else 0,
    )
    base_center = np.asarray(DEFAULT_ARRAY_CENTER)
    array_center = base_center + np.array(
        [_uniform(rng, ranges.array_dx), _uniform(rng, ranges.array_dy), 0.0]
    )
    drivers = _build_array(array_center)

    zone_offsets = [
        np.array([_uniform(rng, ranges.zone1_dx), _uniform(rng, ranges.zone1_dy), 0.0]),
        np.array([_uniform(rng, ranges.zone2_dx), _uniform(rng, ranges.zone2_dy), 0.0]),
    ]
    facing = np.array([0.0, -1.0, 0.0])  # interaural axis perpendicular to the array
    listeners = []
    for li, lateral_sign in enumerate((-1.0, 1.0)):
        center = array_center + np.array(
            [lateral_sign * DEFAULT_LISTENER_LATERAL, DEFAULT_LISTENER_DISTANCE, 0.0]
        )
        center = center + zone_offsets[li]
        head_radius = _uniform(rng, ranges.head_radius_m)
        ear_offset = _uniform(rng, ranges.ear_offset_m)
        left_u = left_unit_for(facing)
        sides = {}
        for si, (side, sign) in enumerate((("left", 1.0), ("right", -1.0))):
            ear_ref = center + sign * (head_radius + ear_offset) * left_u
            if ranges.fixed_control_layout_seed is not None:
                point_rng = np.random.default_rng(
                    [ranges.fixed_control_layout_seed, 2 * li + si]
                )
            else:
                point_rng = rng
            sides[side] = _sample_control_points(
                point_rng, ear_ref, center, head_radius, facing,
                ranges.num_control_points, ranges.control_disc_radius_m,
            )
        listeners.append(
            ListenerGeometry(
                head_center_m=center,
                head_radius_m=head_radius,
                ear_offset_m=ear_offset,
                facing_unit=facing,
                control_points_left=sides["left"],
                control_points_right=sides["right"],
            )
        )
    if np.ndim(rng_seed) == 0:
        seed_int = int(rng_seed)
    else:
        seed_int = int(np.random.SeedSequence(rng_seed).generate_state(1, np.uint64)[0])
    return SceneConfig(room=room, drivers=drivers, listeners=tuple(listeners), seed=seed_int)


def default_scene(seed: int = 0) -> SceneConfig:
    """The fixed desk scene: degenerate ranges, anechoic room, default heads."""
    return sample_scene(seed, SceneRanges())


def with_reference_control_points(config: SceneConfig) -> SceneConfig:
    """Replace each ear's cloud with the single ear reference point (M = 1)."""
    listeners = []
    for listener in config.listeners:
        listeners.append(
            ListenerGeometry(
                head_center_m=listener.head_center_m,
                head_radius_m=listener.head_radius_m,
                ear_offset_m=listener.ear_offset_m,
                facing_unit=listener.facing_unit,
                control_points_left=listener.ear_reference("left")[None, :],
                control_points_right=listener.ear_reference("right")[None, :],
            )
        )
    return replace(config, listeners=tuple(listeners))


def nearest_same_side_drivers(config: SceneConfig) -> list[list[int]]:
    """Per ear (L1, R1, L2, R2): nearest driver of each band on the ear's side.

    Used to form achievable bright-zone reference targets; falls back to the
    nearest driver overall within a band when no same-side driver exists.
    """
    out = []
    bands = sorted({d.band for d in config.drivers})
    for li, listener in enumerate(config.listeners):
        left_u = left_unit_for(listener.facing_unit)
        for side, sign in (("left", 1.0), ("right", -1.0)):
            ear_ref = listener.ear_reference(side)
            chosen = []
            for band in bands:
                candidates = [
                    (np.linalg.norm(d.position_m - ear_ref), i)
                    for i, d in enumerate(config.drivers)
                    if d.band == band
                    and (d.position_m - listener.head_center_m) @ (sign * left_u) >= 0
                ]
                if not candidates:
                    candidates = [
                        (np.linalg.norm(d.position_m - ear_ref), i)
                        for i, d in enumerate(config.drivers)
                        if d.band == band
                    ]
                chosen.append(min(candidates)[1])
            out.append(chosen)
    return out


def build_sample(
    config: SceneConfig,
    grid: FrequencyGrid,
    hrtf_cfg: HrtfConfig = HrtfConfig(),
    mode: str = "physically_informed",
) -> SceneSample:
    """Simulate all room paths and assemble the scene's transfer tensor.

    ``point_source`` mode skips the driver spectra, piston directivity, and
    sphere scattering (all unity), leaving the bare room transfer functions.
    """
    if mode not in ("point_source", "physically_informed"):
        raise ConfigurationError(f"unknown build mode {mode!r}")
    drivers = [d.with_response(grid) for d in config.drivers]
    m_pts = config.listeners[0].num_control_points
    n_drv = len(drivers)
    h_dir = np.zeros((4, m_pts, n_drv, grid.fft_size))
    h_refl = np.zeros_like(h_dir)
    for li, listener in enumerate(config.listeners):
        for si, side in enumerate(("left", "right")):
            e = 2 * li + si
            points = listener.control_points(side)
            for m in range(m_pts):
                for l, drv in enumerate(drivers):
                    rir = simulate_rir(config.room, drv.position_m, points[m], grid)
                    pair = split_direct_reflected(
                        rir, drv.position_m, points[m], config.room, grid
                    )
                    h_dir[e, m, l] = pair.h_dir
                    h_refl[e, m, l] = pair.h_refl
    if mode == "point_source":
        values = np.fft.rfft(h_dir + h_refl, n=grid.fft_size, axis=-1)
        atf = AtfTensor(values=values, grid=grid)
    else:
        atf = assemble_atf(
            h_dir, h_refl, drivers, config.listeners, grid, hrtf_cfg,
            speed_of_sound_mps=config.room.speed_of_sound_mps,
        )
    return SceneSample(config=config, atf=atf, pose=config.pose)


# ------------------------------------------------------------------- file IO


def write_dataset(
    path,
    samples: list[SceneSample],
    grid: FrequencyGrid,
    ranges: SceneRanges | None = None,
    mode: str = "physically_informed",
) -> None:
    """Serialize built samples; float32 payload round-trips losslessly."""
    if samples:
        shape = samples[0].atf.values.shape
        for s in samples:
            if s.atf.values.shape != shape:
                raise DatasetFormatError("all samples must share one tensor shape")
    else:
        shape = (4, 0, 0, grid.num_bins)
    blob_parts = []
    sample_meta = []
    for s in samples:
        v = np.ascontiguousarray(s.atf.values.astype(np.complex64))
        blob_parts.append(
            np.stack([v.real, v.imag], axis=-1).astype("<f4").tobytes()
        )
        sample_meta.append(
            {
                "seed": s.config.seed,
                "pose": s.pose.as_vector().tolist(),
                "config": s.config.to_dict(),
            }
        )
    blob = b"".join(blob_parts)
    header = {
        "version": DATASET_VERSION,
        "grid": grid.to_dict(),
        "mode": mode,
        "count": len(samples),
        "dims": {"ears": 4, "points": shape[1], "drivers": shape[2], "bins": shape[3]},
        "ranges": ranges.to_dict() if ranges is not None else None,
        "samples": sample_meta,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        fh.write(blob)


def read_dataset(path) -> tuple[list[SceneSample], FrequencyGrid, dict]:
    """Load a ``BSZ1`` file; verifies the payload digest."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise DatasetFormatError(f"{path}: bad magic; not a dataset file")
        raw = fh.read(8)
        if len(raw) < 8:
            raise DatasetFormatError(f"{path}: truncated header length")
        (hlen,) = struct.unpack("<Q", raw)
        payload = fh.read(hlen)
        if len(payload) < hlen:
            raise DatasetFormatError(f"{path}: truncated header")
        header = json.loads(payload.decode("utf-8"))
        if header.get("version") != DATASET_VERSION:
            raise DatasetFormatError(f"unsupported dataset version {header.get('version')}")
        blob = fh.read()
    if hashlib.sha256(blob).hexdigest() != header["blob_sha256"]:
        raise ChecksumError(f"{path}: payload digest mismatch")
    grid = FrequencyGrid.from_dict(header["grid"])
    dims = header["dims"]
    shape = (dims["ears"], dims["points"], dims["drivers"], dims["bins"])
    per_sample = int(np.prod(shape)) * 2
    expected = header["count"] * per_sample * 4
    if len(blob) != expected:
        raise DatasetFormatError(
            f"{path}: blob has {len(blob)} bytes, expected {expected}"
        )
    flat = np.frombuffer(blob, dtype="<f4")
    samples = []
    for i, meta in enumerate(header["samples"]):
        seg = flat[i * per_sample : (i + 1) * per_sample].reshape(*shape, 2)
        values = (seg[..., 0] + 1j * seg[..., 1]).astype(np.complex64)
        config = SceneConfig.from_dict(meta["config"])
        samples.append(
            SceneSample(
                config=config,
                atf=AtfTensor(values=values, grid=grid),
                pose=PoseInput.from_vector(meta["pose"]),
            )
        )
    return samples, grid, header
