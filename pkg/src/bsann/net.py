"""Pose-conditioned filter network and its reverse-mode gradient engine.

The network maps the two listeners' (x, y) positions through Fourier
positional encoding and a small tanh MLP to a complex filter bank
``[loudspeaker, program channel, frequency bin]``. Complex quantities are
paired reals throughout: every loss is a real function of (Re, Im), so the
backward pass is ordinary real-valued reverse mode specialized to the
encode -> MLP -> linear-head structure. Gradients with respect to the complex
bank are carried as complex arrays ``dL/dRe + i dL/dIm``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import DatasetFormatError, GeometryError, NonFiniteLossError, PropagationError

NUM_PROGRAMS = 4  # channel order (1L, 1R, 2L, 2R)
DEFAULT_NUM_BANDS = 64
DEFAULT_FOURIER_SIGMA = 3.0
DEFAULT_HIDDEN = (256, 256, 256)
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PoseInput:
    """Head positions of the two listeners in the horizontal plane (meters)."""

    listener1_xy_m: tuple[float, float]
    listener2_xy_m: tuple[float, float]

    def as_vector(self) -> np.ndarray:
        return np.array([*self.listener1_xy_m, *self.listener2_xy_m], dtype=float)

    @classmethod
    def from_vector(cls, v) -> "PoseInput":
        v = np.asarray(v, dtype=float)
        return cls((float(v[0]), float(v[1])), (float(v[2]), float(v[3])))


@dataclass
class FilterBank:
    """Complex filters [loudspeaker, program channel, frequency bin]."""

    values: np.ndarray
    grid: "object" = None  # FrequencyGrid; kept loose to avoid an import cycle

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.ndim != 3 or self.values.shape[1] != NUM_PROGRAMS:
            raise PropagationError(f"filter bank must be (L, 4, N), got {self.values.shape}")


@dataclass
class NetworkParams:
    """Trainable MLP state plus frozen encoding constants.

    ``fourier_freqs`` and the pose normalization bounds are fixed at
    initialization and never receive gradients.
    """

    fourier_freqs: np.ndarray  # (num_bands, 4)
    pose_lo: np.ndarray  # (4,)
    pose_hi: np.ndarray  # (4,)
    hidden_w: list[np.ndarray]
    hidden_b: list[np.ndarray]
    head_w: np.ndarray
    head_b: np.ndarray
    num_drivers: int
    num_bins: int
    seed: int = 0

    @property
    def out_dim(self) -> int:
        return self.num_drivers * NUM_PROGRAMS * self.num_bins * 2

    def trainable(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.hidden_w, self.hidden_b)):
            out[f"hidden.{i}.w"] = w
            out[f"hidden.{i}.b"] = b
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out

    def with_trainable(self, arrays: dict[str, np.ndarray]) -> "NetworkParams":
        hidden_w = [arrays[f"hidden.{i}.w"] for i in range(len(self.hidden_w))]
        hidden_b = [arrays[f"hidden.{i}.b"] for i in range(len(self.hidden_b))]
        return replace(
            self,
            hidden_w=hidden_w,
            hidden_b=hidden_b,
            head_w=arrays["head.w"],
            head_b=arrays["head.b"],
        )

    def check_finite(self) -> None:
        for name, arr in self.trainable().items():
            if not np.all(np.isfinite(arr)):
                raise PropagationError(f"non-finite network parameter in {name}")


def init_params(
    seed: int,
    num_drivers: int,
    num_bins: int,
    pose_lo,
    pose_hi,
    num_bands: int = DEFAULT_NUM_BANDS,
    fourier_sigma: float = DEFAULT_FOURIER_SIGMA,
    hidden_sizes: tuple[int, ...] = DEFAULT_HIDDEN,
    head_scale: float = 1e-2,
) -> NetworkParams:
    """Fresh parameters; the Fourier frequency matrix is drawn once and frozen."""
    rng = np.random.default_rng(seed)
    fourier = rng.normal(0.0, fourier_sigma, size=(num_bands, 4))
    sizes = [2 * num_bands, *hidden_sizes]
    hidden_w, hidden_b = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        hidden_w.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)))
        hidden_b.append(np.zeros(fan_out))
    out_dim = num_drivers * NUM_PROGRAMS * num_bins * 2
    head_w = rng.normal(0.0, head_scale / np.sqrt(sizes[-1]), size=(sizes[-1], out_dim))
    head_b = np.zeros(out_dim)
    return NetworkParams(
        fourier_freqs=fourier,
        pose_lo=np.asarray(pose_lo, dtype=float),
        pose_hi=np.asarray(pose_hi, dtype=float),
        hidden_w=hidden_w,
        hidden_b=hidden_b,
        head_w=head_w,
        head_b=head_b,
        num_drivers=num_drivers,
        num_bins=num_bins,
        seed=seed,
    )


def normalize_pose(params: NetworkParams, pose: PoseInput) -> np.ndarray:
    """Map a pose into [-1, 1]^4 using the training region bounds."""
    v = pose.as_vector()
    lo, hi = params.pose_lo, params.pose_hi
    span = hi - lo
    slack = np.maximum(span, 1e-6) * 1e-6
    if np.any(v < lo - slack) or np.any(v > hi + slack):
        raise GeometryError(f"pose {v.tolist()} outside training region [{lo}, {hi}]")
    out = np.zeros(4)
    ok = span > 1e-12
    out[ok] = 2.0 * (v[ok] - lo[ok]) / span[ok] - 1.0
    return out


def fourier_encode(s: np.ndarray, fourier_freqs: np.ndarray) -> np.ndarray:
    """Positional features [sin(2 pi B s); cos(2 pi B s)] of a normalized pose.

    ``s`` may be a single 4-vector or a batch (B, 4); the output has
    ``2 * num_bands`` features per pose.
    """
    s = np.asarray(s, dtype=float)
    proj = 2.0 * np.pi * s @ fourier_freqs.T
    return np.concatenate([np.sin(proj), np.cos(proj)], axis=-1)


def _forward_batch(params: NetworkParams, s_batch: np.ndarray):
    """MLP forward over normalized poses (B, 4); returns banks and activations."""
    params.check_finite()
    feats = fourier_encode(s_batch, params.fourier_freqs)
    acts = [feats]
    a = feats
    for w, b in zip(params.hidden_w, params.hidden_b):
        a = np.tanh(a @ w + b)
        acts.append(a)
    out = a @ params.head_w + params.head_b  # (B, out_dim)
    shaped = out.reshape(-1, params.num_drivers, NUM_PROGRAMS, params.num_bins, 2)
    banks = shaped[..., 0] + 1j * shaped[..., 1]
    return banks, acts


def forward(params: NetworkParams, pose: PoseInput, grid=None) -> FilterBank:
    """Deterministic filter bank for one pose."""
    s = normalize_pose(params, pose)
    banks, _ = _forward_batch(params, s[None, :])
    return FilterBank(values=banks[0], grid=grid)


def _backprop_banks(
    params: NetworkParams, acts: list[np.ndarray], bank_grads: np.ndarray
) -> dict[str, np.ndarray]:
    """Parameter gradients given dL/d(bank) for a batch, summed over the batch.

    ``bank_grads`` is complex (B, L, 4, N) carrying dL/dRe + i dL/dIm.
    """
    b = bank_grads.shape[0]
    d_out = np.empty((b, params.out_dim))
    stacked = np.stack([bank_grads.real, bank_grads.imag], axis=-1)
    d_out[:] = stacked.reshape(b, -1)

    grads: dict[str, np.ndarray] = {}
    a_last = acts[-1]
    grads["head.w"] = a_last.T @ d_out
    grads["head.b"] = d_out.sum(axis=0)
    d_a = d_out @ params.head_w.T
    for i in range(len(params.hidden_w) - 1, -1, -1):
        d_z = d_a * (1.0 - acts[i + 1] ** 2)
        grads[f"hidden.{i}.w"] = acts[i].T @ d_z
        grads[f"hidden.{i}.b"] = d_z.sum(axis=0)
        d_a = d_z @ params.hidden_w[i].T
    return grads


def backward(params: NetworkParams, pose: PoseInput, loss_fn) -> tuple[float, dict]:
    """Loss value and gradients w.r.t. every trainable parameter.

    ``loss_fn`` maps a complex bank (L, 4, N) to ``(value, grad)`` where
    ``grad`` is the complex-paired gradient dL/dRe + i dL/dIm. The frozen
    Fourier frequencies receive no gradient.
    """
    s = normalize_pose(params, pose)
    banks, acts = _forward_batch(params, s[None, :])
    value, bank_grad = loss_fn(banks[0])
    if not np.isfinite(value):
        raise NonFiniteLossError(f"loss evaluated non-finite ({value})")
    grads = _backprop_banks(params, acts, bank_grad[None, ...])
    return float(value), grads


@dataclass
class AdamState:
    """First/second moment accumulators and the step counter."""

    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, arrays: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            step=0,
            m={k: np.zeros_like(a) for k, a in arrays.items()},
            v={k: np.zeros_like(a) for k, a in arrays.items()},
        )


def adam_step(
    arrays: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new arrays and state."""
    t = state.step + 1
    new_arrays, new_m, new_v = {}, {}, {}
    for key in arrays:
        g = grads[key]
        m = beta1 * state.m[key] + (1.0 - beta1) * g
        v = beta2 * state.v[key] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_arrays[key] = arrays[key] - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[key], new_v[key] = m, v
    return new_arrays, AdamState(step=t, m=new_m, v=new_v)


def _array_manifest(params: NetworkParams) -> list[tuple[str, np.ndarray]]:
    items = [
        ("fourier_freqs", params.fourier_freqs),
        ("pose_lo", params.pose_lo),
        ("pose_hi", params.pose_hi),
    ]
    items.extend(params.trainable().items())
    return items


def save_checkpoint(params: NetworkParams, path, hyper: dict | None = None) -> None:
    """Write parameters as a JSON header plus a little-endian float32 blob."""
    items = _array_manifest(params)
    blob = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for _, a in items)
    header = {
        "version": CHECKPOINT_VERSION,
        "seed": params.seed,
        "num_drivers": params.num_drivers,
        "num_bins": params.num_bins,
        "num_hidden_layers": len(params.hidden_w),
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in items],
        "hyper": hyper or {},
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        fh.write(blob)


def load_checkpoint(path) -> tuple[NetworkParams, dict]:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        raw = fh.read(8)
        if len(raw) < 8:
            raise DatasetFormatError("checkpoint truncated before header length")
        (hlen,) = struct.unpack("<Q", raw)
        payload = fh.read(hlen)
        if len(payload) < hlen:
            raise DatasetFormatError("checkpoint truncated inside header")
        header = json.loads(payload.decode("utf-8"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise DatasetFormatError(f"unsupported checkpoint version {header.get('version')}")
        blob = fh.read()
    if hashlib.sha256(blob).hexdigest() != header["blob_sha256"]:
        raise DatasetFormatError("checkpoint blob digest mismatch")
    arrays = {}
    offset = 0
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        segment = blob[offset : offset + 4 * count]
        if len(segment) < 4 * count:
            raise DatasetFormatError(f"checkpoint blob too short for array {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(segment, dtype="<f4").astype(float).reshape(shape)
        offset += 4 * count
    n_hidden = header["num_hidden_layers"]
    params = NetworkParams(
        fourier_freqs=arrays["fourier_freqs"],
        pose_lo=arrays["pose_lo"],
        pose_hi=arrays["pose_hi"],
        hidden_w=[arrays[f"hidden.{i}.w"] for i in range(n_hidden)],
        hidden_b=[arrays[f"hidden.{i}.b"] for i in range(n_hidden)],
        head_w=arrays["head.w"],
        head_b=arrays["head.b"],
        num_drivers=header["num_drivers"],
        num_bins=header["num_bins"],
        seed=header["seed"],
    )
    return params, header.get("hyper", {})
