"""Two-stage training: sound-zone pretraining, then teacher-protected
crosstalk refinement, plus a per-scene direct-optimization oracle used as an
achievability bound.

Training is deterministic given (samples, seed, config): parameter init and
batch shuffling use seeded generators, scenes are reduced in a fixed order,
and the optimizer is plain bias-corrected Adam.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import losses as L
from .core import FrequencyGrid
from .errors import ConfigurationError, TrainingDivergedError
from .losses import CompactnessConfig, LossWeights, TargetSpec
from .net import (
    AdamState,
    NetworkParams,
    PoseInput,
    _backprop_banks,
    _forward_batch,
    adam_step,
    init_params,
    normalize_pose,
)

DEFAULT_HOLDOUT_FRACTION = 0.1


@dataclass
class TrainConfig:
    """Hyperparameters for one training stage."""

    stage: str = "psz"
    epochs: int = 200
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    holdout_fraction: float = DEFAULT_HOLDOUT_FRACTION
    patience: int = 0  # 0 disables early stopping
    num_bands: int = 64
    fourier_sigma: float = 3.0
    hidden_sizes: tuple[int, ...] = (256, 256, 256)
    teacher_ckpt: str | None = None

    def __post_init__(self):
        if self.stage not in ("psz", "xtc"):
            raise ConfigurationError(f"unknown training stage {self.stage!r}")
        if self.stage == "xtc" and not self.teacher_ckpt:
            # The in-process API passes teacher params directly; the CLI enforces
            # the checkpoint path. Only flag obviously broken configs here.
            pass


@dataclass
class SceneBundle:
    """Preprocessed per-scene training inputs."""

    atf: np.ndarray  # complex128 (4, M, L, N)
    pose_norm: np.ndarray  # (4,)
    targets: TargetSpec
    xtc_targets: tuple | None = None


def _prepare_bundles(samples, params: NetworkParams) -> list[SceneBundle]:
    from .dataset import nearest_same_side_drivers

    bundles = []
    for s in samples:
        atf = np.ascontiguousarray(s.atf.values.astype(np.complex128))
        refs = nearest_same_side_drivers(s.config)
        targets = L.make_targets(s.atf, refs)
        bundles.append(
            SceneBundle(
                atf=atf,
                pose_norm=normalize_pose(params, s.pose),
                targets=targets,
            )
        )
    return bundles


def _pose_bounds_from(samples, margin: float = 1e-6):
    poses = np.stack([s.pose.as_vector() for s in samples])
    lo, hi = poses.min(axis=0), poses.max(axis=0)
    pad = np.maximum(hi - lo, 1.0) * margin
    return lo - pad, hi + pad


def _split_indices(n: int, holdout_fraction: float, seed: int):
    rng = np.random.default_rng([seed, 0xFEED])
    order = rng.permutation(n)
    n_val = int(round(n * holdout_fraction))
    if n > 1:
        n_val = min(max(n_val, 0), n - 1)
    return order[n_val:], order[:n_val]


def _scene_objective(bundle: SceneBundle, bank, weights, cfg, stage, teacher_bank):
    if stage == "psz":
        return L.psz_objective(bundle.atf, bank, bundle.targets, weights, cfg, need_grad=True)
    return L.total_objective(
        bundle.atf, bank, bundle.targets, bundle.xtc_targets, teacher_bank,
        weights, cfg, need_grad=True,
    )


def _run_training(
    samples,
    grid: FrequencyGrid,
    config: TrainConfig,
    params: NetworkParams,
    stage: str,
    teacher: NetworkParams | None,
) -> tuple[NetworkParams, list[dict]]:
    if not samples:
        raise ConfigurationError("training requires a nonempty dataset")
    cfg = CompactnessConfig.default_for(grid)
    bundles = _prepare_bundles(samples, params)

    teacher_banks = None
    if stage == "xtc":
        poses = np.stack([b.pose_norm for b in bundles])
        teacher_banks, _ = _forward_batch(teacher, poses)
        for b, tb, s in zip(bundles, teacher_banks, samples):
            b.xtc_targets = L.make_xtc_targets(s.atf, tb, config.weights.epsilon)

    train_idx, val_idx = _split_indices(len(bundles), config.holdout_fraction, config.seed)
    shuffle_rng = np.random.default_rng([config.seed, 0xABCD])
    arrays = params.trainable()
    state = AdamState.zeros_like(arrays)
    history: list[dict] = []
    best_val = np.inf
    best_arrays = arrays
    stale = 0

    def batch_eval(indices, need_grad):
        poses = np.stack([bundles[i].pose_norm for i in indices])
        banks, acts = _forward_batch(params.with_trainable(arrays), poses)
        values, comps_sum = [], {}
        bank_grads = np.zeros_like(banks) if need_grad else None
        for j, i in enumerate(indices):
            b = bundles[i]
            tb = teacher_banks[i] if teacher_banks is not None else None
            if need_grad:
                v, g, comps = _scene_objective(b, banks[j], config.weights, cfg, stage, tb)
                bank_grads[j] = g / len(indices)
            else:
                if stage == "psz":
                    v, _, comps = L.psz_objective(
                        b.atf, banks[j], b.targets, config.weights, cfg, need_grad=False
                    )
                else:
                    v, _, comps = L.total_objective(
                        b.atf, banks[j], b.targets, b.xtc_targets, tb,
                        config.weights, cfg, need_grad=False,
                    )
            values.append(v)
            for k_, c in comps.items():
                comps_sum[k_] = comps_sum.get(k_, 0.0) + c / len(indices)
        mean_value = float(np.mean(values))
        grads = None
        if need_grad:
            grads = _backprop_banks(params.with_trainable(arrays), acts, bank_grads)
        return mean_value, grads, comps_sum

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(train_idx)
        epoch_loss, epoch_comps, n_batches = 0.0, {}, 0
        for start in range(0, order.size, config.batch_size):
            batch = order[start : start + config.batch_size]
            value, grads, comps = batch_eval(batch, need_grad=True)
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"stage {stage} diverged at epoch {epoch}",
                    last_good_params=params.with_trainable(best_arrays),
                )
            arrays, state = adam_step(arrays, grads, state, config.learning_rate)
            epoch_loss += value
            n_batches += 1
            for k_, c in comps.items():
                epoch_comps[k_] = epoch_comps.get(k_, 0.0) + c
        record = {
            "epoch": epoch,
            "stage": stage,
            "loss": epoch_loss / max(n_batches, 1),
            "components": {k_: c / max(n_batches, 1) for k_, c in epoch_comps.items()},
            "wall_time_s": time.perf_counter() - t0,
        }
        if val_idx.size:
            val_loss, _, _ = batch_eval(val_idx, need_grad=False)
            record["val_loss"] = val_loss
            if val_loss < best_val - 1e-12:
                best_val, best_arrays, stale = val_loss, arrays, 0
            else:
                stale += 1
                if config.patience and stale >= config.patience:
                    history.append(record)
                    break
        else:
            best_arrays = arrays
        history.append(record)
    final = best_arrays if (val_idx.size and config.patience) else arrays
    return params.with_trainable(final), history


def train_psz(
    samples, grid: FrequencyGrid, config: TrainConfig, pose_bounds=None
) -> tuple[NetworkParams, list[dict]]:
    """Stage 1: fit the pose-conditioned network to the sound-zone objective."""
    if pose_bounds is None:
        pose_bounds = _pose_bounds_from(samples)
    n_drivers = samples[0].atf.values.shape[2]
    params = init_params(
        seed=config.seed,
        num_drivers=n_drivers,
        num_bins=grid.num_bins,
        pose_lo=pose_bounds[0],
        pose_hi=pose_bounds[1],
        num_bands=config.num_bands,
        fourier_sigma=config.fourier_sigma,
        hidden_sizes=tuple(config.hidden_sizes),
    )
    return _run_training(samples, grid, config, params, "psz", None)


def train_xtc(
    samples, grid: FrequencyGrid, teacher: NetworkParams, config: TrainConfig
) -> tuple[NetworkParams, list[dict]]:
    """Stage 2: adapt a copy of the teacher under the compound objective.

    Diagonal targets are captured per scene from the frozen teacher before any
    update, so the refinement is anchored to the pretrained ear responses.
    """
    params = teacher.with_trainable(
        {k: v.copy() for k, v in teacher.trainable().items()}
    )
    return _run_training(samples, grid, config, params, "xtc", teacher)


def direct_filter_oracle(
    atf,
    targets: TargetSpec,
    weights: LossWeights,
    steps: int,
    cfg: CompactnessConfig | None = None,
    grid: FrequencyGrid | None = None,
    learning_rate: float = 3e-2,
    seed: int = 0,
    objective: str = "psz",
    teacher_bank=None,
    xtc_targets=None,
    init_bank=None,
) -> tuple[np.ndarray, float]:
    """Optimize one scene's filter bank directly (no network) with Adam.

    With ``objective="psz"`` this bounds the achievable stage-1 loss for a
    single pose; ``objective="total"`` continues from a pretrained bank under
    the stage-2 compound objective (requires ``teacher_bank`` and
    ``xtc_targets``). Returns the bank and its final objective value.
    """
    vals = atf.values if hasattr(atf, "values") else np.asarray(atf)
    _, _, n_drivers, n_bins = vals.shape
    if cfg is None:
        if grid is None:
            grid = atf.grid
        cfg = CompactnessConfig.default_for(grid)
    if objective not in ("psz", "total"):
        raise ConfigurationError(f"unknown oracle objective {objective!r}")
    if objective == "total" and (teacher_bank is None or xtc_targets is None):
        raise ConfigurationError("total objective requires teacher_bank and xtc_targets")

    rng = np.random.default_rng([seed, 0xACE])
    if init_bank is None:
        bank_re = 1e-3 * rng.standard_normal((n_drivers, 4, n_bins))
        bank_im = 1e-3 * rng.standard_normal((n_drivers, 4, n_bins))
    else:
        bank_re = np.asarray(init_bank).real.copy()
        bank_im = np.asarray(init_bank).imag.copy()
    arrays = {"re": bank_re, "im": bank_im}
    state = AdamState.zeros_like(arrays)
    value = np.inf
    for _ in range(steps):
        bank = arrays["re"] + 1j * arrays["im"]
        if objective == "psz":
            value, grad, _ = L.psz_objective(vals, bank, targets, weights, cfg, need_grad=True)
        else:
            value, grad, _ = L.total_objective(
                vals, bank, targets, xtc_targets, teacher_bank, weights, cfg, need_grad=True
            )
        if not np.isfinite(value):
            raise TrainingDivergedError("oracle diverged", last_good_params=arrays)
        arrays, state = adam_step(
            arrays, {"re": grad.real, "im": grad.imag}, state, learning_rate
        )
    bank = arrays["re"] + 1j * arrays["im"]
    if objective == "psz":
        value = L.loss_psz(vals, bank, targets, weights, cfg)
    else:
        value = L.loss_total(vals, bank, targets, xtc_targets, teacher_bank, weights, cfg)
    return bank, float(value)


def scene_loss_psz(sample, bank, weights: LossWeights, grid: FrequencyGrid) -> float:
    """Stage-1 objective of a given bank on one built scene."""
    from .dataset import nearest_same_side_drivers

    targets = L.make_targets(sample.atf, nearest_same_side_drivers(sample.config))
    cfg = CompactnessConfig.default_for(grid)
    return L.loss_psz(sample.atf.values, bank, targets, weights, cfg)
