"""Training objectives for both optimization stages.

Program-pair convention: for pair ``k`` in {0, 1}, the active filters are the
two bank columns (kL, kR), the bright zone is listener k's ears, and the dark
zone is the other listener's ears; every pair-wise quantity is averaged over
the two pairs. Ear order is (L1, R1, L2, R2) and channel order (1L, 1R, 2L,
2R), so pair ``k`` uses ears/channels ``(2k, 2k+1)``.

Each loss has a plain evaluator and a ``*_grad`` variant returning
``(value, dL/d(bank))`` with the gradient carried as ``dL/dRe + i dL/dIm``.
Stop-gradient factors (the off-diagonal energy weight and the conditioning
weight) are recomputed from the inputs but never differentiated; the
``*_override`` keywords let tests freeze them explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve, firwin

from .core import FrequencyGrid
from .errors import ConfigurationError, DegeneratePlantError, NonFiniteLossError

TINY = 1e-300


@dataclass(frozen=True)
class LossWeights:
    """Every scalar hyperparameter of both training stages."""

    alpha: float = 0.5
    beta: float = 0.5
    gamma: float = 0.5
    lambda_xtc: float = 0.14
    lambda_off: float = 1.5
    lambda_diag: float = 1.0
    lambda_reg: float = 1.0
    beta0: float = 1e-4
    kappa_min: float = 1e3
    epsilon: float = 1e-8
    w_bz: float = 0.075
    w_dz: float = 0.075
    eta: float = 1.0
    g_max: float = 4.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must be in [0, 1], got {self.alpha}")
        for name in (
            "beta", "gamma", "lambda_xtc", "lambda_off", "lambda_diag", "lambda_reg",
            "beta0", "kappa_min", "epsilon", "w_bz", "w_dz", "eta", "g_max",
        ):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class TargetSpec:
    """Bright-zone target magnitudes per ear: array (4, M, N)."""

    bz_target_mag: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.bz_target_mag, dtype=float)
        if t.ndim != 3 or t.shape[0] != 4:
            raise ConfigurationError(f"bz_target_mag must be (4, M, N), got {t.shape}")
        if np.any(t < 0) or not np.all(np.isfinite(t)):
            raise ConfigurationError("bz_target_mag must be finite and nonnegative")
        object.__setattr__(self, "bz_target_mag", t)


@dataclass(frozen=True)
class XtcTargets:
    """Target diagonal magnitudes (|R_LL|, |R_RR|) for one program pair: (2, M, N)."""

    target_diag_mag: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.target_diag_mag, dtype=float)
        if t.ndim != 3 or t.shape[0] != 2:
            raise ConfigurationError(f"target_diag_mag must be (2, M, N), got {t.shape}")
        object.__setattr__(self, "target_diag_mag", t)


@dataclass(frozen=True)
class CompactnessConfig:
    """Time-domain compactness penalty: taper window and bandpass weighting FIR."""

    filter_len: int
    window: np.ndarray
    bandpass_fir: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.window, dtype=float)
        f = np.asarray(self.bandpass_fir, dtype=float)
        if w.size != self.filter_len:
            raise ConfigurationError("window length must equal filter_len")
        if np.any(w < 0) or np.any(w > 1) or np.any(np.diff(w) < -1e-12):
            raise ConfigurationError("window must be nondecreasing within [0, 1]")
        if not np.allclose(f, f[::-1], atol=1e-12):
            raise ConfigurationError("bandpass_fir must be linear phase (symmetric)")
        object.__setattr__(self, "window", w)
        object.__setattr__(self, "bandpass_fir", f)

    @classmethod
    def default_for(cls, grid: FrequencyGrid, num_taps: int = 65) -> "CompactnessConfig":
        """Late-energy taper (rise between 0.2 and 0.4 of the filter length)
        and a linear-phase bandpass over the grid's evaluation band."""
        n_hat = grid.fft_size
        n0, n1 = int(0.2 * n_hat), int(0.4 * n_hat)
        idx = np.arange(n_hat)
        window = np.ones(n_hat)
        window[:n0] = 0.0
        ramp = (idx[n0:n1] - n0) / max(n1 - n0, 1)
        window[n0:n1] = 0.5 * (1.0 - np.cos(np.pi * ramp))
        hi = min(grid.band_hi_hz, 0.995 * grid.sample_rate_hz / 2)
        fir = firwin(num_taps, [grid.band_lo_hz, hi], fs=grid.sample_rate_hz, pass_zero=False)
        return cls(filter_len=n_hat, window=window, bandpass_fir=fir)


def _vals(atf) -> np.ndarray:
    return atf.values if hasattr(atf, "values") else np.asarray(atf)


def pair_channels(k: int) -> tuple[int, int]:
    return 2 * k, 2 * k + 1


def bright_ears(k: int) -> tuple[int, int]:
    return 2 * k, 2 * k + 1


def dark_ears(k: int) -> tuple[int, int]:
    return 2 - 2 * k, 3 - 2 * k


# ----------------------------------------------------------------- stage 1


def _bright(atf, bank, targets, need_grad):
    h = _vals(atf)
    t = targets.bz_target_mag if isinstance(targets, TargetSpec) else np.asarray(targets)
    _, m_pts, _, n_bins = h.shape
    coef = 1.0 / (2.0 * n_bins * m_pts)
    value = 0.0
    grad = np.zeros_like(bank) if need_grad else None
    for k in (0, 1):
        for ear, ch in zip(bright_ears(k), pair_channels(k)):
            y = np.einsum("mln,ln->mn", h[ear], bank[:, ch, :])
            mag = np.abs(y)
            resid = t[ear] - mag
            value += coef * float(np.sum(resid * resid))
            if need_grad:
                gy = (-2.0 * coef) * resid * y / np.maximum(mag, TINY)
                grad[:, ch, :] += np.einsum("mln,mn->ln", h[ear].conj(), gy)
    return value, grad


def loss_bright(atf, bank, targets) -> float:
    """Mean squared magnitude error against the bright-zone targets."""
    return _bright(atf, bank, targets, False)[0]


def loss_bright_grad(atf, bank, targets):
    return _bright(atf, bank, targets, True)


def _dark(atf, bank, need_grad):
    h = _vals(atf)
    _, m_pts, _, n_bins = h.shape
    coef = 1.0 / (2.0 * 2.0 * n_bins * m_pts)  # pairs x channels x paper norm
    value = 0.0
    grad = np.zeros_like(bank) if need_grad else None
    for k in (0, 1):
        d0, d1 = dark_ears(k)
        h_dark = np.concatenate([h[d0], h[d1]], axis=0)  # (2M, L, N)
        for ch in pair_channels(k):
            y = np.einsum("mln,ln->mn", h_dark, bank[:, ch, :])
            value += coef * float(np.sum(np.abs(y) ** 2))
            if need_grad:
                grad[:, ch, :] += (2.0 * coef) * np.einsum("mln,mn->ln", h_dark.conj(), y)
    return value, grad


def loss_dark(atf, bank) -> float:
    """Mean squared pressure at the inactive listener's ears."""
    return _dark(atf, bank, False)[0]


def loss_dark_grad(atf, bank):
    return _dark(atf, bank, True)


def _gain(bank, g_max, need_grad):
    if g_max <= 0:
        raise ConfigurationError("g_max must be positive")
    n_drivers, n_prog, n_bins = bank.shape
    coef = 1.0 / (n_bins * n_drivers * n_prog)
    mag = np.abs(bank)
    excess = np.maximum(mag - g_max, 0.0)
    value = coef * float(np.sum(excess * excess))
    if not need_grad:
        return value, None
    grad = (2.0 * coef) * excess * bank / np.maximum(mag, TINY)
    return value, grad


def loss_gain(bank, g_max: float) -> float:
    """Quadratic penalty on filter magnitudes above the gain limit."""
    return _gain(bank, g_max, False)[0]


def loss_gain_grad(bank, g_max: float):
    return _gain(bank, g_max, True)


def _compact(bank, cfg: CompactnessConfig, need_grad):
    n_drivers, n_prog, n_bins = bank.shape
    n_hat = cfg.filter_len
    if n_bins != n_hat // 2 + 1:
        raise ConfigurationError("filter_len inconsistent with bank bin count")
    fir = cfg.bandpass_fir
    ghat = np.fft.irfft(bank, n=n_hat, axis=-1)
    y = fftconvolve(ghat, fir[None, None, :], axes=-1)[..., :n_hat]
    z = cfg.window * y
    coef = 1.0 / (n_hat * n_drivers * n_prog)
    value = coef * float(np.sum(z * z))
    if not need_grad:
        return value, None
    gy = cfg.window * (2.0 * coef * z)
    padded = np.concatenate([gy, np.zeros((*gy.shape[:-1], fir.size - 1))], axis=-1)
    gghat = fftconvolve(padded, fir[::-1][None, None, :], axes=-1)[
        ..., fir.size - 1 : fir.size - 1 + n_hat
    ]
    grad = (2.0 / n_hat) * np.fft.rfft(gghat, axis=-1)
    grad[..., 0] = 0.5 * grad[..., 0].real
    grad[..., -1] = 0.5 * grad[..., -1].real
    return value, grad


def loss_compact(bank, cfg: CompactnessConfig) -> float:
    """Windowed late-time energy of the bandpass-weighted filter responses."""
    return _compact(bank, cfg, False)[0]


def loss_compact_grad(bank, cfg: CompactnessConfig):
    return _compact(bank, cfg, True)


def _psz(atf, bank, targets, weights, cfg, need_grad):
    l1, g1 = _bright(atf, bank, targets, need_grad)
    l2, g2 = _dark(atf, bank, need_grad)
    l3, g3 = _gain(bank, weights.g_max, need_grad)
    l4, g4 = _compact(bank, cfg, need_grad)
    components = {"bright": l1, "dark": l2, "gain": l3, "compact": l4}
    for name, v in components.items():
        if not np.isfinite(v):
            raise NonFiniteLossError(f"component loss '{name}' is non-finite ({v})")
    value = (
        weights.alpha * l1 + (1.0 - weights.alpha) * l2 + weights.beta * l3 + weights.gamma * l4
    )
    grad = None
    if need_grad:
        grad = (
            weights.alpha * g1 + (1.0 - weights.alpha) * g2 + weights.beta * g3
            + weights.gamma * g4
        )
    return value, grad, components


def loss_psz(atf, bank, targets, weights: LossWeights, cfg: CompactnessConfig) -> float:
    """Stage-1 objective: bright/dark balance plus gain and compactness."""
    return _psz(atf, bank, targets, weights, cfg, False)[0]


def loss_psz_grad(atf, bank, targets, weights: LossWeights, cfg: CompactnessConfig):
    value, grad, _ = _psz(atf, bank, targets, weights, cfg, True)
    return value, grad


def psz_objective(atf, bank, targets, weights, cfg, need_grad=True):
    """(value, grad, component dict) for the stage-1 objective."""
    return _psz(atf, bank, targets, weights, cfg, need_grad)


# ----------------------------------------------------------------- stage 2


def plant_for_pair(atf, pair: int) -> np.ndarray:
    """Bright-zone ear plant for one program pair: (M, 2, L, N)."""
    h = _vals(atf)
    e0, e1 = bright_ears(pair)
    return np.stack([h[e0], h[e1]], axis=1)


def effective_ear_matrix(atf, bank, pair: int) -> np.ndarray:
    """Per control point 2x2 ear transfer matrix, shape (M, 2, 2, N).

    Row = ear (L, R); column = program channel (L, R); so ``[m, 0, 1]`` is the
    left ear's response to the right channel (crosstalk).
    """
    plant = plant_for_pair(atf, pair)
    c0, c1 = pair_channels(pair)
    w = bank[:, (c0, c1), :]
    return np.einsum("miln,ljn->mijn", plant, w)


def _off(t_eff, epsilon, energy_override, need_grad):
    m_pts, _, _, n_bins = t_eff.shape
    r_ll, r_rr = t_eff[:, 0, 0, :], t_eff[:, 1, 1, :]
    r_lr, r_rl = t_eff[:, 0, 1, :], t_eff[:, 1, 0, :]
    d_ll, d_rr = np.abs(r_ll) ** 2, np.abs(r_rr) ** 2
    d_lr, d_rl = np.abs(r_lr) ** 2, np.abs(r_rl) ** 2
    r = 0.5 * (d_rl / (d_ll + epsilon) + d_lr / (d_rr + epsilon))
    energy = energy_override if energy_override is not None else 0.5 * (d_ll + d_rr)
    z = energy.sum(axis=1)  # per control point, over the bins
    if np.any(z <= 0):
        raise DegeneratePlantError("ear responses have zero energy across the whole band")
    coef = 1.0 / (n_bins * m_pts)
    weighted = energy * np.log1p(r) / z[:, None]
    value = coef * float(weighted.sum())
    if not need_grad:
        return value, None
    dldr = coef * energy / ((1.0 + r) * z[:, None])
    grad = np.zeros_like(t_eff)
    grad[:, 1, 0, :] = dldr * r_rl / (d_ll + epsilon)
    grad[:, 0, 0, :] = -dldr * d_rl / (d_ll + epsilon) ** 2 * r_ll
    grad[:, 0, 1, :] = dldr * r_lr / (d_rr + epsilon)
    grad[:, 1, 1, :] = -dldr * d_lr / (d_rr + epsilon) ** 2 * r_rr
    return value, grad


def xtc_off_loss(t_eff, epsilon: float = 1e-8, energy_override=None) -> float:
    """Energy-weighted log-compressed interaural leakage for one program pair.

    The diagonal-energy weight is a stop-gradient factor; pass
    ``energy_override`` to freeze it explicitly (used by gradient tests).
    """
    return _off(np.asarray(t_eff), epsilon, energy_override, False)[0]


def xtc_off_loss_grad(t_eff, epsilon: float = 1e-8, energy_override=None):
    """(value, dL/dT_eff) with the energy weight held constant."""
    return _off(np.asarray(t_eff), epsilon, energy_override, True)


def _diag(t_eff, diag_targets, epsilon, need_grad):
    m_pts, _, _, n_bins = t_eff.shape
    targets = diag_targets.target_diag_mag if isinstance(diag_targets, XtcTargets) else diag_targets
    t0 = np.maximum(targets[0], epsilon)
    t1 = np.maximum(targets[1], epsilon)
    r_ll, r_rr = t_eff[:, 0, 0, :], t_eff[:, 1, 1, :]
    s0 = np.abs(r_ll) / t0
    s1 = np.abs(r_rr) / t1
    coef = 1.0 / (n_bins * m_pts)
    value = coef * 0.5 * float(np.sum((s0 - 1.0) ** 2 + (s1 - 1.0) ** 2))
    if not need_grad:
        return value, None
    grad = np.zeros_like(t_eff)
    grad[:, 0, 0, :] = coef * (s0 - 1.0) / t0 * r_ll / np.maximum(np.abs(r_ll), TINY)
    grad[:, 1, 1, :] = coef * (s1 - 1.0) / t1 * r_rr / np.maximum(np.abs(r_rr), TINY)
    return value, grad


def xtc_diag_loss(t_eff, diag_targets, epsilon: float = 1e-8) -> float:
    """Relative magnitude matching of the intended ear responses to targets."""
    return _diag(np.asarray(t_eff), diag_targets, epsilon, False)[0]


def xtc_diag_loss_grad(t_eff, diag_targets, epsilon: float = 1e-8):
    return _diag(np.asarray(t_eff), diag_targets, epsilon, True)


def conditioning_weights(plant: np.ndarray, weights: LossWeights) -> np.ndarray:
    """Stop-gradient effort weights beta_m per (control point, bin).

    The plant Gram matrix ``P^H P`` is L x L with rank at most 2, so its
    nonzero eigenvalues coincide with those of the 2x2 ``P P^H``, which have a
    closed form; for L > 2 the smallest eigenvalue is exactly zero.
    """
    m_pts, _, n_drivers, n_bins = plant.shape
    a = np.sum(np.abs(plant[:, 0, :, :]) ** 2, axis=1)  # (M, N)
    c = np.sum(np.abs(plant[:, 1, :, :]) ** 2, axis=1)
    b = np.sum(plant[:, 0, :, :] * plant[:, 1, :, :].conj(), axis=1)
    half_sum = 0.5 * (a + c)
    disc = np.sqrt(np.maximum((0.5 * (a - c)) ** 2 + np.abs(b) ** 2, 0.0))
    lam_max = half_sum + disc
    if n_drivers > 2:
        lam_min = np.zeros_like(lam_max)
    elif n_drivers == 2:
        lam_min = half_sum - disc
    else:
        lam_min = lam_max
    kappa = lam_max / (np.maximum(lam_min, 0.0) + weights.epsilon)
    gate = np.maximum((kappa - weights.kappa_min) / weights.kappa_min, 0.0)
    return weights.beta0 * gate * (a + c) / n_drivers


def _reg(plant, w_pair, weights, beta_override, need_grad):
    m_pts, _, _, n_bins = plant.shape
    beta_m = beta_override if beta_override is not None else conditioning_weights(plant, weights)
    wq = np.sum(np.abs(w_pair) ** 2, axis=(0, 1))  # (N,)
    coef = 1.0 / (n_bins * m_pts)
    per_bin = beta_m.sum(axis=0)  # (N,)
    value = coef * float(np.sum(per_bin * wq))
    if not need_grad:
        return value, None
    grad = (2.0 * coef) * w_pair * per_bin[None, None, :]
    return value, grad


def xtc_reg_loss(plant, w_pair, weights: LossWeights, beta_override=None) -> float:
    """Conditioning-gated effort penalty for one program pair.

    ``plant`` is (M, 2, L, N) and ``w_pair`` the active stereo columns
    (L, 2, N). The conditioning weight is stop-gradient; ``beta_override``
    freezes it for tests.
    """
    return _reg(np.asarray(plant), np.asarray(w_pair), weights, beta_override, False)[0]


def xtc_reg_loss_grad(plant, w_pair, weights: LossWeights, beta_override=None):
    return _reg(np.asarray(plant), np.asarray(w_pair), weights, beta_override, True)


def _xtc(atf, bank, xtc_targets, weights, need_grad):
    value_off = value_diag = value_reg = 0.0
    grad = np.zeros_like(bank) if need_grad else None
    for k in (0, 1):
        plant = plant_for_pair(atf, k)
        c0, c1 = pair_channels(k)
        w_pair = bank[:, (c0, c1), :]
        t_eff = np.einsum("miln,ljn->mijn", plant, w_pair)
        lo, g_off = _off(t_eff, weights.epsilon, None, need_grad)
        ld, g_diag = _diag(t_eff, xtc_targets[k], weights.epsilon, need_grad)
        lr, g_reg = _reg(plant, w_pair, weights, None, need_grad)
        value_off += 0.5 * lo
        value_diag += 0.5 * ld
        value_reg += 0.5 * lr
        if need_grad:
            g_t = weights.lambda_off * g_off + weights.lambda_diag * g_diag
            g_w = np.einsum("miln,mijn->ljn", plant.conj(), g_t)
            g_w += weights.lambda_reg * g_reg
            grad[:, c0, :] += 0.5 * g_w[:, 0, :]
            grad[:, c1, :] += 0.5 * g_w[:, 1, :]
    components = {"off": value_off, "diag": value_diag, "reg": value_reg}
    value = (
        weights.lambda_off * value_off
        + weights.lambda_diag * value_diag
        + weights.lambda_reg * value_reg
    )
    return value, grad, components


def loss_xtc(atf, bank, xtc_targets, weights: LossWeights) -> float:
    """Combined crosstalk objective, averaged over the two program pairs.

    ``xtc_targets`` is a sequence of two :class:`XtcTargets`, one per pair.
    """
    return _xtc(atf, bank, xtc_targets, weights, False)[0]


def loss_xtc_grad(atf, bank, xtc_targets, weights: LossWeights):
    value, grad, _ = _xtc(atf, bank, xtc_targets, weights, True)
    return value, grad


def _teacher(bank, teacher_bank, need_grad):
    n_bins = bank.shape[-1]
    diff = bank - teacher_bank
    value = float(np.sum(np.abs(diff) ** 2)) / n_bins
    if not need_grad:
        return value, None
    return value, (2.0 / n_bins) * diff


def loss_teacher(bank, teacher_bank) -> float:
    """Mean squared distance to the frozen stage-1 filters, per bin."""
    return _teacher(bank, teacher_bank, False)[0]


def loss_teacher_grad(bank, teacher_bank):
    return _teacher(bank, teacher_bank, True)


def total_objective(
    atf, bank, targets, xtc_targets, teacher_bank, weights: LossWeights,
    cfg: CompactnessConfig, need_grad=True,
):
    """(value, grad, components) for the stage-2 compound objective."""
    l_xtc, g_xtc, xtc_parts = _xtc(atf, bank, xtc_targets, weights, need_grad)
    l_bz, g_bz = _bright(atf, bank, targets, need_grad)
    l_dz, g_dz = _dark(atf, bank, need_grad)
    l_gain, g_gain = _gain(bank, weights.g_max, need_grad)
    l_comp, g_comp = _compact(bank, cfg, need_grad)
    l_teach, g_teach = _teacher(bank, teacher_bank, need_grad)
    components = {
        "xtc": l_xtc, "bright": l_bz, "dark": l_dz, "gain": l_gain,
        "compact": l_comp, "teacher": l_teach, **{f"xtc_{k}": v for k, v in xtc_parts.items()},
    }
    for name, v in components.items():
        if not np.isfinite(v):
            raise NonFiniteLossError(f"component loss '{name}' is non-finite ({v})")
    value = (
        weights.lambda_xtc * l_xtc
        + weights.w_bz * l_bz
        + weights.w_dz * l_dz
        + weights.beta * l_gain
        + weights.gamma * l_comp
        + weights.eta * l_teach
    )
    grad = None
    if need_grad:
        grad = (
            weights.lambda_xtc * g_xtc
            + weights.w_bz * g_bz
            + weights.w_dz * g_dz
            + weights.beta * g_gain
            + weights.gamma * g_comp
            + weights.eta * g_teach
        )
    return value, grad, components


def loss_total(
    atf, bank, targets, xtc_targets, teacher_bank, weights: LossWeights, cfg: CompactnessConfig
) -> float:
    """Stage-2 compound objective value."""
    return total_objective(atf, bank, targets, xtc_targets, teacher_bank, weights, cfg, False)[0]


def loss_total_grad(
    atf, bank, targets, xtc_targets, teacher_bank, weights: LossWeights, cfg: CompactnessConfig
):
    value, grad, _ = total_objective(
        atf, bank, targets, xtc_targets, teacher_bank, weights, cfg, True
    )
    return value, grad


# ----------------------------------------------------------- target builders


def third_octave_smooth(power: np.ndarray, freqs_hz: np.ndarray) -> np.ndarray:
    """Power-average each bin over a one-third-octave window around it."""
    power = np.asarray(power, dtype=float)
    edge = 2.0 ** (1.0 / 6.0)
    lo_idx = np.searchsorted(freqs_hz, freqs_hz / edge, side="left")
    hi_idx = np.searchsorted(freqs_hz, freqs_hz * edge, side="right")
    csum = np.concatenate(
        [np.zeros((*power.shape[:-1], 1)), np.cumsum(power, axis=-1)], axis=-1
    )
    counts = np.maximum(hi_idx - lo_idx, 1)
    return (csum[..., hi_idx] - csum[..., lo_idx]) / counts


def make_targets(atf, reference_drivers) -> TargetSpec:
    """Bright targets from the smoothed magnitudes of per-ear reference drivers.

    ``reference_drivers[e]`` lists the driver indices (typically the nearest
    same-side woofer and tweeter) whose power responses are summed to form a
    broadband achievable reference for ear ``e``.
    """
    h = _vals(atf)
    freqs = atf.grid.bin_freqs_hz
    _, m_pts, _, n_bins = h.shape
    targets = np.empty((4, m_pts, n_bins))
    for e in range(4):
        idx = list(reference_drivers[e])
        power = np.sum(np.abs(h[e, :, idx, :]) ** 2, axis=0)
        targets[e] = np.sqrt(third_octave_smooth(power, freqs))
    return TargetSpec(bz_target_mag=targets)


def make_xtc_targets(atf, teacher_bank, epsilon: float = 1e-8) -> tuple[XtcTargets, XtcTargets]:
    """Diagonal magnitudes produced by the frozen teacher, floored at epsilon."""
    out = []
    for k in (0, 1):
        t_eff = effective_ear_matrix(atf, teacher_bank, k)
        diag = np.stack([np.abs(t_eff[:, 0, 0, :]), np.abs(t_eff[:, 1, 1, :])])
        out.append(XtcTargets(target_diag_mag=np.maximum(diag, epsilon)))
    return tuple(out)
