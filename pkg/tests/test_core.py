import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from bsann.core import (
    FrequencyGrid,
    forward_real_fft,
    inverse_real_fft,
    log_band_weights,
    log_frequency_weights,
)
from bsann.errors import ConfigurationError, EmptyBandError, InvalidSpectrumError


class TestFrequencyGrid:
    def test_default_bins(self):
        grid = FrequencyGrid()
        assert grid.num_bins == 257
        assert grid.bin_freqs_hz[0] == 0.0
        assert grid.bin_freqs_hz[-1] == 24000.0
        assert np.all(np.diff(grid.bin_freqs_hz) > 0)

    def test_bin_formula(self):
        grid = FrequencyGrid(sample_rate_hz=16000, fft_size=64, band_hi_hz=8000)
        np.testing.assert_allclose(grid.bin_freqs_hz, np.arange(33) * 16000 / 64)

    def test_odd_fft_size_rejected(self):
        with pytest.raises(ConfigurationError):
            FrequencyGrid(fft_size=511)

    def test_band_above_nyquist_rejected(self):
        with pytest.raises(ConfigurationError):
            FrequencyGrid(sample_rate_hz=8000, band_hi_hz=20000)

    def test_roundtrip_dict(self):
        grid = FrequencyGrid(sample_rate_hz=44100, fft_size=256, band_lo_hz=50, band_hi_hz=18000)
        assert FrequencyGrid.from_dict(grid.to_dict()) == grid


class TestForwardFft:
    def test_unit_impulse_gives_flat_spectrum(self):
        spec = forward_real_fft(np.array([1.0, 0, 0, 0, 0, 0, 0, 0]), 8)
        np.testing.assert_allclose(spec, np.ones(5))

    def test_zero_signal(self):
        np.testing.assert_array_equal(forward_real_fft(np.zeros(8), 8), np.zeros(5))

    def test_bin3_cosine_matches_direct_dft(self):
        # oracle: direct DFT summation
        n = np.arange(16)
        x = np.cos(2 * np.pi * 3 * n / 16)
        spec = forward_real_fft(x, 16)
        oracle = np.array(
            [np.sum(x * np.exp(-2j * np.pi * k * n / 16)) for k in range(9)]
        )
        np.testing.assert_allclose(spec, oracle, atol=1e-12)
        mags = np.abs(spec)
        assert mags[3] == pytest.approx(8.0)
        mags[3] = 0.0
        assert np.all(mags < 1e-12)

    def test_signal_longer_than_fft_rejected(self):
        with pytest.raises(ConfigurationError):
            forward_real_fft(np.ones(20), 16)

    def test_odd_fft_rejected(self):
        with pytest.raises(ConfigurationError):
            forward_real_fft(np.ones(3), 7)


class TestInverseFft:
    def test_flat_spectrum_gives_impulse(self):
        x = inverse_real_fft(np.ones(5, dtype=complex), 8)
        expected = np.zeros(8)
        expected[0] = 1.0
        np.testing.assert_allclose(x, expected, atol=1e-12)

    def test_bin3_cosine_closed_form(self):
        spec = np.zeros(9, dtype=complex)
        spec[3] = 8.0
        x = inverse_real_fft(spec, 16)
        n = np.arange(16)
        np.testing.assert_allclose(x, np.cos(2 * np.pi * 3 * n / 16), atol=1e-12)

    def test_imag_at_dc_rejected(self):
        spec = np.ones(5, dtype=complex)
        spec[0] = 1 + 0.1j
        with pytest.raises(InvalidSpectrumError):
            inverse_real_fft(spec, 8)

    def test_imag_at_nyquist_rejected(self):
        spec = np.ones(5, dtype=complex)
        spec[-1] = 1 + 0.1j
        with pytest.raises(InvalidSpectrumError):
            inverse_real_fft(spec, 8)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_roundtrip_random_signal(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(32)
        back = inverse_real_fft(forward_real_fft(x, 32), 32)
        assert np.max(np.abs(back - x)) <= 1e-10 * max(1.0, np.max(np.abs(x)))

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_parseval(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(64)
        spec = forward_real_fft(x, 64)
        spec_energy = (
            np.abs(spec[0]) ** 2 + 2 * np.sum(np.abs(spec[1:-1]) ** 2) + np.abs(spec[-1]) ** 2
        ) / 64
        time_energy = np.sum(x * x)
        assert abs(spec_energy - time_energy) <= 1e-9 * time_energy


class TestLogWeights:
    def test_single_in_band_bin(self):
        w = log_band_weights(np.array([10.0, 1000.0, 30000.0]), 900, 1100)
        np.testing.assert_allclose(w, [0.0, 1.0, 0.0])

    def test_geometric_spacing_equal_weights(self):
        freqs = 100.0 * 2.0 ** np.arange(6)
        w = log_band_weights(freqs, freqs[0] / np.sqrt(2), freqs[-1] * np.sqrt(2))
        np.testing.assert_allclose(w, np.full(6, 1 / 6), atol=1e-12)

    def test_default_grid_against_quadrature_oracle(self):
        grid = FrequencyGrid()
        w = log_frequency_weights(grid)
        freqs = grid.bin_freqs_hz
        pos = freqs[freqs > 0]
        lf = np.log(pos)
        mids = 0.5 * (lf[:-1] + lf[1:])
        left = np.concatenate([[lf[0] - 0.5 * (lf[1] - lf[0])], mids])
        right = np.concatenate([mids, [lf[-1] + 0.5 * (lf[-1] - lf[-2])]])
        oracle = np.zeros_like(freqs)
        for j, f in enumerate(pos):
            if not (grid.band_lo_hz <= f <= grid.band_hi_hz):
                continue
            a = max(np.exp(left[j]), grid.band_lo_hz)
            b = min(np.exp(right[j]), grid.band_hi_hz)
            if b > a:
                oracle[j + 1] = quad(lambda x: 1.0 / x, a, b)[0]
        oracle /= oracle.sum()
        np.testing.assert_allclose(w, oracle, atol=1e-9)
        assert w.sum() == pytest.approx(1.0)
        assert np.all(w[(freqs < grid.band_lo_hz) | (freqs > grid.band_hi_hz)] == 0)

    def test_invariant_under_appending_out_of_band_bins(self):
        freqs = np.linspace(100, 5000, 40)
        base = log_band_weights(freqs, 200, 4000)
        extended = log_band_weights(np.concatenate([freqs, [6000, 7000, 9000]]), 200, 4000)
        np.testing.assert_allclose(extended[:40], base, atol=1e-12)
        assert np.all(extended[40:] == 0)

    def test_empty_band_raises(self):
        with pytest.raises(EmptyBandError):
            log_band_weights(np.array([100.0, 200.0]), 300, 400)

    def test_grid_weights_zero_at_dc(self):
        assert log_frequency_weights(FrequencyGrid())[0] == 0.0
