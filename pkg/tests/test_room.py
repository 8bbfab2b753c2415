import numpy as np
import pytest

from bsann.core import FrequencyGrid
from bsann.errors import GeometryError, OverlapWarning, TruncationWarning
from bsann.room import (
    RoomSpec,
    enumerate_images,
    simulate_rir,
    split_direct_reflected,
)

GRID = FrequencyGrid()
FS = GRID.sample_rate_hz
C = 343.0


def integer_delay_distance(samples: int) -> float:
    return C * samples / FS


class TestSimulateRir:
    def test_free_field_single_arrival(self):
        d = integer_delay_distance(140)
        room = RoomSpec(dims_m=(5, 4, 3))
        rir = simulate_rir(room, [1, 1, 1], [1 + d, 1, 1], GRID)
        assert np.argmax(np.abs(rir)) == 140
        assert rir[140] == pytest.approx(1 / (4 * np.pi * d), rel=1e-9)
        off = rir.copy()
        off[140] = 0.0
        assert np.max(np.abs(off)) < 1e-12  # integer delay collapses the sinc kernel

    def test_spherical_spreading_halves_amplitude(self):
        room = RoomSpec(dims_m=(8, 4, 3))
        d1, d2 = integer_delay_distance(140), integer_delay_distance(280)
        r1 = simulate_rir(room, [1, 1, 1], [1 + d1, 1, 1], GRID)
        r2 = simulate_rir(room, [1, 1, 1], [1 + d2, 1, 1], GRID)
        assert r2[280] / r1[140] == pytest.approx(0.5, rel=1e-9)

    def test_images_match_bruteforce_enumeration(self):
        # oracle: independent exhaustive enumeration of mirror images
        room = RoomSpec(dims_m=(5, 4, 3), rt60_s=0.2, max_image_order=2)
        src = np.array([1.2, 2.1, 1.3])
        expected = set()
        for nx in range(-2, 3):
            for qx in (0, 1):
                for ny in range(-2, 3):
                    for qy in (0, 1):
                        for nz in range(-2, 3):
                            for qz in (0, 1):
                                hits = abs(2 * nx - qx) + abs(2 * ny - qy) + abs(2 * nz - qz)
                                if hits > 2:
                                    continue
                                pos = (
                                    2 * nx * 5 + (src[0] if qx == 0 else -src[0]),
                                    2 * ny * 4 + (src[1] if qy == 0 else -src[1]),
                                    2 * nz * 3 + (src[2] if qz == 0 else -src[2]),
                                )
                                expected.add((tuple(round(p, 9) for p in pos), hits))
        got = {
            (tuple(round(p, 9) for p in pos), hits)
            for pos, hits in enumerate_images(room, src)
        }
        assert got == expected

    def test_reverberant_arrivals_match_image_list(self):
        room = RoomSpec(dims_m=(5, 4, 3), rt60_s=0.2, max_image_order=2)
        src, mic = np.array([1.2, 2.1, 1.3]), np.array([3.4, 1.6, 1.1])
        rir = simulate_rir(room, src, mic, GRID)
        beta = room.reflection_coefficient()
        # rebuild from the image list with the same fractional-delay kernel
        from bsann.room import fractional_delay_kernel

        manual = np.zeros(GRID.fft_size)
        for pos, hits in enumerate_images(room, src):
            d = np.linalg.norm(pos - mic)
            start, taps = fractional_delay_kernel(d / C * FS, GRID.fft_size)
            amp = (beta**hits) / (4 * np.pi * d)
            lo = max(start, 0)
            hi = min(start + taps.size, GRID.fft_size)
            manual[lo:hi] += amp * taps[lo - start : hi - start]
        np.testing.assert_allclose(rir, manual, atol=1e-15)

    def test_order_zero_equals_anechoic_for_any_rt60(self):
        room_rev = RoomSpec(dims_m=(5, 4, 3), rt60_s=0.5, max_image_order=0)
        room_dry = RoomSpec(dims_m=(5, 4, 3), rt60_s=0.0)
        src, mic = [1, 1, 1], [2.5, 2, 1.5]
        # order 0 keeps only the direct path, whose amplitude has no wall factor
        r_rev = simulate_rir(RoomSpec(dims_m=(5, 4, 3), rt60_s=0.5, max_image_order=1), src, mic, GRID)
        direct_only = np.zeros_like(r_rev)
        d = np.linalg.norm(np.subtract(mic, src))
        from bsann.room import fractional_delay_kernel

        start, taps = fractional_delay_kernel(d / C * FS, GRID.fft_size)
        direct_only[start : start + taps.size] = taps / (4 * np.pi * d)
        r0 = simulate_rir(room_rev, src, mic, GRID)
        np.testing.assert_allclose(r0, simulate_rir(room_dry, src, mic, GRID), atol=1e-15)
        np.testing.assert_allclose(r0, direct_only, atol=1e-15)

    def test_scaling_property(self):
        # doubling dims and positions at rt60=0 halves amplitude, doubles delay
        r1 = simulate_rir(RoomSpec(dims_m=(5, 4, 3)), [1, 1, 1], [1 + integer_delay_distance(100), 1, 1], GRID)
        r2 = simulate_rir(RoomSpec(dims_m=(10, 8, 6)), [2, 2, 2], [2 + integer_delay_distance(200), 2, 2], GRID)
        assert r2[200] == pytest.approx(0.5 * r1[100], rel=1e-9)

    def test_outside_room_rejected(self):
        with pytest.raises(GeometryError):
            simulate_rir(RoomSpec(dims_m=(2, 2, 2)), [1, 1, 1], [3, 1, 1], GRID)

    def test_coincident_points_rejected(self):
        with pytest.raises(GeometryError):
            simulate_rir(RoomSpec(dims_m=(2, 2, 2)), [1, 1, 1], [1, 1, 1], GRID)

    def test_truncation_warning_for_long_tail(self):
        room = RoomSpec(dims_m=(8, 7, 3), rt60_s=0.5, max_image_order=6)
        with pytest.warns(TruncationWarning):
            simulate_rir(room, [1, 1, 1], [6, 5, 2], GRID)


class TestSplit:
    def test_anechoic_reflected_is_negligible(self):
        room = RoomSpec(dims_m=(5, 4, 3))
        rir = simulate_rir(room, [1, 1, 1], [2.5, 2.2, 1.4], GRID)
        pair = split_direct_reflected(rir, [1, 1, 1], [2.5, 2.2, 1.4], room, GRID)
        total = np.sum(rir**2)
        assert np.sum(pair.h_refl**2) < 1e-12 * total

    def test_partition_identity(self):
        room = RoomSpec(dims_m=(5, 4, 3), rt60_s=0.3, max_image_order=2)
        src, mic = [1.3, 1.1, 1.2], [3.1, 2.4, 1.6]
        rir = simulate_rir(room, src, mic, GRID)
        pair = split_direct_reflected(rir, src, mic, room, GRID)
        np.testing.assert_array_equal(pair.h_dir + pair.h_refl, rir)

    def test_direct_energy_matches_free_field(self):
        room = RoomSpec(dims_m=(6, 5, 3), rt60_s=0.25, max_image_order=3)
        dry = RoomSpec(dims_m=(6, 5, 3), rt60_s=0.0)
        src, mic = [1.5, 1.5, 1.4], [3.2, 2.8, 1.5]
        rir = simulate_rir(room, src, mic, GRID)
        pair = split_direct_reflected(rir, src, mic, room, GRID)
        free = simulate_rir(dry, src, mic, GRID)
        e_dir, e_free = np.sum(pair.h_dir**2), np.sum(free**2)
        assert abs(e_dir - e_free) < 0.01 * e_free

    def test_overlap_warning(self):
        room = RoomSpec(dims_m=(5, 4, 2.2), rt60_s=0.3, max_image_order=2)
        src, mic = [2.5, 2.0, 2.0], [2.5, 2.4, 2.0]  # near the ceiling, short detour
        rir = simulate_rir(room, src, mic, GRID)
        with pytest.warns(OverlapWarning):
            split_direct_reflected(rir, src, mic, room, GRID, guard_ms=2.0)


class TestRoomSpec:
    def test_negative_rt60_rejected(self):
        with pytest.raises(GeometryError):
            RoomSpec(dims_m=(4, 3, 2), rt60_s=-0.1)

    def test_reflection_coefficient_range(self):
        room = RoomSpec(dims_m=(5, 4, 3), rt60_s=0.3, max_image_order=1)
        assert 0.0 < room.reflection_coefficient() < 1.0
        assert RoomSpec(dims_m=(5, 4, 3)).reflection_coefficient() == 0.0
