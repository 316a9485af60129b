import numpy as np
import pytest

from gpsbench.errors import ConfigError, FormatError
from gpsbench.imaging import (
    GridSpec,
    Image,
    Rng,
    load_gpsi,
    load_ppm,
    require_square,
    save_gpsi,
    save_ppm,
)


class TestImage:
    def test_promotes_2d_to_single_channel(self):
        img = Image(np.zeros((4, 6), dtype=np.uint8))
        assert img.data.shape == (4, 6, 1)
        assert (img.height, img.width, img.channels) == (4, 6, 1)

    def test_pixel_count_ignores_channels(self):
        img = Image(np.zeros((4, 6, 3), dtype=np.uint8))
        assert img.pixel_count == 24

    def test_accepts_int_array_in_range(self):
        img = Image(np.array([[[0, 128, 255]]], dtype=np.int64), label=2)
        assert img.data.dtype == np.uint8
        assert img.label == 2

    def test_rejects_out_of_range_values(self):
        with pytest.raises(ValueError):
            Image(np.array([[[300, 0, 0]]], dtype=np.int64))
        with pytest.raises(ValueError):
            Image(np.array([[[-1.0, 0.0, 0.0]]]))

    def test_rejects_bad_channel_count(self):
        with pytest.raises(ValueError):
            Image(np.zeros((2, 2, 4), dtype=np.uint8))

    def test_rejects_negative_label(self):
        with pytest.raises(ValueError):
            Image(np.zeros((2, 2, 3), dtype=np.uint8), label=-1)

    def test_with_label_keeps_pixels(self):
        img = Image(np.arange(12, dtype=np.uint8).reshape(2, 2, 3))
        relabeled = img.with_label(7)
        assert relabeled.label == 7
        assert img.same_pixels(relabeled)

    def test_is_square(self):
        assert Image(np.zeros((3, 3, 1), dtype=np.uint8)).is_square()
        assert not Image(np.zeros((3, 4, 1), dtype=np.uint8)).is_square()

    def test_require_square_raises_config_error(self):
        with pytest.raises(ConfigError):
            require_square(Image(np.zeros((3, 4, 1), dtype=np.uint8)))


class TestGridSpec:
    def test_side_is_floor_division(self):
        for f in range(1, 9):
            for r in range(8, 65):
                assert GridSpec(f, r).side == r // f

    def test_rejects_empty_grid(self):
        with pytest.raises(ConfigError):
            GridSpec(5, 4)

    def test_rejects_bad_factor(self):
        with pytest.raises(ConfigError):
            GridSpec(0, 8)
        with pytest.raises(ConfigError):
            GridSpec(-2, 8)

    def test_patch_bounds_partition_covered_region(self):
        g = GridSpec(3, 10)
        seen = np.zeros((10, 10), dtype=int)
        for i in range(g.side):
            for j in range(g.side):
                r0, r1, c0, c1 = g.patch_bounds(i, j)
                assert r1 - r0 == 3 and c1 - c0 == 3
                seen[r0:r1, c0:c1] += 1
        # every covered pixel exactly once, dropped margin untouched
        assert (seen[:9, :9] == 1).all()
        assert (seen[9, :] == 0).all() and (seen[:, 9] == 0).all()

    def test_patch_bounds_known_values(self):
        g = GridSpec(2, 4)
        assert g.patch_bounds(0, 0) == (0, 2, 0, 2)
        assert g.patch_bounds(1, 1) == (2, 4, 2, 4)

    def test_patch_bounds_out_of_range(self):
        with pytest.raises(ValueError):
            GridSpec(2, 4).patch_bounds(2, 0)

    def test_dropped_pixels(self):
        assert GridSpec(2, 4).dropped_pixels == 0
        # 83x83 with f=2 covers 82x82
        assert GridSpec(2, 83).dropped_pixels == 83 * 83 - 82 * 82


class TestRng:
    def test_same_seed_same_stream(self):
        a = Rng(12)
        b = Rng(12)
        assert [a.integer(0, 100) for _ in range(20)] == [
            b.integer(0, 100) for _ in range(20)
        ]

    def test_split_is_order_independent(self):
        r1 = Rng(5)
        r2 = Rng(5)
        # drawing from the parent must not disturb children
        r1.integer(0, 10)
        x = r1.split(3, 7).integer(0, 1000)
        y = r2.split(3, 7).integer(0, 1000)
        assert x == y

    def test_distinct_paths_decorrelate(self):
        root = Rng(0)
        a = root.split(1).integers(0, 1000, (50,))
        b = root.split(2).integers(0, 1000, (50,))
        assert not np.array_equal(a, b)

    def test_integer_bounds(self):
        rng = Rng(3)
        draws = [rng.integer(2, 9) for _ in range(500)]
        assert min(draws) >= 2 and max(draws) <= 8
        assert set(draws) == set(range(2, 9))

    def test_shuffled_is_permutation_and_pure(self):
        rng = Rng(9)
        items = list(range(30))
        out = rng.shuffled(items)
        assert sorted(out) == items
        assert items == list(range(30))

    def test_choose_without_replacement(self):
        rng = Rng(11)
        for _ in range(50):
            picks = rng.choose(20, 7)
            assert len(picks) == 7
            assert len(set(picks)) == 7
            assert all(0 <= p < 20 for p in picks)

    def test_state_round_trip_continues_stream(self):
        rng = Rng(21).split(4)
        rng.integers(0, 100, (13,))  # advance into the buffered block
        blob = rng.state_bytes()
        restored, used = Rng.from_state_bytes(blob)
        assert used == len(blob)
        assert [rng.integer(0, 10**6) for _ in range(10)] == [
            restored.integer(0, 10**6) for _ in range(10)
        ]

    def test_state_round_trip_at_offset(self):
        rng = Rng(8)
        blob = b"xyz" + rng.state_bytes() + b"tail"
        restored, used = Rng.from_state_bytes(blob, offset=3)
        assert used == len(blob) - 7
        assert restored.integer(0, 10**6) == Rng(8).integer(0, 10**6)

    def test_truncated_state_raises(self):
        blob = Rng(0).state_bytes()
        with pytest.raises(FormatError):
            Rng.from_state_bytes(blob[:10])


class TestPpm:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        for k in range(10):
            arr = rng.integers(0, 256, (5 + k, 7, 3), dtype=np.uint8)
            path = tmp_path / f"img_{k}.ppm"
            save_ppm(path, Image(arr))
            back = load_ppm(path)
            np.testing.assert_array_equal(back.data, arr)

    def test_canonical_header_bytes(self, tmp_path):
        arr = np.arange(12, dtype=np.uint8).reshape(2, 2, 3)
        path = tmp_path / "img.ppm"
        save_ppm(path, Image(arr))
        raw = path.read_bytes()
        assert raw == b"P6\n2 2\n255\n" + arr.tobytes()

    def test_single_channel_saved_as_gray_rgb(self, tmp_path):
        arr = np.array([[[7]], [[9]]], dtype=np.uint8)
        path = tmp_path / "gray.ppm"
        save_ppm(path, Image(arr))
        back = load_ppm(path)
        assert back.channels == 3
        np.testing.assert_array_equal(back.data[..., 0], back.data[..., 1])
        np.testing.assert_array_equal(back.data[..., 0], arr[..., 0])

    def test_load_skips_comments_and_whitespace(self, tmp_path):
        payload = bytes(range(12))
        raw = b"P6 # comment\n# another\n 2\t2 # size\n255\n" + payload
        path = tmp_path / "c.ppm"
        path.write_bytes(raw)
        img = load_ppm(path)
        assert (img.height, img.width) == (2, 2)
        assert img.data.tobytes() == payload

    def test_declared_2x2_needs_12_payload_bytes(self, tmp_path):
        path = tmp_path / "t.ppm"
        path.write_bytes(b"P6\n2 2\n255\n" + bytes(12))
        img = load_ppm(path)
        assert (img.height, img.width, img.channels) == (2, 2, 3)

    @pytest.mark.parametrize(
        "raw, fragment",
        [
            (b"P5\n2 2\n255\n" + bytes(4), "magic"),
            (b"P6\n2 2\n65535\n" + bytes(24), "maxval"),
            (b"P6\n0 2\n255\n", "dimensions"),
            (b"P6\n2 2\n255\n" + bytes(5), "truncated"),
            (b"P6\n2 2\n", "header"),
        ],
    )
    def test_malformed_files_name_the_field(self, tmp_path, raw, fragment):
        path = tmp_path / "bad.ppm"
        path.write_bytes(raw)
        with pytest.raises(FormatError, match=fragment):
            load_ppm(path)


class TestGpsi:
    def test_round_trip_any_channel_count(self, tmp_path):
        rng = np.random.default_rng(1)
        for c in (1, 3):
            arr = rng.integers(0, 256, (4, 6, c), dtype=np.uint8)
            path = tmp_path / f"x{c}.gpsi"
            save_gpsi(path, Image(arr, label=3))
            back = load_gpsi(path)
            np.testing.assert_array_equal(back.data, arr)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.gpsi"
        path.write_bytes(b"NOPE" + bytes(12))
        with pytest.raises(FormatError):
            load_gpsi(path)

    def test_truncated_payload(self, tmp_path):
        import struct

        path = tmp_path / "short.gpsi"
        path.write_bytes(b"GPSI" + struct.pack("<III", 2, 2, 3) + bytes(5))
        with pytest.raises(FormatError):
            load_gpsi(path)
