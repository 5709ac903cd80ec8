import numpy as np
import pytest

from superad.io import (
    AnomalyMap,
    GroundTruth,
    HsiCube,
    HsiFormatError,
    SceneContrastError,
    SceneSpec,
    load_cube,
    load_map_csv,
    load_mask,
    normalize_bands,
    save_cube,
    save_map_csv,
    save_map_pgm,
    save_mask,
    synth_scene,
)


def f32(values):
    # Cube payloads are stored as float32; tests that assert bit-exact
    # round trips must start from values on the float32 grid.
    return np.asarray(values, dtype=np.float32).astype(np.float64)


class TestHsiFormat:
    def test_known_payload_round_trip(self, tmp_path):
        path = tmp_path / "tiny.hsi"
        cube = HsiCube(f32([1.0, 2.0, 3.0, 4.0]).reshape(2, 2, 1))
        save_cube(cube, path)
        loaded = load_cube(path)
        assert loaded.data.shape == (2, 2, 1)
        np.testing.assert_array_equal(loaded.data.ravel(), [1.0, 2.0, 3.0, 4.0])

    def test_random_cube_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        cube = HsiCube(f32(rng.standard_normal((4, 4, 3))))
        path = tmp_path / "cube.hsi"
        save_cube(cube, path)
        np.testing.assert_array_equal(load_cube(path).data, cube.data)

    def test_band_sequential_layout(self, tmp_path):
        # Band 0 first, row-major, then band 1.
        data = np.zeros((1, 2, 2))
        data[0, :, 0] = [1.0, 2.0]
        data[0, :, 1] = [3.0, 4.0]
        path = tmp_path / "layout.hsi"
        save_cube(HsiCube(data), path)
        raw = np.frombuffer(path.read_bytes()[16:], dtype="<f4")
        np.testing.assert_array_equal(raw, [1.0, 2.0, 3.0, 4.0])

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.hsi"
        path.write_bytes(b"HSIX" + b"\x00" * 20)
        with pytest.raises(HsiFormatError, match="magic"):
            load_cube(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "short.hsi"
        cube = HsiCube(f32(np.ones((2, 2, 1))))
        save_cube(cube, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-4])  # drop one float
        with pytest.raises(HsiFormatError, match="truncated"):
            load_cube(path)

    def test_non_finite_payload_names_offset(self, tmp_path):
        path = tmp_path / "nan.hsi"
        save_cube(HsiCube(f32(np.ones((2, 2, 1)))), path)
        blob = bytearray(path.read_bytes())
        blob[16 + 4 : 16 + 8] = np.array([np.nan], dtype="<f4").tobytes()
        path.write_bytes(bytes(blob))
        with pytest.raises(HsiFormatError, match="byte offset 20"):
            load_cube(path)


class TestMapAndMask:
    def test_constant_map_pgm_all_zero(self, tmp_path):
        path = tmp_path / "flat.pgm"
        save_map_pgm(AnomalyMap(np.full((2, 3), 7.0)), path)
        raster = path.read_bytes().split(b"255\n", 1)[1]
        assert raster == b"\x00" * 6

    def test_pgm_quantization_floor(self, tmp_path):
        path = tmp_path / "quant.pgm"
        save_map_pgm(AnomalyMap(np.array([[0.0, 1.0, 2.0, 4.0]])), path)
        raster = path.read_bytes().split(b"255\n", 1)[1]
        assert list(raster) == [0, 63, 127, 255]

    def test_mask_round_trip(self, tmp_path):
        path = tmp_path / "gt.pgm"
        mask = np.zeros((3, 4), dtype=bool)
        mask[1, 2] = True
        save_mask(GroundTruth(mask), path)
        np.testing.assert_array_equal(load_mask(path).mask, mask)

    def test_mask_any_nonzero_is_anomaly(self, tmp_path):
        path = tmp_path / "gray.pgm"
        path.write_bytes(b"P5\n3 1\n255\n" + bytes([0, 1, 128]))
        np.testing.assert_array_equal(load_mask(path).mask, [[False, True, True]])

    def test_map_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        amap = AnomalyMap(rng.random((3, 5)))
        path = tmp_path / "map.csv"
        save_map_csv(amap, path)
        np.testing.assert_array_equal(load_map_csv(path).scores, amap.scores)


class TestNormalizeBands:
    def test_two_point_band(self):
        cube = HsiCube(np.array([2.0, 4.0]).reshape(1, 2, 1))
        np.testing.assert_array_equal(normalize_bands(cube).data.ravel(), [0.0, 1.0])

    def test_constant_band_maps_to_zero(self):
        cube = HsiCube(np.full((1, 3, 1), 5.0))
        np.testing.assert_array_equal(normalize_bands(cube).data.ravel(), [0.0, 0.0, 0.0])

    def test_linear_map(self):
        cube = HsiCube(np.array([0.0, 1.0, 3.0]).reshape(1, 3, 1))
        np.testing.assert_allclose(normalize_bands(cube).data.ravel(), [0.0, 1.0 / 3.0, 1.0])

    def test_idempotent_and_extrema_preserved(self):
        rng = np.random.default_rng(9)
        cube = HsiCube(rng.standard_normal((6, 7, 4)) * 3 + 1)
        once = normalize_bands(cube)
        twice = normalize_bands(once)
        np.testing.assert_array_equal(once.data, twice.data)
        for b in range(4):
            assert np.argmax(cube.data[:, :, b]) == np.argmax(once.data[:, :, b])
            assert np.argmin(cube.data[:, :, b]) == np.argmin(once.data[:, :, b])


class TestSynthScene:
    def test_anomaly_count_formula(self):
        spec = SceneSpec(h=64, w=64, c=32, anomaly_rate=0.005, seed=1)
        cube, gt = synth_scene(spec)
        assert gt.mask.sum() == 20 == spec.anomaly_count
        assert cube.data.shape == (64, 64, 32)

    def test_deterministic_per_seed(self):
        spec = SceneSpec(h=16, w=16, c=8, seed=42, anomaly_rate=0.02)
        cube1, gt1 = synth_scene(spec)
        cube2, gt2 = synth_scene(spec)
        np.testing.assert_array_equal(cube1.data, cube2.data)
        np.testing.assert_array_equal(gt1.mask, gt2.mask)

    def test_seeds_differ_but_count_matches(self):
        a, gta = synth_scene(SceneSpec(h=16, w=16, c=8, seed=1, anomaly_rate=0.02))
        b, gtb = synth_scene(SceneSpec(h=16, w=16, c=8, seed=2, anomaly_rate=0.02))
        assert not np.array_equal(a.data, b.data)
        assert gta.mask.sum() == gtb.mask.sum()

    def test_unsatisfiable_contrast_raises(self):
        # Positive spectra can never exceed a right angle apart.
        spec = SceneSpec(h=8, w=8, c=8, anomaly_rate=0.02, anomaly_contrast=1.6, seed=0)
        with pytest.raises(SceneContrastError):
            synth_scene(spec)

    def test_rate_validation(self):
        with pytest.raises(ValueError):
            SceneSpec(h=8, w=8, c=4, anomaly_rate=0.2)
        with pytest.raises(ValueError):
            SceneSpec(h=4, w=4, c=4, anomaly_rate=0.01)  # rounds to zero pixels

    def test_mask_popcount_across_specs(self):
        for rate, hw in ((0.01, 32), (0.05, 16), (0.003, 48)):
            spec = SceneSpec(h=hw, w=hw, c=6, anomaly_rate=rate, seed=3)
            _, gt = synth_scene(spec)
            assert gt.mask.sum() == spec.anomaly_count


def test_cube_validation_rejects_nan():
    data = np.ones((2, 2, 2))
    data[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        HsiCube(data)


def test_anomaly_map_rejects_negative():
    with pytest.raises(ValueError):
        AnomalyMap(np.array([[-0.1, 0.0]]))
