import numpy as np
import pytest

from splidar import (CUBE_MAGIC, Disk, GroundTruthScene, HistogramCube, Irf,
                     PhantomSpec, Rect, SpectralLibrary, build_phantom,
                     load_irf, make_gaussian_irf, sbr_of)


class TestIrf:
    def test_uniform_column_loads_unchanged(self, tmp_path):
        T = 20
        path = tmp_path / "irf.txt"
        np.savetxt(path, np.full((T, 1), 1.0 / T))
        irf = load_irf(path, T)
        np.testing.assert_allclose(irf.response[0], 1.0 / T)

    def test_column_summing_to_two_is_halved(self, tmp_path):
        T = 10
        column = np.full((T, 1), 0.2)  # sums to 2.0
        path = tmp_path / "irf.txt"
        np.savetxt(path, column)
        irf = load_irf(path, T)
        np.testing.assert_allclose(irf.response[0], 0.1)

    def test_gaussian_column_normalizes_within_1e9(self, tmp_path):
        T = 191
        t = np.arange(T)
        col = np.exp(-0.5 * ((t - 60) / 5.0) ** 2)
        path = tmp_path / "irf.txt"
        np.savetxt(path, col[:, None] * 3.7)
        irf = load_irf(path, T, bin_width=16e-12)
        assert abs(irf.response[0].sum() - 1.0) <= 1e-9
        assert irf.bin_width == 16e-12

    def test_multichannel_shapes_are_independent(self, tmp_path):
        T = 64
        t = np.arange(T)
        cols = np.stack([np.exp(-0.5 * ((t - 10) / 2.0) ** 2),
                         np.exp(-0.5 * ((t - 20) / 5.0) ** 2)], axis=1)
        path = tmp_path / "irf.txt"
        np.savetxt(path, cols)
        irf = load_irf(path, T)
        assert irf.n_wavelengths == 2
        assert not np.allclose(irf.response[0], irf.response[1])

    def test_rejects_wrong_length(self, tmp_path):
        path = tmp_path / "irf.txt"
        np.savetxt(path, np.ones((10, 1)))
        with pytest.raises(ValueError, match="rows"):
            load_irf(path, 12)

    def test_rejects_negative_sample(self, tmp_path):
        col = np.ones((8, 1))
        col[3] = -0.5
        path = tmp_path / "irf.txt"
        np.savetxt(path, col)
        with pytest.raises(ValueError, match="negative"):
            load_irf(path, 8)

    def test_rejects_all_zero_channel(self, tmp_path):
        cols = np.ones((8, 2))
        cols[:, 1] = 0.0
        path = tmp_path / "irf.txt"
        np.savetxt(path, cols)
        with pytest.raises(ValueError, match="all-zero"):
            load_irf(path, 8)

    def test_rejects_malformed_file(self, tmp_path):
        path = tmp_path / "irf.txt"
        path.write_text("1.0 2.0\nnot_a_number 3.0\n")
        with pytest.raises(ValueError):
            load_irf(path, 2)

    def test_constructor_enforces_normalization(self):
        with pytest.raises(ValueError, match="sum to 1"):
            Irf(np.full((1, 8), 0.2))


class TestSpectralLibrary:
    def test_rejects_nonpositive_hyperparameters(self):
        with pytest.raises(ValueError, match="strictly positive"):
            SpectralLibrary(alpha_r=[[0.0]], beta_r=[[1.0]],
                            alpha_b=[1.0], beta_b=[1.0])

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            SpectralLibrary(alpha_r=[[1.0, 2.0]], beta_r=[[1.0, 2.0]],
                            alpha_b=[1.0], beta_b=[1.0])

    def test_noninformative_prior_means(self):
        lib = SpectralLibrary.noninformative(avg_signal=40.0, n_bins=1500,
                                             n_wavelengths=2)
        np.testing.assert_allclose(lib.alpha_r / lib.beta_r, 40.0)
        np.testing.assert_allclose(lib.alpha_b / lib.beta_b, 40.0 / 1500)

    def test_from_signatures_matches_means(self):
        sig = np.array([[10.0, 20.0], [5.0, 40.0]])
        lib = SpectralLibrary.from_signatures(sig, n_bins=200, signal_shape=4.0)
        np.testing.assert_allclose(lib.alpha_r / lib.beta_r, sig)
        assert lib.n_classes == 2 and lib.n_wavelengths == 2


class TestSbr:
    def test_magnitude_66(self):
        b, T = 0.05, 600
        assert sbr_of(66 * b * T, b, T) == pytest.approx(66.0)

    def test_zero_signal_is_zero(self):
        assert sbr_of(0.0, 0.3, 100) == 0.0
        assert sbr_of(0.0, 0.0, 100) == 0.0

    def test_arithmetic_identity(self):
        assert sbr_of(42.0, 0.07, 600) == pytest.approx(1.0)

    def test_zero_background_with_signal_is_undefined(self):
        with pytest.raises(ValueError, match="undefined"):
            sbr_of(5.0, 0.0, 100)


class TestPhantom:
    def test_empty_spec_is_pure_background(self):
        lib = SpectralLibrary.noninformative(1.0, 100)
        spec = PhantomSpec(rows=8, cols=9, n_bins=100, background=(0.01,))
        scene = build_phantom(spec, lib)
        assert np.all(scene.classes == 0)
        assert np.all(scene.reflectivity == 0)
        np.testing.assert_allclose(scene.background, 0.01)

    def test_rectangle_pixel_count(self):
        lib = SpectralLibrary.noninformative(1.0, 256, n_classes=2)
        spec = PhantomSpec(rows=32, cols=32, n_bins=256, background=(0.01,),
                           primitives=(Rect(5, 7, 10, 10, class_id=2,
                                            depth_bin=100,
                                            reflectivity=(3.0,)),))
        scene = build_phantom(spec, lib)
        assert (scene.classes == 2).sum() == 100
        assert np.all(scene.depth[scene.classes == 2] == 100)

    def test_class_proportions_phantom(self):
        # areas sized to the reference confusion-table diagonal shares:
        # ~13.9%, ~3.9%, ~14.9% targets, remainder background
        lib = SpectralLibrary.from_signatures(
            np.full((3, 4), 10.0), n_bins=1500)
        spec = PhantomSpec(
            rows=40, cols=40, n_bins=1500, background=(0.01,) * 4,
            primitives=(
                Rect(2, 2, 14, 16, class_id=1, depth_bin=700,
                     reflectivity=(10.0,) * 4),
                Rect(20, 4, 8, 8, class_id=2, depth_bin=720,
                     reflectivity=(10.0,) * 4),
                Rect(22, 20, 16, 15, class_id=3, depth_bin=740,
                     reflectivity=(10.0,) * 4),
            ))
        scene = build_phantom(spec, lib)
        fractions = [(scene.classes == k).mean() for k in range(4)]
        assert fractions[1] == pytest.approx(0.139, abs=0.02)
        assert fractions[2] == pytest.approx(0.0394, abs=0.01)
        assert fractions[3] == pytest.approx(0.1488, abs=0.02)
        assert fractions[0] == pytest.approx(0.6419, abs=0.04)

    def test_disk_footprint(self):
        lib = SpectralLibrary.noninformative(1.0, 64)
        spec = PhantomSpec(rows=21, cols=21, n_bins=64, background=(0.0,),
                           primitives=(Disk(10.0, 10.0, 4.0, class_id=1,
                                            depth_bin=10,
                                            reflectivity=(1.0,)),))
        scene = build_phantom(spec, lib)
        assert (scene.classes == 1).sum() == 49  # discrete disk of radius 4

    def test_deterministic(self):
        lib = SpectralLibrary.noninformative(1.0, 64)
        spec = PhantomSpec(rows=10, cols=10, n_bins=64, background=(0.02,),
                           primitives=(Rect(1, 1, 3, 3, class_id=1,
                                            depth_bin=5,
                                            reflectivity=(2.0,)),))
        a = build_phantom(spec, lib)
        b = build_phantom(spec, lib)
        np.testing.assert_array_equal(a.classes, b.classes)
        np.testing.assert_array_equal(a.reflectivity, b.reflectivity)

    def test_out_of_bounds_primitive_rejected(self):
        lib = SpectralLibrary.noninformative(1.0, 64)
        spec = PhantomSpec(rows=10, cols=10, n_bins=64, background=(0.0,),
                           primitives=(Rect(8, 8, 5, 5, class_id=1,
                                            depth_bin=5,
                                            reflectivity=(1.0,)),))
        with pytest.raises(ValueError, match="bounds"):
            build_phantom(spec, lib)

    def test_unknown_class_rejected(self):
        lib = SpectralLibrary.noninformative(1.0, 64)
        spec = PhantomSpec(rows=10, cols=10, n_bins=64, background=(0.0,),
                           primitives=(Rect(1, 1, 2, 2, class_id=2,
                                            depth_bin=5,
                                            reflectivity=(1.0,)),))
        with pytest.raises(ValueError, match="class"):
            build_phantom(spec, lib)

    def test_empty_pixels_must_have_zero_reflectivity(self):
        with pytest.raises(ValueError, match="zero reflectivity"):
            GroundTruthScene(depth=np.zeros((2, 2)), classes=np.zeros((2, 2)),
                             reflectivity=np.ones((2, 2, 1)),
                             background=np.zeros((2, 2, 1)), n_bins=16)


class TestHistogramCube:
    def test_roundtrip_bit_identical(self, tmp_path, rng):
        cube = HistogramCube.zeros(5, 7, 2, 33)
        cube.counts[:] = rng.poisson(3.0, size=cube.counts.shape)
        cube.dwell[:] = rng.uniform(0.1, 2.0, size=cube.dwell.shape)
        path = tmp_path / "cube.bin"
        cube.save(path)
        back = HistogramCube.load(path)
        np.testing.assert_array_equal(back.counts, cube.counts)
        assert back.dwell.tobytes() == cube.dwell.tobytes()

    def test_format_layout(self, tmp_path):
        cube = HistogramCube.zeros(2, 3, 1, 4)
        cube.dwell[:] = 1.0
        cube.counts[1, 2, 0, 3] = 77
        path = tmp_path / "cube.bin"
        cube.save(path)
        raw = path.read_bytes()
        assert raw[:16] == CUBE_MAGIC
        dims = np.frombuffer(raw[16:32], dtype="<u4")
        np.testing.assert_array_equal(dims, [2, 3, 1, 4])
        counts = np.frombuffer(raw[32:32 + 4 * 24], dtype="<u4")
        assert counts[(1 * 3 + 2) * 4 + 3] == 77
        dwell = np.frombuffer(raw[32 + 4 * 24:], dtype="<f8")
        assert dwell.size == 6

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTACUBEFILE....whatever")
        with pytest.raises(ValueError, match="not a histogram-cube"):
            HistogramCube.load(path)

    def test_merge_is_additive(self, rng):
        a = HistogramCube.zeros(3, 3, 1, 8)
        b = HistogramCube.zeros(3, 3, 1, 8)
        a.add(0, 0, rng.poisson(2.0, size=(1, 8)), 0.5)
        b.add(0, 0, rng.poisson(2.0, size=(1, 8)), 0.7)
        b.add(2, 1, rng.poisson(2.0, size=(1, 8)), 0.2)
        total = a.counts[0, 0] + b.counts[0, 0]
        a.merge(b)
        np.testing.assert_array_equal(a.counts[0, 0], total)
        assert a.dwell[0, 0] == pytest.approx(1.2)
        assert a.scanned[2, 1] and not a.scanned[1, 1]

    def test_zero_dwell_cannot_hold_counts(self):
        counts = np.zeros((2, 2, 1, 4), dtype=np.int64)
        counts[0, 0, 0, 0] = 1
        with pytest.raises(ValueError, match="zero dwell"):
            HistogramCube(counts, np.zeros((2, 2)))

    def test_counts_beyond_u32_rejected_on_save(self, tmp_path):
        cube = HistogramCube.zeros(1, 1, 1, 2)
        cube.dwell[:] = 1.0
        cube.counts[0, 0, 0, 0] = 2 ** 33
        with pytest.raises(ValueError, match="u32"):
            cube.save(tmp_path / "cube.bin")
