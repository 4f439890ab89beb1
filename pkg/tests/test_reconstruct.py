import numpy as np
import pytest

from splidar import (RoiMap, ScanComplete, SparseField, build_roi, inpaint,
                     inpaint_labels, save_pgm16, save_text_matrix)


def _field(values, mask):
    return SparseField(np.asarray(values, dtype=float),
                       np.asarray(mask, dtype=bool))


class TestInpaint:
    def test_dense_field_unchanged(self, rng):
        values = rng.normal(size=(9, 9))
        out, known = inpaint(_field(values, np.ones((9, 9))))
        np.testing.assert_array_equal(out, values)
        assert known.all()

    def test_idempotent_on_dense(self, rng):
        values = rng.normal(size=(7, 7))
        once, _ = inpaint(_field(values, np.ones((7, 7))))
        twice, _ = inpaint(_field(once, np.ones((7, 7))))
        np.testing.assert_array_equal(once, twice)

    def test_constant_with_holes_stays_constant(self, rng):
        mask = rng.random((12, 12)) > 0.5
        mask[0, 0] = True
        out, known = inpaint(_field(np.where(mask, 3.25, 0.0), mask),
                             max_window_exp=3)
        assert known.all()
        np.testing.assert_allclose(out, 3.25)

    def test_even_count_median_averages_middle_pair(self):
        values = np.zeros((3, 3))
        values[np.unravel_index(range(9), (3, 3))] = \
            [1, 2, 3, 4, 0, 5, 6, 7, 8]
        mask = np.ones((3, 3), dtype=bool)
        mask[1, 1] = False
        out, _ = inpaint(_field(values, mask))
        assert out[1, 1] == pytest.approx(4.5)

    def test_window_grows_until_neighbours_found(self):
        # nearest value sits 4 cells away: a 3x3 window misses it, 9x9 works
        values = np.zeros((9, 9))
        mask = np.zeros((9, 9), dtype=bool)
        values[0, 0] = 7.0
        mask[0, 0] = True
        out, known = inpaint(_field(values, mask), max_window_exp=2)
        assert known[4, 4]
        assert out[4, 4] == 7.0

    def test_unreachable_pixels_stay_marked(self):
        values = np.zeros((40, 40))
        mask = np.zeros((40, 40), dtype=bool)
        mask[0, 0] = True
        out, known = inpaint(_field(values, mask), max_window_exp=1)
        assert known[0, 1] and known[1, 1]
        assert not known[30, 30]

    def test_present_values_pass_through(self, rng):
        values = rng.normal(size=(6, 6))
        mask = rng.random((6, 6)) > 0.4
        mask[2, 2] = True
        values[2, 2] = -123.0
        out, _ = inpaint(_field(values, mask))
        assert out[2, 2] == -123.0

    def test_empty_field_rejected(self):
        with pytest.raises(ValueError, match="no values"):
            inpaint(_field(np.zeros((4, 4)), np.zeros((4, 4))))

    def test_label_mode_ties_to_smallest(self):
        values = np.zeros((3, 3), dtype=np.int64)
        values[0] = [2, 2, 5]
        values[1] = [5, 0, 3]
        values[2] = [3, 1, 4]
        mask = np.ones((3, 3), dtype=bool)
        mask[1, 1] = False
        out, _ = inpaint_labels(SparseField(values, mask))
        # 2, 3 and 5 each appear twice; the smallest modal label wins
        assert out[1, 1] == 2
        assert out.dtype == np.int64


class TestRoiMap:
    def test_normalization_enforced(self):
        with pytest.raises(ValueError, match="sum to 1"):
            RoiMap(np.full((4, 4), 0.9 / 16))

    def test_uniform_constructor(self):
        m = RoiMap.uniform((5, 8))
        assert m.flat.sum() == pytest.approx(1.0, abs=1e-15)
        assert m.probabilities.max() == m.probabilities.min()


class TestBuildRoi:
    def _inputs(self, n=6):
        labels = np.zeros((n, n), dtype=np.int64)
        unc = np.full((n, n), 1.0)
        dwell = np.zeros((n, n))
        return labels, unc, dwell

    def test_all_pixels_at_max_dwell_signals_completion(self):
        labels, unc, dwell = self._inputs()
        dwell[:] = 5.0
        with pytest.raises(ScanComplete):
            build_roi(labels, unc, {1}, dwell, max_dwell=5.0)

    def test_single_target_delta_without_floor(self):
        labels, unc, dwell = self._inputs()
        unc[:] = 0.0
        labels[2, 3] = 1
        unc[2, 3] = 1.0
        m = build_roi(labels, unc, {1}, dwell, max_dwell=5.0,
                      exploration_floor=0.0)
        expected = np.zeros((6, 6))
        expected[2, 3] = 1.0
        np.testing.assert_allclose(m.probabilities, expected)

    def test_uniform_targets_uniform_map(self):
        labels, unc, dwell = self._inputs()
        labels[:] = 1
        m = build_roi(labels, unc, {1}, dwell, max_dwell=5.0)
        np.testing.assert_allclose(m.probabilities, 1.0 / 36)

    def test_unknown_pixels_score_max_uncertainty(self):
        labels, unc, dwell = self._inputs()
        labels[:] = 1
        unc[:] = 0.5
        unc[0, 0] = 2.0
        known = np.ones((6, 6), dtype=bool)
        known[5, 5] = False
        m = build_roi(labels, unc, {1}, dwell, max_dwell=5.0, known=known,
                      exploration_floor=0.0)
        assert m.probabilities[5, 5] == pytest.approx(m.probabilities[0, 0])

    def test_excluded_pixels_are_exactly_zero(self):
        labels, unc, dwell = self._inputs()
        labels[:] = 1
        dwell[1, 1] = 9.0
        m = build_roi(labels, unc, {1}, dwell, max_dwell=5.0)
        assert m.probabilities[1, 1] == 0.0
        assert m.flat.sum() == pytest.approx(1.0, abs=1e-12)

    def test_raising_target_uncertainty_never_lowers_its_share(self, rng):
        labels = rng.integers(0, 2, size=(8, 8))
        unc = rng.uniform(0.1, 2.0, size=(8, 8))
        dwell = np.zeros((8, 8))
        labels[3, 4] = 1
        base = build_roi(labels, unc, {1}, dwell, 5.0).probabilities[3, 4]
        unc[3, 4] += 1.0
        bumped = build_roi(labels, unc, {1}, dwell, 5.0).probabilities[3, 4]
        assert bumped >= base

    def test_floor_keeps_background_reachable(self):
        labels, unc, dwell = self._inputs()
        labels[2, 3] = 1
        m = build_roi(labels, unc, {1}, dwell, max_dwell=5.0,
                      exploration_floor=0.05)
        assert np.all(m.probabilities > 0)


class TestExports:
    def test_text_matrix_roundtrip(self, tmp_path, rng):
        a = rng.normal(size=(5, 4))
        path = tmp_path / "m.txt"
        save_text_matrix(a, path)
        np.testing.assert_allclose(np.loadtxt(path), a)

    def test_pgm16_header_and_range(self, tmp_path):
        a = np.linspace(0.0, 1.0, 12).reshape(3, 4)
        path = tmp_path / "m.pgm"
        save_pgm16(a, path)
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n4 3\n65535\n")
        pixels = np.frombuffer(raw.split(b"65535\n", 1)[1], dtype=">u2")
        assert pixels.min() == 0 and pixels.max() == 65535
        assert pixels.size == 12

    def test_pgm16_constant_map(self, tmp_path):
        path = tmp_path / "c.pgm"
        save_pgm16(np.full((2, 2), 3.3), path)
        pixels = np.frombuffer(path.read_bytes().split(b"65535\n", 1)[1],
                               dtype=">u2")
        assert np.all(pixels == 0)
