"""End-to-end experiment drivers: the adaptive sampling loop, static
uniform/random baselines, the cross-correlation depth baseline, and the
evaluation metrics.

Acquisition goes through a source object: :class:`SimulatorSource` draws
fresh Poisson photons from a ground-truth scene, :class:`ReplaySource`
carves dwell slices out of a previously recorded cube by binomial
thinning (the exact conditional split of Poisson counts).  All randomness
derives from one seed through fixed stream labels, so traces are
reproducible bit-for-bit.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .inference import PixelEstimator, QuadratureSpec
from .reconstruct import (RoiMap, ScanComplete, SparseField, build_roi,
                          inpaint, inpaint_labels, save_pgm16)
from .sampling import (Placement, SamplerState, ScanPlan, ScanScenario,
                       StopCriteria, adapt_time_step, assign_dwell,
                       check_stop, elapsed_time, mh_sample_locations,
                       pixel_placements, place_arrays)
from .scene import LIGHT_SPEED, GroundTruthScene, HistogramCube, Irf, \
    SpectralLibrary
from .simulate import execute_plan

STREAM_INIT = 1
STREAM_LOCATIONS = 2
STREAM_STATIC = 3
STREAM_REPLAY = 4


class SimulatorSource:
    """Acquires photons by simulating the forward model on a scene."""

    def __init__(self, scene: GroundTruthScene, irf: Irf):
        if scene.n_wavelengths != irf.n_wavelengths:
            raise ValueError("scene and IRF disagree on wavelength count")
        self.scene = scene
        self.irf = irf

    @property
    def shape(self):
        return self.scene.shape

    @property
    def unit_time(self):
        return self.scene.unit_time

    @property
    def n_wavelengths(self):
        return self.scene.n_wavelengths

    def scan(self, plan: ScanPlan, cube: HistogramCube, seed: int) -> None:
        execute_plan(self.scene, self.irf, plan, cube, seed)

    def reference(self) -> "ReferenceMaps":
        return ReferenceMaps.from_scene(self.scene)


class ReplaySource:
    """Re-samples scan shots from a fully recorded cube.

    A request for dwell ``d`` at a pixel holding counts with remaining
    recorded dwell ``D`` thins each bin Binomial(count, d/D); the drawn
    photons are removed so successive requests slice disjoint exposures.
    Requests beyond the recorded budget return no further photons.
    """

    def __init__(self, master: HistogramCube, irf: Irf,
                 unit_time: float = 1.0):
        if master.n_wavelengths != irf.n_wavelengths \
                or master.n_bins != irf.n_bins:
            raise ValueError("cube and IRF dimensions disagree")
        self.irf = irf
        self.unit_time = unit_time
        self._remaining = master.counts.copy()
        self._budget = master.dwell.copy()
        self._shape = master.shape

    @property
    def shape(self):
        return self._shape

    @property
    def n_wavelengths(self):
        return self._remaining.shape[2]

    def scan(self, plan: ScanPlan, cube: HistogramCube, seed: int) -> None:
        cols = self._shape[1]
        occurrences: dict = {}
        for placement in plan.placements:
            for r, c in placement.cells(self._shape):
                n = r * cols + c
                occ = occurrences.get(n, 0)
                occurrences[n] = occ + 1
                budget = self._budget[r, c]
                if budget > 0:
                    rng = np.random.default_rng(np.random.SeedSequence(
                        (seed, STREAM_REPLAY, plan.iteration, n, occ)))
                    p = min(placement.dwell / budget, 1.0)
                    drawn = rng.binomial(self._remaining[r, c], p)
                    self._remaining[r, c] -= drawn
                    self._budget[r, c] = max(budget - placement.dwell, 0.0)
                else:
                    drawn = np.zeros_like(self._remaining[r, c])
                cube.add(r, c, drawn, placement.dwell)

    def reference(self):
        return None


@dataclass(frozen=True)
class ReferenceMaps:
    """Depth and class maps the metrics compare against."""

    depth: np.ndarray
    classes: np.ndarray

    @classmethod
    def from_scene(cls, scene: GroundTruthScene) -> "ReferenceMaps":
        return cls(scene.depth.astype(float), scene.classes.copy())

    @classmethod
    def from_cube(cls, cube: HistogramCube, engine: PixelEstimator,
                  unit_time: float = 1.0) -> "ReferenceMaps":
        """Reference built by running the full estimator on every scanned
        pixel of a maximum-dwell acquisition."""
        rows, cols = cube.shape
        depth = np.zeros((rows, cols))
        classes = np.zeros((rows, cols), dtype=np.int64)
        for r in range(rows):
            for c in range(cols):
                if cube.dwell[r, c] > 0 and cube.counts[r, c].sum() > 0:
                    est = engine.estimate(cube.counts[r, c],
                                          cube.dwell[r, c] / unit_time)
                    depth[r, c] = est.depth
                    classes[r, c] = est.label
        return cls(depth, classes)


@dataclass(frozen=True)
class Metrics:
    rmse_bins: float
    rmse_m: float
    accuracy: float
    confusion: np.ndarray      # (K+1, K+1), rows true, cols predicted
    precision: np.ndarray
    recall: np.ndarray


def metrics(depth_est: np.ndarray, labels_est: np.ndarray,
            reference: ReferenceMaps, bin_width: float = 1.0,
            n_classes: int | None = None) -> Metrics:
    """Depth RMSE over target pixels, overall label accuracy, and the full
    confusion matrix with per-class precision/recall.

    Depth error is only defined where the reference has a target; the RMSE
    in meters uses the two-way time of flight (bin width times c/2).
    """
    depth_est = np.asarray(depth_est, dtype=float)
    labels_est = np.asarray(labels_est)
    targets = reference.classes > 0
    if targets.any():
        rmse = float(np.sqrt(np.mean(
            (depth_est[targets] - reference.depth[targets]) ** 2)))
    else:
        rmse = float("nan")
    if n_classes is None:
        n_classes = int(max(reference.classes.max(), labels_est.max()))
    size = n_classes + 1
    confusion = np.zeros((size, size), dtype=np.int64)
    np.add.at(confusion, (reference.classes.reshape(-1),
                          labels_est.reshape(-1)), 1)
    accuracy = float(np.trace(confusion) / confusion.sum())
    col = confusion.sum(axis=0).astype(float)
    row = confusion.sum(axis=1).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(col > 0, np.diag(confusion) / col, np.nan)
        recall = np.where(row > 0, np.diag(confusion) / row, np.nan)
    return Metrics(rmse_bins=rmse,
                   rmse_m=rmse * bin_width * LIGHT_SPEED / 2.0,
                   accuracy=accuracy, confusion=confusion,
                   precision=precision, recall=recall)


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    dwell_s: float
    total_s: float
    rmse_bins: float
    rmse_m: float
    acc: float
    scanned: int


@dataclass
class ExperimentTrace:
    rows: list = field(default_factory=list)
    stop_reason: str | None = None
    confusion: np.ndarray | None = None

    @property
    def converged(self) -> bool:
        return self.stop_reason == "depth_converged"

    def first_dwell_reaching(self, rmse_bins: float):
        """Cumulative dwell of the first row at or below the RMSE target,
        or None if the trace never gets there."""
        for row in self.rows:
            if row.rmse_bins <= rmse_bins:
                return row.dwell_s
        return None

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("iteration,dwell_s,total_s,rmse_bins,rmse_m,acc,scanned\n")
            for r in self.rows:
                f.write(f"{r.iteration},{r.dwell_s!r},{r.total_s!r},"
                        f"{r.rmse_bins!r},{r.rmse_m!r},{r.acc!r},{r.scanned}\n")


def save_confusion_csv(confusion: np.ndarray, path) -> None:
    np.savetxt(path, np.asarray(confusion, dtype=np.int64),
               fmt="%d", delimiter=",")


def xcorr_depth(counts: np.ndarray, irf: Irf, floor: float = 1e-10):
    """Maximum-likelihood depth under a no-background model: the shift
    maximizing the summed log-response cross-correlations, zero bins of the
    response clamped at ``floor``.  Returns None for an empty histogram;
    ties go to the smallest bin."""
    counts = np.asarray(counts)
    if counts.sum() == 0:
        return None
    T = irf.n_bins
    scores = np.zeros(T)
    for l in range(irf.n_wavelengths):
        kernel = np.log(np.maximum(irf.response[l], floor))
        fy = scipy.fft.rfft(counts[l].astype(float))
        scores += scipy.fft.irfft(fy * np.conj(scipy.fft.rfft(kernel)), n=T)
    return int(np.argmax(scores))


@dataclass
class AdaptiveResult:
    trace: ExperimentTrace
    cube: HistogramCube
    depth: np.ndarray
    labels: np.ndarray
    uncertainty: np.ndarray
    roi: RoiMap | None
    final_base_time: float


def _dense_fields(estimates: dict, shape, max_window_exp: int):
    # depth carries information only where a target was detected; estimates
    # from no-target pixels would feed noise into the median fill
    depth_src = {p: e.depth for p, e in estimates.items() if e.label > 0}
    if not depth_src:
        depth_src = {p: e.depth for p, e in estimates.items()}
    depth_f = SparseField.from_pixel_dict(depth_src, shape)
    label_f = SparseField.from_pixel_dict(
        {p: e.label for p, e in estimates.items()}, shape, fill=0,
        dtype=np.int64)
    unc_f = SparseField.from_pixel_dict(
        {p: e.depth_uncertainty for p, e in estimates.items()}, shape)
    depth, _ = inpaint(depth_f, max_window_exp)
    labels, known = inpaint_labels(label_f, max_window_exp)
    unc, _ = inpaint(unc_f, max_window_exp)
    return depth, labels, unc, known


def _snapshot(directory, iteration, cube, depth, labels, roi):
    os.makedirs(directory, exist_ok=True)
    tag = f"iter_{iteration:03d}"
    save_pgm16(cube.scanned.astype(float),
               os.path.join(directory, f"{tag}_samples.pgm"))
    save_pgm16(depth, os.path.join(directory, f"{tag}_depth.pgm"))
    save_pgm16(labels.astype(float), os.path.join(directory, f"{tag}_class.pgm"))
    if roi is not None:
        save_pgm16(roi.probabilities, os.path.join(directory, f"{tag}_roi.pgm"))


def run_adaptive(source, library: SpectralLibrary, scenario: ScanScenario,
                 criteria: StopCriteria, *,
                 seed: int,
                 reference: ReferenceMaps | None = None,
                 quadrature: QuadratureSpec | None = None,
                 target_classes=None,
                 ncd_window: int = 2,
                 exploration_floor: float = 0.05,
                 inpaint_max_window: int = 3,
                 processing_time_per_pixel: float | None = 0.0,
                 roi_build_time: float = 0.0,
                 parallelism: float = 1.0,
                 snapshot_dir: str | None = None,
                 plan_log: list | None = None) -> AdaptiveResult:
    """Run the adaptive acquisition loop until a stopping criterion fires.

    Each iteration scans the planned placements, re-estimates the pixels
    whose histograms changed, median/mode-fills the sparse maps, logs a
    trace row against the reference, evaluates the stopping criteria, and
    derives the next plan from the region-of-interest map.  The dwell step
    doubles/halves to keep the per-iteration detection fraction near the
    [0.7, 0.9] band.

    ``processing_time_per_pixel=None`` charges measured wall time (divided
    by ``parallelism``) instead of a constant; traces then stop being
    bit-for-bit reproducible in their ``total_s`` column.
    """
    rows, cols = source.shape
    n = rows * cols
    irf = source.irf
    unit_time = getattr(source, "unit_time", 1.0)
    if scenario.array_side > min(rows, cols):
        raise ValueError("array side exceeds the grid")
    if reference is None:
        reference = source.reference()
    if reference is None:
        raise ValueError("this source cannot derive a reference; pass one")
    engine = PixelEstimator(library, irf, quadrature, ncd_window)
    targets = set(target_classes) if target_classes is not None \
        else set(range(1, library.n_classes + 1))
    cube = HistogramCube.zeros(rows, cols, source.n_wavelengths, irf.n_bins)
    trace = ExperimentTrace()
    estimates: dict = {}
    base_time = scenario.base_time
    side = scenario.array_side

    rng_init = np.random.default_rng((seed, STREAM_INIT))
    if side == 1:
        flat = rng_init.choice(n, size=scenario.points_per_iteration,
                               replace=False)
        placements = pixel_placements(flat, source.shape)
    else:
        bc = cols // side
        n_blocks = (rows // side) * bc
        picks = rng_init.choice(
            n_blocks, size=scenario.points_per_iteration // side ** 2,
            replace=False)
        placements = [Placement((p // bc) * side, (p % bc) * side, side, 0.0)
                      for p in picks]
    placements = [Placement(p.row, p.col, p.side, base_time)
                  for p in placements]

    cum_dwell = 0.0
    cum_total = 0.0
    prev_depth = None
    total_points = 0
    roi = None
    last_metrics = None

    for iteration in range(1, criteria.max_iterations + 1):
        plan = ScanPlan(tuple(placements), iteration)
        if plan_log is not None:
            plan_log.append(plan)
        covered = sorted({cell for p in plan.placements
                          for cell in p.cells(source.shape)})
        idx = tuple(np.array(covered).T)
        before = cube.counts[idx].sum(axis=(1, 2))
        source.scan(plan, cube, seed)
        after = cube.counts[idx].sum(axis=(1, 2))
        detect_fraction = float(np.mean(after > before))
        total_points += plan.covered

        t_start = time.perf_counter()
        n_processed = 0
        for (r, c) in covered:
            estimates[(r, c)] = engine.estimate(
                cube.counts[r, c], cube.dwell[r, c] / unit_time)
            n_processed += 1
        if processing_time_per_pixel is None:
            processing = (time.perf_counter() - t_start) / parallelism
        else:
            processing = n_processed * processing_time_per_pixel / parallelism

        elapsed = elapsed_time(plan, scenario)
        mirror = plan.n_placements * scenario.mirror_move \
            if scenario.mode == "sequential" else scenario.mirror_move

        depth, labels, unc, known = _dense_fields(
            estimates, source.shape, inpaint_max_window)

        m = metrics(depth, labels, reference, irf.bin_width,
                    library.n_classes)
        last_metrics = m
        cum_dwell += elapsed - mirror
        cum_total += elapsed + processing + roi_build_time
        trace.rows.append(TraceRow(
            iteration=iteration, dwell_s=cum_dwell, total_s=cum_total,
            rmse_bins=m.rmse_bins, rmse_m=m.rmse_m, acc=m.accuracy,
            scanned=int(cube.scanned.sum())))

        state = SamplerState(iteration=iteration, total_points=total_points,
                             dwell=cube.dwell)
        stop, reason = check_stop(prev_depth, depth, state, criteria)
        if snapshot_dir:
            _snapshot(snapshot_dir, iteration, cube, depth, labels, roi)
        if stop:
            trace.stop_reason = reason
            break
        prev_depth = depth

        try:
            roi = build_roi(labels, unc, targets, cube.dwell,
                            criteria.max_dwell, known, exploration_floor)
        except ScanComplete:
            trace.stop_reason = "scan_complete"
            break

        base_time = adapt_time_step(detect_fraction, base_time,
                                    scenario.min_base_time)
        rng_loc = np.random.default_rng((seed, STREAM_LOCATIONS, iteration))
        if side == 1:
            flat = mh_sample_locations(roi, scenario.points_per_iteration,
                                       rng_loc)
            placements = pixel_placements(flat, source.shape)
        else:
            placements = place_arrays(
                roi, side, scenario.points_per_iteration // side ** 2, rng_loc)
        placements = assign_dwell(roi, placements, base_time,
                                  scenario.importance_cap)

    if trace.stop_reason is None:
        trace.stop_reason = "max_iterations"
    if last_metrics is not None:
        trace.confusion = last_metrics.confusion
    if estimates:
        depth, labels, unc, _ = _dense_fields(estimates, source.shape,
                                              inpaint_max_window)
    else:
        depth = np.zeros(source.shape)
        labels = np.zeros(source.shape, dtype=np.int64)
        unc = np.zeros(source.shape)
    return AdaptiveResult(trace=trace, cube=cube, depth=depth, labels=labels,
                          uncertainty=unc, roi=roi,
                          final_base_time=base_time)


@dataclass
class StaticResult:
    trace: ExperimentTrace
    cube: HistogramCube
    depth: np.ndarray
    labels: np.ndarray | None


def static_pixels(strategy: str, ratio: float, shape, seed: int) -> np.ndarray:
    """Flat indices of a static scan pattern: every k-th pixel for the
    uniform strategy, a seeded choice without replacement for random."""
    if not 0 < ratio <= 1:
        raise ValueError("ratio must lie in (0, 1]")
    n = int(np.prod(shape))
    if strategy == "uniform":
        stride = max(int(round(1.0 / ratio)), 1)
        return np.arange(0, n, stride, dtype=np.int64)
    if strategy == "random":
        rng = np.random.default_rng((seed, STREAM_STATIC))
        return np.sort(rng.choice(n, size=int(round(ratio * n)),
                                  replace=False)).astype(np.int64)
    raise ValueError(f"unknown static strategy {strategy!r}")


def run_static(source, library: SpectralLibrary, strategy: str, ratio: float,
               dwell_levels, *,
               seed: int,
               reference: ReferenceMaps | None = None,
               quadrature: QuadratureSpec | None = None,
               classify_pixels: bool = True,
               inpaint_max_window: int = 3,
               mirror_move: float = 150e-6,
               processing_time_per_pixel: float | None = 0.0,
               parallelism: float = 1.0,
               xcorr_floor: float = 1e-10) -> StaticResult:
    """Scan a fixed pixel set at a ladder of cumulative per-pixel dwells.

    Depth uses the cross-correlation baseline plus median fill; labels (and
    the accuracy column) use the Bayesian classifier on the scanned pixels
    unless ``classify_pixels`` is off, in which case accuracy is NaN.
    """
    rows, cols = source.shape
    irf = source.irf
    unit_time = getattr(source, "unit_time", 1.0)
    if reference is None:
        reference = source.reference()
    if reference is None:
        raise ValueError("this source cannot derive a reference; pass one")
    levels = np.asarray(sorted(dwell_levels), dtype=float)
    if levels.size == 0 or levels[0] <= 0:
        raise ValueError("dwell_levels must be positive and non-empty")
    pixels = static_pixels(strategy, ratio, source.shape, seed)
    engine = PixelEstimator(library, irf, quadrature) if classify_pixels \
        else None
    cube = HistogramCube.zeros(rows, cols, source.n_wavelengths, irf.n_bins)
    trace = ExperimentTrace()
    coords = [divmod(int(p), cols) for p in pixels]
    current = 0.0
    cum_total = 0.0
    depth_dense = np.zeros(source.shape)
    labels_dense = None
    last_metrics = None
    for level_idx, level in enumerate(levels):
        delta = level - current
        current = level
        plan = ScanPlan(tuple(Placement(r, c, 1, delta) for r, c in coords),
                        iteration=level_idx)
        source.scan(plan, cube, seed)

        t_start = time.perf_counter()
        depth_est = {}
        label_est = {}
        n_processed = 0
        for (r, c) in coords:
            counts = cube.counts[r, c]
            d = xcorr_depth(counts, irf, xcorr_floor)
            if d is not None:
                depth_est[(r, c)] = d
            if engine is not None:
                _, label = engine.classify(counts, level / unit_time)
                label_est[(r, c)] = label
                n_processed += 1
        if processing_time_per_pixel is None:
            processing = (time.perf_counter() - t_start) / parallelism
        else:
            processing = n_processed * processing_time_per_pixel / parallelism

        if depth_est:
            depth_dense, _ = inpaint(SparseField.from_pixel_dict(
                depth_est, source.shape), inpaint_max_window)
        if engine is not None and label_est:
            labels_dense, _ = inpaint_labels(SparseField.from_pixel_dict(
                label_est, source.shape, fill=0, dtype=np.int64),
                inpaint_max_window)
        labels_row = labels_dense if labels_dense is not None \
            else np.zeros(source.shape, dtype=np.int64)
        m = metrics(depth_dense, labels_row, reference, irf.bin_width,
                    library.n_classes)
        last_metrics = m
        dwell_elapsed = float(delta * len(coords))
        cum_total += dwell_elapsed + len(coords) * mirror_move + processing
        acc = m.accuracy if engine is not None else float("nan")
        trace.rows.append(TraceRow(
            iteration=level_idx + 1, dwell_s=float(level * len(coords)),
            total_s=cum_total, rmse_bins=m.rmse_bins, rmse_m=m.rmse_m,
            acc=acc, scanned=len(coords)))
    trace.stop_reason = "levels_exhausted"
    if last_metrics is not None:
        trace.confusion = last_metrics.confusion
    return StaticResult(trace=trace, cube=cube, depth=depth_dense,
                        labels=labels_dense)
