"""Poisson forward model: draws photon histograms from a ground-truth
scene for a requested scan plan.

Every shot gets its own counter-style random stream derived from
``(seed, stream, iteration, pixel, occurrence)``, so simulating pixels in
any order (or in parallel) yields identical cubes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import GroundTruthScene, HistogramCube, Irf
from .sampling import ScanPlan

STREAM_SHOTS = 0


def shot_rng(seed: int, iteration: int, pixel: int,
             occurrence: int = 0) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence((seed, STREAM_SHOTS, iteration, pixel, occurrence)))


@dataclass(frozen=True)
class ShotRequest:
    """One acquisition at one pixel: flat index, dwell seconds, and the
    stream coordinates that make the draw reproducible."""
    pixel: int
    dwell: float
    seed: int
    iteration: int = 0
    occurrence: int = 0

    def __post_init__(self):
        if self.dwell <= 0:
            raise ValueError("dwell must be positive")


def expected_histogram(scene: GroundTruthScene, irf: Irf,
                       row: int, col: int, dwell: float) -> np.ndarray:
    """Mean photon counts, shape (L, T), for one pixel at the given dwell.

    The response is shifted to the pixel's depth bin and truncated at the
    histogram edge: photons that would arrive after the last bin are lost,
    there is no wrap-around.
    """
    T = irf.n_bins
    scale = dwell / scene.unit_time
    rates = np.repeat(scene.background[row, col][:, None], T, axis=1)
    k = scene.classes[row, col]
    if k > 0:
        d = int(scene.depth[row, col])
        rates[:, d:] += scene.reflectivity[row, col][:, None] * irf.response[:, :T - d]
    return scale * rates


def expected_rate(scene: GroundTruthScene, irf: Irf, row: int, col: int,
                  l: int, t: int, dwell: float) -> float:
    """Scalar mean count of one (pixel, wavelength, bin) cell."""
    if not 0 <= t < irf.n_bins:
        raise ValueError(f"bin {t} outside [0, {irf.n_bins})")
    b = scene.background[row, col, l]
    signal = 0.0
    if scene.classes[row, col] > 0:
        tau = t - int(scene.depth[row, col])
        if 0 <= tau < irf.n_bins:
            signal = scene.reflectivity[row, col, l] * irf.response[l, tau]
    return (dwell / scene.unit_time) * (signal + b)


def simulate_shot(scene: GroundTruthScene, irf: Irf,
                  request: ShotRequest) -> np.ndarray:
    """Independent Poisson draw of an (L, T) histogram for one request."""
    row, col = divmod(request.pixel, scene.shape[1])
    means = expected_histogram(scene, irf, row, col, request.dwell)
    rng = shot_rng(request.seed, request.iteration, request.pixel,
                   request.occurrence)
    return rng.poisson(means).astype(np.int64)


def execute_plan(scene: GroundTruthScene, irf: Irf, plan: ScanPlan,
                 cube: HistogramCube, seed: int) -> HistogramCube:
    """Simulate every placement of the plan and accumulate counts and dwell
    into the cube.  Pixels outside the plan are untouched; a pixel covered
    twice simply integrates twice."""
    rows, cols = scene.shape
    if cube.shape != scene.shape:
        raise ValueError("cube and scene grids differ")
    occurrences: dict = {}
    for placement in plan.placements:
        if placement.row < 0 or placement.col < 0 \
                or placement.row + placement.side > rows \
                or placement.col + placement.side > cols:
            raise ValueError(f"placement {placement} outside the grid")
        for r, c in placement.cells(scene.shape):
            n = r * cols + c
            occ = occurrences.get(n, 0)
            occurrences[n] = occ + 1
            request = ShotRequest(n, placement.dwell, seed,
                                  iteration=plan.iteration, occurrence=occ)
            cube.add(r, c, simulate_shot(scene, irf, request), placement.dwell)
    return cube


def full_scan_cube(scene: GroundTruthScene, irf: Irf, dwell: float,
                   seed: int, iteration: int = 0) -> HistogramCube:
    """Every pixel acquired once at the same dwell (reference acquisitions
    and static baselines)."""
    rows, cols = scene.shape
    cube = HistogramCube.zeros(rows, cols, scene.n_wavelengths, irf.n_bins)
    from .sampling import Placement
    plan = ScanPlan(tuple(Placement(r, c, 1, dwell)
                          for r in range(rows) for c in range(cols)),
                    iteration)
    return execute_plan(scene, irf, plan, cube, seed)
