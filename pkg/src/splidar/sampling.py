"""Scan-location sampling, dwell assignment, time accounting and stopping
logic for the adaptive acquisition loop.

Locations are drawn from the region-of-interest map with a
Metropolis-Hastings chain using uniform proposals over the grid; array
scanning additionally picks a per-placement side from two aggregation
scales of the map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .reconstruct import RoiMap


class InsufficientSupport(ValueError):
    """The map does not carry enough positive-probability pixels."""


@dataclass(frozen=True)
class ScanScenario:
    """Instrument-side scan constraints and timing.

    ``array_side`` of 1 is pixel-wise scanning; larger sides scan square
    detector footprints.  ``mode`` is ``sequential`` (one placement at a
    time) or ``parallel`` (all placements exposed in one shot).
    """

    points_per_iteration: int        # pixels covered per iteration
    base_time: float                 # dwell step t0, seconds
    array_side: int = 1
    mode: str = "sequential"
    importance_cap: float = 1.0      # most important placement gets cap*t0
    mirror_move: float = 150e-6      # seconds per scan-position move
    min_base_time: float = 1e-9

    def __post_init__(self):
        if self.array_side < 1:
            raise ValueError("array_side must be >= 1")
        if self.mode not in ("sequential", "parallel"):
            raise ValueError("mode must be 'sequential' or 'parallel'")
        if self.base_time <= 0 or self.min_base_time <= 0:
            raise ValueError("time steps must be positive")
        if self.importance_cap < 1:
            raise ValueError("importance_cap must be >= 1")
        if self.points_per_iteration % self.array_side ** 2:
            raise ValueError("points_per_iteration must be divisible by array_side^2")


@dataclass(frozen=True)
class Placement:
    """One scan footprint: top-left anchor, square side and dwell."""
    row: int
    col: int
    side: int
    dwell: float

    def cells(self, shape: tuple):
        rows, cols = shape
        for r in range(self.row, min(self.row + self.side, rows)):
            for c in range(self.col, min(self.col + self.side, cols)):
                yield r, c


@dataclass(frozen=True)
class ScanPlan:
    placements: tuple
    iteration: int

    def __post_init__(self):
        object.__setattr__(self, "placements", tuple(self.placements))

    @property
    def n_placements(self) -> int:
        return len(self.placements)

    @property
    def dwells(self) -> np.ndarray:
        return np.array([p.dwell for p in self.placements], dtype=float)

    @property
    def covered(self) -> int:
        """Cells covered, counted with multiplicity."""
        return int(sum(p.side ** 2 for p in self.placements))


def save_plan_text(plan: ScanPlan, shape: tuple, path, append: bool = False) -> None:
    """Audit record: one ``iteration pixel side dwell`` row per placement,
    pixel being the flat index of the anchor."""
    mode = "a" if append else "w"
    with open(path, mode) as f:
        for p in plan.placements:
            flat = p.row * shape[1] + p.col
            f.write(f"{plan.iteration} {flat} {p.side} {p.dwell!r}\n")


def load_plan_text(path, shape: tuple):
    """Inverse of :func:`save_plan_text`; returns plans grouped by iteration."""
    groups: dict = {}
    with open(path) as f:
        for line in f:
            it, flat, side, dwell = line.split()
            r, c = divmod(int(flat), shape[1])
            groups.setdefault(int(it), []).append(
                Placement(r, c, int(side), float(dwell)))
    return [ScanPlan(tuple(v), k) for k, v in sorted(groups.items())]


@dataclass(frozen=True)
class StopCriteria:
    depth_rmse: float          # stop when consecutive depth maps agree this well
    max_dwell: float           # per-pixel dwell cap, seconds
    max_points: int            # total scanned points budget
    max_iterations: int

    def __post_init__(self):
        if min(self.depth_rmse, self.max_dwell) <= 0 \
                or min(self.max_points, self.max_iterations) <= 0:
            raise ValueError("all stopping thresholds must be positive")


@dataclass
class SamplerState:
    iteration: int
    total_points: int
    dwell: np.ndarray


def mh_chain(roi: RoiMap, n_samples: int, rng: np.random.Generator,
             burn_in: int = 1000, thinning: int = 5) -> np.ndarray:
    """Kept (post burn-in, thinned) states of a Metropolis-Hastings chain
    targeting the map, with uniform proposals over the grid.

    States are flat pixel indices; pixels with zero probability are never
    visited.
    """
    p = roi.flat
    support = np.flatnonzero(p > 0)
    if support.size == 0:
        raise InsufficientSupport("map has no positive-probability pixel")
    n = p.size
    total_steps = burn_in + n_samples * thinning
    proposals = rng.integers(0, n, size=total_steps)
    accepts = rng.random(total_steps)
    current = int(rng.choice(support))
    out = np.empty(n_samples, dtype=np.int64)
    k = 0
    for step in range(total_steps):
        j = proposals[step]
        if p[j] > 0 and accepts[step] < p[j] / p[current]:
            current = j
        if step >= burn_in and (step - burn_in) % thinning == thinning - 1:
            out[k] = current
            k += 1
    return out


def mh_sample_locations(roi: RoiMap, count: int, rng: np.random.Generator,
                        burn_in: int = 1000, thinning: int = 5) -> np.ndarray:
    """Collect ``count`` distinct pixel locations from the chain.

    Duplicate states are discarded and the chain continues, so one
    iteration never scans the same pixel twice.
    """
    p = roi.flat
    support = np.flatnonzero(p > 0)
    if support.size < count:
        raise InsufficientSupport(
            f"need {count} distinct locations, map supports {support.size}")
    n = p.size
    current = int(rng.choice(support))
    for _ in range(burn_in):
        j = int(rng.integers(0, n))
        if p[j] > 0 and rng.random() < p[j] / p[current]:
            current = j
    chosen: list = []
    seen = set()
    # worst case is a near-delta map; cap defensively, the support check
    # above guarantees termination long before this trips
    max_steps = 1000 * (burn_in + count * thinning) + 10_000_000
    steps = 0
    while len(chosen) < count:
        for _ in range(thinning):
            j = int(rng.integers(0, n))
            if p[j] > 0 and rng.random() < p[j] / p[current]:
                current = j
            steps += 1
            if steps > max_steps:
                raise RuntimeError("MH location sampling failed to gather "
                                   f"{count} distinct pixels")
        if current not in seen:
            seen.add(current)
            chosen.append(current)
    return np.asarray(chosen, dtype=np.int64)


def _block_sums(p: np.ndarray, side: int) -> np.ndarray:
    rows, cols = p.shape
    br = math.ceil(rows / side)
    bc = math.ceil(cols / side)
    padded = np.zeros((br * side, bc * side))
    padded[:rows, :cols] = p
    return padded.reshape(br, side, bc, side).sum(axis=(1, 3))


def place_arrays(roi: RoiMap, array_side: int, count: int,
                 rng: np.random.Generator, burn_in: int = 1000,
                 thinning: int = 5) -> list:
    """Choose ``count`` base-side anchors worth of array placements.

    Anchors are MH-sampled from the map aggregated over ``array_side``
    blocks.  Each anchor zooms out to side ``2*array_side`` when the map
    mean over the doubled footprint is at least the mean over the base
    footprint (flat regions favour coverage, sharp peaks stay tight).  The
    pixel budget ``count * array_side**2`` is preserved exactly: zoomed
    placements consume four base blocks and the final picks are forced to
    the base side when the remaining budget or the grid bounds require it.
    """
    r = array_side
    rows, cols = roi.shape
    if r > min(rows, cols):
        raise ValueError("array side exceeds the grid")
    p = roi.probabilities
    coarse = _block_sums(p, r)
    total_budget = count * r * r
    flat_coarse = coarse.reshape(-1)
    support = np.flatnonzero(flat_coarse > 0)
    if support.size == 0:
        raise InsufficientSupport("map has no positive-probability block")
    block_roi = RoiMap(coarse / coarse.sum())
    placements: list = []
    remaining = total_budget
    seen = set()
    bc = coarse.shape[1]
    current = int(rng.choice(support))
    pf = block_roi.flat

    def step_chain(current, steps):
        nb = pf.size
        for _ in range(steps):
            j = int(rng.integers(0, nb))
            if pf[j] > 0 and rng.random() < pf[j] / pf[current]:
                current = j
        return current

    current = step_chain(current, burn_in)
    guard = 0
    while remaining > 0:
        current = step_chain(current, thinning)
        guard += 1
        if guard > 1000 * (count * thinning + burn_in) + 10_000_000:
            raise RuntimeError("array placement sampling stalled")
        if current in seen:
            continue
        seen.add(current)
        bi, bj = divmod(current, bc)
        anchor = (bi * r, bj * r)
        side = r
        if remaining >= 4 * r * r and anchor[0] + 2 * r <= rows \
                and anchor[1] + 2 * r <= cols:
            base = p[anchor[0]:anchor[0] + r, anchor[1]:anchor[1] + r]
            zoom = p[anchor[0]:anchor[0] + 2 * r, anchor[1]:anchor[1] + 2 * r]
            # relative epsilon so summation rounding cannot break the
            # tie-to-coverage rule on exactly flat regions
            if zoom.mean() >= base.mean() * (1.0 - 1e-12):
                side = 2 * r
        placements.append(Placement(anchor[0], anchor[1], side, 0.0))
        remaining -= side * side
        if len(seen) >= support.size and remaining > 0:
            raise InsufficientSupport(
                "ran out of distinct blocks before covering the pixel budget")
    return placements


def assign_dwell(roi: RoiMap, placements, base_time: float,
                 importance_cap: float) -> list:
    """Distribute dwell between ``base_time`` and ``cap * base_time`` in
    proportion to each placement's share of the map, the largest share
    getting the cap."""
    p = roi.probabilities
    weights = np.array([
        p[pl.row:pl.row + pl.side, pl.col:pl.col + pl.side].sum()
        for pl in placements
    ])
    top = weights.max() if len(weights) else 0.0
    if top <= 0:
        return [replace(pl, dwell=base_time) for pl in placements]
    dwells = base_time * (1.0 + (importance_cap - 1.0) * weights / top)
    return [replace(pl, dwell=float(d)) for pl, d in zip(placements, dwells)]


def pixel_placements(flat_pixels, shape: tuple) -> list:
    """Wrap flat pixel indices as side-1 placements (dwell unset)."""
    cols = shape[1]
    return [Placement(int(n) // cols, int(n) % cols, 1, 0.0)
            for n in np.asarray(flat_pixels)]


def adapt_time_step(detect_fraction: float, base_time: float,
                    minimum: float = 1e-9) -> float:
    """Double the dwell step under sparse detections (< 0.7), halve it when
    detections saturate (> 0.9), never dropping below ``minimum``."""
    if not 0.0 <= detect_fraction <= 1.0:
        raise ValueError("detect_fraction must lie in [0, 1]")
    if detect_fraction < 0.7:
        return 2.0 * base_time
    if detect_fraction > 0.9:
        return max(base_time / 2.0, minimum)
    return base_time


def elapsed_time(plan: ScanPlan, scenario: ScanScenario) -> float:
    """Wall time the scan consumes: every placement in turn for sequential
    mode, one shared exposure window for parallel mode, plus mirror
    moves (one per placement sequentially, one total in parallel)."""
    if plan.n_placements == 0:
        return 0.0
    dwells = plan.dwells
    if scenario.mode == "sequential":
        return float(dwells.sum() + plan.n_placements * scenario.mirror_move)
    return float(dwells.max() + scenario.mirror_move)


def depth_rmse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("depth maps must share a grid")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def check_stop(depth_prev, depth_curr, state: SamplerState,
               criteria: StopCriteria):
    """Evaluate the stopping criteria; returns ``(stop, reason)``.

    The consecutive-estimate criterion is skipped when ``depth_prev`` is
    None (first iteration).  The dwell criterion fires once every pixel has
    consumed the per-pixel budget.
    """
    if depth_prev is not None \
            and depth_rmse(depth_prev, depth_curr) <= criteria.depth_rmse:
        return True, "depth_converged"
    if state.iteration >= criteria.max_iterations:
        return True, "max_iterations"
    if state.total_points >= criteria.max_points:
        return True, "max_scanned_points"
    if state.dwell.min() >= criteria.max_dwell:
        return True, "max_dwell"
    return False, None
