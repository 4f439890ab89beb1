"""Dense map reconstruction from sparse per-pixel estimates, and the
region-of-interest probability map that drives the next scan.

Missing pixels (never scanned, or scanned without a photon detection) are
filled from neighbours with growing windows of side 3, 9, 27, ...; values
that are present always pass through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ScanComplete(Exception):
    """Every pixel is excluded from further scanning (max dwell reached)."""


@dataclass
class SparseField:
    """Per-pixel values defined only where ``mask`` is True."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.shape != self.mask.shape or self.values.ndim != 2:
            raise ValueError("values and mask must be matching 2-D arrays")

    @classmethod
    def from_pixel_dict(cls, estimates: dict, shape: tuple,
                        fill=0.0, dtype=float) -> "SparseField":
        """Build a field from ``{(row, col): value}``."""
        values = np.full(shape, fill, dtype=dtype)
        mask = np.zeros(shape, dtype=bool)
        for (r, c), v in estimates.items():
            values[r, c] = v
            mask[r, c] = True
        return cls(values, mask)


def _fill_missing(field: SparseField, max_window_exp: int, reduce):
    if max_window_exp < 1:
        raise ValueError("max_window_exp must be >= 1")
    if not field.mask.any():
        raise ValueError("cannot inpaint a field with no values")
    rows, cols = field.values.shape
    out = field.values.copy()
    known = field.mask.copy()
    missing = np.argwhere(~field.mask)
    for r, c in missing:
        for w in range(1, max_window_exp + 1):
            half = 3 ** w // 2
            r0, r1 = max(r - half, 0), min(r + half + 1, rows)
            c0, c1 = max(c - half, 0), min(c + half + 1, cols)
            window_mask = field.mask[r0:r1, c0:c1]
            if window_mask.any():
                out[r, c] = reduce(field.values[r0:r1, c0:c1][window_mask])
                known[r, c] = True
                break
    return out, known


def inpaint(field: SparseField, max_window_exp: int = 3):
    """Median-fill missing pixels from available neighbours.

    Returns ``(values, known)`` where ``known`` marks pixels that carry an
    estimate after filling; pixels still False exhausted every window and
    should be treated as maximally uncertain.
    """
    return _fill_missing(field, max_window_exp,
                         lambda vals: float(np.median(vals)))


def _mode_smallest(vals: np.ndarray) -> int:
    vals = np.asarray(vals, dtype=np.int64)
    # bincount argmax returns the smallest label on ties
    return int(np.bincount(vals - vals.min()).argmax() + vals.min())


def inpaint_labels(field: SparseField, max_window_exp: int = 3):
    """Mode-fill for categorical label fields, ties to the smallest label."""
    values, known = _fill_missing(field, max_window_exp, _mode_smallest)
    return values.astype(np.int64), known


@dataclass(frozen=True)
class RoiMap:
    """Normalized scan-probability map over the full grid."""

    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if p.ndim != 2:
            raise ValueError("probabilities must be a 2-D grid")
        if np.any(p < 0):
            raise ValueError("probabilities must be non-negative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1 within 1e-12")
        p = p.copy()
        p.flags.writeable = False
        object.__setattr__(self, "probabilities", p)

    @property
    def shape(self) -> tuple:
        return self.probabilities.shape

    @property
    def n_pixels(self) -> int:
        return self.probabilities.size

    @property
    def flat(self) -> np.ndarray:
        return self.probabilities.reshape(-1)

    @classmethod
    def uniform(cls, shape: tuple) -> "RoiMap":
        n = int(np.prod(shape))
        return cls(np.full(shape, 1.0 / n))


def build_roi(labels: np.ndarray, uncertainty: np.ndarray, targets,
              dwell: np.ndarray, max_dwell: float,
              known: np.ndarray | None = None,
              exploration_floor: float = 0.05) -> RoiMap:
    """Score pixels for the next scan iteration.

    A pixel scores its depth uncertainty if its label belongs to the target
    set, plus an exploration floor of ``exploration_floor`` times the
    largest observed uncertainty so no region is ever starved.  Pixels
    without any estimate score the maximum observed uncertainty; pixels at
    ``max_dwell`` are excluded outright.  Raises :class:`ScanComplete` when
    nothing is left to scan.
    """
    labels = np.asarray(labels)
    uncertainty = np.asarray(uncertainty, dtype=float)
    dwell = np.asarray(dwell, dtype=float)
    if known is None:
        known = np.ones(labels.shape, dtype=bool)
    if not known.any():
        raise ValueError("build_roi needs at least one estimated pixel")
    max_unc = float(uncertainty[known].max())
    target_mask = np.isin(labels, np.asarray(sorted(targets)))
    scores = np.where(target_mask, uncertainty, 0.0)
    scores = np.where(known, scores, max_unc)
    scores = scores + exploration_floor * max_unc
    scores[dwell >= max_dwell] = 0.0
    total = scores.sum()
    if total <= 0:
        raise ScanComplete("all pixels reached maximum dwell or zero score")
    return RoiMap(scores / total)


def save_text_matrix(values: np.ndarray, path) -> None:
    np.savetxt(path, np.asarray(values))


def save_pgm16(values: np.ndarray, path) -> None:
    """Write a 16-bit binary PGM, min-max scaled to the full range."""
    a = np.asarray(values, dtype=float)
    if a.ndim != 2:
        raise ValueError("PGM export needs a 2-D array")
    lo, hi = float(a.min()), float(a.max())
    if hi > lo:
        scaled = np.round((a - lo) / (hi - lo) * 65535.0)
    else:
        scaled = np.zeros_like(a)
    with open(path, "wb") as f:
        f.write(f"P5\n{a.shape[1]} {a.shape[0]}\n65535\n".encode("ascii"))
        f.write(scaled.astype(">u2").tobytes())
