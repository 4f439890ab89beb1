"""Scene descriptions, instrument responses, spectral libraries and the
photon-count histogram cube.

Conventions used across the package:

* grids are ``(rows, cols)`` arrays in row-major order; a flat pixel index
  is ``n = row * cols + col``,
* depth is a 0-based time-bin index; a surface at bin ``d`` produces signal
  in bins ``d + tau`` where ``tau`` indexes the instrument response,
* reflectivity is the expected number of signal photons per dwell unit,
  background is the expected number of photons per bin per dwell unit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

CUBE_MAGIC = b"SPLIDARCUBE\x00v001"

LIGHT_SPEED = 299792458.0  # m/s, used to convert bin RMSE to range RMSE


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Irf:
    """Per-wavelength instrument response sampled on the histogram grid.

    ``response[l, tau]`` is the probability that a signal photon reflected
    by a surface at depth bin ``d`` is recorded in bin ``d + tau``.  Every
    channel must sum to one; channels may have different shapes.
    """

    response: np.ndarray
    bin_width: float = 1.0

    def __post_init__(self):
        resp = np.atleast_2d(np.asarray(self.response, dtype=float))
        if resp.ndim != 2:
            raise ValueError("IRF response must be a (L, T) array")
        if np.any(resp < 0):
            raise ValueError("IRF samples must be non-negative")
        sums = resp.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-9):
            raise ValueError(f"every IRF channel must sum to 1, got sums {sums}")
        if not self.bin_width > 0:
            raise ValueError("bin_width must be positive")
        object.__setattr__(self, "response", _readonly(resp))

    @property
    def n_wavelengths(self) -> int:
        return self.response.shape[0]

    @property
    def n_bins(self) -> int:
        return self.response.shape[1]

    def channel(self, l: int) -> np.ndarray:
        return self.response[l]


def load_irf(path, n_bins: int, bin_width: float = 1.0) -> Irf:
    """Load a plain-text IRF file with ``n_bins`` rows and one column per
    wavelength.  Channels are renormalized to sum to one."""
    data = np.loadtxt(path, ndmin=2, dtype=float)
    if data.shape[0] != n_bins:
        raise ValueError(
            f"IRF file has {data.shape[0]} rows, expected {n_bins} time bins"
        )
    if np.any(data < 0):
        raise ValueError("IRF file contains negative samples")
    sums = data.sum(axis=0)
    if np.any(sums <= 0):
        raise ValueError("IRF file contains an all-zero channel")
    return Irf((data / sums).T, bin_width)


def save_irf(irf: Irf, path) -> None:
    np.savetxt(path, irf.response.T)


def make_gaussian_irf(n_bins: int, centers, sigmas, bin_width: float = 1.0) -> Irf:
    """Synthetic Gaussian response peaking ``centers[l]`` bins after the
    surface bin, with per-channel widths ``sigmas[l]`` (in bins)."""
    centers = np.atleast_1d(np.asarray(centers, dtype=float))
    sigmas = np.broadcast_to(np.asarray(sigmas, dtype=float), centers.shape)
    t = np.arange(n_bins, dtype=float)
    resp = np.exp(-0.5 * ((t[None, :] - centers[:, None]) / sigmas[:, None]) ** 2)
    resp /= resp.sum(axis=1, keepdims=True)
    return Irf(resp, bin_width)


@dataclass(frozen=True)
class SpectralLibrary:
    """Gamma hyperparameters for K target classes at L wavelengths.

    All ``beta`` values are gamma *rates*: a class-k surface seen at
    wavelength l has prior mean ``alpha_r[k, l] / beta_r[k, l]`` signal
    photons per dwell unit, and the ambient level has prior mean
    ``alpha_b[l] / beta_b[l]`` photons per bin per dwell unit.
    """

    alpha_r: np.ndarray  # (K, L) signal shapes
    beta_r: np.ndarray   # (K, L) signal rates
    alpha_b: np.ndarray  # (L,) background shapes
    beta_b: np.ndarray   # (L,) background rates

    def __post_init__(self):
        ar = np.atleast_2d(np.asarray(self.alpha_r, dtype=float))
        br = np.atleast_2d(np.asarray(self.beta_r, dtype=float))
        ab = np.atleast_1d(np.asarray(self.alpha_b, dtype=float))
        bb = np.atleast_1d(np.asarray(self.beta_b, dtype=float))
        if ar.shape != br.shape:
            raise ValueError("alpha_r and beta_r must have identical (K, L) shapes")
        if ab.shape != bb.shape or ab.ndim != 1:
            raise ValueError("alpha_b and beta_b must be length-L vectors")
        if ab.shape[0] != ar.shape[1]:
            raise ValueError(
                f"background vectors have length {ab.shape[0]}, "
                f"expected L={ar.shape[1]}"
            )
        for name, arr in (("alpha_r", ar), ("beta_r", br),
                          ("alpha_b", ab), ("beta_b", bb)):
            if np.any(~np.isfinite(arr)) or np.any(arr <= 0):
                raise ValueError(f"{name} must be strictly positive and finite")
        object.__setattr__(self, "alpha_r", _readonly(ar))
        object.__setattr__(self, "beta_r", _readonly(br))
        object.__setattr__(self, "alpha_b", _readonly(ab))
        object.__setattr__(self, "beta_b", _readonly(bb))

    @property
    def n_classes(self) -> int:
        return self.alpha_r.shape[0]

    @property
    def n_wavelengths(self) -> int:
        return self.alpha_r.shape[1]

    @classmethod
    def noninformative(cls, avg_signal: float, n_bins: int,
                       n_classes: int = 1, n_wavelengths: int = 1
                       ) -> "SpectralLibrary":
        """Weak single-signature prior: signal mean equals ``avg_signal``
        photons per dwell unit, background mean ``avg_signal / n_bins``
        photons per bin (prior signal-to-background ratio of one)."""
        if avg_signal <= 0:
            raise ValueError("avg_signal must be positive")
        shape = (n_classes, n_wavelengths)
        return cls(
            alpha_r=np.full(shape, 2.0),
            beta_r=np.full(shape, 2.0 / avg_signal),
            alpha_b=np.ones(n_wavelengths),
            beta_b=np.full(n_wavelengths, n_bins / avg_signal),
        )

    @classmethod
    def from_signatures(cls, signatures, n_bins: int, signal_shape: float = 2.0,
                        avg_signal=None) -> "SpectralLibrary":
        """Build a library from known per-class mean reflectivities.

        ``signatures`` is (K, L); gamma shapes are ``signal_shape`` and the
        rates are chosen so each class prior mean matches its signature.
        ``avg_signal`` (per wavelength) sets the background prior scale and
        defaults to the column mean of the signatures.
        """
        sig = np.atleast_2d(np.asarray(signatures, dtype=float))
        if np.any(sig <= 0):
            raise ValueError("signatures must be strictly positive")
        if avg_signal is None:
            avg_signal = sig.mean(axis=0)
        avg_signal = np.broadcast_to(np.asarray(avg_signal, dtype=float),
                                     (sig.shape[1],))
        return cls(
            alpha_r=np.full(sig.shape, signal_shape),
            beta_r=signal_shape / sig,
            alpha_b=np.ones(sig.shape[1]),
            beta_b=n_bins / avg_signal,
        )


@dataclass(frozen=True)
class GroundTruthScene:
    """Piecewise-constant reference scene used by the forward model.

    ``classes`` holds 0 for empty pixels (background photons only) and the
    1-based class label otherwise; ``depth`` is meaningful only where a
    target is present.  ``unit_time`` is the dwell duration (seconds) over
    which reflectivity and background are expressed.
    """

    depth: np.ndarray          # (rows, cols) int bin index
    classes: np.ndarray        # (rows, cols) int in 0..K
    reflectivity: np.ndarray   # (rows, cols, L)
    background: np.ndarray     # (rows, cols, L)
    n_bins: int
    unit_time: float = 1.0

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.int64)
        classes = np.asarray(self.classes, dtype=np.int64)
        refl = np.asarray(self.reflectivity, dtype=float)
        bg = np.asarray(self.background, dtype=float)
        if depth.shape != classes.shape or refl.shape[:2] != depth.shape \
                or bg.shape != refl.shape:
            raise ValueError("scene map shapes are inconsistent")
        if np.any(refl < 0) or np.any(bg < 0):
            raise ValueError("reflectivity and background must be non-negative")
        if self.unit_time <= 0:
            raise ValueError("unit_time must be positive")
        empty = classes == 0
        if np.any(refl[empty] != 0):
            raise ValueError("empty pixels must have zero reflectivity")
        if np.any(refl[~empty].sum(axis=-1) == 0):
            raise ValueError("target pixels must reflect at some wavelength")
        target_depth = depth[~empty]
        if target_depth.size and (target_depth.min() < 0
                                  or target_depth.max() >= self.n_bins):
            raise ValueError("target depth bins must lie within [0, n_bins)")
        object.__setattr__(self, "depth", _readonly(depth))
        object.__setattr__(self, "classes", _readonly(classes))
        object.__setattr__(self, "reflectivity", _readonly(refl))
        object.__setattr__(self, "background", _readonly(bg))

    @property
    def shape(self) -> tuple:
        return self.depth.shape

    @property
    def n_pixels(self) -> int:
        return self.depth.size

    @property
    def n_wavelengths(self) -> int:
        return self.reflectivity.shape[2]


def sbr_of(signal: float, background: float, n_bins: int) -> float:
    """Signal-to-background ratio: signal photons over total background
    photons accumulated across the histogram."""
    if signal == 0:
        return 0.0
    if signal < 0:
        raise ValueError("signal must be non-negative")
    if background <= 0:
        raise ValueError("SBR undefined: positive signal with zero background")
    return signal / (background * n_bins)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle primitive, fully inside the grid."""
    row: int
    col: int
    height: int
    width: int
    class_id: int
    depth_bin: int
    reflectivity: tuple

    def footprint(self, rows: int, cols: int) -> np.ndarray:
        if self.height <= 0 or self.width <= 0:
            raise ValueError("rectangle must have positive size")
        if (self.row < 0 or self.col < 0
                or self.row + self.height > rows
                or self.col + self.width > cols):
            raise ValueError(f"rectangle {self} exceeds the grid bounds")
        m = np.zeros((rows, cols), dtype=bool)
        m[self.row:self.row + self.height, self.col:self.col + self.width] = True
        return m


@dataclass(frozen=True)
class Disk:
    """Filled disk primitive; a pixel belongs when its center is within
    ``radius`` of (row, col)."""
    row: float
    col: float
    radius: float
    class_id: int
    depth_bin: int
    reflectivity: tuple

    def footprint(self, rows: int, cols: int) -> np.ndarray:
        if self.radius <= 0:
            raise ValueError("disk must have positive radius")
        if (self.row - self.radius < -0.5 or self.col - self.radius < -0.5
                or self.row + self.radius > rows - 0.5
                or self.col + self.radius > cols - 0.5):
            raise ValueError(f"disk {self} exceeds the grid bounds")
        rr, cc = np.mgrid[0:rows, 0:cols]
        return (rr - self.row) ** 2 + (cc - self.col) ** 2 <= self.radius ** 2


@dataclass(frozen=True)
class PhantomSpec:
    """Declarative scene description: a grid, a global background level and
    a painter-ordered list of primitives (later primitives win overlaps)."""

    rows: int
    cols: int
    n_bins: int
    background: tuple          # per wavelength, photons per bin per dwell unit
    primitives: tuple = ()
    unit_time: float = 1.0

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0 or self.n_bins <= 0:
            raise ValueError("grid dimensions must be positive")
        bg = tuple(float(b) for b in np.atleast_1d(self.background))
        if any(b < 0 for b in bg):
            raise ValueError("background must be non-negative")
        object.__setattr__(self, "background", bg)
        object.__setattr__(self, "primitives", tuple(self.primitives))

    @property
    def n_wavelengths(self) -> int:
        return len(self.background)


def build_phantom(spec: PhantomSpec, library: SpectralLibrary) -> GroundTruthScene:
    """Paint a ground-truth scene from a phantom description.

    Pure function of its inputs: identical specs always yield identical
    scenes.  Raises when a primitive falls outside the grid, names a class
    the library does not have, or carries the wrong number of wavelengths.
    """
    L = library.n_wavelengths
    if spec.n_wavelengths != L:
        raise ValueError(
            f"phantom background has {spec.n_wavelengths} wavelengths, "
            f"library has {L}"
        )
    rows, cols = spec.rows, spec.cols
    depth = np.zeros((rows, cols), dtype=np.int64)
    classes = np.zeros((rows, cols), dtype=np.int64)
    refl = np.zeros((rows, cols, L))
    background = np.broadcast_to(np.asarray(spec.background, dtype=float),
                                 (rows, cols, L)).copy()
    for prim in spec.primitives:
        if not 1 <= prim.class_id <= library.n_classes:
            raise ValueError(
                f"class {prim.class_id} outside library range 1..{library.n_classes}"
            )
        if not 0 <= prim.depth_bin < spec.n_bins:
            raise ValueError(f"depth bin {prim.depth_bin} outside [0, {spec.n_bins})")
        r = np.asarray(prim.reflectivity, dtype=float)
        if r.shape != (L,):
            raise ValueError(f"primitive reflectivity must have {L} entries")
        if np.any(r < 0) or r.sum() == 0:
            raise ValueError("primitive reflectivity must be non-negative, not all zero")
        m = prim.footprint(rows, cols)
        depth[m] = prim.depth_bin
        classes[m] = prim.class_id
        refl[m] = r
    return GroundTruthScene(depth, classes, refl, background,
                            n_bins=spec.n_bins, unit_time=spec.unit_time)


class HistogramCube:
    """Mutable per-pixel, per-wavelength, per-bin photon counts with the
    accumulated dwell per pixel.

    Accumulation is additive: merging cubes (or scanning a pixel twice)
    adds counts and dwell.  Intended for one writer at a time; reads are
    safe from any thread once writing has stopped.
    """

    def __init__(self, counts: np.ndarray, dwell: np.ndarray):
        counts = np.asarray(counts)
        dwell = np.asarray(dwell, dtype=float)
        if counts.ndim != 4:
            raise ValueError("counts must be (rows, cols, L, T)")
        if dwell.shape != counts.shape[:2]:
            raise ValueError("dwell must be (rows, cols)")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        if counts.dtype.kind not in "iu":
            if not np.all(counts == np.floor(counts)):
                raise ValueError("counts must be integers")
        if np.any(dwell < 0):
            raise ValueError("dwell must be non-negative")
        if np.any(counts[dwell == 0].sum(axis=(-1, -2)) != 0):
            raise ValueError("pixels with zero dwell cannot hold counts")
        self.counts = counts.astype(np.int64, copy=True)
        self.dwell = dwell.copy()

    @classmethod
    def zeros(cls, rows: int, cols: int, n_wavelengths: int, n_bins: int
              ) -> "HistogramCube":
        return cls(np.zeros((rows, cols, n_wavelengths, n_bins), dtype=np.int64),
                   np.zeros((rows, cols)))

    @property
    def shape(self) -> tuple:
        return self.counts.shape[:2]

    @property
    def n_pixels(self) -> int:
        return self.dwell.size

    @property
    def n_wavelengths(self) -> int:
        return self.counts.shape[2]

    @property
    def n_bins(self) -> int:
        return self.counts.shape[3]

    @property
    def scanned(self) -> np.ndarray:
        """Boolean (rows, cols) map of pixels with any accumulated dwell."""
        return self.dwell > 0

    def pixel_counts(self, row: int, col: int) -> np.ndarray:
        return self.counts[row, col]

    def add(self, row: int, col: int, counts: np.ndarray, dwell: float) -> None:
        if dwell <= 0:
            raise ValueError("dwell increment must be positive")
        self.counts[row, col] += np.asarray(counts, dtype=np.int64)
        self.dwell[row, col] += dwell

    def merge(self, other: "HistogramCube") -> None:
        if other.counts.shape != self.counts.shape:
            raise ValueError("cube shapes differ")
        self.counts += other.counts
        self.dwell += other.dwell

    def copy(self) -> "HistogramCube":
        return HistogramCube(self.counts, self.dwell)

    def save(self, path) -> None:
        """Binary format: 16-byte magic, little-endian u32 rows/cols/L/T,
        u32 counts in (pixel row-major, wavelength, bin) order, f64 dwell."""
        if self.counts.max(initial=0) > np.iinfo(np.uint32).max:
            raise ValueError("counts exceed the u32 range of the cube format")
        rows, cols = self.shape
        with open(path, "wb") as f:
            f.write(CUBE_MAGIC)
            f.write(struct.pack("<4I", rows, cols,
                                self.n_wavelengths, self.n_bins))
            f.write(np.ascontiguousarray(self.counts, dtype="<u4").tobytes())
            f.write(np.ascontiguousarray(self.dwell, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "HistogramCube":
        with open(path, "rb") as f:
            magic = f.read(len(CUBE_MAGIC))
            if magic != CUBE_MAGIC:
                raise ValueError(f"{path}: not a histogram-cube file")
            rows, cols, n_wl, n_bins = struct.unpack("<4I", f.read(16))
            n_counts = rows * cols * n_wl * n_bins
            counts = np.frombuffer(f.read(4 * n_counts), dtype="<u4")
            if counts.size != n_counts:
                raise ValueError(f"{path}: truncated counts block")
            dwell = np.frombuffer(f.read(8 * rows * cols), dtype="<f8")
            if dwell.size != rows * cols:
                raise ValueError(f"{path}: truncated dwell block")
        return cls(counts.reshape(rows, cols, n_wl, n_bins).astype(np.int64),
                   dwell.reshape(rows, cols))


def scale_scene(scene: GroundTruthScene, avg_signal: float, sbr: float
                ) -> GroundTruthScene:
    """Rescale a scene so target pixels average ``avg_signal`` photons per
    wavelength per dwell unit and the background level realizes ``sbr``.

    Relative spectral signatures are preserved; the background becomes
    uniform at ``avg_signal / (sbr * n_bins)`` photons per bin.
    """
    if avg_signal <= 0 or sbr <= 0:
        raise ValueError("avg_signal and sbr must be positive")
    targets = scene.classes > 0
    if not np.any(targets):
        raise ValueError("scene has no target pixels to scale")
    current = scene.reflectivity[targets].mean()
    refl = scene.reflectivity * (avg_signal / current)
    background = np.full_like(scene.background,
                              avg_signal / (sbr * scene.n_bins))
    return GroundTruthScene(scene.depth, scene.classes, refl, background,
                            n_bins=scene.n_bins, unit_time=scene.unit_time)
