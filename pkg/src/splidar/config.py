"""Run configuration: a single YAML file with nested sections covering the
scene source, spectral library, instrument response, scan scenario,
quadrature, stopping criteria and every tunable the pipeline exposes.

Unknown keys are hard errors (with the offending line number) so renamed
or misspelled tunables cannot drift silently.  ``RunConfig.to_dict`` /
``from_dict`` round-trip exactly, and the effective configuration written
next to each run reloads to an identical object.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .inference import QuadratureSpec
from .sampling import ScanScenario, StopCriteria
from .scene import (Disk, GroundTruthScene, Irf, PhantomSpec, Rect,
                    SpectralLibrary, build_phantom, load_irf,
                    make_gaussian_irf)


class ConfigError(ValueError):
    pass


def _collect_lines(node, path, lines):
    if isinstance(node, yaml.MappingNode):
        for k_node, v_node in node.value:
            p = f"{path}.{k_node.value}" if path else str(k_node.value)
            lines[p] = k_node.start_mark.line + 1
            _collect_lines(v_node, p, lines)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            _collect_lines(item, f"{path}[{i}]", lines)


def load_yaml_with_lines(path):
    """Parse YAML into plain data plus a ``dotted.key -> line`` map used
    for error messages."""
    with open(path) as f:
        text = f.read()
    data = yaml.safe_load(text)
    lines: dict = {}
    node = yaml.compose(text)
    if node is not None:
        _collect_lines(node, "", lines)
    return data or {}, lines


class _Section:
    """Dict wrapper that tracks consumed keys and reports leftovers."""

    def __init__(self, data, path="", lines=None, filename=""):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"{filename}: section '{path}' must be a mapping")
        self.data = dict(data)
        self.path = path
        self.lines = lines or {}
        self.filename = filename

    def _where(self, key):
        dotted = f"{self.path}.{key}" if self.path else key
        line = self.lines.get(dotted)
        loc = f"{self.filename}:{line}" if line else self.filename or "config"
        return dotted, loc

    def take(self, key, default=..., required=False):
        if key in self.data:
            return self.data.pop(key)
        if required:
            dotted, _ = self._where(key)
            raise ConfigError(f"{self.filename or 'config'}: missing required "
                              f"key '{dotted}'")
        return None if default is ... else default

    def section(self, key, required=False):
        sub = self.take(key, default=None, required=required)
        dotted, _ = self._where(key)
        return _Section(sub, dotted, self.lines, self.filename)

    def finish(self):
        if self.data:
            key = next(iter(self.data))
            dotted, loc = self._where(key)
            raise ConfigError(f"{loc}: unknown key '{dotted}'")


def _primitive_from_dict(d, path, lines, filename):
    sec = _Section(d, path, lines, filename)
    kind = sec.take("kind", required=True)
    common = dict(class_id=int(sec.take("class_id", required=True)),
                  depth_bin=int(sec.take("depth_bin", required=True)),
                  reflectivity=tuple(np.atleast_1d(
                      sec.take("reflectivity", required=True)).astype(float)))
    if kind == "rect":
        prim = Rect(row=int(sec.take("row", required=True)),
                    col=int(sec.take("col", required=True)),
                    height=int(sec.take("height", required=True)),
                    width=int(sec.take("width", required=True)), **common)
    elif kind == "disk":
        prim = Disk(row=float(sec.take("row", required=True)),
                    col=float(sec.take("col", required=True)),
                    radius=float(sec.take("radius", required=True)), **common)
    else:
        raise ConfigError(f"{filename}: {path}.kind must be 'rect' or 'disk'")
    sec.finish()
    return prim


def _primitive_to_dict(p):
    base = {"class_id": p.class_id, "depth_bin": p.depth_bin,
            "reflectivity": list(p.reflectivity)}
    if isinstance(p, Rect):
        return {"kind": "rect", "row": p.row, "col": p.col,
                "height": p.height, "width": p.width, **base}
    return {"kind": "disk", "row": p.row, "col": p.col,
            "radius": p.radius, **base}


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "out"
    scene_phantom: PhantomSpec | None = None
    scene_cube: str | None = None
    library_kwargs: dict = field(default_factory=dict)
    irf_kwargs: dict = field(default_factory=dict)
    scenario_kwargs: dict = field(default_factory=dict)
    quadrature_kwargs: dict = field(default_factory=dict)
    stop_kwargs: dict = field(default_factory=dict)
    ncd_window: int = 2
    exploration_floor: float = 0.05
    inpaint_max_window: int = 3
    target_classes: list | None = None
    processing_time_per_pixel: float | None = 0.0
    roi_build_time: float = 0.0
    static_ratio: float = 0.3
    static_dwell_levels: list = field(default_factory=list)
    classify_static: bool = True
    sweep_sbr: list = field(default_factory=list)
    sweep_photons: list = field(default_factory=list)
    snapshots: bool = False

    # ----- parsing -------------------------------------------------------

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        data, lines = load_yaml_with_lines(path)
        return cls.from_dict(data, lines=lines, filename=str(path))

    @classmethod
    def from_dict(cls, data, lines=None, filename="") -> "RunConfig":
        root = _Section(data, "", lines, filename)
        cfg = cls()
        cfg.seed = int(root.take("seed", 0))
        cfg.output_dir = str(root.take("output_dir", "out"))

        scene = root.section("scene", required=True)
        cube_path = scene.take("cube", default=None)
        phantom_sec = scene.section("phantom")
        if cube_path is not None:
            cfg.scene_cube = str(cube_path)
            phantom_sec.finish()
        else:
            prim_list = phantom_sec.take("primitives", default=[])
            prims = tuple(
                _primitive_from_dict(p, f"scene.phantom.primitives[{i}]",
                                     lines, filename)
                for i, p in enumerate(prim_list))
            cfg.scene_phantom = PhantomSpec(
                rows=int(phantom_sec.take("rows", required=True)),
                cols=int(phantom_sec.take("cols", required=True)),
                n_bins=int(phantom_sec.take("n_bins", required=True)),
                background=tuple(np.atleast_1d(
                    phantom_sec.take("background", required=True)).astype(float)),
                primitives=prims,
                unit_time=float(phantom_sec.take("unit_time", 1.0)))
            phantom_sec.finish()
        scene.finish()

        lib = root.section("library", required=True)
        cfg.library_kwargs = {
            k: lib.take(k) for k in ("alpha_r", "beta_r", "alpha_b", "beta_b",
                                     "signatures", "signal_shape", "avg_signal")
            if k in lib.data}
        lib.finish()

        irf = root.section("irf", required=True)
        cfg.irf_kwargs = {k: irf.take(k)
                          for k in ("path", "gaussian_centers",
                                    "gaussian_sigmas", "n_bins", "bin_width")
                          if k in irf.data}
        irf.finish()

        scn = root.section("scenario")
        cfg.scenario_kwargs = {k: scn.take(k) for k in (
            "points_per_iteration", "base_time", "array_side", "mode",
            "importance_cap", "mirror_move", "min_base_time")
            if k in scn.data}
        scn.finish()

        quad = root.section("quadrature")
        cfg.quadrature_kwargs = {k: quad.take(k)
                                 for k in ("nodes", "lower", "upper")
                                 if k in quad.data}
        quad.finish()

        stop = root.section("stop")
        cfg.stop_kwargs = {k: stop.take(k) for k in (
            "depth_rmse", "max_dwell", "max_points", "max_iterations")
            if k in stop.data}
        stop.finish()

        inf = root.section("inference")
        cfg.ncd_window = int(inf.take("ncd_window", 2))
        inf.finish()

        rec = root.section("reconstruction")
        cfg.exploration_floor = float(rec.take("exploration_floor", 0.05))
        cfg.inpaint_max_window = int(rec.take("inpaint_max_window", 3))
        rec.finish()

        targets = root.take("targets", default=None)
        cfg.target_classes = None if targets is None \
            else [int(t) for t in targets]

        timing = root.section("timing")
        ppp = timing.take("processing_time_per_pixel", 0.0)
        cfg.processing_time_per_pixel = None if ppp is None else float(ppp)
        cfg.roi_build_time = float(timing.take("roi_build_time", 0.0))
        timing.finish()

        static = root.section("static")
        cfg.static_ratio = float(static.take("ratio", 0.3))
        cfg.static_dwell_levels = [float(x) for x in
                                   static.take("dwell_levels", [])]
        cfg.classify_static = bool(static.take("classify_pixels", True))
        static.finish()

        sweep = root.section("sweep")
        cfg.sweep_sbr = [float(x) for x in sweep.take("sbr", [])]
        cfg.sweep_photons = [float(x) for x in sweep.take("photons", [])]
        sweep.finish()

        cfg.snapshots = bool(root.take("snapshots", False))
        root.finish()
        return cfg

    # ----- materialization ----------------------------------------------

    def build_irf(self) -> Irf:
        kw = dict(self.irf_kwargs)
        bin_width = float(kw.get("bin_width", 1.0))
        if "path" in kw and kw["path"] is not None:
            n_bins = kw.get("n_bins")
            if n_bins is None and self.scene_phantom is not None:
                n_bins = self.scene_phantom.n_bins
            if n_bins is None:
                raise ConfigError("irf.path needs irf.n_bins (or a phantom)")
            return load_irf(kw["path"], int(n_bins), bin_width)
        n_bins = kw.get("n_bins")
        if n_bins is None and self.scene_phantom is not None:
            n_bins = self.scene_phantom.n_bins
        if n_bins is None:
            raise ConfigError("irf needs n_bins when no phantom is given")
        centers = kw.get("gaussian_centers")
        if centers is None:
            raise ConfigError("irf needs either a path or gaussian_centers")
        sigmas = kw.get("gaussian_sigmas", 2.0)
        return make_gaussian_irf(int(n_bins), centers, sigmas, bin_width)

    def build_library(self) -> SpectralLibrary:
        kw = dict(self.library_kwargs)
        if "signatures" in kw and kw["signatures"] is not None:
            n_bins = self.scene_phantom.n_bins if self.scene_phantom \
                else int(self.irf_kwargs.get("n_bins"))
            return SpectralLibrary.from_signatures(
                kw["signatures"], n_bins,
                signal_shape=float(kw.get("signal_shape", 2.0)),
                avg_signal=kw.get("avg_signal"))
        try:
            return SpectralLibrary(alpha_r=kw["alpha_r"], beta_r=kw["beta_r"],
                                   alpha_b=kw["alpha_b"], beta_b=kw["beta_b"])
        except KeyError as e:
            raise ConfigError(f"library needs signatures or explicit "
                              f"hyperparameters (missing {e})") from None

    def build_scene(self) -> GroundTruthScene:
        if self.scene_phantom is None:
            raise ConfigError("this command needs a phantom scene source")
        return build_phantom(self.scene_phantom, self.build_library())

    def build_scenario(self) -> ScanScenario:
        kw = dict(self.scenario_kwargs)
        if "points_per_iteration" not in kw or "base_time" not in kw:
            raise ConfigError(
                "scenario.points_per_iteration and scenario.base_time are required")
        return ScanScenario(
            points_per_iteration=int(kw["points_per_iteration"]),
            base_time=float(kw["base_time"]),
            array_side=int(kw.get("array_side", 1)),
            mode=str(kw.get("mode", "sequential")),
            importance_cap=float(kw.get("importance_cap", 1.0)),
            mirror_move=float(kw.get("mirror_move", 150e-6)),
            min_base_time=float(kw.get("min_base_time", 1e-9)))

    def build_quadrature(self) -> QuadratureSpec:
        kw = dict(self.quadrature_kwargs)
        return QuadratureSpec.log_spaced(
            n_nodes=int(kw.get("nodes", 64)),
            lower=float(kw.get("lower", 1e-6)),
            upper=float(kw.get("upper", 1e6)))

    def build_criteria(self) -> StopCriteria:
        kw = dict(self.stop_kwargs)
        return StopCriteria(
            depth_rmse=float(kw.get("depth_rmse", 0.5)),
            max_dwell=float(kw.get("max_dwell", 1.0)),
            max_points=int(kw.get("max_points", 10 ** 9)),
            max_iterations=int(kw.get("max_iterations", 100)))

    # ----- round trip -----------------------------------------------------

    def to_dict(self) -> dict:
        scene: dict = {}
        if self.scene_cube is not None:
            scene["cube"] = self.scene_cube
        else:
            ph = self.scene_phantom
            scene["phantom"] = {
                "rows": ph.rows, "cols": ph.cols, "n_bins": ph.n_bins,
                "background": list(ph.background),
                "unit_time": ph.unit_time,
                "primitives": [_primitive_to_dict(p) for p in ph.primitives],
            }
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "scene": scene,
            "library": dict(self.library_kwargs),
            "irf": dict(self.irf_kwargs),
            "scenario": dict(self.scenario_kwargs),
            "quadrature": dict(self.quadrature_kwargs),
            "stop": dict(self.stop_kwargs),
            "inference": {"ncd_window": self.ncd_window},
            "reconstruction": {
                "exploration_floor": self.exploration_floor,
                "inpaint_max_window": self.inpaint_max_window,
            },
            "targets": self.target_classes,
            "timing": {
                "processing_time_per_pixel": self.processing_time_per_pixel,
                "roi_build_time": self.roi_build_time,
            },
            "static": {
                "ratio": self.static_ratio,
                "dwell_levels": self.static_dwell_levels,
                "classify_pixels": self.classify_static,
            },
            "sweep": {"sbr": self.sweep_sbr, "photons": self.sweep_photons},
            "snapshots": self.snapshots,
        }

    def save(self, path) -> None:
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)
