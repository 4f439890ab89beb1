"""Command-line entry points binding the modules into reproducible
experiments.

Commands: ``simulate`` (write a full-dwell reference cube), ``run`` (one
adaptive or static experiment with trace/map artifacts), ``classify``
(one-shot per-pixel inference on a cube file), ``sweep`` (classification
quality across an SBR x photon grid).  The only environment knob is
``SPLIDAR_PARALLELISM``, the factor by which charged per-pixel processing
time is divided.

Exit codes: 0 success/converged, 1 unexpected failure, 2 bad
configuration or arguments, 3 run ended by budget exhaustion instead of
convergence.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import ConfigError, RunConfig
from .harness import (ReferenceMaps, ReplaySource, SimulatorSource, metrics,
                      run_adaptive, run_static, save_confusion_csv)
from .inference import PixelEstimator
from .reconstruct import save_pgm16, save_text_matrix
from .sampling import save_plan_text
from .scene import HistogramCube, scale_scene
from .simulate import full_scan_cube

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3


def _parallelism() -> float:
    raw = os.environ.get("SPLIDAR_PARALLELISM", "1")
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"SPLIDAR_PARALLELISM must be a number, got {raw!r}")
    if value < 1:
        raise ConfigError("SPLIDAR_PARALLELISM must be >= 1")
    return value


def cmd_simulate(args) -> int:
    cfg = RunConfig.from_file(args.config)
    scene = cfg.build_scene()
    irf = cfg.build_irf()
    dwell = args.dwell if args.dwell is not None \
        else cfg.build_criteria().max_dwell
    cube = full_scan_cube(scene, irf, dwell, cfg.seed)
    cube.save(args.output)
    print(f"wrote {args.output}: {cube.shape[0]}x{cube.shape[1]} pixels, "
          f"{cube.n_wavelengths} wavelengths, {cube.n_bins} bins, "
          f"dwell {dwell}")
    return EXIT_OK


def _make_source(cfg: RunConfig):
    irf = cfg.build_irf()
    if cfg.scene_cube is not None:
        master = HistogramCube.load(cfg.scene_cube)
        unit = cfg.scene_phantom.unit_time if cfg.scene_phantom else 1.0
        source = ReplaySource(master, irf, unit)
        engine = PixelEstimator(cfg.build_library(), irf,
                                cfg.build_quadrature(), cfg.ncd_window)
        reference = ReferenceMaps.from_cube(master, engine, unit)
        return source, reference
    scene = cfg.build_scene()
    source = SimulatorSource(scene, irf)
    return source, ReferenceMaps.from_scene(scene)


def cmd_run(args) -> int:
    cfg = RunConfig.from_file(args.config)
    outdir = args.output or cfg.output_dir
    os.makedirs(outdir, exist_ok=True)
    cfg.save(os.path.join(outdir, "effective_config.yaml"))
    source, reference = _make_source(cfg)
    library = cfg.build_library()
    parallelism = _parallelism()
    if args.strategy == "adaptive":
        plans: list = []
        result = run_adaptive(
            source, library, cfg.build_scenario(), cfg.build_criteria(),
            seed=cfg.seed, reference=reference,
            quadrature=cfg.build_quadrature(),
            target_classes=cfg.target_classes, ncd_window=cfg.ncd_window,
            exploration_floor=cfg.exploration_floor,
            inpaint_max_window=cfg.inpaint_max_window,
            processing_time_per_pixel=cfg.processing_time_per_pixel,
            roi_build_time=cfg.roi_build_time, parallelism=parallelism,
            snapshot_dir=os.path.join(outdir, "snapshots")
            if cfg.snapshots else None,
            plan_log=plans)
        trace, depth, labels = result.trace, result.depth, result.labels
        plan_path = os.path.join(outdir, "plans.txt")
        for i, plan in enumerate(plans):
            save_plan_text(plan, source.shape, plan_path, append=i > 0)
    else:
        ratio = args.ratio if args.ratio is not None else cfg.static_ratio
        levels = cfg.static_dwell_levels or \
            list(cfg.build_scenario().base_time * 2.0 ** np.arange(8))
        result = run_static(
            source, library, args.strategy, ratio, levels,
            seed=cfg.seed, reference=reference,
            quadrature=cfg.build_quadrature(),
            classify_pixels=cfg.classify_static,
            inpaint_max_window=cfg.inpaint_max_window,
            mirror_move=cfg.build_scenario().mirror_move,
            processing_time_per_pixel=cfg.processing_time_per_pixel,
            parallelism=parallelism)
        trace, depth = result.trace, result.depth
        labels = result.labels if result.labels is not None \
            else np.zeros(source.shape, dtype=np.int64)
    trace.to_csv(os.path.join(outdir, "trace.csv"))
    if trace.confusion is not None:
        save_confusion_csv(trace.confusion, os.path.join(outdir, "confusion.csv"))
    save_text_matrix(depth, os.path.join(outdir, "depth.txt"))
    save_text_matrix(labels, os.path.join(outdir, "labels.txt"))
    save_pgm16(depth, os.path.join(outdir, "depth.pgm"))
    save_pgm16(np.asarray(labels, dtype=float), os.path.join(outdir, "labels.pgm"))
    print(f"strategy={args.strategy} stop={trace.stop_reason} "
          f"rows={len(trace.rows)} -> {outdir}")
    if args.strategy == "adaptive" and not trace.converged:
        return EXIT_BUDGET
    return EXIT_OK


def cmd_classify(args) -> int:
    cfg = RunConfig.from_file(args.config)
    cube = HistogramCube.load(args.cube)
    library = cfg.build_library()
    irf = cfg.build_irf()
    if cube.n_wavelengths != library.n_wavelengths:
        raise ConfigError(
            f"cube has {cube.n_wavelengths} wavelengths, library has "
            f"{library.n_wavelengths}")
    if cube.n_bins != irf.n_bins:
        raise ConfigError(f"cube has {cube.n_bins} bins, IRF has {irf.n_bins}")
    engine = PixelEstimator(library, irf, cfg.build_quadrature(),
                            cfg.ncd_window)
    unit_time = cfg.scene_phantom.unit_time if cfg.scene_phantom else 1.0
    rows, cols = cube.shape
    k = library.n_classes
    with open(args.output, "w") as f:
        header = ",".join(f"p_class{i}" for i in range(k + 1))
        f.write(f"row,col,status,label,depth,uncertainty,{header}\n")
        for r in range(rows):
            for c in range(cols):
                if cube.dwell[r, c] <= 0:
                    f.write(f"{r},{c},no_data,,,," + "," * k + "\n")
                    continue
                est = engine.estimate(cube.counts[r, c],
                                      cube.dwell[r, c] / unit_time)
                post = ",".join(repr(float(p)) for p in est.class_posterior)
                f.write(f"{r},{c},ok,{est.label},{est.depth},"
                        f"{est.depth_uncertainty!r},{post}\n")
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = RunConfig.from_file(args.config)
    if not cfg.sweep_sbr or not cfg.sweep_photons:
        raise ConfigError("sweep needs sweep.sbr and sweep.photons lists")
    base_scene = cfg.build_scene()
    irf = cfg.build_irf()
    library = cfg.build_library()
    engine = PixelEstimator(library, irf, cfg.build_quadrature(),
                            cfg.ncd_window)
    with open(args.output, "w") as f:
        f.write("sbr,photons,rmse_bins,rmse_m,acc\n")
        for sbr in cfg.sweep_sbr:
            for photons in cfg.sweep_photons:
                scene = scale_scene(base_scene, photons, sbr)
                reference = ReferenceMaps.from_scene(scene)
                cube = full_scan_cube(scene, irf, scene.unit_time, cfg.seed)
                rows, cols = scene.shape
                depth = np.zeros((rows, cols))
                labels = np.zeros((rows, cols), dtype=np.int64)
                for r in range(rows):
                    for c in range(cols):
                        est = engine.estimate(cube.counts[r, c])
                        depth[r, c] = est.depth
                        labels[r, c] = est.label
                m = metrics(depth, labels, reference, irf.bin_width,
                            library.n_classes)
                f.write(f"{sbr!r},{photons!r},{m.rmse_bins!r},"
                        f"{m.rmse_m!r},{m.accuracy!r}\n")
                print(f"sbr={sbr} photons={photons} "
                      f"rmse={m.rmse_bins:.3f} acc={m.accuracy:.3f}")
    print(f"wrote {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splidar",
        description="Adaptive-sampling single-photon LiDAR experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a full-dwell histogram cube")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--dwell", type=float, default=None,
                   help="per-pixel dwell (default: stop.max_dwell)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="run one sampling experiment")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("-o", "--output", default=None,
                   help="output directory (default: config output_dir)")
    p.add_argument("--strategy", default="adaptive",
                   choices=["adaptive", "uniform", "random"])
    p.add_argument("--ratio", type=float, default=None,
                   help="pixel ratio for static strategies")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("classify", help="per-pixel inference on a cube file")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--cube", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("sweep", help="classification quality over an "
                                     "SBR x photon grid")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
