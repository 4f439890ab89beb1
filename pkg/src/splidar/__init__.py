"""Adaptive-sampling simulator and Bayesian inference toolkit for
multispectral single-photon LiDAR."""

from .scene import (CUBE_MAGIC, Disk, GroundTruthScene, HistogramCube, Irf,
                    PhantomSpec, Rect, SpectralLibrary, build_phantom,
                    load_irf, make_gaussian_irf, sbr_of, scale_scene)
from .simulate import (ShotRequest, execute_plan, expected_histogram,
                       expected_rate, full_scan_cube, simulate_shot)
from .inference import (Hyperparameters, NoData, PixelEstimate,
                        PixelEstimator, QuadratureSpec, decide_class,
                        matched_filter_log_scores)
from .reconstruct import (RoiMap, ScanComplete, SparseField, build_roi,
                          inpaint, inpaint_labels, save_pgm16,
                          save_text_matrix)
from .sampling import (InsufficientSupport, Placement, SamplerState,
                       ScanPlan, ScanScenario, StopCriteria, adapt_time_step,
                       assign_dwell, check_stop, depth_rmse, elapsed_time,
                       mh_chain, mh_sample_locations, pixel_placements,
                       place_arrays, save_plan_text)
from .harness import (AdaptiveResult, ExperimentTrace, Metrics,
                      ReferenceMaps, ReplaySource, SimulatorSource,
                      StaticResult, TraceRow, metrics, run_adaptive,
                      run_static, static_pixels, xcorr_depth)
from .config import ConfigError, RunConfig

__version__ = "0.1.0"
