"""Synthetic binocular gaze-estimation workbench.

Five layers, each usable on its own:

    scene        screen/camera/eyeball geometry, cohort generation
    raster       rasterization of scene samples to grayscale frames, PGM io
    preprocess   roll normalization, corner crop, fixed-canvas padding
    estimator    small from-scratch conv/dense regressor with momentum SGD
    protocol     angular error metric, LOO and calibration evaluation cases

`pipeline` ties them into datasets on disk and case runs; `cli` exposes
the generate/run/report/import commands.
"""

from .config import (WorkbenchConfig, StageHyper, default_config,
                     micro_config, load_config, save_config)
from .errors import (WorkbenchError, ValidationError, ConfigError, UsageError,
                     GeometryError, ProjectionError, RenderError,
                     PreprocessError, DegenerateInputError, OversizeError,
                     NumericError, TrainingDivergedError, WeightsError,
                     DatasetError, LockError, ProtocolError)
from .estimator import (ArchSpec, GazeRegressor, Hyperparams, build_model,
                        train, grad_check, save_weights, load_weights)
from .pipeline import (Dataset, build_dataset, save_dataset, load_dataset,
                       features_and_targets, run_case, run_cases,
                       generate_datasets, import_dataset, export_annotations)
# the preprocess() entry point stays in its module: re-exporting it here
# would shadow the `gazebench.preprocess` submodule attribute
from .preprocess import AffineTransform2D, ProcessedSample
from .protocol import (angular_error, summarize, distribution_export,
                       leave_one_out, calibration_split, case_spec,
                       compare_cases, compare_reports, CaseReport, RunSummary)
from .raster import Palette, render_sample, save_pgm, load_pgm, load_image
from .scene import (ScreenConfig, CameraModel, EyeballParams, HeadPose,
                    SceneProfile, default_profile, generate_cohort)

__version__ = "0.1.0"
