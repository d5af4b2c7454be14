"""Streaming parallel-beam tomography with windowed SIRT reconstruction.

The package simulates a spinning-sample scan, frames each projection onto
a binary wire protocol, partitions detector rows across workers, and keeps
a per-slice tomogram fresh by running a few warm-started SIRT iterations
over each window of newly arrived projections.  Updates flow through an
optional denoising stage and are scored against a fully converged
reference; the CLI and a small HTTP service drive it all.
"""

from .distributor import (FrameProtocolError, FrameRouter, FrameStreamReader,
                          FrameStreamWriter, FrameTruncatedError,
                          RowPartition, decode_frame, encode_frame,
                          partition_rows, route_frame)
from .engine import NotReadyError, ReconWorker, RoutingError, UpdateEvent
from .enhance import (DenoiseClient, DenoiserBinding, DenoiseProtocolError,
                      EnhancementError, enhance)
from .geometry import (AcquisitionGeometry, ProjectionFrame, SinogramWindow,
                       Tomogram, WindowFullError, interleaved_schedule,
                       make_schedule, make_support_mask)
from .metrics import (MetricsCollector, QualityRecord, ThroughputRecord,
                      load_slice_image, make_ground_truth, read_quality_csv,
                      save_slice_image, ssim)
from .phantoms import PHANTOM_KINDS, PhantomSpec, make_phantom, \
    make_phantom_stack
from .pipeline import (RunConfig, RunResult, load_config_file,
                       make_run_config, run_detector, run_grid, run_pipeline,
                       run_processor)
from .projector import (SirtConfig, back_project, beer_normalize,
                        compute_scales, forward_project, sirt_update)
from .simulate import (EmissionError, EmissionReport, NoiseModel,
                       simulate_scan, stream_emit)

__version__ = "0.1.0"

__all__ = [
    "AcquisitionGeometry", "DenoiseClient", "DenoiserBinding",
    "DenoiseProtocolError", "EmissionError", "EmissionReport",
    "EnhancementError", "FrameProtocolError", "FrameRouter",
    "FrameStreamReader", "FrameStreamWriter", "FrameTruncatedError",
    "MetricsCollector", "NoiseModel", "NotReadyError", "PHANTOM_KINDS",
    "PhantomSpec", "ProjectionFrame", "QualityRecord", "ReconWorker",
    "RoutingError", "RowPartition", "RunConfig", "RunResult", "SinogramWindow",
    "SirtConfig", "ThroughputRecord", "Tomogram", "UpdateEvent",
    "WindowFullError", "back_project", "beer_normalize", "compute_scales",
    "decode_frame", "encode_frame", "enhance", "forward_project",
    "interleaved_schedule", "load_config_file", "load_slice_image",
    "make_ground_truth", "make_phantom", "make_phantom_stack",
    "make_run_config", "make_schedule", "make_support_mask", "partition_rows",
    "read_quality_csv", "route_frame", "run_detector", "run_grid",
    "run_pipeline", "run_processor", "save_slice_image", "simulate_scan",
    "sirt_update", "ssim", "stream_emit",
]
