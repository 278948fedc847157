"""Nanowire-network thermal anomaly detection toolkit.

Simulates memristive nanowire devices as training-free feature extractors
and uses them to flag thermal anomalies in two-band satellite imagery.
"""

from .dataio import (DataFormatError, DatasetManifest, Granule, LabelMask,
                     SynthParams, load_granule, load_labels, load_manifest,
                     save_granule, synth_dataset, synth_granule, write_labels)
from .dynamics import (DynParams, KirchhoffSolver, SingularNetworkError,
                       conductance, initial_state, run_tile, solve_network,
                       step_state)
from .estimator import NanowireFeatureExtractor, ThermalEventDetector
from .metrics import (BenchReport, ConfusionMatrix, EvalReport,
                      HardwareProjection, SweepResult, benchmark, confusion,
                      mcc, precision, project_hardware, recall, sweep)
from .netgen import DeviceGraph, GenParams, generate_device
from .pipeline import (BandConfig, EventMap, PipelineConfig, TileFeature,
                       detect_granule, extract_features, max_pool,
                       normalize_band, span_norm, tile_granule)

__version__ = "0.1.0"

__all__ = [
    "BandConfig", "BenchReport", "ConfusionMatrix", "DataFormatError",
    "DatasetManifest", "DeviceGraph", "DynParams", "EvalReport", "EventMap",
    "GenParams", "Granule", "HardwareProjection", "KirchhoffSolver",
    "LabelMask", "NanowireFeatureExtractor", "PipelineConfig",
    "SingularNetworkError", "SweepResult", "SynthParams",
    "ThermalEventDetector", "TileFeature", "benchmark", "conductance",
    "confusion", "detect_granule", "extract_features", "generate_device",
    "initial_state", "load_granule", "load_labels", "load_manifest",
    "max_pool", "mcc", "normalize_band", "precision", "project_hardware",
    "recall", "run_tile", "save_granule", "solve_network", "span_norm",
    "step_state", "sweep", "synth_dataset", "synth_granule", "tile_granule",
    "write_labels",
]
