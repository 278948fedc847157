"""Detection scoring, threshold sweeps, and compute benchmarking.

Scores are standard binary-classification quantities over tiles; Matthews
correlation is the headline metric because event tiles are rare.  The
benchmark harness times whole-granule detection and reports the projected
cost of running the same workload on physical nanowire hardware.
"""

from __future__ import annotations

import math
import resource
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import _jsonio
from .pipeline import EventMap, detect_granule


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def validate(self) -> None:
        for name in ("tp", "tn", "fp", "fn"):
            if getattr(self, name) < 0:
                raise ValueError("%s must be non-negative" % name)

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self) -> dict:
        return {"tp": int(self.tp), "tn": int(self.tn),
                "fp": int(self.fp), "fn": int(self.fn)}


def _as_bool_grid(obj) -> np.ndarray:
    if isinstance(obj, EventMap):
        return obj.predicted
    if hasattr(obj, "grid"):
        return np.asarray(obj.grid, dtype=bool)
    return np.asarray(obj, dtype=bool)


def confusion(predicted, labels) -> ConfusionMatrix:
    """Cellwise counts; accepts EventMap/LabelMask or plain boolean arrays."""
    pred = _as_bool_grid(predicted)
    lab = _as_bool_grid(labels)
    if pred.shape != lab.shape:
        raise ValueError("prediction grid %s does not match label grid %s"
                         % (pred.shape, lab.shape))
    return ConfusionMatrix(
        tp=int(np.count_nonzero(pred & lab)),
        tn=int(np.count_nonzero(~pred & ~lab)),
        fp=int(np.count_nonzero(pred & ~lab)),
        fn=int(np.count_nonzero(~pred & lab)))


def mcc(c: ConfusionMatrix) -> float:
    """Matthews correlation; 0 when any denominator factor vanishes."""
    c.validate()
    tp, tn, fp, fn = float(c.tp), float(c.tn), float(c.fp), float(c.fn)
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if den == 0.0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(den)


def precision(c: ConfusionMatrix) -> float:
    """tp / (tp + fp); NaN when no positives were predicted."""
    c.validate()
    if c.tp + c.fp == 0:
        return math.nan
    return c.tp / (c.tp + c.fp)


def recall(c: ConfusionMatrix) -> float:
    """tp / (tp + fn); NaN when no positive labels exist."""
    c.validate()
    if c.tp + c.fn == 0:
        return math.nan
    return c.tp / (c.tp + c.fn)


@dataclass
class SweepResult:
    thresholds: np.ndarray
    mcc: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray
    argmax_mcc_threshold: float

    def to_doc(self) -> dict:
        def col(a):
            return [None if (isinstance(v, float) and math.isnan(v))
                    else float(v) for v in a]

        return {
            "thresholds": [float(t) for t in self.thresholds],
            "mcc": [float(v) for v in self.mcc],
            "precision": col(self.precision),
            "recall": col(self.recall),
            "tp": [int(v) for v in self.tp],
            "fp": [int(v) for v in self.fp],
            "fn": [int(v) for v in self.fn],
            "tn": [int(v) for v in self.tn],
            "argmax_mcc_threshold": float(self.argmax_mcc_threshold),
        }

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("threshold,tp,fp,fn,tn,mcc,precision,recall\n")
            for i in range(len(self.thresholds)):
                fh.write("%.17g,%d,%d,%d,%d,%.17g,%.17g,%.17g\n"
                         % (self.thresholds[i], self.tp[i], self.fp[i],
                            self.fn[i], self.tn[i], self.mcc[i],
                            self.precision[i], self.recall[i]))


def sweep(distances, labels, grid) -> SweepResult:
    """Score every threshold in an ascending grid; strict ">" classification.

    Ties in the Matthews score resolve toward the smaller threshold.
    """
    d = np.asarray(distances, dtype=np.float64).reshape(-1)
    lab = _as_bool_grid(labels).reshape(-1)
    if d.shape != lab.shape:
        raise ValueError("distances and labels differ in length")
    grid = np.asarray(grid, dtype=np.float64).reshape(-1)
    if len(grid) == 0:
        raise ValueError("threshold grid is empty")
    if np.any(np.diff(grid) < 0):
        raise ValueError("threshold grid must be sorted ascending")
    n = len(grid)
    cols = {k: np.zeros(n) for k in ("mcc", "precision", "recall")}
    counts = {k: np.zeros(n, dtype=np.int64) for k in ("tp", "fp", "fn",
                                                       "tn")}
    for i, t in enumerate(grid):
        c = confusion(d > t, lab)
        counts["tp"][i] = c.tp
        counts["fp"][i] = c.fp
        counts["fn"][i] = c.fn
        counts["tn"][i] = c.tn
        cols["mcc"][i] = mcc(c)
        cols["precision"][i] = precision(c)
        cols["recall"][i] = recall(c)
    best = int(np.argmax(cols["mcc"]))  # first max = smallest threshold
    return SweepResult(thresholds=grid, mcc=cols["mcc"],
                       precision=cols["precision"], recall=cols["recall"],
                       tp=counts["tp"], fp=counts["fp"], fn=counts["fn"],
                       tn=counts["tn"],
                       argmax_mcc_threshold=float(grid[best]))


def default_sweep_grid(distances, size: int = 200) -> np.ndarray:
    """Evenly spaced thresholds from 0 to the 99.9th percentile."""
    d = np.asarray(distances, dtype=np.float64).reshape(-1)
    if len(d) == 0:
        raise ValueError("no distances to build a grid from")
    hi = float(np.percentile(d, 99.9))
    if hi <= 0:
        hi = max(float(d.max()), 1e-12)
    return np.linspace(0.0, hi, size)


@dataclass(frozen=True)
class HardwareProjection:
    """Physical-device cost model: per-tile device time and average power.

    The per-tile default comes from the published hardware decomposition of
    the full-granule figure (0.129 s over 90 tiles) rather than from
    steps_per_tile x dt, which rounds to 1.4 ms.
    """

    simulated_seconds_per_tile: float = 1.4333e-3
    tiles_per_granule: int = 90
    device_power: float = 25e-6

    def validate(self) -> None:
        if not (self.simulated_seconds_per_tile > 0):
            raise ValueError("simulated_seconds_per_tile must be positive")
        if self.tiles_per_granule < 0:
            raise ValueError("tiles_per_granule must be non-negative")
        if not (self.device_power > 0):
            raise ValueError("device_power must be positive")


def project_hardware(p: HardwareProjection) -> tuple:
    """(seconds per granule, joules per granule) on physical hardware."""
    p.validate()
    seconds = p.simulated_seconds_per_tile * p.tiles_per_granule
    return seconds, seconds * p.device_power


def peak_rss_bytes() -> int:
    """Peak resident set of this process since launch."""
    rss = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    # Linux reports KiB; macOS reports bytes
    return rss if sys.platform == "darwin" else rss * 1024


@dataclass
class BenchReport:
    granule_times: list          # seconds, [run][granule]
    run_means: list              # seconds, one per run
    mean_seconds: float
    sem_seconds: float
    peak_rss_bytes: int
    projected_seconds: float
    projected_joules: float

    @property
    def peak_rss_gibibits(self) -> float:
        return self.peak_rss_bytes * 8 / 2 ** 30

    def to_doc(self) -> dict:
        return {
            "granule_times": [[float(t) for t in run]
                              for run in self.granule_times],
            "run_means": [float(t) for t in self.run_means],
            "mean_seconds": float(self.mean_seconds),
            "sem_seconds": float(self.sem_seconds),
            "peak_rss_bytes": int(self.peak_rss_bytes),
            "peak_rss_gibibits": float(self.peak_rss_gibibits),
            "projected_seconds": float(self.projected_seconds),
            "projected_joules": float(self.projected_joules),
        }


def benchmark(granules, graph, dyn_params, config, runs: int,
              workers: int = 1,
              projection: HardwareProjection | None = None) -> BenchReport:
    """Time whole-granule detection, serially, ``runs`` times over.

    Reports mean +/- standard error over the per-run means along with peak
    resident memory and the hardware projection.
    """
    if runs < 2:
        raise ValueError("need at least 2 runs for a standard error")
    granules = list(granules)
    if not granules:
        raise ValueError("no granules to benchmark")
    times = []
    for _ in range(runs):
        row = []
        for granule in granules:
            t0 = time.perf_counter()
            detect_granule(granule, graph, dyn_params, config,
                           workers=workers, keep_features=False)
            row.append(time.perf_counter() - t0)
        times.append(row)
    run_means = [sum(row) / len(row) for row in times]
    mean = sum(run_means) / runs
    var = sum((t - mean) ** 2 for t in run_means) / (runs - 1)
    sem = math.sqrt(var / runs)
    if projection is None:
        projection = HardwareProjection()
    seconds, joules = project_hardware(projection)
    return BenchReport(granule_times=times, run_means=run_means,
                       mean_seconds=mean, sem_seconds=sem,
                       peak_rss_bytes=peak_rss_bytes(),
                       projected_seconds=seconds, projected_joules=joules)


@dataclass
class EvalReport:
    """Scores for one EventMap/LabelMask pairing (or a pooled set)."""

    confusion: ConfusionMatrix
    mcc: float
    precision: float
    precision_defined: bool
    recall: float
    recall_defined: bool
    sweep: SweepResult | None = None
    bench: BenchReport | None = None

    @classmethod
    def from_counts(cls, c: ConfusionMatrix, sweep_result=None,
                    bench=None) -> "EvalReport":
        p = precision(c)
        r = recall(c)
        return cls(confusion=c, mcc=mcc(c),
                   precision=p, precision_defined=not math.isnan(p),
                   recall=r, recall_defined=not math.isnan(r),
                   sweep=sweep_result, bench=bench)

    def to_doc(self) -> dict:
        doc = {
            "confusion": self.confusion.to_dict(),
            "mcc": float(self.mcc),
            "precision": (None if not self.precision_defined
                          else float(self.precision)),
            "precision_defined": self.precision_defined,
            "recall": (None if not self.recall_defined
                       else float(self.recall)),
            "recall_defined": self.recall_defined,
        }
        if self.sweep is not None:
            doc["sweep"] = self.sweep.to_doc()
        if self.bench is not None:
            doc["bench"] = self.bench.to_doc()
        return doc

    def save(self, path) -> None:
        _jsonio.write_canonical(path, self.to_doc())
