"""Granule-level detection: normalize, tile, pool, extract, threshold.

A granule carries two spectral bands.  Both are normalized to [-0.4, 0.8],
cut into non-overlapping tiles, and max-pooled down to the input-electrode
grid.  Each band's pooled tile drives the same nanowire device; the pooled
values concatenated with the readout voltages form that band's feature
vector.  The per-tile score is the spanning-norm distance between the two
band features, and a tile is flagged as an event when the score exceeds the
configured threshold (strictly).

Thermal anomalies elevate the short-wave infrared band far more than the
near-infrared band, so they show up as large inter-band feature distances,
while calibration offsets common to a whole band cancel out of the spanning
norm.
"""

from __future__ import annotations

import multiprocessing
from dataclasses import dataclass, field

import numpy as np

from . import _jsonio
from .dynamics import (RESET_PER_TILE, DynParams, KirchhoffSolver,
                       initial_state, run_tile, solver_for)
from .netgen import DeviceGraph

BAND_NIR = "B8A"
BAND_SWIR = "B12"

POLICY_DROP = "drop"
POLICY_PAD_REFLECT = "pad-reflect"

EVENT_MAP_FILE_VERSION = 1


@dataclass(frozen=True)
class BandConfig:
    band_id: str
    norm_max: float

    def validate(self) -> None:
        if self.band_id not in (BAND_NIR, BAND_SWIR):
            raise ValueError("unknown band id %r" % (self.band_id,))
        if not (self.norm_max > 0):
            raise ValueError("norm_max must be positive")

    def to_dict(self) -> dict:
        return {"band_id": self.band_id, "norm_max": float(self.norm_max)}

    @classmethod
    def from_dict(cls, doc: dict) -> "BandConfig":
        cfg = cls(band_id=doc["band_id"], norm_max=doc["norm_max"])
        cfg.validate()
        return cfg


def _default_bands() -> tuple:
    return (BandConfig(BAND_NIR, 3000.0), BandConfig(BAND_SWIR, 3000.0))


@dataclass(frozen=True)
class PipelineConfig:
    """Tiling, pooling, and thresholding settings for detection."""

    tile_size: int = 128
    pool_size: int = 16
    pool_stride: int = 16
    threshold: float = 1.68
    band_configs: tuple = field(default_factory=_default_bands)
    partial_tile_policy: str = POLICY_DROP

    def validate(self) -> None:
        if self.tile_size < 1 or self.pool_size < 1 or self.pool_stride < 1:
            raise ValueError("tile/pool dimensions must be positive")
        if self.tile_size % self.pool_stride != 0:
            raise ValueError("tile_size must be divisible by pool_stride")
        if self.pool_size > self.tile_size:
            raise ValueError("pool_size cannot exceed tile_size")
        if (self.tile_size - self.pool_size) % self.pool_stride != 0:
            raise ValueError("pool windows must cover the tile exactly")
        if not (self.threshold >= 0):
            raise ValueError("threshold must be non-negative")
        if self.partial_tile_policy not in (POLICY_DROP, POLICY_PAD_REFLECT):
            raise ValueError("partial_tile_policy must be %r or %r"
                             % (POLICY_DROP, POLICY_PAD_REFLECT))
        if len(self.band_configs) != 2:
            raise ValueError("exactly two band configs required")
        ids = [b.band_id for b in self.band_configs]
        if sorted(ids) != sorted([BAND_NIR, BAND_SWIR]):
            raise ValueError("band configs must cover %s and %s"
                             % (BAND_NIR, BAND_SWIR))
        for b in self.band_configs:
            b.validate()

    @property
    def pooled_dim(self) -> int:
        return (self.tile_size - self.pool_size) // self.pool_stride + 1

    def band(self, band_id: str) -> BandConfig:
        for b in self.band_configs:
            if b.band_id == band_id:
                return b
        raise KeyError(band_id)

    @classmethod
    def for_level(cls, level: str, **overrides) -> "PipelineConfig":
        """Defaults for the two product levels this pipeline targets."""
        if level == "raw":
            base = dict(threshold=1.68,
                        band_configs=(BandConfig(BAND_NIR, 3000.0),
                                      BandConfig(BAND_SWIR, 3000.0)))
        elif level == "l1c":
            base = dict(threshold=0.92,
                        band_configs=(BandConfig(BAND_NIR, 4.0),
                                      BandConfig(BAND_SWIR, 2.0)))
        else:
            raise ValueError("level must be 'raw' or 'l1c'")
        base.update(overrides)
        cfg = cls(**base)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {
            "tile_size": int(self.tile_size),
            "pool_size": int(self.pool_size),
            "pool_stride": int(self.pool_stride),
            "threshold": float(self.threshold),
            "band_configs": [b.to_dict() for b in self.band_configs],
            "partial_tile_policy": self.partial_tile_policy,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        doc = dict(doc)
        if "band_configs" in doc:
            doc["band_configs"] = tuple(BandConfig.from_dict(b)
                                        for b in doc["band_configs"])
        cfg = cls(**doc)
        cfg.validate()
        return cfg


def normalize_band(pixels: np.ndarray, norm_max: float) -> np.ndarray:
    """Affine map of [0, norm_max] onto [-0.4, 0.8], clipping above/below.

    Written with the integer ratios 6/5 and 2/5 so both endpoints land on
    exact binary values (0 -> -0.4, norm_max -> 0.8).
    """
    if not (norm_max > 0):
        raise ValueError("norm_max must be positive")
    x = np.clip(np.asarray(pixels, dtype=np.float64), 0.0, norm_max)
    return (6.0 * (x / norm_max) - 2.0) / 5.0


def tile_granule(band: np.ndarray, config: PipelineConfig) -> list:
    """Cut a 2D band into (row, col, tile) triples, row-major.

    Trailing partial rows/columns are dropped or reflect-padded to full
    tiles according to the configured policy.
    """
    band = np.asarray(band)
    if band.ndim != 2:
        raise ValueError("band must be a 2D array")
    ts = config.tile_size
    h, w = band.shape
    if h < ts or w < ts:
        raise ValueError("band %dx%d is smaller than one %dx%d tile"
                         % (h, w, ts, ts))
    if config.partial_tile_policy == POLICY_PAD_REFLECT:
        ph = (-h) % ts
        pw = (-w) % ts
        if ph or pw:
            band = np.pad(band, ((0, ph), (0, pw)), mode="reflect")
            h, w = band.shape
    rows, cols = h // ts, w // ts
    out = []
    for r in range(rows):
        for c in range(cols):
            out.append((r, c, band[r * ts:(r + 1) * ts, c * ts:(c + 1) * ts]))
    return out


def max_pool(patch: np.ndarray, pool_size: int = 16,
             pool_stride: int = 16) -> np.ndarray:
    """Window-max downsampling; stride equal to size gives disjoint windows."""
    patch = np.asarray(patch)
    if patch.ndim != 2:
        raise ValueError("patch must be a 2D array")
    h, w = patch.shape
    for dim in (h, w):
        if dim < pool_size or (dim - pool_size) % pool_stride != 0:
            raise ValueError("pool windows of size %d stride %d do not tile "
                             "a %dx%d patch" % (pool_size, pool_stride, h, w))
    if pool_size == pool_stride:
        r, c = h // pool_size, w // pool_size
        return patch.reshape(r, pool_size, c, pool_size).max(axis=(1, 3))
    view = np.lib.stride_tricks.sliding_window_view(
        patch, (pool_size, pool_size))[::pool_stride, ::pool_stride]
    return view.max(axis=(2, 3))


def extract_features(graph: DeviceGraph, pooled: np.ndarray,
                     dyn_params: DynParams,
                     solver: KirchhoffSolver | None = None) -> np.ndarray:
    """Pooled drives concatenated with the device readout they produce."""
    pooled = np.asarray(pooled, dtype=np.float64).reshape(-1)
    readout, _ = run_tile(graph, pooled, dyn_params, solver=solver)
    return np.concatenate([pooled, readout])


def span_norm(x: np.ndarray, y: np.ndarray) -> float:
    """Range of the elementwise difference: max(x-y) - min(x-y)."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError("length mismatch: %d vs %d" % (len(x), len(y)))
    if len(x) == 0:
        raise ValueError("span_norm of empty vectors is undefined")
    d = x - y
    return float(d.max() - d.min())


@dataclass
class TileFeature:
    tile_row: int
    tile_col: int
    pooled: dict
    feature: dict
    distance: float
    predicted: bool


@dataclass
class EventMap:
    """Per-tile detection grid for one granule."""

    granule_id: str
    threshold: float
    distances: np.ndarray
    predicted: np.ndarray
    config: dict

    @property
    def tile_rows(self) -> int:
        return self.distances.shape[0]

    @property
    def tile_cols(self) -> int:
        return self.distances.shape[1]

    def to_doc(self) -> dict:
        tiles = []
        for r in range(self.tile_rows):
            for c in range(self.tile_cols):
                tiles.append({"row": r, "col": c,
                              "distance": float(self.distances[r, c]),
                              "predicted": bool(self.predicted[r, c])})
        return {
            "format": "nwndetect-eventmap",
            "version": EVENT_MAP_FILE_VERSION,
            "granule_id": self.granule_id,
            "threshold": float(self.threshold),
            "tile_rows": self.tile_rows,
            "tile_cols": self.tile_cols,
            "config": self.config,
            "tiles": tiles,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "EventMap":
        rows, cols = int(doc["tile_rows"]), int(doc["tile_cols"])
        distances = np.zeros((rows, cols))
        predicted = np.zeros((rows, cols), dtype=bool)
        for t in doc["tiles"]:
            distances[t["row"], t["col"]] = t["distance"]
            predicted[t["row"], t["col"]] = t["predicted"]
        return cls(granule_id=doc["granule_id"], threshold=doc["threshold"],
                   distances=distances, predicted=predicted,
                   config=doc.get("config", {}))

    def save(self, path) -> None:
        _jsonio.write_canonical(path, self.to_doc())

    @classmethod
    def load(cls, path) -> "EventMap":
        return cls.from_doc(_jsonio.read_json(path))

    def save_distances(self, path) -> None:
        """Flat little-endian float64 matrix, row-major, for plotting."""
        self.distances.astype("<f8").tofile(path)


_worker_graph = None
_worker_params = None
_worker_solver = None


def _worker_init(graph, dyn_params):
    global _worker_graph, _worker_params, _worker_solver
    _worker_graph = graph
    _worker_params = dyn_params
    _worker_solver = solver_for(graph, dyn_params.g_off)


def _worker_tile(task):
    r, c, pooled_a, pooled_b = task
    fa = extract_features(_worker_graph, pooled_a, _worker_params,
                          solver=_worker_solver)
    fb = extract_features(_worker_graph, pooled_b, _worker_params,
                          solver=_worker_solver)
    return r, c, fa, fb


def detect_granule(granule, graph: DeviceGraph, dyn_params: DynParams,
                   config: PipelineConfig, workers: int = 1,
                   keep_features: bool = True) -> tuple:
    """Run the full detection flow on one two-band granule.

    Returns (EventMap, list of TileFeature).  With ``workers > 1`` tiles are
    fanned out to a process pool; per-tile reset makes every tile's result
    independent of processing order, so the output is byte-identical for any
    worker count.
    """
    config.validate()
    dyn_params.validate()
    if workers < 1:
        raise ValueError("workers must be at least 1")
    if dyn_params.reset_policy != RESET_PER_TILE and workers != 1:
        raise ValueError("persistent junction state requires workers=1")
    band_a, band_b = config.band_configs
    for b in (band_a, band_b):
        if b.band_id not in granule.bands:
            raise ValueError("granule %r is missing band %s"
                             % (granule.id, b.band_id))
    pd = config.pooled_dim
    n_inputs = len(graph.input_node_ids)
    if pd * pd != n_inputs:
        raise ValueError("pooled grid %dx%d does not match %d input "
                         "electrodes" % (pd, pd, n_inputs))

    norm_a = normalize_band(granule.bands[band_a.band_id], band_a.norm_max)
    norm_b = normalize_band(granule.bands[band_b.band_id], band_b.norm_max)
    tiles_a = tile_granule(norm_a, config)
    tiles_b = tile_granule(norm_b, config)
    rows = max(t[0] for t in tiles_a) + 1
    cols = max(t[1] for t in tiles_a) + 1

    tasks = []
    for (r, c, ta), (_, _, tb) in zip(tiles_a, tiles_b):
        pa = max_pool(ta, config.pool_size, config.pool_stride)
        pb = max_pool(tb, config.pool_size, config.pool_stride)
        tasks.append((r, c, pa, pb))

    results = []
    if dyn_params.reset_policy != RESET_PER_TILE:
        # carry one state per band across tiles, row-major
        solver = solver_for(graph, dyn_params.g_off)
        state_a = initial_state(graph)
        state_b = initial_state(graph)
        for r, c, pa, pb in tasks:
            ra, state_a = run_tile(graph, pa.reshape(-1), dyn_params,
                                   state_in=state_a, solver=solver)
            rb, state_b = run_tile(graph, pb.reshape(-1), dyn_params,
                                   state_in=state_b, solver=solver)
            fa = np.concatenate([pa.reshape(-1), ra])
            fb = np.concatenate([pb.reshape(-1), rb])
            results.append((r, c, fa, fb))
    elif workers == 1 or len(tasks) <= 1:
        _worker_init(graph, dyn_params)
        results = [_worker_tile(t) for t in tasks]
    else:
        ctx = multiprocessing.get_context("fork")
        nproc = min(workers, len(tasks))
        with ctx.Pool(nproc, initializer=_worker_init,
                      initargs=(graph, dyn_params)) as pool:
            results = pool.map(_worker_tile, tasks, chunksize=1)

    distances = np.zeros((rows, cols))
    predicted = np.zeros((rows, cols), dtype=bool)
    features = []
    pooled_by_rc = {(r, c): (pa, pb) for r, c, pa, pb in tasks}
    for r, c, fa, fb in results:
        d = span_norm(fa, fb)
        hit = d > config.threshold
        distances[r, c] = d
        predicted[r, c] = hit
        if keep_features:
            pa, pb = pooled_by_rc[(r, c)]
            features.append(TileFeature(
                tile_row=r, tile_col=c,
                pooled={band_a.band_id: pa, band_b.band_id: pb},
                feature={band_a.band_id: fa, band_b.band_id: fb},
                distance=d, predicted=bool(hit)))

    event_map = EventMap(granule_id=granule.id, threshold=config.threshold,
                         distances=distances, predicted=predicted,
                         config=config.to_dict())
    return event_map, features
