"""Granule and label file formats plus labelled synthetic scene generation.

A granule on disk is a JSON header next to a flat binary blob of
little-endian 32-bit floats (`<name>.granule.json` / `<name>.granule.bin`).
Labels are per-tile boolean grids in JSON; a manifest ties granule/label
pairs into a dataset.  The synthesizer builds two-band scenes with Gaussian
background and disk-shaped thermal hotspots that elevate the short-wave
infrared band strongly and the near-infrared band mildly, then labels any
tile containing at least ``EVENT_MIN_PIXELS`` hotspot pixels as an event.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import _jsonio

BAND_IDS = ("B8A", "B12")
LEVELS = ("raw", "l1c")
GRANULE_DTYPE = "f32le"
GRANULE_FILE_VERSION = 1

# a tile is an event when at least this many of its pixels belong to hotspots
EVENT_MIN_PIXELS = 9

# upper pixel value per (level, band), used to validate synthesis amplitudes
LEVEL_MAX = {("raw", "B8A"): 3000.0, ("raw", "B12"): 3000.0,
             ("l1c", "B8A"): 4.0, ("l1c", "B12"): 2.0}


class DataFormatError(Exception):
    """A granule/label/manifest file violates the format contract."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


CODE_BAD_HEADER = "bad-header"
CODE_LENGTH_MISMATCH = "length-mismatch"
CODE_UNKNOWN_DTYPE = "unknown-dtype"
CODE_MISSING_BAND = "missing-band"
CODE_DIMS_MISMATCH = "dims-mismatch"
CODE_MISSING_FILE = "missing-file"


@dataclass
class Granule:
    """One two-band acquisition in raw units (32-bit floats in memory)."""

    id: str
    level: str
    bands: dict
    height: int
    width: int
    metadata: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.level not in LEVELS:
            raise ValueError("level must be one of %s" % (LEVELS,))
        for band_id in BAND_IDS:
            if band_id not in self.bands:
                raise DataFormatError(CODE_MISSING_BAND,
                                      "granule %r lacks band %s"
                                      % (self.id, band_id))
        for band_id, arr in self.bands.items():
            if arr.shape != (self.height, self.width):
                raise DataFormatError(
                    CODE_DIMS_MISMATCH,
                    "band %s shape %s does not match %dx%d"
                    % (band_id, arr.shape, self.height, self.width))
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValueError("band %s has non-finite or negative values"
                                 % band_id)


@dataclass
class LabelMask:
    """Per-tile event labels aligned to the detection tiling."""

    grid: np.ndarray
    event_pixel_counts: np.ndarray | None = None

    @property
    def tile_rows(self) -> int:
        return self.grid.shape[0]

    @property
    def tile_cols(self) -> int:
        return self.grid.shape[1]

    def validate(self) -> None:
        if self.grid.ndim != 2 or self.grid.dtype != bool:
            raise ValueError("label grid must be a 2D boolean array")
        if self.event_pixel_counts is not None:
            if self.event_pixel_counts.shape != self.grid.shape:
                raise DataFormatError(CODE_DIMS_MISMATCH,
                                      "pixel counts do not match label grid")


def _granule_paths(path) -> tuple:
    """Accept the header path, the blob path, or a bare stem."""
    path = os.fspath(path)
    for suffix in (".granule.json", ".granule.bin"):
        if path.endswith(suffix):
            stem = path[:-len(suffix)]
            break
    else:
        stem = path
    return stem + ".granule.json", stem + ".granule.bin"


def save_granule(granule: Granule, path) -> tuple:
    """Write header + blob; returns (header_path, blob_path)."""
    granule.validate()
    header_path, blob_path = _granule_paths(path)
    band_ids = sorted(granule.bands)
    bands_doc = []
    offset = 0
    chunks = []
    for band_id in band_ids:
        arr = np.ascontiguousarray(granule.bands[band_id], dtype="<f4")
        raw = arr.tobytes()
        bands_doc.append({"band_id": band_id, "dtype": GRANULE_DTYPE,
                          "offset": offset, "byte_length": len(raw)})
        offset += len(raw)
        chunks.append(raw)
    doc = {
        "format": "nwndetect-granule",
        "version": GRANULE_FILE_VERSION,
        "id": granule.id,
        "level": granule.level,
        "height": int(granule.height),
        "width": int(granule.width),
        "bands": bands_doc,
        "metadata": granule.metadata,
    }
    _jsonio.write_canonical(header_path, doc)
    with open(blob_path, "wb") as fh:
        for raw in chunks:
            fh.write(raw)
    return header_path, blob_path


def load_granule(path) -> Granule:
    header_path, blob_path = _granule_paths(path)
    if not os.path.exists(header_path):
        raise DataFormatError(CODE_MISSING_FILE,
                              "no granule header at %s" % header_path)
    try:
        doc = _jsonio.read_json(header_path)
    except ValueError as exc:
        raise DataFormatError(CODE_BAD_HEADER, str(exc)) from exc
    for key in ("id", "level", "height", "width", "bands"):
        if key not in doc:
            raise DataFormatError(CODE_BAD_HEADER,
                                  "header lacks field %r" % key)
    height, width = int(doc["height"]), int(doc["width"])
    if not os.path.exists(blob_path):
        raise DataFormatError(CODE_MISSING_FILE,
                              "no granule blob at %s" % blob_path)
    with open(blob_path, "rb") as fh:
        blob = fh.read()
    expected = height * width * 4
    bands = {}
    for band_doc in doc["bands"]:
        if band_doc.get("dtype") != GRANULE_DTYPE:
            raise DataFormatError(CODE_UNKNOWN_DTYPE,
                                  "band %s has dtype %r, expected %r"
                                  % (band_doc.get("band_id"),
                                     band_doc.get("dtype"), GRANULE_DTYPE))
        off, nbytes = int(band_doc["offset"]), int(band_doc["byte_length"])
        if nbytes != expected or off + nbytes > len(blob):
            raise DataFormatError(
                CODE_LENGTH_MISMATCH,
                "band %s spans [%d, %d) but blob holds %d bytes "
                "(expected %d per band)"
                % (band_doc.get("band_id"), off, off + nbytes, len(blob),
                   expected))
        arr = np.frombuffer(blob, dtype="<f4", count=height * width,
                            offset=off).reshape(height, width)
        bands[band_doc["band_id"]] = arr.copy()
    total = sum(int(b["byte_length"]) for b in doc["bands"])
    if total != len(blob):
        raise DataFormatError(CODE_LENGTH_MISMATCH,
                              "blob holds %d bytes, header declares %d"
                              % (len(blob), total))
    granule = Granule(id=doc["id"], level=doc["level"], bands=bands,
                      height=height, width=width,
                      metadata=doc.get("metadata", {}))
    granule.validate()
    return granule


def write_labels(mask: LabelMask, path) -> None:
    mask.validate()
    doc = {
        "format": "nwndetect-labels",
        "version": GRANULE_FILE_VERSION,
        "tile_rows": mask.tile_rows,
        "tile_cols": mask.tile_cols,
        "grid": mask.grid.astype(int).tolist(),
    }
    if mask.event_pixel_counts is not None:
        doc["event_pixel_counts"] = mask.event_pixel_counts.astype(int).tolist()
    _jsonio.write_canonical(path, doc)


def load_labels(path) -> LabelMask:
    if not os.path.exists(os.fspath(path)):
        raise DataFormatError(CODE_MISSING_FILE, "no label file at %s" % path)
    try:
        doc = _jsonio.read_json(path)
    except ValueError as exc:
        raise DataFormatError(CODE_BAD_HEADER, str(exc)) from exc
    grid = np.asarray(doc.get("grid", []), dtype=int)
    rows, cols = int(doc.get("tile_rows", -1)), int(doc.get("tile_cols", -1))
    if grid.ndim != 2 or grid.shape != (rows, cols):
        raise DataFormatError(CODE_DIMS_MISMATCH,
                              "grid shape %s does not match declared %dx%d"
                              % (grid.shape, rows, cols))
    counts = None
    if "event_pixel_counts" in doc:
        counts = np.asarray(doc["event_pixel_counts"], dtype=np.int64)
        if counts.shape != grid.shape:
            raise DataFormatError(CODE_DIMS_MISMATCH,
                                  "pixel counts do not match label grid")
    mask = LabelMask(grid=grid.astype(bool), event_pixel_counts=counts)
    mask.validate()
    return mask


@dataclass(frozen=True)
class SynthParams:
    """Synthetic-scene settings; all pixel quantities in raw units."""

    dims: tuple = (1152, 1296)
    level: str = "raw"
    background_mean: tuple = (1000.0, 1000.0)
    background_std: tuple = (40.0, 40.0)
    # terrain is shared between bands, so their noise fields correlate
    band_correlation: float = 0.8
    hotspot_count: int = 2
    radius_range: tuple = (5.0, 12.0)
    amp_b8a: float = 60.0
    amp_b12: float = 200.0
    tile_size: int = 128
    seed: int = 0

    def validate(self) -> None:
        h, w = self.dims
        if h < 1 or w < 1:
            raise ValueError("dims must be positive")
        if self.level not in LEVELS:
            raise ValueError("level must be one of %s" % (LEVELS,))
        if self.tile_size < 1 or h < self.tile_size or w < self.tile_size:
            raise ValueError("dims must hold at least one tile")
        if len(self.background_mean) != 2 or len(self.background_std) != 2:
            raise ValueError("background stats are per band (B8A, B12)")
        if any(s < 0 for s in self.background_std):
            raise ValueError("background std must be non-negative")
        if not (0.0 <= self.band_correlation <= 1.0):
            raise ValueError("band_correlation must lie in [0, 1]")
        if self.hotspot_count < 0:
            raise ValueError("hotspot_count must be non-negative")
        r_lo, r_hi = self.radius_range
        if not (0 < r_lo <= r_hi):
            raise ValueError("radius_range must satisfy 0 < lo <= hi")
        margin = int(math.ceil(r_hi))
        if self.hotspot_count > 0 and 2 * margin >= self.tile_size:
            raise ValueError("hotspots of radius %g cannot fit inside a "
                             "%d-pixel tile" % (r_hi, self.tile_size))
        if self.amp_b8a < 0 or self.amp_b12 < 0:
            raise ValueError("hotspot amplitudes must be non-negative")
        for band_id, mean, amp in (("B8A", self.background_mean[0],
                                    self.amp_b8a),
                                   ("B12", self.background_mean[1],
                                    self.amp_b12)):
            cap = LEVEL_MAX[(self.level, band_id)]
            if mean + amp > cap:
                raise ValueError("mean %g + amplitude %g exceeds the %s "
                                 "%s ceiling of %g"
                                 % (mean, amp, self.level, band_id, cap))

    def to_dict(self) -> dict:
        return {
            "dims": [int(self.dims[0]), int(self.dims[1])],
            "level": self.level,
            "background_mean": [float(v) for v in self.background_mean],
            "background_std": [float(v) for v in self.background_std],
            "band_correlation": float(self.band_correlation),
            "hotspot_count": int(self.hotspot_count),
            "radius_range": [float(v) for v in self.radius_range],
            "amp_b8a": float(self.amp_b8a),
            "amp_b12": float(self.amp_b12),
            "tile_size": int(self.tile_size),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthParams":
        doc = dict(doc)
        for key in ("dims", "background_mean", "background_std",
                    "radius_range"):
            if key in doc:
                doc[key] = tuple(doc[key])
        params = cls(**doc)
        params.validate()
        return params

    @classmethod
    def for_level(cls, level: str, **overrides) -> "SynthParams":
        """Scene statistics scaled to the value range of the product level."""
        if level == "raw":
            base = {}
        elif level == "l1c":
            # keep the raw-level ratios: mean = max/3, std = max/75,
            # amplitudes at 1.5x / 5x the band's std
            base = dict(level="l1c",
                        background_mean=(4.0 / 3.0, 2.0 / 3.0),
                        background_std=(4.0 / 75.0, 2.0 / 75.0),
                        amp_b8a=1.5 * 4.0 / 75.0,
                        amp_b12=5.0 * 2.0 / 75.0)
        else:
            raise ValueError("level must be 'raw' or 'l1c'")
        base.update(overrides)
        params = cls(**base)
        params.validate()
        return params


def _disk_pixel_counts(hotspots, dims, tile_size) -> np.ndarray:
    """Per-tile count of pixels covered by any hotspot disk (drop tiling)."""
    h, w = dims
    rows, cols = h // tile_size, w // tile_size
    covered = np.zeros(dims, dtype=bool)
    for spot in hotspots:
        r0, c0, rad = spot["row"], spot["col"], spot["radius"]
        lo_r = max(0, int(math.floor(r0 - rad)))
        hi_r = min(h - 1, int(math.ceil(r0 + rad)))
        lo_c = max(0, int(math.floor(c0 - rad)))
        hi_c = min(w - 1, int(math.ceil(c0 + rad)))
        ii = np.arange(lo_r, hi_r + 1)[:, None]
        jj = np.arange(lo_c, hi_c + 1)[None, :]
        disk = (ii - r0) ** 2 + (jj - c0) ** 2 <= rad * rad
        covered[lo_r:hi_r + 1, lo_c:hi_c + 1] |= disk
    trimmed = covered[:rows * tile_size, :cols * tile_size]
    return trimmed.reshape(rows, tile_size, cols,
                           tile_size).sum(axis=(1, 3)).astype(np.int64)


def labels_from_hotspots(hotspots, dims, tile_size) -> LabelMask:
    """Re-derive the label mask from stored hotspot geometry."""
    counts = _disk_pixel_counts(hotspots, dims, tile_size)
    return LabelMask(grid=counts >= EVENT_MIN_PIXELS,
                     event_pixel_counts=counts)


def synth_granule(params: SynthParams) -> tuple:
    """Deterministic synthetic scene; returns (Granule, LabelMask)."""
    params.validate()
    h, w = params.dims
    rng = np.random.default_rng(params.seed)
    rho = params.band_correlation
    common = rng.standard_normal((h, w))
    bands = {}
    for i, band_id in enumerate(BAND_IDS):
        mean, std = params.background_mean[i], params.background_std[i]
        # sqrt weights keep each marginal N(0,1) while the shared terrain
        # term gives the two bands correlation exactly rho
        noise = math.sqrt(rho) * common
        noise += math.sqrt(1.0 - rho) * rng.standard_normal((h, w))
        bands[band_id] = mean + std * noise

    margin = int(math.ceil(params.radius_range[1]))
    tile = params.tile_size
    rows_t, cols_t = h // tile, w // tile
    hotspots = []
    amps = {"B8A": params.amp_b8a, "B12": params.amp_b12}
    for _ in range(params.hotspot_count):
        # confine each disk to a single tile of the drop tiling so every
        # injected event has one unambiguous home tile
        t_r = int(rng.integers(0, rows_t))
        t_c = int(rng.integers(0, cols_t))
        r0 = int(rng.integers(t_r * tile + margin, (t_r + 1) * tile - margin))
        c0 = int(rng.integers(t_c * tile + margin, (t_c + 1) * tile - margin))
        rad = float(rng.uniform(*params.radius_range))
        hotspots.append({"row": r0, "col": c0, "radius": rad})
        lo_r, hi_r = r0 - margin, r0 + margin
        lo_c, hi_c = c0 - margin, c0 + margin
        ii = np.arange(lo_r, hi_r + 1)[:, None]
        jj = np.arange(lo_c, hi_c + 1)[None, :]
        disk = (ii - r0) ** 2 + (jj - c0) ** 2 <= rad * rad
        for band_id in BAND_IDS:
            bands[band_id][lo_r:hi_r + 1, lo_c:hi_c + 1] += \
                amps[band_id] * disk

    for i, band_id in enumerate(BAND_IDS):
        cap = LEVEL_MAX[(params.level, band_id)]
        bands[band_id] = np.clip(bands[band_id], 0.0, cap).astype(np.float32)

    granule = Granule(
        id="synth-%016x" % (params.seed & 0xFFFFFFFFFFFFFFFF),
        level=params.level, bands=bands, height=h, width=w,
        metadata={"synthetic": True, "hotspots": hotspots,
                  "synth_params": params.to_dict()})
    mask = labels_from_hotspots(hotspots, params.dims, params.tile_size)
    return granule, mask


@dataclass
class ManifestEntry:
    granule_path: str
    label_path: str
    level: str


@dataclass
class DatasetManifest:
    entries: list
    event_tiles: int
    non_event_tiles: int

    @property
    def event_fraction(self) -> float:
        total = self.event_tiles + self.non_event_tiles
        return self.event_tiles / total if total else 0.0

    def to_doc(self) -> dict:
        return {
            "format": "nwndetect-manifest",
            "version": GRANULE_FILE_VERSION,
            "entries": [{"granule": e.granule_path, "labels": e.label_path,
                         "level": e.level} for e in self.entries],
            "event_tiles": int(self.event_tiles),
            "non_event_tiles": int(self.non_event_tiles),
        }


def save_manifest(manifest: DatasetManifest, path) -> None:
    _jsonio.write_canonical(path, manifest.to_doc())


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    path = os.fspath(path)
    if not os.path.exists(path):
        raise DataFormatError(CODE_MISSING_FILE, "no manifest at %s" % path)
    try:
        doc = _jsonio.read_json(path)
    except ValueError as exc:
        raise DataFormatError(CODE_BAD_HEADER, str(exc)) from exc
    base = os.path.dirname(path)
    entries = []
    for e in doc.get("entries", []):
        entry = ManifestEntry(granule_path=os.path.join(base, e["granule"]),
                              label_path=os.path.join(base, e["labels"]),
                              level=e.get("level", "raw"))
        if check_files:
            header, blob = _granule_paths(entry.granule_path)
            for p in (header, blob, entry.label_path):
                if not os.path.exists(p):
                    raise DataFormatError(CODE_MISSING_FILE,
                                          "manifest references missing "
                                          "file %s" % p)
        entries.append(entry)
    return DatasetManifest(entries=entries,
                           event_tiles=int(doc.get("event_tiles", 0)),
                           non_event_tiles=int(doc.get("non_event_tiles", 0)))


def synth_dataset(base: SynthParams, count: int, out_dir,
                  count_choices=(0, 1, 2, 3, 4)) -> DatasetManifest:
    """Write ``count`` granule/label pairs plus a manifest; deterministic.

    Per-granule hotspot counts are drawn uniformly from ``count_choices``
    (the default averages 2 hotspots over 90 tiles, i.e. roughly a 2%
    event-tile rate).
    """
    base.validate()
    os.makedirs(out_dir, exist_ok=True)
    master = np.random.default_rng(base.seed)
    entries = []
    event_tiles = 0
    non_event_tiles = 0
    for i in range(count):
        seed_i = int(master.integers(0, 2 ** 62))
        n_spots = int(count_choices[master.integers(0, len(count_choices))])
        params_i = replace(base, seed=seed_i, hotspot_count=n_spots)
        granule, mask = synth_granule(params_i)
        stem = "granule-%04d" % i
        save_granule(granule, os.path.join(out_dir, stem))
        write_labels(mask, os.path.join(out_dir, stem + ".labels.json"))
        entries.append(ManifestEntry(
            granule_path=stem + ".granule.json",
            label_path=stem + ".labels.json",
            level=base.level))
        event_tiles += int(mask.grid.sum())
        non_event_tiles += int(mask.grid.size - mask.grid.sum())
    manifest = DatasetManifest(entries=entries, event_tiles=event_tiles,
                               non_event_tiles=non_event_tiles)
    save_manifest(manifest, os.path.join(out_dir, "manifest.json"))
    return manifest
