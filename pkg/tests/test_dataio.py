import dataclasses
import json
import math

import numpy as np
import pytest

import reference
from nwndetect import _jsonio
from nwndetect.dataio import (DataFormatError, Granule, LabelMask,
                              SynthParams, labels_from_hotspots, load_granule,
                              load_labels, load_manifest, save_granule,
                              save_manifest, synth_dataset, synth_granule,
                              write_labels)

from conftest import SMALL_SYNTH


def _granule(seed=0, h=16, w=24, level="raw"):
    rng = np.random.default_rng(seed)
    bands = {b: rng.uniform(0, 2900, (h, w)).astype(np.float32)
             for b in ("B8A", "B12")}
    return Granule(id="g-%d" % seed, level=level, bands=bands,
                   height=h, width=w, metadata={"note": "fixture", "n": 3})


# -------------------------------------------------------------- granule files

def test_granule_roundtrip_is_bit_exact(tmp_path):
    granule = _granule()
    stem = tmp_path / "scene"
    header, blob = save_granule(granule, stem)
    assert header.endswith(".granule.json") and blob.endswith(".granule.bin")
    back = load_granule(stem)
    assert back.id == granule.id and back.level == granule.level
    assert (back.height, back.width) == (granule.height, granule.width)
    assert back.metadata == granule.metadata
    for band_id in ("B8A", "B12"):
        assert back.bands[band_id].dtype == np.float32
        assert np.array_equal(back.bands[band_id], granule.bands[band_id])


def test_load_accepts_stem_header_or_blob_path(tmp_path):
    stem = tmp_path / "scene"
    save_granule(_granule(), stem)
    a = load_granule(stem)
    b = load_granule(str(stem) + ".granule.json")
    c = load_granule(str(stem) + ".granule.bin")
    for other in (b, c):
        assert np.array_equal(a.bands["B12"], other.bands["B12"])


def test_truncated_blob_reports_length_mismatch(tmp_path):
    stem = tmp_path / "scene"
    _, blob = save_granule(_granule(), stem)
    data = open(blob, "rb").read()
    with open(blob, "wb") as fh:
        fh.write(data[:-1])
    with pytest.raises(DataFormatError) as err:
        load_granule(stem)
    assert err.value.code == "length-mismatch"


def test_header_with_single_band_reports_missing_band(tmp_path):
    stem = tmp_path / "scene"
    header, blob = save_granule(_granule(), stem)
    doc = _jsonio.read_json(header)
    keep = [b for b in doc["bands"] if b["band_id"] == "B8A"]
    chunk_start = keep[0]["offset"]
    keep[0]["offset"] = 0
    doc["bands"] = keep
    _jsonio.write_canonical(header, doc)
    data = open(blob, "rb").read()
    with open(blob, "wb") as fh:  # keep only the one declared band's bytes
        fh.write(data[chunk_start:chunk_start + keep[0]["byte_length"]])
    with pytest.raises(DataFormatError) as err:
        load_granule(stem)
    assert err.value.code == "missing-band"


def test_unknown_dtype_rejected(tmp_path):
    stem = tmp_path / "scene"
    header, _ = save_granule(_granule(), stem)
    doc = _jsonio.read_json(header)
    doc["bands"][0]["dtype"] = "f64le"
    _jsonio.write_canonical(header, doc)
    with pytest.raises(DataFormatError) as err:
        load_granule(stem)
    assert err.value.code == "unknown-dtype"


def test_missing_files_reported(tmp_path):
    with pytest.raises(DataFormatError) as err:
        load_granule(tmp_path / "absent")
    assert err.value.code == "missing-file"
    stem = tmp_path / "scene"
    _, blob = save_granule(_granule(), stem)
    import os
    os.unlink(blob)
    with pytest.raises(DataFormatError) as err:
        load_granule(stem)
    assert err.value.code == "missing-file"


def test_corrupt_header_rejected(tmp_path):
    stem = tmp_path / "scene"
    header, _ = save_granule(_granule(), stem)
    with open(header, "w") as fh:
        fh.write("{not json")
    with pytest.raises(DataFormatError) as err:
        load_granule(stem)
    assert err.value.code == "bad-header"
    with open(header, "w") as fh:  # valid JSON but fields absent
        fh.write("{}")
    with pytest.raises(DataFormatError) as err:
        load_granule(stem)
    assert err.value.code == "bad-header"


def test_save_validates_the_granule(tmp_path):
    granule = _granule()
    granule.bands["B12"][0, 0] = -5.0
    with pytest.raises(ValueError):
        save_granule(granule, tmp_path / "bad")
    granule = _granule()
    del granule.bands["B8A"]
    with pytest.raises(DataFormatError) as err:
        save_granule(granule, tmp_path / "bad")
    assert err.value.code == "missing-band"


# --------------------------------------------------------------- label files

def test_labels_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    counts = rng.integers(0, 40, (3, 4))
    mask = LabelMask(grid=counts >= 9, event_pixel_counts=counts)
    path = tmp_path / "scene.labels.json"
    write_labels(mask, path)
    back = load_labels(path)
    assert np.array_equal(back.grid, mask.grid)
    assert np.array_equal(back.event_pixel_counts, counts)
    bare = LabelMask(grid=mask.grid)
    write_labels(bare, tmp_path / "bare.labels.json")
    assert load_labels(tmp_path / "bare.labels.json").event_pixel_counts is None


def test_labels_dims_mismatch_rejected(tmp_path):
    path = tmp_path / "bad.labels.json"
    doc = {"format": "nwndetect-labels", "version": 1,
           "tile_rows": 3, "tile_cols": 2, "grid": [[0, 1], [1, 0]]}
    _jsonio.write_canonical(path, doc)
    with pytest.raises(DataFormatError) as err:
        load_labels(path)
    assert err.value.code == "dims-mismatch"
    doc["tile_rows"] = 2
    doc["event_pixel_counts"] = [[0, 12, 3], [14, 0, 0]]
    _jsonio.write_canonical(path, doc)
    with pytest.raises(DataFormatError) as err:
        load_labels(path)
    assert err.value.code == "dims-mismatch"


def test_labels_missing_file(tmp_path):
    with pytest.raises(DataFormatError) as err:
        load_labels(tmp_path / "absent.labels.json")
    assert err.value.code == "missing-file"


# ----------------------------------------------------------------- synthesis

def test_synth_is_deterministic():
    g1, m1 = synth_granule(SMALL_SYNTH)
    g2, m2 = synth_granule(SMALL_SYNTH)
    for band_id in ("B8A", "B12"):
        assert np.array_equal(g1.bands[band_id], g2.bands[band_id])
    assert g1.metadata["hotspots"] == g2.metadata["hotspots"]
    assert np.array_equal(m1.grid, m2.grid)
    g3, _ = synth_granule(dataclasses.replace(SMALL_SYNTH, seed=99))
    assert not np.array_equal(g1.bands["B12"], g3.bands["B12"])


def test_label_rule_matches_pixel_scan():
    params = dataclasses.replace(SMALL_SYNTH, hotspot_count=3, seed=21)
    granule, mask = synth_granule(params)
    spots = granule.metadata["hotspots"]
    counts = reference.disk_pixel_tile_counts(spots, params.dims,
                                              params.tile_size)
    assert np.array_equal(mask.event_pixel_counts, counts)
    assert np.array_equal(mask.grid, counts >= 9)
    rebuilt = labels_from_hotspots(spots, params.dims, params.tile_size)
    assert np.array_equal(rebuilt.grid, mask.grid)
    assert np.array_equal(rebuilt.event_pixel_counts,
                          mask.event_pixel_counts)


def test_centered_hotspot_labels_its_tile_only():
    spots = [{"row": 448, "col": 576, "radius": 10.0}]
    mask = labels_from_hotspots(spots, (640, 768), 128)
    expected = np.zeros((5, 6), dtype=bool)
    expected[3, 4] = True
    assert np.array_equal(mask.grid, expected)
    # every pixel of the rasterized disk lands in that one tile
    assert mask.event_pixel_counts[3, 4] == \
        reference.disk_pixel_tile_counts(spots, (640, 768), 128)[3, 4]
    assert mask.event_pixel_counts.sum() == mask.event_pixel_counts[3, 4]
    assert mask.event_pixel_counts[3, 4] >= 9


def test_zero_hotspots_label_nothing():
    params = dataclasses.replace(SMALL_SYNTH, hotspot_count=0)
    _, mask = synth_granule(params)
    assert not mask.grid.any()
    assert mask.event_pixel_counts.sum() == 0


def test_each_hotspot_stays_inside_one_tile():
    for seed in range(10):
        params = dataclasses.replace(SMALL_SYNTH, hotspot_count=1, seed=seed)
        granule, mask = synth_granule(params)
        assert np.count_nonzero(mask.event_pixel_counts) == 1
        assert mask.grid.sum() == 1
        (spot,) = granule.metadata["hotspots"]
        area = math.pi * spot["radius"] ** 2
        # rasterized disk area tracks the analytic one
        assert abs(mask.event_pixel_counts.max() - area) <= 4 * spot["radius"]


def test_hotspot_elevates_swir_more_than_nir():
    params = dataclasses.replace(SMALL_SYNTH, hotspot_count=1, seed=5,
                                 background_std=(0.0, 0.0))
    granule, mask = synth_granule(params)
    (spot,) = granule.metadata["hotspots"]
    r, c = spot["row"], spot["col"]
    assert granule.bands["B12"][r, c] == pytest.approx(1000.0 + 200.0)
    assert granule.bands["B8A"][r, c] == pytest.approx(1000.0 + 60.0)
    far = (r + 48) % 64, (c + 48) % 96
    assert granule.bands["B12"][far] == pytest.approx(1000.0)


def test_background_moments():
    params = SynthParams(dims=(256, 256), hotspot_count=0, seed=12)
    granule, _ = synth_granule(params)
    a = granule.bands["B8A"].astype(np.float64)
    b = granule.bands["B12"].astype(np.float64)
    for band in (a, b):
        assert abs(band.mean() - 1000.0) < 1.5
        assert abs(band.std() - 40.0) < 0.5
    corr = np.corrcoef(a.reshape(-1), b.reshape(-1))[0, 1]
    assert abs(corr - 0.8) < 0.02


def test_synth_param_validation():
    SMALL_SYNTH.validate()
    base = dict(dims=(64, 96), tile_size=32, radius_range=(4.0, 6.0))
    for bad in (dict(dims=(0, 9)), dict(level="l2a"),
                dict(tile_size=100), dict(background_std=(-1.0, 40.0)),
                dict(band_correlation=1.5), dict(hotspot_count=-1),
                dict(radius_range=(0.0, 5.0)), dict(radius_range=(6.0, 4.0)),
                dict(radius_range=(16.0, 16.0)),
                dict(amp_b8a=-1.0), dict(amp_b12=2500.0)):
        kwargs = dict(base)
        kwargs.update(bad)
        with pytest.raises(ValueError):
            SynthParams(**kwargs).validate()


def test_amplitude_ceiling_respects_level():
    with pytest.raises(ValueError, match="ceiling"):
        SynthParams.for_level("l1c", amp_b12=2.0)
    l1c = SynthParams.for_level("l1c")
    assert l1c.background_mean == (4.0 / 3.0, 2.0 / 3.0)
    assert l1c.amp_b12 == 5.0 * 2.0 / 75.0
    with pytest.raises(ValueError, match="level"):
        SynthParams.for_level("l0")


def test_synth_params_dict_roundtrip():
    params = dataclasses.replace(SMALL_SYNTH, band_correlation=0.5, seed=44)
    assert SynthParams.from_dict(params.to_dict()) == params


# ------------------------------------------------------------------ datasets

def test_synth_dataset_and_manifest_roundtrip(tmp_path):
    out = tmp_path / "ds"
    manifest = synth_dataset(SMALL_SYNTH, 3, out)
    assert len(manifest.entries) == 3
    assert manifest.event_tiles + manifest.non_event_tiles == 3 * 6
    back = load_manifest(out / "manifest.json")
    assert len(back.entries) == 3
    assert back.event_tiles == manifest.event_tiles
    assert 0.0 <= back.event_fraction <= 1.0
    for entry in back.entries:
        granule = load_granule(entry.granule_path)
        mask = load_labels(entry.label_path)
        assert granule.level == entry.level == "raw"
        assert mask.grid.shape == (2, 3)


def test_manifest_checks_referenced_files(tmp_path):
    out = tmp_path / "ds"
    synth_dataset(SMALL_SYNTH, 2, out)
    import os
    os.unlink(out / "granule-0001.labels.json")
    with pytest.raises(DataFormatError) as err:
        load_manifest(out / "manifest.json")
    assert err.value.code == "missing-file"
    relaxed = load_manifest(out / "manifest.json", check_files=False)
    assert len(relaxed.entries) == 2


def test_manifest_error_paths(tmp_path):
    with pytest.raises(DataFormatError) as err:
        load_manifest(tmp_path / "manifest.json")
    assert err.value.code == "missing-file"
    bad = tmp_path / "manifest.json"
    bad.write_text("[broken")
    with pytest.raises(DataFormatError) as err:
        load_manifest(bad)
    assert err.value.code == "bad-header"


def test_synth_dataset_is_deterministic(tmp_path):
    out1 = tmp_path / "one"
    out2 = tmp_path / "two"
    synth_dataset(SMALL_SYNTH, 2, out1)
    synth_dataset(SMALL_SYNTH, 2, out2)
    for name in ("manifest.json", "granule-0000.granule.bin",
                 "granule-0000.granule.json", "granule-0001.labels.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_event_fraction_of_empty_manifest():
    from nwndetect.dataio import DatasetManifest
    assert DatasetManifest([], 0, 0).event_fraction == 0.0
