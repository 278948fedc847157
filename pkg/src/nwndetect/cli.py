"""Command-line front end.

Subcommands cover the whole workflow: grow a device (gen-net), build a
labelled synthetic dataset (synth), run detection (detect), sweep thresholds
(sweep), benchmark (bench), and score stored detections (eval).  Settings
come from an optional JSON config file mirroring :class:`RunConfig`;
individual flags override config fields.  stdout carries machine-readable
JSON summaries only, diagnostics go to stderr, and the fully
resolved configuration is echoed into every output file.

Exit codes: 0 success, 2 invalid parameters, 3 unwritable output location,
4 empty manifest, 5 too few benchmark runs, 6 malformed data file,
7 missing input file.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field, replace

import numpy as np

from . import _jsonio, dataio, metrics
from .dataio import DataFormatError, SynthParams
from .dynamics import DynParams
from .netgen import (KIND_WIRE_ELECTRODE, KIND_WIRE_WIRE, DeviceGraph,
                     GenParams, generate_device)
from .pipeline import PipelineConfig, detect_granule

log = logging.getLogger("nwndetect")

EXIT_OK = 0
EXIT_INVALID_PARAMS = 2
EXIT_UNWRITABLE = 3
EXIT_EMPTY_MANIFEST = 4
EXIT_TOO_FEW_RUNS = 5
EXIT_DATA_FORMAT = 6
EXIT_MISSING_INPUT = 7


@dataclass
class RunConfig:
    """One document holding every tunable used by the commands."""

    gen: GenParams = field(default_factory=GenParams)
    dyn: DynParams = field(default_factory=DynParams)
    pipe: PipelineConfig | None = None
    synth: SynthParams | None = None
    workers: int = 1
    paths: dict = field(default_factory=dict)

    def validate(self) -> None:
        self.gen.validate()
        self.dyn.validate()
        if self.pipe is not None:
            self.pipe.validate()
        if self.synth is not None:
            self.synth.validate()
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    def to_doc(self) -> dict:
        doc = {
            "gen": self.gen.to_dict(),
            "dyn": self.dyn.to_dict(),
            "workers": int(self.workers),
            "paths": self.paths,
        }
        if self.pipe is not None:
            doc["pipe"] = self.pipe.to_dict()
        if self.synth is not None:
            doc["synth"] = self.synth.to_dict()
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "RunConfig":
        cfg = cls()
        if "gen" in doc:
            cfg.gen = GenParams.from_dict(doc["gen"])
        if "dyn" in doc:
            cfg.dyn = DynParams.from_dict(doc["dyn"])
        if "pipe" in doc:
            cfg.pipe = PipelineConfig.from_dict(doc["pipe"])
        if "synth" in doc:
            cfg.synth = SynthParams.from_dict(doc["synth"])
        cfg.workers = int(doc.get("workers", 1))
        cfg.paths = dict(doc.get("paths", {}))
        cfg.validate()
        return cfg


def _load_config(args) -> RunConfig:
    if args.config:
        if not os.path.exists(args.config):
            raise FileNotFoundError("config file %s does not exist"
                                    % args.config)
        cfg = RunConfig.from_doc(_jsonio.read_json(args.config))
    else:
        cfg = RunConfig()
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    if getattr(args, "seed", None) is not None:
        cfg.gen = replace(cfg.gen, seed=args.seed)
        if cfg.synth is not None:
            cfg.synth = replace(cfg.synth, seed=args.seed)
    cfg.validate()
    return cfg


def _pipe_config(cfg: RunConfig, level: str, threshold=None) -> PipelineConfig:
    pipe = cfg.pipe if cfg.pipe is not None else PipelineConfig.for_level(level)
    if threshold is not None:
        pipe = replace(pipe, threshold=float(threshold))
        pipe.validate()
    return pipe


def _emit(doc: dict) -> None:
    sys.stdout.write(_jsonio.dumps_canonical(doc) + "\n")


def _load_net(path) -> DeviceGraph:
    if not os.path.exists(path):
        raise FileNotFoundError("device file %s does not exist" % path)
    return DeviceGraph.load(path)


def _events_stem(granule_path: str) -> str:
    name = os.path.basename(dataio._granule_paths(granule_path)[0])
    return name[:-len(".granule.json")]


def cmd_gen_net(args) -> int:
    cfg = _load_config(args)
    out = args.out or cfg.paths.get("net", "device.net.json")
    graph = generate_device(cfg.gen)
    graph.save(out)
    kinds = [j.kind for j in graph.junctions]
    _emit({
        "path": out,
        "wires": len(graph.wires),
        "electrodes": len(graph.electrodes),
        "input_electrodes": len(graph.input_node_ids),
        "readout_electrodes": len(graph.readout_node_ids),
        "junctions": len(graph.junctions),
        "wire_wire_junctions": kinds.count(KIND_WIRE_WIRE),
        "wire_electrode_junctions": kinds.count(KIND_WIRE_ELECTRODE),
        "nodes": graph.node_count,
        "edges": graph.edge_count,
        "config": cfg.to_doc(),
    })
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    synth = cfg.synth
    if synth is None:
        synth = SynthParams.for_level(args.level)
        if args.seed is not None:
            synth = replace(synth, seed=args.seed)
    out_dir = args.out or cfg.paths.get("dataset", "dataset")
    manifest = dataio.synth_dataset(synth, args.count, out_dir)
    _emit({
        "out_dir": out_dir,
        "manifest": os.path.join(out_dir, "manifest.json"),
        "granules": len(manifest.entries),
        "event_tiles": manifest.event_tiles,
        "non_event_tiles": manifest.non_event_tiles,
        "event_fraction": manifest.event_fraction,
        "config": {"synth": synth.to_dict()},
    })
    return EXIT_OK


def _iter_granules(args, cfg):
    """Yield (granule, label_path or None) for --granule or --manifest."""
    if args.granule:
        yield dataio.load_granule(args.granule), None, args.granule
        return
    manifest = dataio.load_manifest(args.manifest)
    if not manifest.entries:
        raise _EmptyManifest()
    for entry in manifest.entries:
        yield (dataio.load_granule(entry.granule_path), entry.label_path,
               entry.granule_path)


class _EmptyManifest(Exception):
    pass


def cmd_detect(args) -> int:
    cfg = _load_config(args)
    graph = _load_net(args.net)
    out_dir = args.out or cfg.paths.get("events", ".")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for granule, _, src_path in _iter_granules(args, cfg):
        pipe = _pipe_config(cfg, granule.level, args.threshold)
        event_map, _ = detect_granule(granule, graph, cfg.dyn, pipe,
                                      workers=cfg.workers,
                                      keep_features=False)
        doc = event_map.to_doc()
        doc["run_config"] = cfg.to_doc()
        stem = _events_stem(src_path)
        path = os.path.join(out_dir, stem + ".events.json")
        _jsonio.write_canonical(path, doc)
        if args.distances_bin:
            event_map.save_distances(os.path.join(out_dir,
                                                  stem + ".distances.bin"))
        written.append({"granule": granule.id, "path": path,
                        "events": int(event_map.predicted.sum()),
                        "tiles": int(event_map.predicted.size)})
        log.info("detected %s: %d/%d event tiles", granule.id,
                 written[-1]["events"], written[-1]["tiles"])
    _emit({"outputs": written, "config": cfg.to_doc()})
    return EXIT_OK


def _collect_distances(args, cfg, graph):
    distances, labels = [], []
    n_granules = 0
    for granule, label_path, _ in _iter_granules(args, cfg):
        if label_path is None:
            raise ValueError("sweep needs labels; use --manifest")
        pipe = _pipe_config(cfg, granule.level)
        event_map, _ = detect_granule(granule, graph, cfg.dyn, pipe,
                                      workers=cfg.workers,
                                      keep_features=False)
        mask = dataio.load_labels(label_path)
        if mask.grid.shape != event_map.distances.shape:
            raise DataFormatError(dataio.CODE_DIMS_MISMATCH,
                                  "labels %s do not match the event grid"
                                  % (mask.grid.shape,))
        distances.append(event_map.distances.reshape(-1))
        labels.append(mask.grid.reshape(-1))
        n_granules += 1
    return np.concatenate(distances), np.concatenate(labels), n_granules


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    graph = _load_net(args.net)
    distances, labels, n_granules = _collect_distances(args, cfg, graph)
    if args.grid_max is not None:
        grid = np.linspace(0.0, args.grid_max, args.grid_size)
    else:
        grid = metrics.default_sweep_grid(distances, size=args.grid_size)
    result = metrics.sweep(distances, labels, grid)
    out_dir = args.out or cfg.paths.get("reports", ".")
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, "sweep.json")
    csv_path = os.path.join(out_dir, "sweep.csv")
    doc = result.to_doc()
    doc["granules"] = n_granules
    doc["tiles"] = int(len(distances))
    doc["run_config"] = cfg.to_doc()
    _jsonio.write_canonical(json_path, doc)
    result.write_csv(csv_path)
    best = int(np.argmax(result.mcc))
    _emit({
        "argmax_mcc_threshold": result.argmax_mcc_threshold,
        "best_mcc": float(result.mcc[best]),
        "precision_at_best": float(result.precision[best]),
        "recall_at_best": float(result.recall[best]),
        "tiles": int(len(distances)),
        "granules": n_granules,
        "sweep_json": json_path,
        "sweep_csv": csv_path,
    })
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    if args.runs < 2:
        sys.stderr.write("error: need at least 2 runs for a standard "
                         "error\n")
        return EXIT_TOO_FEW_RUNS
    graph = _load_net(args.net)
    granules = [g for g, _, _ in _iter_granules(args, cfg)]
    pipe = _pipe_config(cfg, granules[0].level)
    report = metrics.benchmark(granules, graph, cfg.dyn, pipe,
                               runs=args.runs, workers=cfg.workers)
    out_dir = args.out or cfg.paths.get("reports", ".")
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "bench.json")
    doc = report.to_doc()
    doc["run_config"] = cfg.to_doc()
    _jsonio.write_canonical(path, doc)
    summary = report.to_doc()
    summary["path"] = path
    _emit(summary)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    pairs = []
    if args.events and args.labels:
        pairs.append((args.events, args.labels))
    elif args.manifest and args.events_dir:
        manifest = dataio.load_manifest(args.manifest)
        if not manifest.entries:
            raise _EmptyManifest()
        for entry in manifest.entries:
            stem = _events_stem(entry.granule_path)
            pairs.append((os.path.join(args.events_dir,
                                       stem + ".events.json"),
                          entry.label_path))
    else:
        raise ValueError("need --events with --labels, or --manifest with "
                         "--events-dir")
    from .pipeline import EventMap
    total = metrics.ConfusionMatrix()
    distances, labels = [], []
    for events_path, labels_path in pairs:
        if not os.path.exists(events_path):
            raise FileNotFoundError("no event map at %s" % events_path)
        event_map = EventMap.load(events_path)
        mask = dataio.load_labels(labels_path)
        c = metrics.confusion(event_map, mask)
        total = metrics.ConfusionMatrix(tp=total.tp + c.tp,
                                        tn=total.tn + c.tn,
                                        fp=total.fp + c.fp,
                                        fn=total.fn + c.fn)
        distances.append(event_map.distances.reshape(-1))
        labels.append(mask.grid.reshape(-1))
    sweep_result = None
    if args.sweep:
        d = np.concatenate(distances)
        lab = np.concatenate(labels)
        sweep_result = metrics.sweep(d, lab, metrics.default_sweep_grid(d))
    report = metrics.EvalReport.from_counts(total, sweep_result=sweep_result)
    out_dir = args.out or cfg.paths.get("reports", ".")
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "eval.json")
    doc = report.to_doc()
    doc["run_config"] = cfg.to_doc()
    _jsonio.write_canonical(path, doc)
    summary = report.to_doc()
    summary["path"] = path
    _emit(summary)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run-config file")
    common.add_argument("--seed", type=int, help="override the base seed")
    common.add_argument("--workers", type=int,
                        help="worker processes for tile fan-out")
    common.add_argument("--out", help="output file or directory")

    parser = argparse.ArgumentParser(
        prog="nwndetect",
        description="Nanowire-network thermal anomaly detection toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-net", parents=[common],
                       help="grow a device and write it to disk")
    p.set_defaults(func=cmd_gen_net)

    p = sub.add_parser("synth", parents=[common],
                       help="write a labelled synthetic dataset")
    p.add_argument("--count", type=int, default=5,
                   help="number of granules (default 5)")
    p.add_argument("--level", choices=("raw", "l1c"), default="raw")
    p.set_defaults(func=cmd_synth)

    for name, help_text in (("detect", "run detection, write event maps"),
                            ("sweep", "sweep thresholds over a dataset"),
                            ("bench", "time detection runs")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--net", required=True, help="device file")
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--manifest", help="dataset manifest")
        src.add_argument("--granule", help="single granule header/stem")
        if name == "detect":
            p.add_argument("--threshold", type=float,
                           help="override the config threshold")
            p.add_argument("--distances-bin", action="store_true",
                           help="also write raw distance matrices")
            p.set_defaults(func=cmd_detect)
        elif name == "sweep":
            p.add_argument("--grid-size", type=int, default=200)
            p.add_argument("--grid-max", type=float,
                           help="upper end of the grid "
                                "(default: 99.9th percentile)")
            p.set_defaults(func=cmd_sweep)
        else:
            p.add_argument("--runs", type=int, default=5)
            p.set_defaults(func=cmd_bench)

    p = sub.add_parser("eval", parents=[common],
                       help="score stored event maps against labels")
    p.add_argument("--events", help="one event-map JSON file")
    p.add_argument("--labels", help="label file matching --events")
    p.add_argument("--manifest", help="dataset manifest")
    p.add_argument("--events-dir", help="directory of event maps "
                                        "matching the manifest")
    p.add_argument("--sweep", action="store_true",
                   help="also sweep thresholds over stored distances")
    p.set_defaults(func=cmd_eval)
    return parser


def entry(argv=None) -> int:
    level = os.environ.get("NWN_LOG", "warning").upper()
    logging.basicConfig(stream=sys.stderr,
                        level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _EmptyManifest:
        sys.stderr.write("error: manifest lists no granules\n")
        return EXIT_EMPTY_MANIFEST
    except FileNotFoundError as exc:
        sys.stderr.write("error: %s\n" % exc)
        return EXIT_MISSING_INPUT
    except DataFormatError as exc:
        if exc.code == dataio.CODE_MISSING_FILE:
            sys.stderr.write("error: %s\n" % exc)
            return EXIT_MISSING_INPUT
        sys.stderr.write("error [%s]: %s\n" % (exc.code, exc))
        return EXIT_DATA_FORMAT
    except (PermissionError, IsADirectoryError) as exc:
        sys.stderr.write("error: cannot write output: %s\n" % exc)
        return EXIT_UNWRITABLE
    except OSError as exc:
        sys.stderr.write("error: %s\n" % exc)
        return EXIT_UNWRITABLE
    except (ValueError, KeyError, TypeError) as exc:
        sys.stderr.write("error: %s\n" % exc)
        return EXIT_INVALID_PARAMS


def main() -> None:
    sys.exit(entry())


if __name__ == "__main__":
    main()
