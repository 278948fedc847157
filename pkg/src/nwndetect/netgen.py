"""Procedural generation of the simulated nanowire-network device.

A device is a set of straight nanowire segments scattered over a rectangular
plane, a regular grid of disk electrodes overlaid on the plane, and the
electrical junctions formed wherever a wire overlaps another wire or an
electrode.  The device is then viewed as a graph: wires and electrodes are
nodes, junctions are edges.

Geometry is in micrometres throughout.  All sampling is driven by a single
seeded generator and is bit-reproducible: the same :class:`GenParams`
(including seed) always yields the same device, and the first ``n`` wires of
a larger device equal the wires of an ``n``-wire device generated with the
same seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import stats
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

# Gaussian length draws below this floor are clamped up to it; at the default
# 30 +- 6 um the mass below is ~5 sigma and statistically negligible.
LENGTH_FLOOR_UM = 0.1

DEVICE_FILE_VERSION = 1

ROLE_INPUT = "input"
ROLE_READOUT = "readout"

KIND_WIRE_WIRE = "wire-wire"
KIND_WIRE_ELECTRODE = "wire-electrode"


@dataclass(frozen=True)
class GenParams:
    """Generation parameters for one device realisation."""

    wire_count: int = 1520
    plane_size: tuple = (250.0, 250.0)
    center_dist_beta: float = 5.0
    center_dist_scale: float = 125.0
    length_mean: float = 30.0
    length_std: float = 6.0
    grid_n: int = 16
    electrode_diameter: float = 8.0
    electrode_pitch: float = 8.0
    seed: int = 0

    def validate(self) -> None:
        if int(self.wire_count) <= 0:
            raise ValueError("wire_count must be positive (empty device is invalid)")
        w, h = self.plane_size
        if not (w > 0 and h > 0):
            raise ValueError("plane_size dimensions must be positive")
        if self.center_dist_beta <= 0:
            raise ValueError("center_dist_beta must be positive")
        if self.center_dist_scale <= 0:
            raise ValueError("center_dist_scale must be positive")
        if self.length_mean <= 0:
            raise ValueError("length_mean must be positive")
        if self.length_std < 0:
            raise ValueError("length_std must be non-negative")
        if self.grid_n < 2 or self.grid_n % 2 != 0:
            raise ValueError(
                "grid_n must be an even integer >= 2 (the input sub-grid is "
                "undefined when grid_n is not divisible by 2)"
            )
        if self.electrode_diameter <= 0:
            raise ValueError("electrode_diameter must be positive")
        if self.electrode_pitch <= 0:
            raise ValueError("electrode_pitch must be positive")
        span = self.electrode_pitch * (self.grid_n - 1) + self.electrode_diameter
        if span > min(w, h):
            raise ValueError(
                "electrode grid does not fit inside the plane: span %.3f um "
                "exceeds plane %.3f um" % (span, min(w, h))
            )

    def to_dict(self) -> dict:
        return {
            "wire_count": int(self.wire_count),
            "plane_size": [float(self.plane_size[0]), float(self.plane_size[1])],
            "center_dist_beta": float(self.center_dist_beta),
            "center_dist_scale": float(self.center_dist_scale),
            "length_mean": float(self.length_mean),
            "length_std": float(self.length_std),
            "grid_n": int(self.grid_n),
            "electrode_diameter": float(self.electrode_diameter),
            "electrode_pitch": float(self.electrode_pitch),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GenParams":
        kwargs = dict(doc)
        if "plane_size" in kwargs:
            kwargs["plane_size"] = tuple(kwargs["plane_size"])
        return cls(**kwargs)


@dataclass(frozen=True)
class Wire:
    id: int
    center: tuple
    orientation: float  # radians in [0, pi)
    length: float

    @property
    def endpoints(self) -> tuple:
        dx = 0.5 * self.length * np.cos(self.orientation)
        dy = 0.5 * self.length * np.sin(self.orientation)
        cx, cy = self.center
        return ((cx - dx, cy - dy), (cx + dx, cy + dy))


@dataclass(frozen=True)
class Electrode:
    id: int
    center: tuple
    radius: float
    role: str  # ROLE_INPUT or ROLE_READOUT


@dataclass(frozen=True)
class Junction:
    id: int
    kind: str  # KIND_WIRE_WIRE or KIND_WIRE_ELECTRODE
    node_a: int
    node_b: int
    position: tuple


def sample_wires(params: GenParams) -> list:
    """Draw the wire population for one device realisation.

    Centers follow a generalized normal distribution per axis (shape
    ``center_dist_beta``, scale ``center_dist_scale``, centred on the plane
    center); draws falling outside the plane are rejected and redrawn, so the
    requested wire count is exact.  Orientations are uniform on [0, pi);
    lengths are Gaussian, clamped at a small positive floor.

    Draws are consumed wire by wire from a single seeded stream, so the first
    ``n`` wires are identical for any ``wire_count >= n`` at the same seed.
    """
    params.validate()
    rng = np.random.default_rng(params.seed)
    n = int(params.wire_count)
    w, h = float(params.plane_size[0]), float(params.plane_size[1])
    cx, cy = 0.5 * w, 0.5 * h
    scale = float(params.center_dist_scale)
    gnorm = stats.gennorm(params.center_dist_beta)

    # Acceptance windows in CDF space: a center coordinate is inside the
    # plane iff its uniform draw lands inside [cdf(lo), cdf(hi)].
    ux_lo, ux_hi = gnorm.cdf((0.0 - cx) / scale), gnorm.cdf((w - cx) / scale)
    uy_lo, uy_hi = gnorm.cdf((0.0 - cy) / scale), gnorm.cdf((h - cy) / scale)

    ux = np.empty(n)
    uy = np.empty(n)
    theta = np.empty(n)
    length = np.empty(n)
    for i in range(n):
        u = rng.random()
        while not (ux_lo <= u <= ux_hi):
            u = rng.random()
        ux[i] = u
        u = rng.random()
        while not (uy_lo <= u <= uy_hi):
            u = rng.random()
        uy[i] = u
        theta[i] = rng.random() * np.pi
        length[i] = rng.normal(params.length_mean, params.length_std)

    xs = gnorm.ppf(ux) * scale + cx
    ys = gnorm.ppf(uy) * scale + cy
    np.clip(length, LENGTH_FLOOR_UM, None, out=length)

    return [
        Wire(id=i, center=(float(xs[i]), float(ys[i])),
             orientation=float(theta[i]), length=float(length[i]))
        for i in range(n)
    ]


def place_electrodes(params: GenParams) -> list:
    """Lay out the grid_n x grid_n electrode disks, centred on the plane.

    Electrode ids are row-major over the grid.  Every other electrode along
    both axes (even row and even column indices) is an input electrode; this
    forms the evenly spaced (grid_n/2) x (grid_n/2) input sub-grid.  All
    remaining electrodes are readout electrodes.
    """
    params.validate()
    g = int(params.grid_n)
    w, h = float(params.plane_size[0]), float(params.plane_size[1])
    pitch = float(params.electrode_pitch)
    radius = 0.5 * float(params.electrode_diameter)
    x0 = 0.5 * w - 0.5 * pitch * (g - 1)
    y0 = 0.5 * h - 0.5 * pitch * (g - 1)

    electrodes = []
    for row in range(g):
        for col in range(g):
            role = ROLE_INPUT if (row % 2 == 0 and col % 2 == 0) else ROLE_READOUT
            electrodes.append(
                Electrode(
                    id=row * g + col,
                    center=(x0 + col * pitch, y0 + row * pitch),
                    radius=radius,
                    role=role,
                )
            )
    return electrodes


def _wire_arrays(wires: Sequence) -> tuple:
    n = len(wires)
    p1 = np.empty((n, 2))
    p2 = np.empty((n, 2))
    for i, wire in enumerate(wires):
        a, b = wire.endpoints
        p1[i] = a
        p2[i] = b
    return p1, p2


def _candidate_wire_pairs(p1: np.ndarray, p2: np.ndarray) -> tuple:
    """Bucket wire bounding boxes on a uniform grid and emit index pairs
    sharing a cell.  Near-linear in the output size for physical densities."""
    n = len(p1)
    if n < 2:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    lo = np.minimum(p1, p2)
    hi = np.maximum(p1, p2)
    spans = hi - lo
    cell = max(float(np.median(spans[:, 0] + spans[:, 1])), 1e-9)
    i0 = np.floor(lo / cell).astype(np.int64)
    i1 = np.floor(hi / cell).astype(np.int64)

    buckets: dict = {}
    for k in range(n):
        for ix in range(i0[k, 0], i1[k, 0] + 1):
            for iy in range(i0[k, 1], i1[k, 1] + 1):
                buckets.setdefault((ix, iy), []).append(k)

    pair_a = []
    pair_b = []
    for members in buckets.values():
        m = len(members)
        if m < 2:
            continue
        arr = np.asarray(members, dtype=np.int64)
        ia, ib = np.triu_indices(m, k=1)
        pair_a.append(arr[ia])
        pair_b.append(arr[ib])
    if not pair_a:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    a = np.concatenate(pair_a)
    b = np.concatenate(pair_b)
    # wires are appended to buckets in ascending id order, so a < b already
    key = a * n + b
    keep = np.unique(key)
    return keep // n, keep % n


def _cross2(ux, uy, vx, vy):
    return ux * vy - uy * vx


def _segment_intersections(p1, p2, a, b) -> tuple:
    """Exact segment-segment test on candidate index pairs (a, b).

    Returns (ia, ib, px, py) for intersecting pairs.  Collinear overlapping
    pairs contribute a single junction at the midpoint of the shared stretch;
    endpoint touching counts as an intersection.
    """
    if len(a) == 0:
        empty = np.empty(0)
        return a, b, empty, empty
    d1 = p2[a] - p1[a]
    d2 = p2[b] - p1[b]
    r = p1[b] - p1[a]
    denom = _cross2(d1[:, 0], d1[:, 1], d2[:, 0], d2[:, 1])
    len1 = np.hypot(d1[:, 0], d1[:, 1])
    len2 = np.hypot(d2[:, 0], d2[:, 1])
    scale = len1 * len2
    parallel = np.abs(denom) <= 1e-12 * scale

    ia_out = []
    ib_out = []
    px_out = []
    py_out = []

    general = ~parallel
    if np.any(general):
        deng = denom[general]
        t = _cross2(r[general, 0], r[general, 1], d2[general, 0], d2[general, 1]) / deng
        s = _cross2(r[general, 0], r[general, 1], d1[general, 0], d1[general, 1]) / deng
        tol = 1e-12
        hit = (t >= -tol) & (t <= 1 + tol) & (s >= -tol) & (s <= 1 + tol)
        ga = a[general][hit]
        gb = b[general][hit]
        th = t[hit]
        ia_out.append(ga)
        ib_out.append(gb)
        px_out.append(p1[ga, 0] + th * d1[general][hit][:, 0])
        py_out.append(p1[ga, 1] + th * d1[general][hit][:, 1])

    # Collinear overlap: rare under continuous sampling, handled exactly.
    if np.any(parallel):
        crr = _cross2(r[parallel, 0], r[parallel, 1], d1[parallel, 0], d1[parallel, 1])
        coll = np.abs(crr) <= 1e-12 * np.maximum(np.hypot(r[parallel, 0], r[parallel, 1]), 1.0) * len1[parallel]
        for idx in np.nonzero(parallel)[0][coll]:
            ia, ib = int(a[idx]), int(b[idx])
            d = p2[ia] - p1[ia]
            nsq = float(d @ d)
            if nsq == 0.0:
                continue
            ta = float((p1[ib] - p1[ia]) @ d) / nsq
            tb = float((p2[ib] - p1[ia]) @ d) / nsq
            lo = max(0.0, min(ta, tb))
            hi = min(1.0, max(ta, tb))
            if hi < lo:
                continue
            tm = 0.5 * (lo + hi)
            ia_out.append(np.asarray([ia]))
            ib_out.append(np.asarray([ib]))
            px_out.append(np.asarray([p1[ia, 0] + tm * d[0]]))
            py_out.append(np.asarray([p1[ia, 1] + tm * d[1]]))

    if not ia_out:
        empty = np.empty(0)
        return (np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), empty, empty)
    return (np.concatenate(ia_out), np.concatenate(ib_out),
            np.concatenate(px_out), np.concatenate(py_out))


def _wire_electrode_hits(p1, p2, centers, radii) -> tuple:
    """All (wire, electrode) contacts and their chord-midpoint positions."""
    if len(p1) == 0 or len(centers) == 0:
        empty = np.empty(0)
        return (np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), empty, empty)
    d = p2 - p1  # (W, 2)
    len2 = np.einsum("ij,ij->i", d, d)
    len2 = np.where(len2 == 0.0, 1.0, len2)
    rel = centers[None, :, :] - p1[:, None, :]  # (W, E, 2)
    t = np.einsum("wej,wj->we", rel, d) / len2[:, None]
    t = np.clip(t, 0.0, 1.0)
    closest = p1[:, None, :] + t[:, :, None] * d[:, None, :]
    diff = closest - centers[None, :, :]
    dist2 = np.einsum("wej,wej->we", diff, diff)
    hit_w, hit_e = np.nonzero(dist2 <= radii[None, :] ** 2)
    if len(hit_w) == 0:
        empty = np.empty(0)
        return hit_w, hit_e, empty, empty

    # Chord of the segment's supporting line within the disk, clipped to the
    # segment; the junction sits at the midpoint of the clipped chord.
    pw = p1[hit_w]
    dw = d[hit_w]
    ce = centers[hit_e]
    re = radii[hit_e]
    aa = np.einsum("ij,ij->i", dw, dw)
    aa = np.where(aa == 0.0, 1.0, aa)
    bb = 2.0 * np.einsum("ij,ij->i", dw, pw - ce)
    cc = np.einsum("ij,ij->i", pw - ce, pw - ce) - re ** 2
    disc = np.maximum(bb * bb - 4.0 * aa * cc, 0.0)
    sq = np.sqrt(disc)
    t0 = np.clip((-bb - sq) / (2.0 * aa), 0.0, 1.0)
    t1 = np.clip((-bb + sq) / (2.0 * aa), 0.0, 1.0)
    tm = 0.5 * (t0 + t1)
    px = pw[:, 0] + tm * dw[:, 0]
    py = pw[:, 1] + tm * dw[:, 1]
    return hit_w, hit_e, px, py


def detect_junctions(wires: Sequence, electrodes: Sequence) -> list:
    """Find every wire-wire crossing and wire-electrode contact.

    One junction per intersecting wire pair and one per touching
    (wire, electrode) pair.  Output order is deterministic: wire-wire
    junctions sorted by (wire_a, wire_b), then wire-electrode sorted by
    (wire, electrode); ids are assigned sequentially in that order.
    """
    n_wires = len(wires)
    junctions = []
    if n_wires:
        p1, p2 = _wire_arrays(wires)
        ca, cb = _candidate_wire_pairs(p1, p2)
        ia, ib, px, py = _segment_intersections(p1, p2, ca, cb)
        order = np.lexsort((ib, ia))
        for k in order:
            junctions.append(
                Junction(
                    id=len(junctions),
                    kind=KIND_WIRE_WIRE,
                    node_a=int(ia[k]),
                    node_b=int(ib[k]),
                    position=(float(px[k]), float(py[k])),
                )
            )
        if electrodes:
            centers = np.asarray([e.center for e in electrodes], dtype=float)
            radii = np.asarray([e.radius for e in electrodes], dtype=float)
            hw, he, ex, ey = _wire_electrode_hits(p1, p2, centers, radii)
            order = np.lexsort((he, hw))
            for k in order:
                junctions.append(
                    Junction(
                        id=len(junctions),
                        kind=KIND_WIRE_ELECTRODE,
                        node_a=int(hw[k]),
                        node_b=n_wires + int(he[k]),
                        position=(float(ex[k]), float(ey[k])),
                    )
                )
    return junctions


@dataclass(eq=False)  # identity semantics; graphs key solver caches
class DeviceGraph:
    """Graph view of a generated device: nodes are wires then electrodes
    (node id = wire id, or wire_count + electrode id), edges are junctions."""

    wires: list
    electrodes: list
    junctions: list
    params: GenParams | None = None
    node_count: int = 0
    edge_a: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    edge_b: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    component_labels: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    input_node_ids: list = field(default_factory=list)
    readout_node_ids: list = field(default_factory=list)

    @property
    def edge_count(self) -> int:
        return len(self.junctions)

    @property
    def component_count(self) -> int:
        return int(self.component_labels.max()) + 1 if self.node_count else 0

    def adjacency(self) -> csr_matrix:
        n = self.node_count
        m = len(self.edge_a)
        data = np.ones(2 * m)
        rows = np.concatenate([self.edge_a, self.edge_b])
        cols = np.concatenate([self.edge_b, self.edge_a])
        return csr_matrix((data, (rows, cols)), shape=(n, n))

    def to_doc(self) -> dict:
        wires = self.wires
        electrodes = self.electrodes
        junctions = self.junctions
        return {
            "version": DEVICE_FILE_VERSION,
            "params": self.params.to_dict() if self.params is not None else None,
            "wires": {
                "center_x": [w.center[0] for w in wires],
                "center_y": [w.center[1] for w in wires],
                "orientation": [w.orientation for w in wires],
                "length": [w.length for w in wires],
            },
            "electrodes": {
                "center_x": [e.center[0] for e in electrodes],
                "center_y": [e.center[1] for e in electrodes],
                "radius": [e.radius for e in electrodes],
                "role": [e.role for e in electrodes],
            },
            "junctions": {
                "kind": [j.kind for j in junctions],
                "node_a": [j.node_a for j in junctions],
                "node_b": [j.node_b for j in junctions],
                "x": [j.position[0] for j in junctions],
                "y": [j.position[1] for j in junctions],
            },
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "DeviceGraph":
        version = doc.get("version")
        if version != DEVICE_FILE_VERSION:
            raise ValueError("unsupported device file version: %r" % (version,))
        params = GenParams.from_dict(doc["params"]) if doc.get("params") else None
        wd = doc["wires"]
        wires = [
            Wire(id=i, center=(wd["center_x"][i], wd["center_y"][i]),
                 orientation=wd["orientation"][i], length=wd["length"][i])
            for i in range(len(wd["center_x"]))
        ]
        ed = doc["electrodes"]
        electrodes = [
            Electrode(id=i, center=(ed["center_x"][i], ed["center_y"][i]),
                      radius=ed["radius"][i], role=ed["role"][i])
            for i in range(len(ed["center_x"]))
        ]
        jd = doc["junctions"]
        junctions = [
            Junction(id=i, kind=jd["kind"][i], node_a=jd["node_a"][i],
                     node_b=jd["node_b"][i], position=(jd["x"][i], jd["y"][i]))
            for i in range(len(jd["kind"]))
        ]
        return build_graph(wires, electrodes, junctions, params=params)

    def save(self, path) -> None:
        from ._jsonio import write_canonical

        write_canonical(path, self.to_doc())

    @classmethod
    def load(cls, path) -> "DeviceGraph":
        from ._jsonio import read_json

        return cls.from_doc(read_json(path))


def build_graph(wires: Sequence, electrodes: Sequence, junctions: Sequence,
                params: GenParams | None = None) -> DeviceGraph:
    """Assemble the node/edge graph and label its connected components."""
    n_wires = len(wires)
    n = n_wires + len(electrodes)
    edge_a = np.asarray([j.node_a for j in junctions], dtype=np.int64)
    edge_b = np.asarray([j.node_b for j in junctions], dtype=np.int64)
    if len(edge_a):
        if edge_a.min() < 0 or edge_b.min() < 0 or edge_a.max() >= n or edge_b.max() >= n:
            raise ValueError("junction references a node outside the device")
        if np.any(edge_a == edge_b):
            raise ValueError("junction connects a node to itself")

    if n:
        if len(edge_a):
            data = np.ones(2 * len(edge_a))
            rows = np.concatenate([edge_a, edge_b])
            cols = np.concatenate([edge_b, edge_a])
            adj = csr_matrix((data, (rows, cols)), shape=(n, n))
        else:
            adj = csr_matrix((n, n))
        _, labels = connected_components(adj, directed=False)
        labels = labels.astype(np.int64)
    else:
        labels = np.empty(0, dtype=np.int64)

    input_nodes = [n_wires + e.id for e in electrodes if e.role == ROLE_INPUT]
    readout_nodes = [n_wires + e.id for e in electrodes if e.role == ROLE_READOUT]

    return DeviceGraph(
        wires=list(wires),
        electrodes=list(electrodes),
        junctions=list(junctions),
        params=params,
        node_count=n,
        edge_a=edge_a,
        edge_b=edge_b,
        component_labels=labels,
        input_node_ids=input_nodes,
        readout_node_ids=readout_nodes,
    )


def generate_device(params: GenParams) -> DeviceGraph:
    """End-to-end generation: wires, electrodes, junctions, graph."""
    wires = sample_wires(params)
    electrodes = place_electrodes(params)
    junctions = detect_junctions(wires, electrodes)
    return build_graph(wires, electrodes, junctions, params=params)
