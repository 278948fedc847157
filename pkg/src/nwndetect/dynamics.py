"""Memristive junction dynamics on the device graph under Kirchhoff's laws.

Each junction carries a state variable lambda (volt seconds) that maps to a
conductance between ``g_off`` and ``g_on``.  A tile presentation holds a
fixed drive voltage on the input electrodes; each time step solves the
resistive network for all node voltages (Kirchhoff current law with
Dirichlet conditions at the inputs) and then advances the junction states by
one forward-Euler step of the memristor equation of state.

Solving the network is the hot path: the conductance Laplacian is refactored
up to ``steps_per_tile`` times per tile per band.  Two observations keep
this cheap.  First, every per-tile-reset run starts from the all-off matrix,
which is identical across tiles, so its factorization is computed once and
cached.  Second, in realistic imagery most tiles are low contrast and only a
small set of junctions ever leaves the off state, so later steps differ from
the cached matrix by a low-rank correction; those solves use the
Sherman-Morrison-Woodbury identity against the cached factor.  When the
active set grows past a limit the session falls back to exact per-step
refactorization.  Every returned solution is verified against a per-node
current-conservation bound, so the fast path never trades accuracy.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve
from scipy.sparse.linalg import splu

from .ldl import FixedPatternLDL
from .netgen import DeviceGraph

RESET_PER_TILE = "per-tile"
RESET_PERSISTENT = "persistent"

# per-node current-conservation bound: |sum of currents| relative to the
# node's total conductance times the voltage scale
RESIDUAL_RTOL = 1e-12


@dataclass(frozen=True)
class DynParams:
    """Integration and device-physics constants."""

    v_set: float = 1e-2
    v_reset: float = 5e-3
    lambda_max: float = 1.5e-2
    decay_rate: float = 10.0
    dt: float = 1e-4
    steps_per_tile: int = 14
    g_off: float = 7.75e-8
    g_on: float = 7.75e-5
    reset_policy: str = RESET_PER_TILE

    def validate(self) -> None:
        if not (0 < self.v_reset < self.v_set):
            raise ValueError("need 0 < v_reset < v_set")
        if self.lambda_max <= 0:
            raise ValueError("lambda_max must be positive")
        if self.decay_rate < 0:
            raise ValueError("decay_rate must be non-negative")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if int(self.steps_per_tile) < 1:
            raise ValueError("steps_per_tile must be at least 1")
        if not (self.g_on > self.g_off > 0):
            raise ValueError("need g_on > g_off > 0")
        if self.reset_policy not in (RESET_PER_TILE, RESET_PERSISTENT):
            raise ValueError("reset_policy must be %r or %r"
                             % (RESET_PER_TILE, RESET_PERSISTENT))

    def to_dict(self) -> dict:
        return {
            "v_set": float(self.v_set),
            "v_reset": float(self.v_reset),
            "lambda_max": float(self.lambda_max),
            "decay_rate": float(self.decay_rate),
            "dt": float(self.dt),
            "steps_per_tile": int(self.steps_per_tile),
            "g_off": float(self.g_off),
            "g_on": float(self.g_on),
            "reset_policy": self.reset_policy,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DynParams":
        params = cls(**doc)
        params.validate()
        return params


def initial_state(graph: DeviceGraph) -> np.ndarray:
    """All junctions in the off state."""
    return np.zeros(graph.edge_count)


def conductance(state: np.ndarray, params: DynParams) -> np.ndarray:
    """Junction conductances: linear in |lambda| up to saturation."""
    frac = np.minimum(np.abs(state), params.lambda_max) / params.lambda_max
    return params.g_off + (params.g_on - params.g_off) * frac


def step_state(state: np.ndarray, node_voltages: np.ndarray,
               graph: DeviceGraph, params: DynParams) -> np.ndarray:
    """One forward-Euler step of the junction equation of state.

    Per junction, with V the voltage drop node_a minus node_b:
    above ``v_set`` the state grows along sgn(V); between the thresholds it
    holds; below ``v_reset`` it decays toward zero (never crossing within a
    step).  The state saturates at ``lambda_max`` in magnitude: growth stops
    there, decay away from saturation is still allowed.
    """
    v = node_voltages[graph.edge_a] - node_voltages[graph.edge_b]
    av = np.abs(v)
    grow = av > params.v_set
    decay = av < params.v_reset
    sign_state = np.sign(state)
    rate = np.where(
        grow,
        (av - params.v_set) * np.sign(v),
        np.where(decay, params.decay_rate * (av - params.v_reset) * sign_state,
                 0.0),
    )
    new = state + params.dt * rate
    crossed = decay & (new * sign_state < 0)
    new = np.where(crossed, 0.0, new)
    return np.clip(new, -params.lambda_max, params.lambda_max)


class SingularNetworkError(ValueError):
    """The reduced network matrix was not positive definite."""


class KirchhoffSolver:
    """Exact node-voltage solver for one device graph.

    Dirichlet values are imposed at input electrodes, every other node is a
    zero-current unknown, and nodes in components without any input electrode
    are pinned to 0 V.  The reduced system couples only the unknowns in
    input-carrying components; its sparsity pattern is fixed per device, so
    the symbolic factorization work happens once here and each solve is a
    numeric refactor (or a low-rank correction, see :class:`TileSession`).
    """

    def __init__(self, graph: DeviceGraph, g_off: float,
                 woodbury_limit: int = 192):
        if graph.node_count == 0:
            raise ValueError("empty device graph")
        if g_off <= 0:
            raise ValueError("g_off must be positive")
        self.graph = graph
        self.g_off = float(g_off)
        self.woodbury_limit = int(woodbury_limit)

        n = graph.node_count
        inputs = np.asarray(graph.input_node_ids, dtype=np.int64)
        labels = graph.component_labels
        if len(inputs):
            live = np.isin(labels, np.unique(labels[inputs]))
        else:
            live = np.zeros(n, dtype=bool)
        is_input = np.zeros(n, dtype=bool)
        is_input[inputs] = True
        unknown = live & ~is_input
        self.n_nodes = n
        self.input_nodes = inputs
        self.unknown_nodes = np.flatnonzero(unknown)
        nu = len(self.unknown_nodes)
        self.n_unknowns = nu
        node_to_red = np.full(n, -1, dtype=np.int64)
        node_to_red[self.unknown_nodes] = np.arange(nu)

        ea, eb = graph.edge_a, graph.edge_b
        m = len(ea)
        self.n_edges = m
        ra = node_to_red[ea]
        rb = node_to_red[eb]
        # reduced endpoints with nu as an "absent" sentinel slot
        self.red_a = np.where(ra >= 0, ra, nu).astype(np.int64)
        self.red_b = np.where(rb >= 0, rb, nu).astype(np.int64)
        # edges that touch at least one unknown are the only ones that can
        # perturb the reduced matrix
        self.reducible_edge = (ra >= 0) | (rb >= 0)

        both = (ra >= 0) & (rb >= 0)
        off_e = np.flatnonzero(both)
        da_e = np.flatnonzero(ra >= 0)
        db_e = np.flatnonzero(rb >= 0)
        rows = np.concatenate([ra[off_e], ra[da_e], rb[db_e]])
        cols = np.concatenate([rb[off_e], ra[da_e], rb[db_e]])
        eids = np.concatenate([off_e, da_e, db_e])
        sgn = np.concatenate([-np.ones(len(off_e)), np.ones(len(da_e)),
                              np.ones(len(db_e))])

        # drive coupling: edges with one unknown end and one input end feed
        # g * drive into the unknown's current balance
        a_unk_b_in = (ra >= 0) & is_input[eb]
        b_unk_a_in = (rb >= 0) & is_input[ea]
        self._rhs_rows = np.concatenate([ra[a_unk_b_in], rb[b_unk_a_in]])
        self._rhs_eids = np.concatenate([np.flatnonzero(a_unk_b_in),
                                         np.flatnonzero(b_unk_a_in)])
        self._rhs_input_nodes = np.concatenate([eb[a_unk_b_in],
                                                ea[b_unk_a_in]])
        self._rhs_map = sp.csr_matrix(
            (np.ones(len(self._rhs_rows)),
             (self._rhs_rows, np.arange(len(self._rhs_rows)))),
            shape=(nu, len(self._rhs_rows)))

        if nu:
            base_vals = sgn * self.g_off
            a0 = sp.coo_matrix((base_vals, (rows, cols)), shape=(nu, nu))
            a0 = (a0 + sp.triu(a0, 1).T).tocsc()
            if nu > 8:
                probe = splu(a0, permc_spec="MMD_AT_PLUS_A",
                             options=dict(SymmetricMode=True))
                inv = np.empty(nu, dtype=np.int64)
                inv[probe.perm_c] = np.arange(nu)
                perm = inv
            else:
                perm = np.arange(nu)
            self._ldl = FixedPatternLDL(nu, rows, cols, perm)
            self._value_map = sp.csr_matrix(
                (sgn, (self._ldl.contrib_slots, eids)),
                shape=(self._ldl.nnz_upper, m))
            self._base_matrix = a0.tocsr()
            self._base_diag = a0.diagonal()
            try:
                self._ldl.refactor(self._value_map @ np.full(m, self.g_off))
            except ArithmeticError as exc:
                raise SingularNetworkError(self._diagnose()) from exc
            self._base_factor = self._ldl.factor_copy()
            self._factor_is_base = True
        else:
            self._ldl = None
            self._value_map = None
            self._base_matrix = sp.csr_matrix((0, 0))
            self._base_diag = np.empty(0)
            self._base_factor = None
            self._factor_is_base = True

    def _diagnose(self) -> str:
        labels = self.graph.component_labels
        sizes = np.bincount(labels)
        return ("reduced network matrix is singular; component sizes %s, "
                "%d input electrodes" % (sizes.tolist(), len(self.input_nodes)))

    def _rhs(self, g: np.ndarray, drive_full: np.ndarray) -> np.ndarray:
        weights = g[self._rhs_eids] * drive_full[self._rhs_input_nodes]
        return self._rhs_map @ weights

    def _expand(self, x: np.ndarray, drive_full: np.ndarray) -> np.ndarray:
        v = np.zeros(self.n_nodes)
        v[self.input_nodes] = drive_full[self.input_nodes]
        if len(x):
            v[self.unknown_nodes] = x
        return v

    def _refactor(self, g: np.ndarray) -> None:
        try:
            self._ldl.refactor(self._value_map @ g)
        except ArithmeticError as exc:
            raise SingularNetworkError(self._diagnose()) from exc
        self._factor_is_base = False

    def _ensure_base_factor(self) -> None:
        if not self._factor_is_base:
            self._ldl.restore_factor(self._base_factor)
            self._factor_is_base = True

    def solve(self, g: np.ndarray, drive: np.ndarray) -> np.ndarray:
        """One-shot exact solve: refactor at the given conductances.

        ``drive`` holds one voltage per input electrode, in the order of
        ``graph.input_node_ids``.  Returns voltages for every graph node.
        """
        g = np.asarray(g, dtype=np.float64)
        drive = np.asarray(drive, dtype=np.float64)
        if g.shape != (self.n_edges,):
            raise ValueError("conductance vector does not match edge count")
        if drive.shape != (len(self.input_nodes),):
            raise ValueError("drive length does not match input electrodes")
        if not np.all(np.isfinite(drive)):
            raise ValueError("drive voltages must be finite")
        drive_full = np.zeros(self.n_nodes)
        drive_full[self.input_nodes] = drive
        if self.n_unknowns == 0:
            return self._expand(np.empty(0), drive_full)
        self._refactor(g)
        x = self._ldl.solve(self._rhs(g, drive_full))
        return self._expand(x, drive_full)

    def begin_tile(self, drive: np.ndarray) -> "TileSession":
        return TileSession(self, drive)


class TileSession:
    """Sequence of solves for one tile presentation (fixed drive).

    Exploits the structure of a per-tile run: the first solve uses the
    cached all-off factorization; later solves apply a Woodbury correction
    for the (usually small) set of junctions that have left the off state,
    falling back to exact refactorization when that set grows large.  Each
    solution is residual-checked against the current-conservation bound and
    repaired (refined, then refactored) if it ever fails.
    """

    def __init__(self, solver: KirchhoffSolver, drive: np.ndarray):
        drive = np.asarray(drive, dtype=np.float64)
        if drive.shape != (len(solver.input_nodes),):
            raise ValueError("drive length does not match input electrodes")
        if not np.all(np.isfinite(drive)):
            raise ValueError("drive voltages must be finite")
        self.solver = solver
        self.drive_full = np.zeros(solver.n_nodes)
        self.drive_full[solver.input_nodes] = drive
        self.uniform_value = None
        if len(drive) and float(np.ptp(drive)) == 0.0:
            self.uniform_value = float(drive[0])
        self.vmax = float(np.abs(drive).max()) if len(drive) else 0.0

        nu = solver.n_unknowns
        limit = solver.woodbury_limit
        self._mode_refactor = False
        self._tracked = np.empty(0, dtype=np.int64)
        self._tracked_mask = np.zeros(solver.n_edges, dtype=bool)
        self._z = np.empty((limit, nu)) if nu else np.empty((limit, 0))
        self._ztb = np.empty((limit, limit))
        self._x0ext = np.empty(nu + 1)

    def _track_new(self, new_edges: np.ndarray) -> None:
        solver = self.solver
        solver._ensure_base_factor()
        nu = solver.n_unknowns
        k0 = len(self._tracked)
        k1 = k0 + len(new_edges)
        cols = np.zeros((nu + 1, len(new_edges)))
        idx = np.arange(len(new_edges))
        cols[solver.red_a[new_edges], idx] += 1.0
        cols[solver.red_b[new_edges], idx] -= 1.0
        self._z[k0:k1] = solver._ldl.solve_many(cols[:nu]).T
        self._tracked = np.concatenate([self._tracked, new_edges])
        self._tracked_mask[new_edges] = True
        pa = solver.red_a[self._tracked]
        pb = solver.red_b[self._tracked]
        # Gram block: (z_e . b_f) = z_e[pa_f] - z_e[pb_f], sentinel reads 0;
        # symmetrize since B^T A0^-1 B is symmetric up to roundoff
        zext = np.concatenate([self._z[:k1], np.zeros((k1, 1))], axis=1)
        block = zext[:, pa] - zext[:, pb]
        self._ztb[:k1, :k1] = 0.5 * (block + block.T)

    def _woodbury_solve(self, rhs: np.ndarray, act: np.ndarray,
                        cho) -> np.ndarray:
        solver = self.solver
        solver._ensure_base_factor()
        x0 = solver._ldl.solve(rhs)
        if len(act) == 0:
            return x0
        self._x0ext[:-1] = x0
        self._x0ext[-1] = 0.0
        pa = solver.red_a[self._tracked[act]]
        pb = solver.red_b[self._tracked[act]]
        u = self._x0ext[pa] - self._x0ext[pb]
        y = cho_solve(cho, u, check_finite=False)
        return x0 - self._z[act].T @ y

    def _residual_ok(self, x: np.ndarray, rhs: np.ndarray, g: np.ndarray,
                     act_edges: np.ndarray) -> bool:
        solver = self.solver
        r = self._kcl_residual(x, rhs, g, act_edges)
        diag = solver._base_diag.copy()
        if len(act_edges):
            delta = g[act_edges] - solver.g_off
            pa = solver.red_a[act_edges]
            pb = solver.red_b[act_edges]
            sel_a = pa < solver.n_unknowns
            sel_b = pb < solver.n_unknowns
            np.add.at(diag, pa[sel_a], delta[sel_a])
            np.add.at(diag, pb[sel_b], delta[sel_b])
        vscale = max(self.vmax, float(np.abs(x).max()) if len(x) else 0.0)
        if vscale == 0.0:
            return bool(np.all(np.abs(r) <= RESIDUAL_RTOL * diag))
        return bool(np.all(np.abs(r) <= RESIDUAL_RTOL * diag * vscale))

    def solve(self, g: np.ndarray) -> np.ndarray:
        """Node voltages for the session's drive at conductances ``g``."""
        solver = self.solver
        if self.uniform_value is not None:
            # equal Dirichlet values equilibrate every live node exactly
            v = np.zeros(solver.n_nodes)
            live = np.concatenate([solver.unknown_nodes, solver.input_nodes])
            v[live] = self.uniform_value
            return v
        if solver.n_unknowns == 0:
            return solver._expand(np.empty(0), self.drive_full)
        rhs = solver._rhs(g, self.drive_full)

        if not self._mode_refactor:
            changed = np.flatnonzero((g != solver.g_off)
                                     & solver.reducible_edge)
            new = changed[~self._tracked_mask[changed]]
            if len(self._tracked) + len(new) > solver.woodbury_limit:
                self._mode_refactor = True
            else:
                if len(new):
                    self._track_new(new)
                delta_all = g[self._tracked] - solver.g_off
                act = np.flatnonzero(delta_all != 0.0)
                if len(act):
                    c = self._ztb[np.ix_(act, act)].copy()
                    c[np.diag_indices(len(act))] += 1.0 / delta_all[act]
                    cho = cho_factor(c, lower=True, check_finite=False)
                else:
                    cho = None
                x = self._woodbury_solve(rhs, act, cho)
                act_edges = self._tracked[act]
                if self._residual_ok(x, rhs, g, act_edges):
                    return solver._expand(x, self.drive_full)
                if cho is not None:
                    # one round of iterative refinement through the same
                    # low-rank correction before giving up on the fast path
                    x = x + self._woodbury_solve(
                        self._kcl_residual(x, rhs, g, act_edges), act, cho)
                    if self._residual_ok(x, rhs, g, act_edges):
                        return solver._expand(x, self.drive_full)
                self._mode_refactor = True

        solver._refactor(g)
        x = solver._ldl.solve(rhs)
        act_edges = np.flatnonzero((g != solver.g_off)
                                   & solver.reducible_edge)
        if not self._residual_ok(x, rhs, g, act_edges):
            x = x + solver._ldl.solve(
                self._kcl_residual(x, rhs, g, act_edges))
        return solver._expand(x, self.drive_full)

    def _kcl_residual(self, x: np.ndarray, rhs: np.ndarray, g: np.ndarray,
                      act_edges: np.ndarray) -> np.ndarray:
        solver = self.solver
        r = rhs - solver._base_matrix @ x
        if len(act_edges):
            xe = np.concatenate([x, [0.0]])
            pa = solver.red_a[act_edges]
            pb = solver.red_b[act_edges]
            flow = (g[act_edges] - solver.g_off) * (xe[pa] - xe[pb])
            sel = pa < solver.n_unknowns
            np.subtract.at(r, pa[sel], flow[sel])
            sel = pb < solver.n_unknowns
            np.add.at(r, pb[sel], flow[sel])
        return r


_solver_cache: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def solver_for(graph: DeviceGraph, g_off: float) -> KirchhoffSolver:
    """Per-graph solver cache (symbolic analysis is worth reusing)."""
    per_graph = _solver_cache.get(graph)
    if per_graph is None:
        per_graph = {}
        _solver_cache[graph] = per_graph
    solver = per_graph.get(g_off)
    if solver is None:
        solver = KirchhoffSolver(graph, g_off)
        per_graph[g_off] = solver
    return solver


def solve_network(graph: DeviceGraph, g: np.ndarray,
                  drive: np.ndarray) -> np.ndarray:
    """Voltage distribution across the network for one conductance state."""
    return solver_for(graph, _infer_g_off(g)).solve(g, drive)


def _infer_g_off(g: np.ndarray) -> float:
    g = np.asarray(g, dtype=np.float64)
    if len(g) == 0:
        return 1.0
    lo = float(g.min())
    if lo <= 0:
        raise ValueError("conductances must be positive")
    return lo


def run_tile(graph: DeviceGraph, pooled: np.ndarray, params: DynParams,
             state_in: np.ndarray | None = None,
             solver: KirchhoffSolver | None = None,
             trace=None) -> tuple:
    """Present one pooled tile to the device and read out the response.

    ``pooled`` maps row-major onto the input electrodes.  The drive is held
    constant while ``steps_per_tile`` solve/update rounds run; the returned
    readout is the voltage at each readout electrode after the final round,
    in row-major electrode order, together with the final junction state.

    ``trace``, if given, is a callable receiving (step, lambda, junction_v)
    after each state update; it serves the debug CSV dump.
    """
    params.validate()
    pooled = np.asarray(pooled, dtype=np.float64).reshape(-1)
    if pooled.shape != (len(graph.input_node_ids),):
        raise ValueError("pooled drive length %d does not match %d input "
                         "electrodes" % (len(pooled),
                                         len(graph.input_node_ids)))
    if solver is None:
        solver = solver_for(graph, params.g_off)
    if params.reset_policy == RESET_PER_TILE or state_in is None:
        state = initial_state(graph)
    else:
        state = np.asarray(state_in, dtype=np.float64).copy()
        if state.shape != (graph.edge_count,):
            raise ValueError("state length does not match junction count")

    session = solver.begin_tile(pooled)
    v = np.zeros(graph.node_count)
    for step in range(int(params.steps_per_tile)):
        gvals = conductance(state, params)
        v = session.solve(gvals)
        state = step_state(state, v, graph, params)
        if trace is not None:
            trace(step, state, v[graph.edge_a] - v[graph.edge_b])
    readout = v[np.asarray(graph.readout_node_ids, dtype=np.int64)]
    return readout, state


def write_trace_header(fh) -> None:
    fh.write("step,junction,lambda,voltage\n")


def make_csv_tracer(fh):
    """Trace callback appending one CSV row per junction per step."""

    def tracer(step, state, junction_v):
        for j in range(len(state)):
            fh.write("%d,%d,%.17g,%.17g\n"
                     % (step, j, state[j], junction_v[j]))

    return tracer
