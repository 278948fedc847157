"""Fixed-pattern sparse LDL^T factorization for SPD matrices.

The dynamics integrator solves thousands of linear systems whose sparsity
pattern never changes while the numeric values do.  This module performs the
one-time symbolic analysis (fill-reducing permutation applied by the caller,
elimination tree, row patterns, column layout of the factor) in Python and
delegates the per-step numeric work to the compiled kernels in
:mod:`nwndetect._ldlcore`.

The factorization is the classic up-looking sparse LDL^T: row k of L is the
solution of a sparse triangular system whose nonzero pattern is the union of
elimination-tree paths from the entries of A[:k, k] up to k.  Because the
pattern is static, those paths are computed once and the numeric sweep is a
straight array walk.
"""

from __future__ import annotations

import numpy as np

from . import _ldlcore


def _elimination_tree(ap: np.ndarray, ai: np.ndarray, n: int) -> np.ndarray:
    """Parent array of the elimination tree of an upper-CSC pattern."""
    parent = np.full(n, -1, dtype=np.int64)
    ancestor = np.full(n, -1, dtype=np.int64)
    ap_l = ap.tolist()
    ai_l = ai.tolist()
    par = parent.tolist()
    anc = ancestor.tolist()
    for k in range(n):
        for p in range(ap_l[k], ap_l[k + 1]):
            i = ai_l[p]
            # walk toward the root with path compression
            while i != -1 and i < k:
                nxt = anc[i]
                anc[i] = k
                if nxt == -1:
                    par[i] = k
                i = nxt
    return np.asarray(par, dtype=np.int64)


def _row_patterns(ap: np.ndarray, ai: np.ndarray, parent: np.ndarray,
                  n: int) -> tuple:
    """Strictly-lower pattern of each row of L, ascending, concatenated.

    Row k's pattern is found by walking the elimination tree upward from
    every entry of A[0:k, k] until hitting an already-visited node (classic
    reach computation).  Total work is proportional to nnz(L).
    """
    ap_l = ap.tolist()
    ai_l = ai.tolist()
    par = parent.tolist()
    marker = [-1] * n
    per_row = []
    total = 0
    for k in range(n):
        marker[k] = k
        acc = []
        for p in range(ap_l[k], ap_l[k + 1]):
            i = ai_l[p]
            while i < k and marker[i] != k:
                marker[i] = k
                acc.append(i)
                i = par[i]
        acc.sort()
        per_row.append(acc)
        total += len(acc)

    rowp = np.zeros(n + 1, dtype=np.int32)
    rowj = np.empty(total, dtype=np.int32)
    pos = 0
    for k in range(n):
        acc = per_row[k]
        rowj[pos:pos + len(acc)] = acc
        pos += len(acc)
        rowp[k + 1] = pos
    return rowp, rowj


class FixedPatternLDL:
    """LDL^T factorization with one symbolic analysis and many refactors.

    Parameters
    ----------
    n : int
        Matrix dimension.
    rows, cols : int arrays
        Coordinate pattern of the matrix.  Give each logical entry once, in
        either orientation: (i, j) and (j, i) denote the same off-diagonal
        slot and their contributions accumulate, so listing both doubles the
        value.  Duplicates are allowed and fold into shared slots.
    perm : int array
        Fill-reducing permutation: entry i of the permuted matrix is entry
        ``perm[i]`` of the original.

    After construction, :attr:`contrib_slots` maps each input coordinate to
    its slot in the packed upper-triangular value array expected by
    :meth:`refactor`; build the value array with any linear map and call
    ``refactor`` / ``solve`` freely.
    """

    def __init__(self, n: int, rows: np.ndarray, cols: np.ndarray,
                 perm: np.ndarray):
        n = int(n)
        perm = np.asarray(perm, dtype=np.int64)
        if perm.shape != (n,) or (n and not np.array_equal(
                np.sort(perm), np.arange(n))):
            raise ValueError("perm must be a permutation of range(n)")
        inv = np.empty(n, dtype=np.int64)
        inv[perm] = np.arange(n)
        self.n = n
        self.perm = perm

        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if rows.shape != cols.shape:
            raise ValueError("rows and cols must have the same shape")
        if len(rows) and (rows.min() < 0 or rows.max() >= n
                          or cols.min() < 0 or cols.max() >= n):
            raise ValueError("pattern index out of range")

        pr = inv[rows]
        pc = inv[cols]
        up_r = np.minimum(pr, pc)
        up_c = np.maximum(pr, pc)
        order = np.lexsort((up_r, up_c))
        r_s = up_r[order]
        c_s = up_c[order]
        fresh = np.ones(len(order), dtype=bool)
        if len(order):
            fresh[1:] = (r_s[1:] != r_s[:-1]) | (c_s[1:] != c_s[:-1])
        slot_sorted = np.cumsum(fresh) - 1
        slots = np.empty(len(order), dtype=np.int64)
        slots[order] = slot_sorted
        self.contrib_slots = slots
        self.nnz_upper = int(slot_sorted[-1]) + 1 if len(order) else 0

        ai = r_s[fresh].astype(np.int32)
        cols_unique = c_s[fresh]
        ap = np.zeros(n + 1, dtype=np.int32)
        np.add.at(ap, cols_unique + 1, 1)
        ap = np.cumsum(ap, dtype=np.int64).astype(np.int32)
        diag_present = np.zeros(n, dtype=bool)
        diag_present[cols_unique[r_s[fresh] == cols_unique]] = True
        if not diag_present.all():
            raise ValueError("every row/column needs a diagonal entry "
                             "(isolated unknown in the system)")
        self.ap = ap
        self.ai = ai

        parent = _elimination_tree(ap, ai, n)
        rowp, rowj = _row_patterns(ap, ai, parent, n)
        self.rowp = rowp
        self.rowj = rowj

        colnnz = np.bincount(rowj, minlength=n).astype(np.int64)
        lp = np.zeros(n + 1, dtype=np.int32)
        lp[1:] = np.cumsum(colnnz).astype(np.int32)
        # Li: for column j, the rows k that reference j, ascending; built by
        # sorting (column, row) pairs of the row patterns
        flat_k = np.repeat(np.arange(n, dtype=np.int32),
                           np.diff(rowp).astype(np.int64))
        order = np.lexsort((flat_k, rowj))
        li = flat_k[order]
        self.lp = lp
        self.li = li
        self.nnz_factor = int(len(li))

        self.lx = np.empty(len(li), dtype=np.float64)
        self.d = np.empty(n, dtype=np.float64)
        self._y = np.zeros(n, dtype=np.float64)
        self._lnz = np.zeros(n, dtype=np.int32)
        self._factored = False

    def refactor(self, ax_upper: np.ndarray) -> None:
        """Recompute the numeric factor from packed upper-triangular values."""
        ax_upper = np.ascontiguousarray(ax_upper, dtype=np.float64)
        if ax_upper.shape != (self.nnz_upper,):
            raise ValueError("value array does not match the analysed pattern")
        _ldlcore.refactor(self.n, self.ap, self.ai, ax_upper,
                          self.rowp, self.rowj, self.lp, self.li,
                          self.lx, self.d, self._y, self._lnz)
        self._factored = True

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve A x = b with the current factor."""
        if not self._factored:
            raise RuntimeError("refactor() must run before solve()")
        b = np.asarray(b, dtype=np.float64)
        if b.shape != (self.n,):
            raise ValueError("right-hand side has wrong length")
        xp = b[self.perm]
        _ldlcore.solve_inplace(self.n, self.lp, self.li, self.lx, self.d, xp)
        out = np.empty(self.n, dtype=np.float64)
        out[self.perm] = xp
        return out

    def solve_many(self, b: np.ndarray) -> np.ndarray:
        """Solve A X = B for a block of columns (B is (n, k))."""
        if not self._factored:
            raise RuntimeError("refactor() must run before solve_many()")
        b = np.asarray(b, dtype=np.float64)
        if b.ndim != 2 or b.shape[0] != self.n:
            raise ValueError("block right-hand side must be (n, k)")
        k = b.shape[1]
        if k == 0:
            return np.empty((self.n, 0))
        wp = np.ascontiguousarray(b[self.perm])
        _ldlcore.solve_many_inplace(self.n, k, self.lp, self.li,
                                    self.lx, self.d, wp)
        out = np.empty((self.n, k))
        out[self.perm] = wp
        return out

    def factor_copy(self) -> tuple:
        """Snapshot of the numeric factor (for caching a base matrix)."""
        return self.lx.copy(), self.d.copy()

    def restore_factor(self, snapshot: tuple) -> None:
        lx, d = snapshot
        self.lx[:] = lx
        self.d[:] = d
        self._factored = True
