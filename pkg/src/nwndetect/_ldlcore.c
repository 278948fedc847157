/* Numeric kernels for repeated LDL^T factorization on a fixed sparsity
 * pattern.
 *
 * The simulation refactors the same conductance Laplacian thousands of times
 * per granule with only the numeric values changing.  The symbolic structure
 * (elimination tree, row patterns, column layout of L) is computed once on
 * the Python side; these kernels run the numeric sweep and the triangular
 * solves.  Matrices are SPD by construction (Dirichlet-reduced Laplacians),
 * so no pivoting is performed; a non-positive pivot reports an error.
 *
 * Array contract (validated by the Python wrapper, trusted here):
 *   Ap, Ai, Ax   upper-triangular CSC of the permuted matrix, diagonal
 *                entry present in every column, int32 indices
 *   rowp, rowj   concatenated row patterns: rowj[rowp[k]:rowp[k+1]] lists
 *                the strictly-lower columns of row k of L, ascending
 *   Lp, Li       CSC layout of strictly-lower L; rows in each column appear
 *                in the order the numeric sweep emits them (ascending k)
 *   Lx, D        numeric output buffers
 *   Y, Lnz       zeroed f64 / int32 workspaces of length n
 */

#define PY_SSIZE_T_CLEAN
#include <Python.h>

#include <string.h>

typedef struct {
    Py_buffer view;
    int ok;
} buf_t;

static int
grab(PyObject *obj, buf_t *b, int writable, char kind, Py_ssize_t itemsize,
     const char *name)
{
    int flags = writable ? (PyBUF_C_CONTIGUOUS | PyBUF_FORMAT | PyBUF_WRITABLE)
                         : (PyBUF_C_CONTIGUOUS | PyBUF_FORMAT);
    b->ok = 0;
    if (PyObject_GetBuffer(obj, &b->view, flags) != 0) {
        return -1;
    }
    b->ok = 1;
    if (b->view.itemsize != itemsize ||
        b->view.format == NULL || b->view.format[0] != kind) {
        PyErr_Format(PyExc_TypeError, "%s: expected dtype '%c' (itemsize %zd)",
                     name, kind, itemsize);
        return -1;
    }
    return 0;
}

static void
drop(buf_t *bufs, int count)
{
    for (int i = 0; i < count; i++) {
        if (bufs[i].ok) {
            PyBuffer_Release(&bufs[i].view);
        }
    }
}

/* refactor(n, Ap, Ai, Ax, rowp, rowj, Lp, Li, Lx, D, Y, Lnz) -> None */
static PyObject *
refactor(PyObject *self, PyObject *args)
{
    long n_in;
    PyObject *o[11];
    if (!PyArg_ParseTuple(args, "lOOOOOOOOOOO", &n_in, &o[0], &o[1], &o[2],
                          &o[3], &o[4], &o[5], &o[6], &o[7], &o[8], &o[9],
                          &o[10])) {
        return NULL;
    }
    buf_t b[11];
    static const char kinds[11] = {'i', 'i', 'd', 'i', 'i', 'i', 'i',
                                   'd', 'd', 'd', 'i'};
    static const Py_ssize_t sizes[11] = {4, 4, 8, 4, 4, 4, 4, 8, 8, 8, 4};
    static const int writable[11] = {0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1};
    static const char *names[11] = {"Ap", "Ai", "Ax", "rowp", "rowj", "Lp",
                                    "Li", "Lx", "D", "Y", "Lnz"};
    for (int i = 0; i < 11; i++) {
        if (grab(o[i], &b[i], writable[i], kinds[i], sizes[i], names[i]) != 0) {
            drop(b, i + 1);
            return NULL;
        }
    }
    const int n = (int)n_in;
    const int *restrict Ap = (const int *)b[0].view.buf;
    const int *restrict Ai = (const int *)b[1].view.buf;
    const double *restrict Ax = (const double *)b[2].view.buf;
    const int *restrict rowp = (const int *)b[3].view.buf;
    const int *restrict rowj = (const int *)b[4].view.buf;
    const int *restrict Lp = (const int *)b[5].view.buf;
    const int *restrict Li = (const int *)b[6].view.buf;
    double *restrict Lx = (double *)b[7].view.buf;
    double *restrict D = (double *)b[8].view.buf;
    double *restrict Y = (double *)b[9].view.buf;
    int *restrict Lnz = (int *)b[10].view.buf;

    int bad = -1;
    Py_BEGIN_ALLOW_THREADS
    memset(Lnz, 0, (size_t)n * sizeof(int));
    for (int k = 0; k < n; k++) {
        double dk = 0.0;
        for (int p = Ap[k]; p < Ap[k + 1]; p++) {
            int i = Ai[p];
            if (i == k) {
                dk = Ax[p];
            } else {
                Y[i] = Ax[p];
            }
        }
        for (int q = rowp[k]; q < rowp[k + 1]; q++) {
            const int j = rowj[q];
            const double yj = Y[j];
            Y[j] = 0.0;
            const int p0 = Lp[j];
            const int p1 = p0 + Lnz[j];
            int p = p0;
            for (; p + 3 < p1; p += 4) {
                const double y0 = Lx[p] * yj;
                const double y1 = Lx[p + 1] * yj;
                const double y2 = Lx[p + 2] * yj;
                const double y3 = Lx[p + 3] * yj;
                Y[Li[p]] -= y0;
                Y[Li[p + 1]] -= y1;
                Y[Li[p + 2]] -= y2;
                Y[Li[p + 3]] -= y3;
            }
            for (; p < p1; p++) {
                Y[Li[p]] -= Lx[p] * yj;
            }
            const double lkj = yj / D[j];
            dk -= lkj * yj;
            Lx[p1] = lkj;
            Lnz[j] = Lnz[j] + 1;
        }
        if (!(dk > 0.0)) {
            bad = k;
            break;
        }
        D[k] = dk;
    }
    Py_END_ALLOW_THREADS
    drop(b, 11);
    if (bad >= 0) {
        PyErr_Format(PyExc_ArithmeticError,
                     "non-positive pivot at permuted column %d "
                     "(matrix not positive definite)", bad);
        return NULL;
    }
    Py_RETURN_NONE;
}

/* solve_inplace(n, Lp, Li, Lx, D, x) -> None; x in permuted ordering */
static PyObject *
solve_inplace(PyObject *self, PyObject *args)
{
    long n_in;
    PyObject *o[5];
    if (!PyArg_ParseTuple(args, "lOOOOO", &n_in, &o[0], &o[1], &o[2], &o[3],
                          &o[4])) {
        return NULL;
    }
    buf_t b[5];
    static const char kinds[5] = {'i', 'i', 'd', 'd', 'd'};
    static const Py_ssize_t sizes[5] = {4, 4, 8, 8, 8};
    static const int writable[5] = {0, 0, 0, 0, 1};
    static const char *names[5] = {"Lp", "Li", "Lx", "D", "x"};
    for (int i = 0; i < 5; i++) {
        if (grab(o[i], &b[i], writable[i], kinds[i], sizes[i], names[i]) != 0) {
            drop(b, i + 1);
            return NULL;
        }
    }
    const int n = (int)n_in;
    const int *Lp = (const int *)b[0].view.buf;
    const int *Li = (const int *)b[1].view.buf;
    const double *Lx = (const double *)b[2].view.buf;
    const double *D = (const double *)b[3].view.buf;
    double *x = (double *)b[4].view.buf;

    Py_BEGIN_ALLOW_THREADS
    for (int j = 0; j < n; j++) {
        const double xj = x[j];
        if (xj != 0.0) {
            for (int p = Lp[j]; p < Lp[j + 1]; p++) {
                x[Li[p]] -= Lx[p] * xj;
            }
        }
    }
    for (int j = 0; j < n; j++) {
        x[j] /= D[j];
    }
    for (int j = n - 1; j >= 0; j--) {
        double s = x[j];
        for (int p = Lp[j]; p < Lp[j + 1]; p++) {
            s -= Lx[p] * x[Li[p]];
        }
        x[j] = s;
    }
    Py_END_ALLOW_THREADS
    drop(b, 5);
    Py_RETURN_NONE;
}

/* solve_many_inplace(n, w, Lp, Li, Lx, D, W) -> None
 * W is row-major (n, w); all w right-hand sides solved together so the inner
 * loops stream contiguously. */
static PyObject *
solve_many_inplace(PyObject *self, PyObject *args)
{
    long n_in, w_in;
    PyObject *o[5];
    if (!PyArg_ParseTuple(args, "llOOOOO", &n_in, &w_in, &o[0], &o[1], &o[2],
                          &o[3], &o[4])) {
        return NULL;
    }
    buf_t b[5];
    static const char kinds[5] = {'i', 'i', 'd', 'd', 'd'};
    static const Py_ssize_t sizes[5] = {4, 4, 8, 8, 8};
    static const int writable[5] = {0, 0, 0, 0, 1};
    static const char *names[5] = {"Lp", "Li", "Lx", "D", "W"};
    for (int i = 0; i < 5; i++) {
        if (grab(o[i], &b[i], writable[i], kinds[i], sizes[i], names[i]) != 0) {
            drop(b, i + 1);
            return NULL;
        }
    }
    const int n = (int)n_in;
    const int w = (int)w_in;
    const int *restrict Lp = (const int *)b[0].view.buf;
    const int *restrict Li = (const int *)b[1].view.buf;
    const double *restrict Lx = (const double *)b[2].view.buf;
    const double *restrict D = (const double *)b[3].view.buf;
    double *restrict W = (double *)b[4].view.buf;

    Py_BEGIN_ALLOW_THREADS
    for (int j = 0; j < n; j++) {
        const double *wj = W + (size_t)j * w;
        int any = 0;
        for (int r = 0; r < w; r++) {
            if (wj[r] != 0.0) {
                any = 1;
                break;
            }
        }
        if (!any) {
            continue;
        }
        for (int p = Lp[j]; p < Lp[j + 1]; p++) {
            double *wt = W + (size_t)Li[p] * w;
            const double lx = Lx[p];
            for (int r = 0; r < w; r++) {
                wt[r] -= lx * wj[r];
            }
        }
    }
    for (int j = 0; j < n; j++) {
        const double dj = D[j];
        double *wj = W + (size_t)j * w;
        for (int r = 0; r < w; r++) {
            wj[r] /= dj;
        }
    }
    for (int j = n - 1; j >= 0; j--) {
        double *wj = W + (size_t)j * w;
        for (int p = Lp[j]; p < Lp[j + 1]; p++) {
            const double *ws = W + (size_t)Li[p] * w;
            const double lx = Lx[p];
            for (int r = 0; r < w; r++) {
                wj[r] -= lx * ws[r];
            }
        }
    }
    Py_END_ALLOW_THREADS
    drop(b, 5);
    Py_RETURN_NONE;
}

static PyMethodDef methods[] = {
    {"refactor", refactor, METH_VARARGS,
     "Numeric LDL^T refactorization on a precomputed symbolic pattern."},
    {"solve_inplace", solve_inplace, METH_VARARGS,
     "In-place LDL^T solve in the permuted ordering."},
    {"solve_many_inplace", solve_many_inplace, METH_VARARGS,
     "In-place LDL^T solve of a row-major block of right-hand sides."},
    {NULL, NULL, 0, NULL},
};

static struct PyModuleDef moduledef = {
    PyModuleDef_HEAD_INIT, "_ldlcore",
    "Fixed-pattern sparse LDL^T numeric kernels.", -1, methods,
};

PyMODINIT_FUNC
PyInit__ldlcore(void)
{
    return PyModule_Create(&moduledef);
}
