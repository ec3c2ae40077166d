# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; same contracts as ``_kernels_py``.

Matrix products go through BLAS dgemm from scipy. All arrays are
row-major, so a row-major product C = A B is issued as the column-major
product C^T = B^T A^T.
"""
import numpy as np
from libc.math cimport exp, sqrt
from libc.stdlib cimport malloc, free
from scipy.linalg.cython_blas cimport dgemm

BACKEND = "cython"


cdef inline void _mm(bint ta, bint tb, int m, int n, int k, double alpha,
                     double* a, int lda, double* b, int ldb, double beta,
                     double* c, int ldc) noexcept nogil:
    # column-major C(m x n) = alpha op(A) op(B) + beta C
    cdef char ca = b'T' if ta else b'N'
    cdef char cb = b'T' if tb else b'N'
    if m == 0 or n == 0:
        return
    dgemm(&ca, &cb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


cdef inline double _sig(double z) noexcept nogil:
    return 1.0 / (1.0 + exp(-z))


cdef struct Net:
    int L
    int* sizes
    double* params
    Py_ssize_t* woff
    Py_ssize_t* boff
    int maxw


cdef int _net_init(Net* net, double* params, long[::1] sizes) except -1:
    cdef int L = sizes.shape[0] - 1
    cdef int l
    cdef Py_ssize_t off = 0
    net.L = L
    net.params = params
    net.sizes = <int*> malloc((L + 1) * sizeof(int))
    net.woff = <Py_ssize_t*> malloc(L * sizeof(Py_ssize_t))
    net.boff = <Py_ssize_t*> malloc(L * sizeof(Py_ssize_t))
    if net.sizes == NULL or net.woff == NULL or net.boff == NULL:
        raise MemoryError()
    net.maxw = 0
    for l in range(L + 1):
        net.sizes[l] = <int> sizes[l]
        if sizes[l] > net.maxw:
            net.maxw = <int> sizes[l]
    for l in range(L):
        net.woff[l] = off
        off += sizes[l] * sizes[l + 1]
        net.boff[l] = off
        off += sizes[l + 1]
    return 0


cdef void _net_free(Net* net) noexcept:
    free(net.sizes)
    free(net.woff)
    free(net.boff)


cdef void _forward(Net* net, int n, double* X, double* pre, double* act) noexcept nogil:
    """Forward pass keeping caches.

    ``pre`` and ``act`` hold L blocks of n*maxw doubles; block l stores the
    pre-activation / activation of layer l. The output is pre block L-1.
    """
    cdef int l, i, j, nin, nout
    cdef double* h = X
    cdef double* z
    cdef double* b
    cdef Py_ssize_t blk = <Py_ssize_t> n * net.maxw
    for l in range(net.L):
        nin = net.sizes[l]
        nout = net.sizes[l + 1]
        z = pre + l * blk
        b = net.params + net.boff[l]
        for i in range(n):
            for j in range(nout):
                z[i * nout + j] = b[j]
        _mm(False, False, nout, n, nin, 1.0, net.params + net.woff[l], nout,
            h, nin, 1.0, z, nout)
        if l < net.L - 1:
            h = act + l * blk
            for i in range(n * nout):
                h[i] = z[i] * _sig(z[i])


cdef void _backward(Net* net, int n, double* X, double* pre, double* act,
                    double* dz, double* tmp, double* grad) noexcept nogil:
    """Reverse pass; ``dz`` holds d loss / d output on entry (clobbered)."""
    cdef int l, i, j, nin, nout
    cdef double* hprev
    cdef double* gw
    cdef double* gb
    cdef double* z
    cdef double* swap
    cdef double s, zz
    cdef Py_ssize_t blk = <Py_ssize_t> n * net.maxw
    for l in range(net.L - 1, -1, -1):
        nin = net.sizes[l]
        nout = net.sizes[l + 1]
        hprev = X if l == 0 else act + (l - 1) * blk
        gw = grad + net.woff[l]
        gb = grad + net.boff[l]
        _mm(False, True, nout, nin, n, 1.0, dz, nout, hprev, nin, 0.0, gw, nout)
        if n == 0:
            for j in range(nin * nout):
                gw[j] = 0.0
        for j in range(nout):
            gb[j] = 0.0
        for i in range(n):
            for j in range(nout):
                gb[j] += dz[i * nout + j]
        if l > 0:
            _mm(True, False, nin, n, nout, 1.0, net.params + net.woff[l], nout,
                dz, nout, 0.0, tmp, nin)
            z = pre + (l - 1) * blk
            for i in range(n * nin):
                zz = z[i]
                s = _sig(zz)
                tmp[i] = tmp[i] * (s * (1.0 + zz * (1.0 - s)))
            swap = dz
            dz = tmp
            tmp = swap


def mlp_forward(double[::1] params, long[::1] sizes, X):
    cdef double[:, ::1] Xc = np.require(X, np.float64, "CW")
    cdef int n = Xc.shape[0]
    cdef Net net
    _net_init(&net, &params[0], sizes)
    cdef Py_ssize_t blk = <Py_ssize_t> max(n, 1) * net.maxw
    cdef double[::1] pre = np.empty(net.L * blk)
    cdef double[::1] act = np.empty(max(net.L - 1, 1) * blk)
    cdef int nout = net.sizes[net.L]
    out = np.empty((n, nout))
    cdef double[:, ::1] o = out
    cdef int i, j
    cdef double* last
    try:
        with nogil:
            if n > 0:
                _forward(&net, n, &Xc[0, 0], &pre[0], &act[0])
                last = &pre[0] + (net.L - 1) * blk
                for i in range(n):
                    for j in range(nout):
                        o[i, j] = last[i * nout + j]
    finally:
        _net_free(&net)
    return out


def mlp_loss_grad(double[::1] params, long[::1] sizes, X, target):
    cdef double[:, ::1] Xc = np.require(X, np.float64, "CW")
    cdef double[:, ::1] Tc = np.require(target, np.float64, "CW")
    cdef int n = Xc.shape[0]
    cdef Net net
    _net_init(&net, &params[0], sizes)
    cdef Py_ssize_t blk = <Py_ssize_t> max(n, 1) * net.maxw
    cdef double[::1] pre = np.empty(net.L * blk)
    cdef double[::1] act = np.empty(max(net.L - 1, 1) * blk)
    cdef double[::1] dz = np.empty(blk)
    cdef double[::1] tmp = np.empty(blk)
    grad_arr = np.zeros(params.shape[0])
    cdef double[::1] grad = grad_arr
    cdef int nout = net.sizes[net.L]
    cdef int i, j
    cdef double loss = 0.0, d
    cdef double* last
    try:
        with nogil:
            _forward(&net, n, &Xc[0, 0], &pre[0], &act[0])
            last = &pre[0] + (net.L - 1) * blk
            for i in range(n):
                for j in range(nout):
                    d = last[i * nout + j] - Tc[i, j]
                    loss += d * d
                    dz[i * nout + j] = 2.0 * d / n
            loss /= n
            _backward(&net, n, &Xc[0, 0], &pre[0], &act[0], &dz[0], &tmp[0], &grad[0])
    finally:
        _net_free(&net)
    return loss, grad_arr


cdef void _adam(double* p, double* g, double* m, double* v, Py_ssize_t size,
                long step, double lr, double b1, double b2, double eps) noexcept nogil:
    cdef Py_ssize_t i
    cdef double c1 = 1.0 - b1 ** step
    cdef double c2 = 1.0 - b2 ** step
    cdef double mh, vh
    for i in range(size):
        m[i] = b1 * m[i] + (1.0 - b1) * g[i]
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i]
        mh = m[i] / c1
        vh = v[i] / c2
        p[i] -= lr * mh / (sqrt(vh) + eps)


def adam_update(double[::1] params, double[::1] grad, double[::1] m, double[::1] v,
                long step, double lr, double beta1, double beta2, double eps):
    with nogil:
        _adam(&params[0], &grad[0], &m[0], &v[0], params.shape[0], step,
              lr, beta1, beta2, eps)


cdef void _ddim(Net* net, int n, int d, int c, int e, double* x, double* cond,
                double* ab, double* temb, int T, bint encode, double* inp,
                double* pre, double* act) noexcept nogil:
    cdef int s, t, tn, i, j, w = d + c + e
    cdef double a_t, a_o, scale, coef
    cdef Py_ssize_t blk = <Py_ssize_t> n * net.maxw
    cdef double* eps = pre + (net.L - 1) * blk
    for i in range(n):
        for j in range(c):
            inp[i * w + d + j] = cond[i * c + j]
    for s in range(T):
        if encode:
            t = s
            tn = s + 1
        else:
            t = T - s
            tn = t - 1
        a_t = ab[t]
        a_o = ab[tn]
        for i in range(n):
            for j in range(d):
                inp[i * w + j] = x[i * d + j]
            for j in range(e):
                inp[i * w + d + c + j] = temb[t * e + j]
        _forward(net, n, inp, pre, act)
        scale = sqrt(a_o / a_t)
        if encode:
            coef = sqrt(1.0 - a_o) - sqrt(a_o * (1.0 - a_t) / a_t)
        else:
            coef = -(sqrt(a_o * (1.0 - a_t) / a_t) - sqrt(1.0 - a_o))
        for i in range(n * d):
            x[i] = scale * x[i] + coef * eps[i]


def _ddim_py(params, sizes, x0, cond, alpha_bar, temb, bint encode):
    cdef double[::1] p = params
    cdef double[:, ::1] xv
    cdef double[:, ::1] cv = np.require(cond, np.float64, "CW")
    cdef double[::1] ab = np.require(alpha_bar, np.float64, "CW")
    cdef double[:, ::1] tv = np.require(temb, np.float64, "CW")
    x = np.array(x0, dtype=np.float64, order="C", copy=True)
    xv = x
    cdef int n = xv.shape[0], d = xv.shape[1], c = cv.shape[1], e = tv.shape[1]
    cdef int T = ab.shape[0] - 1
    if n == 0:
        return x
    cdef Net net
    _net_init(&net, &p[0], sizes)
    cdef Py_ssize_t blk = <Py_ssize_t> n * net.maxw
    cdef double[::1] pre = np.empty(net.L * blk)
    cdef double[::1] act = np.empty(max(net.L - 1, 1) * blk)
    cdef double[::1] inp = np.empty(<Py_ssize_t> n * (d + c + e))
    cdef double dummy = 0.0
    cdef double* cptr = &cv[0, 0] if c > 0 else &dummy
    try:
        with nogil:
            _ddim(&net, n, d, c, e, &xv[0, 0], cptr, &ab[0], &tv[0, 0], T,
                  encode, &inp[0], &pre[0], &act[0])
    finally:
        _net_free(&net)
    return x


def ddim_encode(params, sizes, x0, cond, alpha_bar, temb):
    return _ddim_py(params, sizes, x0, cond, alpha_bar, temb, True)


def ddim_decode(params, sizes, z, cond, alpha_bar, temb):
    return _ddim_py(params, sizes, z, cond, alpha_bar, temb, False)


def train_epoch(double[::1] params, long[::1] sizes, double[::1] m, double[::1] v,
                long step, x0, cond, t_idx, eps, order, alpha_bar, temb,
                int batch, double lr, double beta1, double beta2, double guard):
    cdef double[:, ::1] xv = np.require(x0, np.float64, "CW")
    cdef double[:, ::1] cv = np.require(cond, np.float64, "CW")
    cdef long[::1] tv = np.require(t_idx, np.int64, "CW")
    cdef double[:, ::1] ev = np.require(eps, np.float64, "CW")
    cdef long[::1] ov = np.require(order, np.int64, "CW")
    cdef double[::1] ab = np.require(alpha_bar, np.float64, "CW")
    cdef double[:, ::1] te = np.require(temb, np.float64, "CW")
    cdef int n = ov.shape[0], d = xv.shape[1], c = cv.shape[1], e = te.shape[1]
    cdef int w = d + c + e
    cdef Py_ssize_t P = params.shape[0]
    if n == 0:
        return 0.0, step
    cdef Net net
    _net_init(&net, &params[0], sizes)
    cdef Py_ssize_t blk = <Py_ssize_t> batch * net.maxw
    cdef double[::1] pre = np.empty(net.L * blk)
    cdef double[::1] act = np.empty(max(net.L - 1, 1) * blk)
    cdef double[::1] dz = np.empty(blk)
    cdef double[::1] tmp = np.empty(blk)
    cdef double[::1] inp = np.empty(<Py_ssize_t> batch * w)
    cdef double[::1] tgt = np.empty(<Py_ssize_t> batch * d)
    cdef double[::1] grad = np.empty(P)
    cdef int start, bsz, i, j, r, t
    cdef double sa, sb, loss, total = 0.0, diff
    cdef long nb = 0
    cdef double* out
    try:
        with nogil:
            start = 0
            while start < n:
                bsz = batch if n - start > batch else n - start
                for i in range(bsz):
                    r = ov[start + i]
                    t = tv[r]
                    sa = sqrt(ab[t])
                    sb = sqrt(1.0 - ab[t])
                    for j in range(d):
                        tgt[i * d + j] = ev[r, j]
                        inp[i * w + j] = sa * xv[r, j] + sb * ev[r, j]
                    for j in range(c):
                        inp[i * w + d + j] = cv[r, j]
                    for j in range(e):
                        inp[i * w + d + c + j] = te[t, j]
                _forward(&net, bsz, &inp[0], &pre[0], &act[0])
                out = &pre[0] + (net.L - 1) * (<Py_ssize_t> bsz * net.maxw)
                loss = 0.0
                for i in range(bsz * d):
                    diff = out[i] - tgt[i]
                    loss += diff * diff
                    dz[i] = 2.0 * diff / bsz
                loss /= bsz
                _backward(&net, bsz, &inp[0], &pre[0], &act[0], &dz[0], &tmp[0], &grad[0])
                step += 1
                _adam(&params[0], &grad[0], &m[0], &v[0], P, step, lr, beta1, beta2, guard)
                total += loss
                nb += 1
                start += bsz
    finally:
        _net_free(&net)
    return total / nb, step


def rbf_kernel_sum(A, B, double gamma):
    cdef double[:, ::1] a = np.require(A, np.float64, "CW")
    cdef double[:, ::1] b = np.require(B, np.float64, "CW")
    cdef Py_ssize_t na = a.shape[0], nbr = b.shape[0], d = a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double total = 0.0, row, d2, diff
    with nogil:
        for i in range(na):
            row = 0.0
            for j in range(nbr):
                d2 = 0.0
                for k in range(d):
                    diff = a[i, k] - b[j, k]
                    d2 += diff * diff
                row += exp(-gamma * d2)
            total += row
    return total
