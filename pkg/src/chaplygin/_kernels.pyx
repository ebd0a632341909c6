# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled integration kernel for the projected non-holonomic diffusion.

Same algorithm as ``_kernels_py.integrate_nh``, one path at a time with
small stack-free work buffers.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, ceil, log2, M_PI
from libc.stdlib cimport malloc, free
from libc.string cimport memcpy

cnp.import_array()

cdef double MAX_INCREMENT = M_PI / 3.0
cdef double ORTH_TOL = 1e-10
cdef double EXP_THETA = 0.25
cdef int EXP_ORDER = 12


cdef inline void matmul(const double* A, const double* B, double* C, int n) noexcept nogil:
    cdef int i, j, l
    cdef double acc
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for l in range(n):
                acc += A[i * n + l] * B[l * n + j]
            C[i * n + j] = acc


cdef void expm_skew(const double* A, double* E, double* X, double* T, int n) noexcept nogil:
    """Scaling-and-squaring Taylor exponential; E = exp(A)."""
    cdef int i, j, r, squarings = 0
    cdef double norm = 0.0, scale
    for i in range(n * n):
        norm += A[i] * A[i]
    norm = sqrt(norm)
    if norm > EXP_THETA:
        squarings = <int>ceil(log2(norm / EXP_THETA))
    scale = 1.0
    for r in range(squarings):
        scale *= 0.5
    for i in range(n * n):
        X[i] = A[i] * scale
    # Horner: E = I + X/order; E = I + X E / j
    for i in range(n):
        for j in range(n):
            E[i * n + j] = X[i * n + j] / EXP_ORDER + (1.0 if i == j else 0.0)
    for r in range(EXP_ORDER - 1, 0, -1):
        matmul(X, E, T, n)
        for i in range(n):
            for j in range(n):
                E[i * n + j] = T[i * n + j] / r + (1.0 if i == j else 0.0)
    for r in range(squarings):
        matmul(E, E, T, n)
        memcpy(E, T, n * n * sizeof(double))


cdef void zeta(const double* s, const cnp.intp_t* pairs, double* z, int n, int m) noexcept nogil:
    cdef int a, k, i, j
    cdef const double* rn = s + (n - 1) * n
    for a in range(n - 1):
        for k in range(m):
            i = pairs[2 * k]
            j = pairs[2 * k + 1]
            z[a * m + k] = s[a * n + i] * rn[j] - rn[i] * s[a * n + j]


cdef void to_matrix(const double* c, const cnp.intp_t* pairs, double* M, int n, int m) noexcept nogil:
    cdef int k, i, j
    for i in range(n * n):
        M[i] = 0.0
    for k in range(m):
        i = pairs[2 * k]
        j = pairs[2 * k + 1]
        M[i * n + j] = c[k]
        M[j * n + i] = -c[k]


cdef int cholesky(double* A, int m) noexcept nogil:
    """In-place lower Cholesky; returns 0 on success."""
    cdef int i, j, l
    cdef double acc
    for j in range(m):
        acc = A[j * m + j]
        for l in range(j):
            acc -= A[j * m + l] * A[j * m + l]
        if acc <= 0.0:
            return 1
        A[j * m + j] = sqrt(acc)
        for i in range(j + 1, m):
            acc = A[i * m + j]
            for l in range(j):
                acc -= A[i * m + l] * A[j * m + l]
            A[i * m + j] = acc / A[j * m + j]
    return 0


cdef void cho_solve(const double* L, double* x, int m) noexcept nogil:
    cdef int i, l
    cdef double acc
    for i in range(m):
        acc = x[i]
        for l in range(i):
            acc -= L[i * m + l] * x[l]
        x[i] = acc / L[i * m + i]
    for i in range(m - 1, -1, -1):
        acc = x[i]
        for l in range(i + 1, m):
            acc -= L[l * m + i] * x[l]
        x[i] = acc / L[i * m + i]


cdef void build_mu0(const double* gram, const double* z, double* mu, int n, int m) noexcept nogil:
    cdef int k, l, a
    cdef double acc
    for k in range(m):
        for l in range(m):
            acc = gram[k * m + l]
            for a in range(n - 1):
                acc += z[a * m + k] * z[a * m + l]
            mu[k * m + l] = acc


cdef void noise_rhs(const double* gvdb, const double* z, const double* dW, double* out, int n, int m) noexcept nogil:
    cdef int k, a
    cdef double acc
    for k in range(m):
        acc = gvdb[k]
        for a in range(n - 1):
            acc -= z[a * m + k] * dW[a]
        out[k] = acc


cdef double orth_defect(const double* s, double* T, int n) noexcept nogil:
    cdef int i, j, l
    cdef double acc, tot = 0.0
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for l in range(n):
                acc += s[l * n + i] * s[l * n + j]
            if i == j:
                acc -= 1.0
            tot += acc * acc
    return sqrt(tot)


cdef void newton_schulz(double* s, double* T, double* U, int n) noexcept nogil:
    cdef int it, i, j, l
    cdef double acc
    for it in range(3):
        # T = 3 I - s^T s
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for l in range(n):
                    acc += s[l * n + i] * s[l * n + j]
                T[i * n + j] = (3.0 if i == j else 0.0) - acc
        matmul(s, T, U, n)
        for i in range(n * n):
            s[i] = 0.5 * U[i]


cdef double vnorm(const double* x, int m) noexcept nogil:
    cdef int k
    cdef double acc = 0.0
    for k in range(m):
        acc += x[k] * x[k]
    return sqrt(acc)


def integrate_nh(s0, incr, gram, gv, gw0, pairs, double h, bint drift, int scheme,
                 int reorth_interval, int snap_stride):
    """See ``_kernels_py.integrate_nh``."""
    cdef const double[:, :, ::1] S0 = np.ascontiguousarray(s0, dtype=np.float64)
    cdef const double[:, :, ::1] INC = np.ascontiguousarray(incr, dtype=np.float64)
    cdef const double[:, ::1] G = np.ascontiguousarray(gram, dtype=np.float64)
    cdef const double[:, ::1] GV = np.ascontiguousarray(gv, dtype=np.float64)
    cdef const double[::1] GW0 = np.ascontiguousarray(gw0, dtype=np.float64)
    cdef const cnp.intp_t[:, ::1] PR = np.ascontiguousarray(pairs, dtype=np.intp)
    cdef int P = INC.shape[0]
    cdef int steps = INC.shape[1]
    cdef int n = S0.shape[1]
    cdef int m = G.shape[0]
    cdef int nsnap = steps // snap_stride + 1
    out_s = np.empty((P, n, n))
    out_snaps = np.empty((P, nsnap, n, n))
    out_status = np.zeros(P, dtype=np.int64)
    cdef double[:, :, ::1] OS = out_s
    cdef double[:, :, :, ::1] SN = out_snaps
    cdef cnp.int64_t[::1] ST = out_status

    cdef int nn = n * n
    cdef double* buf = <double*>malloc((8 * nn + 3 * m * m + (n - 1) * m + 8 * m) * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef double* s = buf
    cdef double* s_star = s + nn
    cdef double* A = s_star + nn
    cdef double* E = A + nn
    cdef double* X = E + nn
    cdef double* T = X + nn
    cdef double* U = T + nn
    cdef double* s_new = U + nn
    cdef double* mu = s_new + nn
    cdef double* mu2 = mu + m * m
    cdef double* z = mu2 + m * m
    cdef double* gvdb = z + (n - 1) * m
    cdef double* rhs_d = gvdb + m
    cdef double* a = rhs_d + m
    cdef double* noise_s = a + m
    cdef double* noise_star = noise_s + m
    cdef double* b = noise_star + m
    cdef double* tmp = b + m
    cdef const double* dB
    cdef const double* dW
    cdef int p, step, k, i, l, rejected
    cdef double acc

    try:
        with nogil:
            for k in range(m):
                rhs_d[k] = h * GW0[k] if drift else 0.0
            for p in range(P):
                memcpy(s, &S0[p, 0, 0], nn * sizeof(double))
                memcpy(&SN[p, 0, 0, 0], s, nn * sizeof(double))
                rejected = 0
                for step in range(steps):
                    dB = &INC[p, step, 0]
                    dW = &INC[p, step, m]
                    if rejected == 0:
                        for k in range(m):
                            acc = 0.0
                            for l in range(m):
                                acc += GV[k, l] * dB[l]
                            gvdb[k] = acc
                        zeta(s, &PR[0, 0], z, n, m)
                        build_mu0(&G[0, 0], z, mu, n, m)
                        if cholesky(mu, m) != 0:
                            rejected = step + 1
                        else:
                            noise_rhs(gvdb, z, dW, noise_s, n, m)
                            for k in range(m):
                                a[k] = rhs_d[k] + noise_s[k]
                            cho_solve(mu, a, m)
                            if scheme == 0:
                                memcpy(b, a, m * sizeof(double))
                            else:
                                cho_solve(mu, noise_s, m)
                                to_matrix(a, &PR[0, 0], A, n, m)
                                expm_skew(A, E, X, T, n)
                                matmul(s, E, s_star, n)
                                zeta(s_star, &PR[0, 0], z, n, m)
                                build_mu0(&G[0, 0], z, mu2, n, m)
                                if cholesky(mu2, m) != 0:
                                    rejected = step + 1
                                noise_rhs(gvdb, z, dW, noise_star, n, m)
                                cho_solve(mu2, noise_star, m)
                                for k in range(m):
                                    b[k] = a[k] - 0.5 * noise_s[k] + 0.5 * noise_star[k]
                            if vnorm(a, m) >= MAX_INCREMENT or vnorm(b, m) >= MAX_INCREMENT:
                                rejected = step + 1
                        if rejected == 0:
                            to_matrix(b, &PR[0, 0], A, n, m)
                            expm_skew(A, E, X, T, n)
                            matmul(s, E, s_new, n)
                            if orth_defect(s_new, T, n) > ORTH_TOL or (step + 1) % reorth_interval == 0:
                                newton_schulz(s_new, T, U, n)
                            memcpy(s, s_new, nn * sizeof(double))
                        else:
                            ST[p] = rejected
                    if (step + 1) % snap_stride == 0:
                        memcpy(&SN[p, (step + 1) // snap_stride, 0, 0], s, nn * sizeof(double))
                memcpy(&OS[p, 0, 0], s, nn * sizeof(double))
    finally:
        free(buf)
    return out_s, out_snaps, out_status
