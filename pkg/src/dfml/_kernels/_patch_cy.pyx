# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: initializedcheck=False
"""Compiled patch-solve kernel: serial damped Newton over the patches of
one template group, with all local data gathered on the fly from the
global fine-level arrays.  Contract identical to the numpy backend."""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()

BACKEND_NAME = 'cython'

cdef int MAXM = 12


cdef inline double local_energy(
        const double[:, ::1] uq, const double[::1] divu,
        const double[:, ::1] fq, const double[::1] gh, const double[::1] qh,
        int nxc, int ox, int oy, int tile,
        const double[:, :, ::1] basis, const double[:, ::1] divloc,
        const double[::1] w9, double cell_area, double eps,
        double c_mass, double c3, double c_forch, int m,
        const double* w) noexcept nogil:
    # Kahan-compensated accumulators: Armijo near convergence must resolve
    # energy differences far below the naive serial-summation noise
    cdef int di, dj, cl, q9, gc, gq, ql, j
    cdef double acc_div = 0.0, cdiv = 0.0
    cdef double acc_q = 0.0, cq = 0.0
    cdef double acc_quad = 0.0, cquad = 0.0
    cdef double r, dw, vx, vy, mag2, term, y, t
    cl = 0
    for dj in range(tile):
        for di in range(tile):
            gc = (oy + dj) * nxc + ox + di
            dw = 0.0
            for j in range(m):
                dw += divloc[cl, j] * w[j]
            r = divu[gc] - gh[gc] + dw
            y = r * r - cdiv
            t = acc_div + y
            cdiv = (t - acc_div) - y
            acc_div = t
            y = qh[gc] * (divu[gc] + dw) - cq
            t = acc_q + y
            cq = (t - acc_q) - y
            acc_q = t
            for q9 in range(9):
                gq = gc * 9 + q9
                ql = cl * 9 + q9
                vx = uq[gq, 0]
                vy = uq[gq, 1]
                for j in range(m):
                    vx += basis[ql, 0, j] * w[j]
                    vy += basis[ql, 1, j] * w[j]
                mag2 = vx * vx + vy * vy
                term = w9[q9] * (0.5 * c_mass * mag2
                                 + c3 * mag2 * sqrt(mag2)
                                 - fq[gq, 0] * vx - fq[gq, 1] * vy)
                y = term - cquad
                t = acc_quad + y
                cquad = (t - acc_quad) - y
                acc_quad = t
            cl += 1
    return 0.5 * cell_area * acc_div + eps * (acc_quad - cell_area * acc_q)


cdef inline void grad_hess(
        const double[:, ::1] uq, const double[::1] divu,
        const double[:, ::1] fq, const double[::1] gh, const double[::1] qh,
        int nxc, int ox, int oy, int tile,
        const double[:, :, ::1] basis, const double[:, ::1] divloc,
        const double[:, ::1] a_const, const double[::1] w9,
        double cell_area, double eps, double c_mass, double c_forch,
        double hess_reg, int m, const double* w,
        double* g, double* H) noexcept nogil:
    cdef int di, dj, cl, q9, gc, gq, ql, j, jj
    cdef double r, dw, vx, vy, mag, safe, wq, a1, cx, cy, gq_x, gq_y
    cdef double term, y, t
    cdef double cvec[12]
    cdef double gcmp[12]
    for j in range(m):
        g[j] = 0.0
        gcmp[j] = 0.0
        for jj in range(m):
            H[j * m + jj] = a_const[j, jj]
    cl = 0
    for dj in range(tile):
        for di in range(tile):
            gc = (oy + dj) * nxc + ox + di
            dw = 0.0
            for j in range(m):
                dw += divloc[cl, j] * w[j]
            r = cell_area * (divu[gc] - gh[gc] + dw - eps * qh[gc])
            for j in range(m):
                y = r * divloc[cl, j] - gcmp[j]
                t = g[j] + y
                gcmp[j] = (t - g[j]) - y
                g[j] = t
            for q9 in range(9):
                gq = gc * 9 + q9
                ql = cl * 9 + q9
                vx = uq[gq, 0]
                vy = uq[gq, 1]
                for j in range(m):
                    vx += basis[ql, 0, j] * w[j]
                    vy += basis[ql, 1, j] * w[j]
                mag = sqrt(vx * vx + vy * vy)
                wq = w9[q9]
                gq_x = wq * (c_mass * vx + c_forch * mag * vx - fq[gq, 0])
                gq_y = wq * (c_mass * vy + c_forch * mag * vy - fq[gq, 1])
                for j in range(m):
                    term = eps * (gq_x * basis[ql, 0, j]
                                  + gq_y * basis[ql, 1, j])
                    y = term - gcmp[j]
                    t = g[j] + y
                    gcmp[j] = (t - g[j]) - y
                    g[j] = t
                if c_forch != 0.0:
                    safe = mag if mag > hess_reg else hess_reg
                    a1 = eps * c_forch * wq * mag
                    cx = vx / sqrt(safe)
                    cy = vy / sqrt(safe)
                    for j in range(m):
                        cvec[j] = cx * basis[ql, 0, j] + cy * basis[ql, 1, j]
                    for j in range(m):
                        for jj in range(j, m):
                            H[j * m + jj] += (
                                a1 * (basis[ql, 0, j] * basis[ql, 0, jj]
                                      + basis[ql, 1, j] * basis[ql, 1, jj])
                                + eps * c_forch * wq * cvec[j] * cvec[jj])
            cl += 1
    # mirror the upper triangle
    for j in range(m):
        for jj in range(j):
            H[j * m + jj] = H[jj * m + j]


cdef inline int cholesky_solve(double* H, double* rhs, double* out,
                               int m) noexcept nogil:
    """In-place Cholesky of H (overwritten with L) and solve H out = rhs."""
    cdef int i, j, k
    cdef double s
    for i in range(m):
        for j in range(i + 1):
            s = H[i * m + j]
            for k in range(j):
                s -= H[i * m + k] * H[j * m + k]
            if i == j:
                if s <= 0.0:
                    return -1
                H[i * m + i] = sqrt(s)
            else:
                H[i * m + j] = s / H[j * m + j]
    for i in range(m):
        s = rhs[i]
        for k in range(i):
            s -= H[i * m + k] * out[k]
        out[i] = s / H[i * m + i]
    for i in range(m - 1, -1, -1):
        s = out[i]
        for k in range(i + 1, m):
            s -= H[k * m + i] * out[k]
        out[i] = s / H[i * m + i]
    return 0


def solve_patch_batch(double[:, ::1] uq, double[::1] divu,
                      double[:, ::1] fq, double[::1] gh, double[::1] qh,
                      int nxc, int[:, ::1] origins, int tile,
                      double[:, :, ::1] basis, double[:, ::1] divloc,
                      double[:, ::1] a_const, double[::1] w9,
                      double cell_area, double eps, double c_mass,
                      double c_forch, double grad_tol, int max_newton,
                      double armijo_c, int max_halvings, double hess_reg):
    cdef int npatch = origins.shape[0]
    cdef int m = basis.shape[2]
    if m > MAXM:
        raise ValueError('patch dimension %d exceeds kernel limit %d'
                         % (m, MAXM))
    W_arr = np.zeros((npatch, m))
    dec_arr = np.zeros(npatch)
    iters_arr = np.zeros(npatch, dtype=np.int32)
    conv_arr = np.zeros(npatch, dtype=np.uint8)
    cdef double[:, ::1] W = W_arr
    cdef double[::1] dec = dec_arr
    cdef int[::1] iters = iters_arr
    cdef cnp.uint8_t[::1] conv = conv_arr
    cdef double c3 = c_forch / 3.0
    cdef int p, ox, oy, it, j, halve
    cdef double w[12]
    cdef double g[12]
    cdef double d[12]
    cdef double wt[12]
    cdef double H[144]
    cdef double phi0, phi_w, phi_t, gnorm, gd, t
    with nogil:
        for p in range(npatch):
            ox = origins[p, 0]
            oy = origins[p, 1]
            for j in range(m):
                w[j] = 0.0
            phi0 = local_energy(uq, divu, fq, gh, qh, nxc, ox, oy, tile,
                                basis, divloc, w9, cell_area, eps, c_mass,
                                c3, c_forch, m, w)
            phi_w = phi0
            for it in range(max_newton + 1):
                grad_hess(uq, divu, fq, gh, qh, nxc, ox, oy, tile, basis,
                          divloc, a_const, w9, cell_area, eps, c_mass,
                          c_forch, hess_reg, m, w, g, H)
                gnorm = 0.0
                for j in range(m):
                    gnorm += g[j] * g[j]
                if sqrt(gnorm) <= grad_tol:
                    conv[p] = 1
                    break
                if it == max_newton:
                    break
                for j in range(m):
                    g[j] = -g[j]
                if cholesky_solve(H, g, d, m) != 0:
                    break
                gd = 0.0
                for j in range(m):
                    gd -= g[j] * d[j]   # g holds -gradient here
                t = 1.0
                if -0.5 * gd > 1e-14 * (1.0 + fabs(phi_w)):
                    for halve in range(max_halvings + 1):
                        for j in range(m):
                            wt[j] = w[j] + t * d[j]
                        phi_t = local_energy(uq, divu, fq, gh, qh, nxc, ox,
                                             oy, tile, basis, divloc, w9,
                                             cell_area, eps, c_mass, c3,
                                             c_forch, m, wt)
                        if phi_t <= phi_w + armijo_c * t * gd:
                            break
                        t *= 0.5
                else:
                    for j in range(m):
                        wt[j] = w[j] + d[j]
                    phi_t = local_energy(uq, divu, fq, gh, qh, nxc, ox, oy,
                                         tile, basis, divloc, w9, cell_area,
                                         eps, c_mass, c3, c_forch, m, wt)
                for j in range(m):
                    w[j] = wt[j]
                phi_w = phi_t
                iters[p] += 1
            for j in range(m):
                W[p, j] = w[j]
            dec[p] = phi0 - phi_w
    return W_arr, dec_arr, iters_arr, conv_arr.astype(bool)
