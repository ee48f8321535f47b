"""Pure-numpy patch-solve kernel, vectorized across the patches of one
template group.  Same contract as the compiled backend: damped Newton with
Armijo backtracking on each patch's local energy, all patches advanced in
lockstep with an active mask.
"""

import numpy as np

BACKEND_NAME = 'python'


def _gather_indices(origins, tile, nxc):
    dj = np.repeat(np.arange(tile), tile)
    di = np.tile(np.arange(tile), tile)
    cells = ((origins[:, 1:2] + dj[None, :]) * nxc
             + origins[:, 0:1] + di[None, :])
    qidx = (cells[:, :, None] * 9 + np.arange(9)).reshape(len(origins), -1)
    return cells, qidx


def solve_patch_batch(uq, divu, fq, gh, qh, nxc, origins, tile, basis,
                      divloc, a_const, w9, cell_area, eps, c_mass, c_forch,
                      grad_tol, max_newton, armijo_c, max_halvings, hess_reg):
    npatch = origins.shape[0]
    m = basis.shape[2]
    ncl = divloc.shape[0]
    cells, qidx = _gather_indices(origins, tile, nxc)
    U = uq[qidx]                        # (np, nql, 2)
    Floc = fq[qidx]
    D0 = divu[cells]                    # (np, ncl)
    R0 = D0 - gh[cells]
    Q = qh[cells]
    wql = np.tile(w9, ncl)
    bx = np.ascontiguousarray(basis[:, 0, :])
    by = np.ascontiguousarray(basis[:, 1, :])
    c3 = c_forch / 3.0

    def energy(U_, F_, R0_, Q_, D0_, W_):
        V = U_ + np.tensordot(W_, basis, axes=([1], [2]))
        mag2 = V[:, :, 0] ** 2 + V[:, :, 1] ** 2
        quad = (0.5 * c_mass * mag2 + c3 * mag2 * np.sqrt(mag2)
                - F_[:, :, 0] * V[:, :, 0] - F_[:, :, 1] * V[:, :, 1])
        dw = W_ @ divloc.T
        e = 0.5 * cell_area * ((R0_ + dw) ** 2).sum(axis=1)
        e += eps * (quad @ wql - cell_area * (Q_ * (D0_ + dw)).sum(axis=1))
        return e

    W = np.zeros((npatch, m))
    phi_start = energy(U, Floc, R0, Q, D0, W)
    phi_cur = phi_start.copy()
    iters = np.zeros(npatch, dtype=np.int32)
    converged = np.zeros(npatch, dtype=bool)
    active = np.arange(npatch)

    for step in range(max_newton + 1):
        if len(active) == 0:
            break
        Ua, Fa = U[active], Floc[active]
        R0a, Qa, D0a = R0[active], Q[active], D0[active]
        Wa = W[active]
        V = Ua + np.tensordot(Wa, basis, axes=([1], [2]))
        mag = np.sqrt(V[:, :, 0] ** 2 + V[:, :, 1] ** 2)
        gxq = wql * (c_mass * V[:, :, 0] + c_forch * mag * V[:, :, 0]
                     - Fa[:, :, 0])
        gyq = wql * (c_mass * V[:, :, 1] + c_forch * mag * V[:, :, 1]
                     - Fa[:, :, 1])
        dw = Wa @ divloc.T
        g = (cell_area * (R0a + dw - eps * Qa) @ divloc
             + eps * (gxq @ bx + gyq @ by))
        gnorm = np.sqrt((g * g).sum(axis=1))
        done = gnorm <= grad_tol
        if done.any():
            converged[active[done]] = True
            keep = ~done
            active = active[keep]
            if len(active) == 0:
                break
            Ua, Fa, R0a, Qa, D0a = (Ua[keep], Fa[keep], R0a[keep],
                                    Qa[keep], D0a[keep])
            Wa, V, mag, g = Wa[keep], V[keep], mag[keep], g[keep]
        if step == max_newton:
            break
        H = np.broadcast_to(a_const, (len(active),) + a_const.shape).copy()
        if c_forch != 0.0:
            safe = np.maximum(mag, hess_reg)
            H += eps * c_forch * (
                np.einsum('pq,qm,qn->pmn', wql * mag, bx, bx)
                + np.einsum('pq,qm,qn->pmn', wql * mag, by, by))
            C = V[:, :, 0, None] * bx[None] + V[:, :, 1, None] * by[None]
            H += eps * c_forch * np.einsum('pq,pqm,pqn->pmn',
                                           wql / safe, C, C)
        d = np.linalg.solve(H, -g[:, :, None])[:, :, 0]
        gd = (g * d).sum(axis=1)
        phi0 = phi_cur[active]
        t = np.ones(len(active))
        trial_W = Wa + d
        phi_t = energy(Ua, Fa, R0a, Qa, D0a, trial_W)
        # line search only where its decreases are resolvable in floating
        # point; otherwise take the plain Newton step
        searchable = -0.5 * gd > 1e-14 * (1.0 + np.abs(phi0))
        for _halve in range(max_halvings):
            bad = searchable & (phi_t > phi0 + armijo_c * t * gd)
            if not bad.any():
                break
            t[bad] *= 0.5
            trial_W[bad] = Wa[bad] + t[bad, None] * d[bad]
            phi_t[bad] = energy(Ua[bad], Fa[bad], R0a[bad], Qa[bad],
                                D0a[bad], trial_W[bad])
        W[active] = trial_W
        phi_cur[active] = phi_t
        iters[active] += 1

    decrease = phi_start - phi_cur
    return W, decrease, iters, converged
