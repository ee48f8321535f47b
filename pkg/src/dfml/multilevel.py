"""Vertex-patch multilevel space decomposition and the correction sweep.

Each level contributes one local subspace per internal vertex (the edges
whose basis support lies in the 4-cell patch around the vertex).  On a
uniform grid the patches of a level fall into at most nine translation
classes (interior, four sides, four corners), so each class stores one
template: local basis values at the fine-level quadrature points of the
patch support, the local divergence map, and the constant part of the
local Hessian.  The per-patch data reduces to a fine-cell origin and the
level-k edge ids to scatter into.

A sweep solves every local minimization from the same current iterate
(Jacobi-type) via the selected kernel backend, then accumulates the level
corrections through cumulative prolongations in fixed level order, so the
reduction is deterministic.
"""

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve

from . import _kernels
from .discretization import (QuadratureRule, divergence_matrix,
                             evaluate_velocity, patch_subspace, prolongation)
from .mesh import Patch

__all__ = ['LocalNewtonConfig', 'PatchGroup', 'MultilevelDecomposition',
           'AdditivePatchPreconditioner']


class LocalNewtonConfig:
    """Damped-Newton parameters for the local patch solves."""

    def __init__(self, grad_tol=1e-10, max_iter=50, armijo=1e-4,
                 max_halvings=60):
        self.grad_tol = grad_tol
        self.max_iter = max_iter
        self.armijo = armijo
        self.max_halvings = max_halvings


class PatchGroup:
    """All patches of one level sharing a translation-invariant template."""

    def __init__(self, level, flags, origins, edge_ids, vertex_ijs, tile,
                 basis, divloc, a_div, a_mass):
        self.level = level
        self.flags = flags
        self.origins = origins          # (np, 2) fine-cell lower-left corner
        self.edge_ids = edge_ids        # (np, m) level-k dof per local dof
        self.vertex_ijs = vertex_ijs
        self.tile = tile                # support side length in fine cells
        self.basis = basis              # (9*tile^2, 2, m)
        self.divloc = divloc            # (tile^2, m)
        self.a_div = a_div              # (m, m) divergence part of P^T H P
        self.a_mass = a_mass            # (m, m) velocity mass part

    @property
    def n_patches(self):
        return self.origins.shape[0]

    @property
    def m(self):
        return self.edge_ids.shape[1]


class SweepResult:
    def __init__(self, correction, local_decrease_sum, all_converged,
                 max_local_iters):
        self.correction = correction
        self.local_decrease_sum = local_decrease_sum
        self.all_converged = all_converged
        self.max_local_iters = max_local_iters


class MultilevelDecomposition:
    """Patch groups for every level of a hierarchy plus the cumulative
    prolongations to the finest level.  Geometry only; energy coefficients
    enter per sweep."""

    def __init__(self, hierarchy):
        self.hierarchy = hierarchy
        self.J = hierarchy.J
        fine = hierarchy.finest
        self.fine_quad = QuadratureRule(fine)
        self.w9 = self.fine_quad.local_weights.copy()
        self.prolongations = [prolongation(hierarchy, k)
                              for k in range(1, self.J)]
        self.P_full = [None] * (self.J + 1)
        self.P_full[self.J] = sp.identity(fine.n_edges, format='csr')
        for k in range(self.J - 1, 0, -1):
            self.P_full[k] = (self.P_full[k + 1]
                              @ self.prolongations[k - 1]).tocsr()
        self.level_groups = []
        self.level_patch_lookup = []   # per level: vertex_ij -> (gi, row)
        for k in range(1, self.J + 1):
            groups, lookup = self._build_level(k)
            self.level_groups.append(groups)
            self.level_patch_lookup.append(lookup)
        self.n_patches = sum(g.n_patches for gs in self.level_groups
                             for g in gs)

    def _build_level(self, k):
        mesh = self.hierarchy.level(k)
        fine = self.hierarchy.finest
        step = fine.nx // mesh.nx
        tile = 2 * step
        nx, ny = mesh.nx, mesh.ny
        B_k = divergence_matrix(mesh).tocsr()

        by_class = {}
        for ij in mesh.internal_vertex_ij:
            vi, vj = int(ij[0]), int(ij[1])
            key = (vi == 1, vi == nx - 1, vj == 1, vj == ny - 1)
            by_class.setdefault(key, []).append((vi, vj))

        groups = []
        lookup = {}
        for key in sorted(by_class):
            members = by_class[key]
            vi0, vj0 = members[0]
            rep = Patch(mesh, (vi0, vj0))
            dofs0 = patch_subspace(mesh, rep)
            m = len(dofs0)
            ox0, oy0 = (vi0 - 1) * step, (vj0 - 1) * step

            # support fine cells of the representative, row-major in (dj, di)
            dj = np.repeat(np.arange(tile), tile)
            di = np.tile(np.arange(tile), tile)
            fine_cells = (oy0 + dj) * fine.nx + (ox0 + di)
            qidx = (fine_cells[:, None] * 9 + np.arange(9)).ravel()
            pts = self.fine_quad.points[qidx]
            basis = np.empty((len(qidx), 2, m))
            for j, dof in enumerate(dofs0):
                unit = np.zeros(mesh.n_edges)
                unit[dof] = 1.0
                basis[:, :, j] = evaluate_velocity(mesh, unit, pts)
            basis = np.ascontiguousarray(basis)

            coarse_cells = ((vj0 - 1 + dj // step) * nx
                            + (vi0 - 1 + di // step))
            divloc = np.ascontiguousarray(
                B_k[coarse_cells][:, dofs0].toarray())

            a_div = fine.cell_area * (divloc.T @ divloc)
            wql = np.tile(self.w9, tile * tile)
            a_mass = np.einsum('qim,qin,q->mn', basis, basis, wql)

            nmem = len(members)
            origins = np.empty((nmem, 2), dtype=np.int32)
            edge_ids = np.empty((nmem, m), dtype=np.int64)
            vertex_ijs = []
            is_vert = dofs0 < mesh.n_vedges
            for row, (vi, vj) in enumerate(members):
                origins[row] = ((vi - 1) * step, (vj - 1) * step)
                shift = np.where(is_vert,
                                 (vi - vi0) * ny + (vj - vj0),
                                 (vj - vj0) * nx + (vi - vi0))
                edge_ids[row] = dofs0 + shift
                vertex_ijs.append((vi, vj))
                lookup[(vi, vj)] = (len(groups), row)
            groups.append(PatchGroup(k, key, origins, edge_ids, vertex_ijs,
                                     tile, basis, divloc,
                                     np.ascontiguousarray(a_div),
                                     np.ascontiguousarray(a_mass)))
        return groups, lookup

    # -- patch access ---------------------------------------------------

    def patch_dofs(self, k, vertex_ij):
        """Level-k edge dofs of one patch, in template order."""
        gi, row = self.level_patch_lookup[k - 1][tuple(vertex_ij)]
        return self.level_groups[k - 1][gi].edge_ids[row]

    def patch_matrix(self, k, vertex_ij):
        """Sparse map from a patch's local dofs to finest-level dofs."""
        dofs = self.patch_dofs(k, vertex_ij)
        return self.P_full[k][:, dofs].tocsr()

    def iter_patches(self, k):
        """(vertex_ij, group_index, row) in canonical vertex order."""
        mesh = self.hierarchy.level(k)
        for ij in mesh.internal_vertex_ij:
            key = (int(ij[0]), int(ij[1]))
            gi, row = self.level_patch_lookup[k - 1][key]
            yield key, gi, row

    # -- kernels ----------------------------------------------------------

    def _solve_group(self, model, uq, divu, group, cfg, rows=None):
        origins = group.origins if rows is None else group.origins[rows]
        a_const = (group.a_div
                   + model.epsilon * model.c_mass * group.a_mass)
        return _kernels.solve_patch_batch(
            uq, divu, model.fq, model.gh, model.q,
            self.hierarchy.finest.nx, np.ascontiguousarray(origins),
            group.tile, group.basis, group.divloc,
            np.ascontiguousarray(a_const), self.w9, model.cell_area,
            model.epsilon, model.c_mass, model.c_forch,
            cfg.grad_tol, cfg.max_iter, cfg.armijo, cfg.max_halvings,
            1e-12)

    def sweep(self, model, u, cfg=None):
        """Solve all local problems from the iterate u (Jacobi-type) and
        return the summed prolonged correction plus the exact sum of the
        local energy decreases."""
        cfg = cfg or LocalNewtonConfig()
        uq = model.space.velocity_at_quad(u)
        divu = model.B @ u
        s = np.zeros(model.n_dofs)
        total_dec = 0.0
        all_conv = True
        max_it = 0
        for k in range(1, self.J + 1):
            mesh_k = self.hierarchy.level(k)
            zk = np.zeros(mesh_k.n_edges)
            for group in self.level_groups[k - 1]:
                W, dec, iters, conv = self._solve_group(model, uq, divu,
                                                        group, cfg)
                np.add.at(zk, group.edge_ids.ravel(), W.ravel())
                total_dec += float(dec.sum())
                all_conv = all_conv and bool(conv.all())
                max_it = max(max_it, int(iters.max()))
            s += self.P_full[k] @ zk
        return SweepResult(s, total_dec, all_conv, max_it)

    def solve_one_patch(self, model, u, k, vertex_ij, cfg=None):
        """Local minimization over a single patch; returns the local
        coefficient vector, its prolonged finest-level field, the energy
        decrease and the Newton diagnostics."""
        cfg = cfg or LocalNewtonConfig()
        gi, row = self.level_patch_lookup[k - 1][tuple(vertex_ij)]
        group = self.level_groups[k - 1][gi]
        uq = model.space.velocity_at_quad(u)
        divu = model.B @ u
        W, dec, iters, conv = self._solve_group(model, uq, divu, group, cfg,
                                                rows=[row])
        zk = np.zeros(self.hierarchy.level(k).n_edges)
        zk[group.edge_ids[row]] = W[0]
        prolonged = self.P_full[k] @ zk
        return W[0], prolonged, float(dec[0]), int(iters[0]), bool(conv[0])



class AdditivePatchPreconditioner:
    """One additive pass of exact patch solves for the quadratic case
    (beta = 0): M r = sum over patches of P (P^T H P)^-1 P^T r.  This is
    the linear specialization of the correction sweep with unit step."""

    def __init__(self, decomp, model):
        if not model.is_quadratic:
            raise ValueError('preconditioner requires beta = 0')
        self.decomp = decomp
        self.model = model
        self._factors = []
        for groups in decomp.level_groups:
            level_factors = []
            for g in groups:
                a = g.a_div + model.epsilon * model.c_mass * g.a_mass
                level_factors.append(cho_factor(a))
            self._factors.append(level_factors)

    def apply(self, r):
        decomp = self.decomp
        out = np.zeros_like(r)
        for k in range(1, decomp.J + 1):
            rk = decomp.P_full[k].T @ r
            zk = np.zeros_like(rk)
            for g, fac in zip(decomp.level_groups[k - 1],
                              self._factors[k - 1]):
                R = rk[g.edge_ids]                       # (np, m)
                W = cho_solve(fac, R.T).T
                np.add.at(zk, g.edge_ids.ravel(), W.ravel())
            out += decomp.P_full[k] @ zk
        return out
