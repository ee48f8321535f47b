"""Lowest-order Raviart-Thomas discretization on uniform rectangular levels.

Velocity dofs are total normal edge fluxes with a fixed global orientation
(+x for vertical edges, +y for horizontal edges), so the divergence matrix
has entries +-1/|cell| and inter-level prolongation has entries 1/2 and 1/4
exactly.  Pressures are cellwise constants.  All volume integrals use a
3x3 tensor Gauss rule per cell (exact through degree 5 per direction) and
edge integrals a 3-point Gauss rule; the cubic Forchheimer term is the one
non-polynomial integrand and inherits this fixed rule as part of the
numerical contract.
"""

import numpy as np
import scipy.sparse as sp

__all__ = [
    'QuadratureRule', 'RTSpace', 'PressureSpace', 'VelocityField',
    'PressureField', 'divergence_matrix', 'prolongation', 'patch_subspace',
    'l2_project_scalar', 'interpolate_velocity', 'norms',
    'evaluate_velocity', 'error_l2_velocity',
]

GAUSS3_NODES = np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
GAUSS3_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 9.0


class QuadratureRule:
    """3x3 tensor Gauss points per cell, ordered cell-major with the local
    index q = 3*jy + ix (x fastest).  Weights per cell sum to the cell area."""

    def __init__(self, mesh):
        self.mesh = mesh
        h = mesh.h
        half = 0.5 * h
        x1 = half + half * GAUSS3_NODES
        w1 = half * GAUSS3_WEIGHTS
        # local 3x3 tensor layout
        lx, ly = np.meshgrid(x1, x1, indexing='xy')
        lw = np.outer(w1, w1)  # [jy, ix]
        self.local_points = np.column_stack([lx.ravel(), ly.ravel()])
        self.local_weights = lw.ravel()
        origins = mesh.cell_origin
        self.points = (origins[:, None, :] + self.local_points[None, :, :]
                       ).reshape(-1, 2)
        self.weights = np.tile(self.local_weights, mesh.n_cells)
        self.n_points = len(self.weights)

    def cell_of_point(self):
        return np.repeat(np.arange(self.mesh.n_cells), 9)


class RTSpace:
    """RT0 velocity space of one level: one flux dof per edge, plus the
    sparse operators evaluating member fields at the quadrature points."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.k = mesh.k
        self.dof_count = mesh.n_edges
        self.quad = QuadratureRule(mesh)
        self._build_eval_matrices()

    def _build_eval_matrices(self):
        mesh = self.mesh
        h, inv_h2 = mesh.h, 1.0 / mesh.cell_area
        nq = self.quad.n_points
        pts = self.quad.points
        cells = self.quad.cell_of_point()
        ce = mesh.cell_edges[cells]          # (nq, 4): left right bottom top
        ox = mesh.cell_origin[cells]
        relx = pts[:, 0] - ox[:, 0]
        rely = pts[:, 1] - ox[:, 1]
        rows = np.repeat(np.arange(nq), 2)
        cols_x = ce[:, :2].ravel()
        vals_x = np.column_stack([(h - relx) * inv_h2, relx * inv_h2]).ravel()
        cols_y = ce[:, 2:].ravel()
        vals_y = np.column_stack([(h - rely) * inv_h2, rely * inv_h2]).ravel()
        shape = (nq, self.dof_count)
        self.eval_x = sp.csr_matrix((vals_x, (rows, cols_x)), shape=shape)
        self.eval_y = sp.csr_matrix((vals_y, (rows, cols_y)), shape=shape)

    def velocity_at_quad(self, coeffs):
        """Values of the RT0 field at all quadrature points, shape (nq, 2)."""
        return np.column_stack([self.eval_x @ coeffs, self.eval_y @ coeffs])

    def __repr__(self):
        return 'RTSpace(k=%d, dofs=%d)' % (self.k, self.dof_count)


class PressureSpace:
    """Cellwise-constant pressure space of one level."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.k = mesh.k
        self.dof_count = mesh.n_cells

    def __repr__(self):
        return 'PressureSpace(k=%d, dofs=%d)' % (self.k, self.dof_count)


class VelocityField:
    """Coefficient vector over the edge-flux dofs of one RTSpace."""

    def __init__(self, space, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (space.dof_count,):
            raise ValueError('coefficient length %s does not match %d dofs'
                             % (values.shape, space.dof_count))
        self.space = space
        self.values = values


class PressureField:
    """Cellwise-constant coefficient vector over one PressureSpace."""

    def __init__(self, space, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (space.dof_count,):
            raise ValueError('coefficient length %s does not match %d dofs'
                             % (values.shape, space.dof_count))
        self.space = space
        self.values = values


def divergence_matrix(space):
    """Sparse map B from edge fluxes to cellwise-constant divergences,
    (Bv)|_cell = (signed sum of the cell's edge fluxes) / |cell|.
    Accepts an RTSpace or a bare LevelMesh."""
    mesh = getattr(space, 'mesh', space)
    inv_area = 1.0 / mesh.cell_area
    rows = np.repeat(np.arange(mesh.n_cells), 4)
    cols = mesh.cell_edges.ravel()
    vals = np.tile(mesh.cell_edge_signs * inv_area, mesh.n_cells)
    return sp.csr_matrix((vals, (rows, cols)),
                         shape=(mesh.n_cells, mesh.n_edges))


def prolongation(hierarchy, k):
    """Identity embedding of level-k RT0 fields into level k+1.

    A coarse edge's flux splits in half onto its two child edges; each fine
    edge on a coarse cell's midline receives a quarter of the flux of each
    of the two parallel coarse edges of that cell.
    """
    coarse = hierarchy.level(k)
    fine = hierarchy.level(k + 1)
    nx, ny = coarse.nx, coarse.ny
    rows, cols, vals = [], [], []

    def emit(r, c, v):
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(np.full(r.size, v))

    # children of coarse vertical edges
    i, j = np.meshgrid(np.arange(nx + 1), np.arange(ny), indexing='ij')
    ve = coarse.vedge_id(i, j)
    emit(fine.vedge_id(2 * i, 2 * j), ve, 0.5)
    emit(fine.vedge_id(2 * i, 2 * j + 1), ve, 0.5)
    # children of coarse horizontal edges
    i, j = np.meshgrid(np.arange(nx), np.arange(ny + 1), indexing='ij')
    he = coarse.hedge_id(i, j)
    emit(fine.hedge_id(2 * i, 2 * j), he, 0.5)
    emit(fine.hedge_id(2 * i + 1, 2 * j), he, 0.5)
    # midline fine edges inside each coarse cell
    ci, cj = np.meshgrid(np.arange(nx), np.arange(ny), indexing='ij')
    vleft = coarse.vedge_id(ci, cj)
    vright = coarse.vedge_id(ci + 1, cj)
    for fj in (2 * cj, 2 * cj + 1):
        fe = fine.vedge_id(2 * ci + 1, fj)
        emit(fe, vleft, 0.25)
        emit(fe, vright, 0.25)
    hbot = coarse.hedge_id(ci, cj)
    htop = coarse.hedge_id(ci, cj + 1)
    for fi in (2 * ci, 2 * ci + 1):
        fe = fine.hedge_id(fi, 2 * cj + 1)
        emit(fe, hbot, 0.25)
        emit(fe, htop, 0.25)

    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(fine.n_edges, coarse.n_edges))


def patch_subspace(mesh, patch):
    """Edge dofs whose basis support lies inside the patch closure: the 4
    edges incident to the patch vertex plus any domain-boundary edges of the
    patch cells.  Returned sorted (vertical block before horizontal)."""
    vi, vj = patch.vertex_ij
    nx, ny = mesh.nx, mesh.ny
    dofs = [mesh.vedge_id(vi, vj - 1), mesh.vedge_id(vi, vj),
            mesh.hedge_id(vi - 1, vj), mesh.hedge_id(vi, vj)]
    if vi == 1:
        dofs += [mesh.vedge_id(0, vj - 1), mesh.vedge_id(0, vj)]
    if vi == nx - 1:
        dofs += [mesh.vedge_id(nx, vj - 1), mesh.vedge_id(nx, vj)]
    if vj == 1:
        dofs += [mesh.hedge_id(vi - 1, 0), mesh.hedge_id(vi, 0)]
    if vj == ny - 1:
        dofs += [mesh.hedge_id(vi - 1, ny), mesh.hedge_id(vi, ny)]
    return np.array(sorted(dofs), dtype=np.int64)


def l2_project_scalar(g, space):
    """Orthogonal projection onto cellwise constants: per-cell quadrature
    means of g.  Accepts a PressureSpace or an RTSpace (same mesh)."""
    mesh = space.mesh
    quad = space.quad if hasattr(space, 'quad') else QuadratureRule(mesh)
    vals = np.asarray(g(quad.points[:, 0], quad.points[:, 1]), dtype=float)
    cellsum = (vals * quad.weights).reshape(mesh.n_cells, 9).sum(axis=1)
    pspace = space if isinstance(space, PressureSpace) else PressureSpace(mesh)
    return PressureField(pspace, cellsum / mesh.cell_area)


def interpolate_velocity(u, space):
    """Edge-flux interpolant: each dof is the 3-point Gauss approximation of
    the normal flux of u through its edge."""
    mesh = space.mesh
    h = mesh.h
    t = 0.5 * h + 0.5 * h * GAUSS3_NODES
    w = 0.5 * h * GAUSS3_WEIGHTS
    start = mesh.edge_start
    nv = mesh.n_vedges
    px = np.concatenate([np.repeat(start[:nv, 0], 3),
                         (start[nv:, 0:1] + t).ravel()])
    py = np.concatenate([(start[:nv, 1:2] + t).ravel(),
                         np.repeat(start[nv:, 1], 3)])
    ux, uy = u(px, py)
    normal = np.concatenate([np.asarray(ux)[:3 * nv],
                             np.asarray(uy)[3 * nv:]])
    dofs = (normal.reshape(-1, 3) * w).sum(axis=1)
    return VelocityField(space, dofs)


def norms(v):
    """Quadrature values of (L2, L3, ||div||_L2, graph norm) of a field."""
    space, coeffs = v.space, v.values
    V = space.velocity_at_quad(coeffs)
    wq = space.quad.weights
    mag2 = V[:, 0] ** 2 + V[:, 1] ** 2
    l2 = np.sqrt(np.sum(wq * mag2))
    l3 = np.sum(wq * mag2 ** 1.5) ** (1.0 / 3.0)
    B = divergence_matrix(space)
    div = B @ coeffs
    divl2 = np.sqrt(space.mesh.cell_area * np.sum(div ** 2))
    x = np.sqrt(divl2 ** 2 + l2 ** 2 + l3 ** 2)
    return l2, l3, divl2, x


def evaluate_velocity(space, coeffs, points):
    """Pointwise values of an RT0 field at arbitrary points, shape (n, 2).
    Points on cell interfaces evaluate in the right/upper cell.  Accepts
    an RTSpace or a bare LevelMesh."""
    mesh = getattr(space, 'mesh', space)
    pts = np.atleast_2d(points)
    h, inv_h2 = mesh.h, 1.0 / mesh.cell_area
    ix = np.minimum((pts[:, 0] // h).astype(np.int64), mesh.nx - 1)
    jy = np.minimum((pts[:, 1] // h).astype(np.int64), mesh.ny - 1)
    cells = jy * mesh.nx + ix
    ce = mesh.cell_edges[cells]
    relx = pts[:, 0] - ix * h
    rely = pts[:, 1] - jy * h
    vx = (coeffs[ce[:, 0]] * (h - relx) + coeffs[ce[:, 1]] * relx) * inv_h2
    vy = (coeffs[ce[:, 2]] * (h - rely) + coeffs[ce[:, 3]] * rely) * inv_h2
    return np.column_stack([vx, vy])


def error_l2_velocity(v, u_exact):
    """Quadrature L2 distance between a discrete field and an exact one."""
    space = v.space
    V = space.velocity_at_quad(v.values)
    pts = space.quad.points
    ux, uy = u_exact(pts[:, 0], pts[:, 1])
    diff2 = (V[:, 0] - ux) ** 2 + (V[:, 1] - uy) ** 2
    return np.sqrt(np.sum(space.quad.weights * diff2))
