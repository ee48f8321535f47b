"""Nested uniform rectangular mesh hierarchies on the unit square.

A hierarchy is a sequence of levels k = 1..J where level k partitions
(0,1)^2 into (n0*2^(k-1))^2 congruent square cells, so consecutive levels
are nested (each cell splits into 4 children) and h_k/h_{k+1} = 2.  All
coordinates are dyadic rationals and therefore exact in binary floating
point.  On top of each level sits the vertex-patch topology: one patch per
internal vertex, consisting of the 4 cells touching that vertex.

Index conventions on an nx-by-ny level with mesh size h = 1/nx:
  cells     c = j*nx + i                    for i < nx, j < ny
  vertical edges   e = i*ny + j             for i <= nx, j < ny  (normal +x)
  horizontal edges e = nv + j*nx + i        for i < nx, j <= ny  (normal +y)
  vertices  v = j*(nx+1) + i                for i <= nx, j <= ny
where nv = (nx+1)*ny is the vertical-edge count.
"""

import numpy as np

__all__ = ['LevelMesh', 'Patch', 'MeshHierarchy', 'build_hierarchy', 'patches']


class LevelMesh:
    """One uniform rectangular level: cells, edges, vertices and their
    incidence.  Immutable after construction."""

    def __init__(self, k, nx, ny):
        if nx < 1 or ny < 1:
            raise ValueError('mesh needs at least one cell per direction')
        self.k = k
        self.nx = nx
        self.ny = ny
        self.h = 1.0 / nx
        self.n_cells = nx * ny
        self.n_vedges = (nx + 1) * ny
        self.n_hedges = nx * (ny + 1)
        self.n_edges = self.n_vedges + self.n_hedges
        self.n_vertices = (nx + 1) * (ny + 1)
        self.cell_area = self.h * self.h
        self._build_incidence()

    def _build_incidence(self):
        nx, ny, h = self.nx, self.ny, self.h

        # cell -> edges, columns ordered (left, right, bottom, top)
        ci, cj = np.meshgrid(np.arange(nx), np.arange(ny), indexing='xy')
        ci = ci.ravel()
        cj = cj.ravel()
        self.cell_edges = np.column_stack([
            ci * ny + cj,                                  # left
            (ci + 1) * ny + cj,                            # right
            self.n_vedges + cj * nx + ci,                  # bottom
            self.n_vedges + (cj + 1) * nx + ci,            # top
        ]).astype(np.int64)
        # outward-flux signs matching the (left, right, bottom, top) order
        self.cell_edge_signs = np.array([-1.0, 1.0, -1.0, 1.0])
        self.cell_origin = np.column_stack([ci * h, cj * h])

        # edge -> adjacent cells (-1 where a neighbor does not exist)
        self.edge_cells = np.full((self.n_edges, 2), -1, dtype=np.int64)
        vi, vj = np.meshgrid(np.arange(nx + 1), np.arange(ny), indexing='ij')
        vid = (vi * ny + vj).ravel()
        vi = vi.ravel()
        vj = vj.ravel()
        left_ok = vi > 0
        right_ok = vi < nx
        self.edge_cells[vid[left_ok], 0] = vj[left_ok] * nx + (vi[left_ok] - 1)
        self.edge_cells[vid[right_ok], 1] = vj[right_ok] * nx + vi[right_ok]
        hi, hj = np.meshgrid(np.arange(nx), np.arange(ny + 1), indexing='ij')
        hid = (self.n_vedges + hj * nx + hi).ravel()
        hi = hi.ravel()
        hj = hj.ravel()
        below_ok = hj > 0
        above_ok = hj < ny
        self.edge_cells[hid[below_ok], 0] = (hj[below_ok] - 1) * nx + hi[below_ok]
        self.edge_cells[hid[above_ok], 1] = hj[above_ok] * nx + hi[above_ok]
        self.edge_is_boundary = (self.edge_cells == -1).any(axis=1)

        # edge orientation (0 = vertical, normal +x; 1 = horizontal, normal +y)
        # and midpoint/endpoint geometry
        self.edge_orientation = np.zeros(self.n_edges, dtype=np.int8)
        self.edge_orientation[self.n_vedges:] = 1
        ve_x = (np.arange(self.n_vedges) // ny) * h
        ve_y = (np.arange(self.n_vedges) % ny) * h
        he_x = (np.arange(self.n_hedges) % nx) * h
        he_y = (np.arange(self.n_hedges) // nx) * h
        self.edge_start = np.concatenate([
            np.column_stack([ve_x, ve_y]),
            np.column_stack([he_x, he_y]),
        ])
        self.edge_end = self.edge_start + np.concatenate([
            np.tile([0.0, h], (self.n_vedges, 1)),
            np.tile([h, 0.0], (self.n_hedges, 1)),
        ])

        # vertices
        gx, gy = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), indexing='xy')
        self.vertex_coords = np.column_stack([gx.ravel() * h, gy.ravel() * h])
        self.vertex_is_boundary = ((gx.ravel() == 0) | (gx.ravel() == nx) |
                                   (gy.ravel() == 0) | (gy.ravel() == ny))
        ii = gx.ravel()[~self.vertex_is_boundary]
        jj = gy.ravel()[~self.vertex_is_boundary]
        order = np.lexsort((ii, jj))
        self.internal_vertex_ij = np.column_stack([ii[order], jj[order]])
        self.n_internal_vertices = len(self.internal_vertex_ij)

    def cell_id(self, i, j):
        return j * self.nx + i

    def vedge_id(self, i, j):
        return i * self.ny + j

    def hedge_id(self, i, j):
        return self.n_vedges + j * self.nx + i

    def __repr__(self):
        return 'LevelMesh(k=%d, %dx%d, h=%g)' % (self.k, self.nx, self.ny, self.h)


class Patch:
    """Vertex patch: the cells of one level touching one internal vertex."""

    def __init__(self, mesh, vertex_ij):
        vi, vj = int(vertex_ij[0]), int(vertex_ij[1])
        self.k = mesh.k
        self.vertex_ij = (vi, vj)
        self.vertex_xy = (vi * mesh.h, vj * mesh.h)
        self.cells = np.array([
            mesh.cell_id(vi - 1, vj - 1), mesh.cell_id(vi, vj - 1),
            mesh.cell_id(vi - 1, vj), mesh.cell_id(vi, vj),
        ])
        h = mesh.h
        self.closure = ((vi - 1) * h, (vj - 1) * h, (vi + 1) * h, (vj + 1) * h)

    def __repr__(self):
        return 'Patch(k=%d, vertex=%s)' % (self.k, str(self.vertex_ij))


class MeshHierarchy:
    """Nested levels 1..J; levels[j] is level j+1.  gamma is the mesh-size
    ratio between consecutive levels (fixed at 1/2)."""

    gamma = 0.5

    def __init__(self, levels):
        self.levels = levels
        self.J = len(levels)

    def level(self, k):
        """Level k with 1-based indexing as in the decomposition."""
        if not 1 <= k <= self.J:
            raise IndexError('level %d outside 1..%d' % (k, self.J))
        return self.levels[k - 1]

    @property
    def finest(self):
        return self.levels[-1]

    def __repr__(self):
        return 'MeshHierarchy(J=%d, finest h=%g)' % (self.J, self.finest.h)


def build_hierarchy(n0, J):
    """Build J nested levels with n0*2^(k-1) cells per direction on level k.

    n0 < 2 is rejected: a level without internal vertices has no patches and
    the space decomposition would be empty.
    """
    if n0 < 2:
        raise ValueError('n0 must be >= 2 so every level has internal vertices')
    if J < 1:
        raise ValueError('J must be >= 1')
    levels = [LevelMesh(k, n0 * 2 ** (k - 1), n0 * 2 ** (k - 1))
              for k in range(1, J + 1)]
    return MeshHierarchy(levels)


def patches(mesh):
    """All vertex patches of a level, ordered by internal vertex (j-major)."""
    return [Patch(mesh, ij) for ij in mesh.internal_vertex_ij]
