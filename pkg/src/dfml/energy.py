"""Darcy-Forchheimer energy functionals on the finest level.

The basic energy is
    F(v) = (mu/2rho) int K^-1 |v|^2 + (beta/3rho) int |v|^3 - int f.v
and the penalized energy used throughout is
    F_eps(v; q) = 1/2 int (div v - g_h)^2 + eps * [ F(v) - int q div v ],
split into the semicoercive part F0 (the divergence penalty) and the
coercive part F1 (the bracket), so F_eps = F0 + eps*F1.  All integrals use
the single 3x3 Gauss rule of the discretization, so internal identities
such as F_eps = F0 + eps*F1 hold to rounding rather than to quadrature
error.  Reductions over quadrature points are numpy pairwise sums in index
order, so repeated evaluations are bit-identical.
"""

import numpy as np
import scipy.sparse as sp

from .discretization import (PressureSpace, RTSpace, VelocityField,
                             divergence_matrix, l2_project_scalar)

__all__ = ['ProblemData', 'EnergyModel', 'HESSIAN_REG']

# |.|^3 is C^1 but its Hessian is undefined at 0; the floor enters the
# Hessian only, never the energy or gradient
HESSIAN_REG = 1e-12


class ProblemData:
    """Coefficients and data of the flow model: viscosity mu, density rho,
    scalar permeability K, Forchheimer coefficient beta, body force f and
    source g.  f maps (x, y) arrays to an (fx, fy) pair, g to an array."""

    def __init__(self, mu, rho, K, beta, f, g):
        if mu <= 0 or rho <= 0 or K <= 0:
            raise ValueError('mu, rho, K must be positive')
        if beta < 0:
            raise ValueError('beta must be nonnegative')
        self.mu = mu
        self.rho = rho
        self.K = K
        self.beta = beta
        self.f = f
        self.g = g


class EnergyModel:
    """F, F_eps and their derivatives for one problem on the finest level
    of a hierarchy.  Immutable; `with_q` derives a model with a different
    multiplier q sharing all assembled operators."""

    def __init__(self, problem, hierarchy, epsilon, q=None, _share=None):
        if epsilon <= 0:
            raise ValueError('epsilon must be positive')
        self.problem = problem
        self.hierarchy = hierarchy
        self.epsilon = epsilon
        if _share is None:
            self.space = RTSpace(hierarchy.finest)
            self.pspace = PressureSpace(hierarchy.finest)
            self.B = divergence_matrix(self.space)
            self.cell_area = hierarchy.finest.cell_area
            quad = self.space.quad
            self.wq = quad.weights
            fx, fy = problem.f(quad.points[:, 0], quad.points[:, 1])
            self.fq = np.column_stack([fx, fy])
            self.gh = l2_project_scalar(problem.g, self.pspace).values
            W = sp.diags(self.wq)
            Ex, Ey = self.space.eval_x, self.space.eval_y
            self.mass_rt = (Ex.T @ W @ Ex + Ey.T @ W @ Ey).tocsr()
            self.div_gram = (self.B.T @ (self.cell_area * self.B)).tocsr()
        else:
            for name in ('space', 'pspace', 'B', 'cell_area', 'wq', 'fq',
                         'gh', 'mass_rt', 'div_gram'):
                setattr(self, name, getattr(_share, name))
        self.q = np.zeros(self.pspace.dof_count) if q is None \
            else np.asarray(q, dtype=float)
        if self.q.shape != (self.pspace.dof_count,):
            raise ValueError('q must live on the finest pressure space')
        self.c_mass = problem.mu / (problem.rho * problem.K)
        self.c_forch = problem.beta / problem.rho

    def with_q(self, q):
        return EnergyModel(self.problem, self.hierarchy, self.epsilon,
                           q=q, _share=self)

    def with_epsilon(self, epsilon):
        model = EnergyModel(self.problem, self.hierarchy, epsilon,
                            q=self.q, _share=self)
        return model

    @property
    def is_quadratic(self):
        return self.problem.beta == 0.0

    @property
    def n_dofs(self):
        return self.space.dof_count

    def _coeffs(self, v):
        return v.values if isinstance(v, VelocityField) else np.asarray(v)

    # -- energies ----------------------------------------------------------

    def eval_F(self, v):
        """(mu/2rho) int K^-1|v|^2 + (beta/3rho) int |v|^3 - int f.v."""
        c = self._coeffs(v)
        V = self.space.velocity_at_quad(c)
        mag2 = V[:, 0] ** 2 + V[:, 1] ** 2
        quad = (0.5 * self.c_mass * mag2 + (self.c_forch / 3.0) * mag2 ** 1.5
                - self.fq[:, 0] * V[:, 0] - self.fq[:, 1] * V[:, 1])
        return float(np.sum(self.wq * quad))

    def eval_F0(self, v):
        """Semicoercive part: half the squared L2 norm of div v - g_h."""
        r = self.B @ self._coeffs(v) - self.gh
        return 0.5 * self.cell_area * float(np.sum(r * r))

    def eval_F1(self, v):
        """Coercive part: F(v) minus the multiplier term int q div v."""
        c = self._coeffs(v)
        qdiv = self.cell_area * float(np.sum(self.q * (self.B @ c)))
        return self.eval_F(v) - qdiv

    def eval_F_eps(self, v):
        """Direct assembly of the penalized energy (deliberately not routed
        through eval_F0/eval_F1; the split identity is tested against it)."""
        c = self._coeffs(v)
        div = self.B @ c
        pen = 0.5 * self.cell_area * float(np.sum((div - self.gh) ** 2))
        V = self.space.velocity_at_quad(c)
        mag2 = V[:, 0] ** 2 + V[:, 1] ** 2
        quad = (0.5 * self.c_mass * mag2 + (self.c_forch / 3.0) * mag2 ** 1.5
                - self.fq[:, 0] * V[:, 0] - self.fq[:, 1] * V[:, 1])
        bracket = float(np.sum(self.wq * quad)) \
            - self.cell_area * float(np.sum(self.q * div))
        return pen + self.epsilon * bracket

    # -- first derivatives -------------------------------------------------

    def grad_F(self, v):
        c = self._coeffs(v)
        V = self.space.velocity_at_quad(c)
        mag = np.sqrt(V[:, 0] ** 2 + V[:, 1] ** 2)
        gx = self.wq * (self.c_mass * V[:, 0] + self.c_forch * mag * V[:, 0]
                        - self.fq[:, 0])
        gy = self.wq * (self.c_mass * V[:, 1] + self.c_forch * mag * V[:, 1]
                        - self.fq[:, 1])
        return self.space.eval_x.T @ gx + self.space.eval_y.T @ gy

    def grad_F1(self, v):
        return self.grad_F(v) - self.B.T @ (self.cell_area * self.q)

    def grad_F_eps(self, v):
        c = self._coeffs(v)
        pen = self.B.T @ (self.cell_area * (self.B @ c - self.gh))
        return pen + self.epsilon * self.grad_F1(c)

    # -- second derivatives ------------------------------------------------

    def forchheimer_hessian(self, v):
        """Sparse Hessian of (beta/3rho) int |v|^3, with the pointwise block
        |v| I + v v^T / max(|v|, reg)."""
        c = self._coeffs(v)
        V = self.space.velocity_at_quad(c)
        mag = np.sqrt(V[:, 0] ** 2 + V[:, 1] ** 2)
        safe = np.maximum(mag, HESSIAN_REG)
        Ex, Ey = self.space.eval_x, self.space.eval_y
        d11 = sp.diags(self.wq * (mag + V[:, 0] ** 2 / safe))
        d22 = sp.diags(self.wq * (mag + V[:, 1] ** 2 / safe))
        d12 = sp.diags(self.wq * (V[:, 0] * V[:, 1] / safe))
        return (Ex.T @ d11 @ Ex + Ey.T @ d22 @ Ey
                + Ex.T @ d12 @ Ey + Ey.T @ d12 @ Ex) * self.c_forch

    def hess_F(self, v):
        H = self.c_mass * self.mass_rt
        if self.c_forch != 0.0:
            H = H + self.forchheimer_hessian(v)
        return H.tocsr()

    def hess_F_eps(self, v):
        return (self.div_gram + self.epsilon * self.hess_F(v)).tocsr()

    # -- Bregman divergences -----------------------------------------------

    def bregman_d0(self, w, v=None):
        """Bregman divergence of F0; collapses to half the squared L2 norm
        of div w, independent of the base point."""
        dw = self.B @ self._coeffs(w)
        return 0.5 * self.cell_area * float(np.sum(dw * dw))

    def bregman_d1(self, w, v):
        cw, cv = self._coeffs(w), self._coeffs(v)
        return (self.eval_F1(cv + cw) - self.eval_F1(cv)
                - float(self.grad_F1(cv) @ cw))

    def sym_bregman(self, v, w):
        """Symmetrized Bregman divergence of F: (F'(v) - F'(w), v - w)."""
        cv, cw = self._coeffs(v), self._coeffs(w)
        return float((self.grad_F(cv) - self.grad_F(cw)) @ (cv - cw))

    # -- pressure-space helpers --------------------------------------------

    def pressure_l2(self, p):
        """L2(Omega) norm of a cellwise-constant coefficient vector."""
        return np.sqrt(self.cell_area * float(np.sum(np.asarray(p) ** 2)))
