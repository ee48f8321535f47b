"""Solver paths for the penalized flow problem.

* damped Newton minimization of F_eps (reference oracle and ALM inner solver)
* Newton on the full nonlinear saddle-point optimality system (reference
  velocity/pressure pair)
* augmented Lagrangian outer loop
* parallel multilevel patch correction, fixed step and backtracking
* preconditioned CG for the quadratic case (beta = 0), using one additive
  pass of exact patch solves as the preconditioner
"""

import time

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .discretization import PressureField, VelocityField
from .multilevel import (AdditivePatchPreconditioner, LocalNewtonConfig,
                         MultilevelDecomposition)

__all__ = ['SolverError', 'ALMConfig', 'PSCConfig', 'SolveReport',
           'newton_minimize', 'reference_min_F_eps', 'reference_mixed_solve',
           'alm_solve', 'local_patch_minimize', 'psc_step', 'psc_solve',
           'psc_backtracking_solve', 'ml_pcg_solve']


class SolverError(RuntimeError):
    """Raised when an iteration fails to meet its contract; carries the
    partial report when one exists."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ALMConfig:
    """Outer-loop parameters of the augmented Lagrangian method."""

    def __init__(self, epsilon=None, max_outer=100, stop_tol=1e-3,
                 inner='newton'):
        if inner not in ('newton', 'multilevel'):
            raise ValueError("inner must be 'newton' or 'multilevel'")
        self.epsilon = epsilon
        self.max_outer = max_outer
        self.stop_tol = stop_tol
        self.inner = inner


class PSCConfig:
    """Parameters of the parallel multilevel correction iteration.  tau is
    the fixed step size; tau0 seeds the backtracking variant.  The stop
    rule is ('energy', f_star, tol) against a reference minimum or
    ('grad', tol) on the gradient norm."""

    def __init__(self, tau=0.125, tau0=1.0, stop=None, max_outer=200,
                 local_newton=None, max_backtrack_halvings=60,
                 divergence_window=3):
        self.tau = tau
        self.tau0 = tau0
        self.stop = stop if stop is not None else ('grad', 1e-8)
        self.max_outer = max_outer
        self.local_newton = local_newton or LocalNewtonConfig()
        self.max_backtrack_halvings = max_backtrack_halvings
        self.divergence_window = divergence_window


class SolveReport:
    """Per-iteration history of one solver run."""

    def __init__(self):
        self.iterations = 0
        self.energies = []
        self.taus = []
        self.residuals = []
        self.wall_time = 0.0
        self.converged = False
        self.diverged = False
        self.flags = []
        self.extras = {}

    @property
    def min_tau(self):
        return min(self.taus) if self.taus else None


def _as_array(v, n):
    if v is None:
        return np.zeros(n)
    if isinstance(v, VelocityField):
        return v.values.copy()
    return np.asarray(v, dtype=float).copy()


# ---------------------------------------------------------------------------
# Newton minimization of F_eps

def newton_minimize(model, x0=None, grad_tol=1e-12, rel_tol=None,
                    max_iter=100, armijo=1e-4, hess_solve=None,
                    hess_scale=None):
    """Damped Newton for min F_eps.  Stops when the gradient l2 norm falls
    below max(grad_tol, rel_tol * initial norm), widened per iterate by the
    gradient evaluation floor (machine epsilon times the Hessian scale
    times the iterate norm).  hess_solve overrides the linear solver (used
    to reuse a factorization when beta = 0)."""
    u = _as_array(x0, model.n_dofs)
    g = model.grad_F_eps(u)
    tol = grad_tol
    if rel_tol is not None:
        tol = max(tol, rel_tol * np.linalg.norm(g))
    eps_mach = np.finfo(float).eps
    for _ in range(max_iter):
        gnorm = np.linalg.norm(g)
        if gnorm <= tol:
            return u
        if hess_solve is not None:
            d = hess_solve(-g)
        else:
            H = model.hess_F_eps(u)
            hess_scale = np.abs(H.data).max()
            d = splu(H.tocsc()).solve(-g)
        if hess_scale is not None:
            floor = 10 * eps_mach * hess_scale * max(1.0, np.linalg.norm(u))
            if gnorm <= max(tol, floor):
                return u
        gd = float(g @ d)
        if gd >= 0:
            raise SolverError('Newton direction is not a descent direction')
        phi0 = model.eval_F_eps(u)
        t = 1.0
        # line search only while its decreases are resolvable in floating
        # point; near the optimum take the plain Newton step
        if -0.5 * gd > 1e-14 * (1.0 + abs(phi0)):
            for _halve in range(60):
                trial = u + t * d
                if model.eval_F_eps(trial) <= phi0 + armijo * t * gd:
                    break
                t *= 0.5
        u = u + t * d
        g = model.grad_F_eps(u)
    if np.linalg.norm(g) <= tol:
        return u
    raise SolverError('Newton did not reach gradient tolerance %.1e '
                      '(final %.1e)' % (tol, np.linalg.norm(g)))


def reference_min_F_eps(model, grad_tol=1e-12, grad_rtol=1e-13):
    """High-accuracy minimizer of F_eps and its minimum value, the oracle
    for the energy-error stopping rule.  The relative part of the
    tolerance keeps the target above the gradient evaluation floor
    (machine epsilon times the Hessian scale) on fine meshes."""
    u = newton_minimize(model, grad_tol=grad_tol, rel_tol=grad_rtol)
    return VelocityField(model.space, u), model.eval_F_eps(u)


def reference_mixed_solve(model, tol=1e-12, max_iter=100):
    """Damped Newton on the optimality system of the mixed formulation,
      F'(u) - B^T(area p) = 0,   area (B u - g_h) = 0,
    down to residual l2 norm <= tol.  Returns the reference pair."""
    ne = model.n_dofs
    nc = model.pspace.dof_count
    area = model.cell_area
    B = model.B
    Ct = (area * B.T).tocsr()
    u = np.zeros(ne)
    p = np.zeros(nc)

    def residual(u_, p_):
        r1 = model.grad_F(u_) - Ct @ p_
        r2 = area * (B @ u_ - model.gh)
        return np.concatenate([r1, r2])

    r = residual(u, p)
    for _ in range(max_iter):
        rnorm = np.linalg.norm(r)
        if rnorm <= tol:
            rep = SolveReport()
            rep.converged = True
            return (VelocityField(model.space, u),
                    PressureField(model.pspace, p))
        H = model.hess_F(u)
        J = sp.bmat([[H, -Ct], [Ct.T, None]], format='csc')
        delta = splu(J).solve(-r)
        merit0 = 0.5 * rnorm ** 2
        t = 1.0
        for _halve in range(60):
            ut = u + t * delta[:ne]
            pt = p + t * delta[ne:]
            rt = residual(ut, pt)
            if 0.5 * np.linalg.norm(rt) ** 2 <= (1 - 1e-4 * t) * merit0:
                break
            t *= 0.5
        u, p, r = ut, pt, rt
    raise SolverError('mixed-system Newton stalled at residual %.2e'
                      % np.linalg.norm(r))


# ---------------------------------------------------------------------------
# Augmented Lagrangian outer loop

def alm_solve(model, config, reference=None):
    """Outer ALM iteration: minimize the penalized energy with multiplier
    q = p^(n), then update p^(n+1) = p^(n) - (div u^(n+1) - g_h)/eps.
    Stops when both relative dof-vector errors against the reference pair
    fall below config.stop_tol.  Records the symmetrized-Bregman bound
    data (distance to the reference velocity vs. eps/4 times the squared
    multiplier error) at every iteration."""
    if config.epsilon is not None and config.epsilon != model.epsilon:
        model = model.with_epsilon(config.epsilon)
    eps = model.epsilon
    if reference is None:
        reference = reference_mixed_solve(model)
    u_ref, p_ref = reference
    u_ref_v = u_ref.values
    p_ref_v = p_ref.values
    u_ref_norm = np.linalg.norm(u_ref_v)
    p_ref_norm = np.linalg.norm(p_ref_v)

    report = SolveReport()
    report.extras['dsym'] = []
    report.extras['dsym_bound'] = []
    report.extras['p_errors'] = [model.pressure_l2(p_ref_v)]
    t0 = time.perf_counter()

    hess_solve = None
    hess_scale = None
    if model.is_quadratic:
        H = model.hess_F_eps(np.zeros(model.n_dofs)).tocsc()
        hess_scale = np.abs(H.data).max()
        lu = splu(H)
        hess_solve = lu.solve

    decomp = None
    if config.inner == 'multilevel':
        decomp = MultilevelDecomposition(model.hierarchy)

    u = np.zeros(model.n_dofs)
    p = np.zeros(model.pspace.dof_count)
    inner_tol = None
    for n in range(1, config.max_outer + 1):
        sub = model.with_q(p)
        if inner_tol is None:
            inner_tol = max(1e-13,
                            1e-10 * np.linalg.norm(sub.grad_F_eps(u)))
        if config.inner == 'newton':
            u = newton_minimize(sub, x0=u, grad_tol=inner_tol,
                                hess_solve=hess_solve,
                                hess_scale=hess_scale)
        else:
            psc_cfg = PSCConfig(stop=('grad', inner_tol), max_outer=500)
            u_field, _ = psc_backtracking_solve(sub, decomp, psc_cfg, x0=u)
            u = u_field.values
        div_res = model.B @ u - model.gh
        dsym = model.sym_bregman(u, u_ref_v)
        bound = 0.25 * eps * model.pressure_l2(p - p_ref_v) ** 2
        report.extras['dsym'].append(dsym)
        report.extras['dsym_bound'].append(bound)
        p = p - div_res / eps
        report.extras['p_errors'].append(model.pressure_l2(p - p_ref_v))
        report.iterations = n
        report.energies.append(model.eval_F_eps(u))
        report.residuals.append(model.pressure_l2(div_res))
        err = max(np.linalg.norm(u - u_ref_v) / u_ref_norm,
                  np.linalg.norm(p - p_ref_v) / p_ref_norm)
        if err < config.stop_tol:
            report.converged = True
            break
    report.wall_time = time.perf_counter() - t0
    if not report.converged:
        raise SolverError('ALM did not converge in %d iterations'
                          % config.max_outer, report)
    return (VelocityField(model.space, u),
            PressureField(model.pspace, p), report)


# ---------------------------------------------------------------------------
# Parallel multilevel correction

def local_patch_minimize(model, decomp, u, k, vertex_ij, cfg=None):
    """Minimize the penalized energy over one prolonged patch subspace by
    damped Newton; returns (local coefficients, prolonged correction,
    energy decrease, newton iterations, converged flag)."""
    u = _as_array(u, model.n_dofs)
    return decomp.solve_one_patch(model, u, k, vertex_ij, cfg)


def psc_step(model, decomp, u, tau, cfg=None):
    """One parallel correction step: all patch problems solved from the
    same iterate, then u + tau * sum of prolonged corrections."""
    u = _as_array(u, model.n_dofs)
    res = decomp.sweep(model, u, cfg)
    return u + tau * res.correction, res


def _stop_satisfied(model, stop, u, energy):
    kind = stop[0]
    if kind == 'energy':
        _, f_star, tol = stop
        return (energy - f_star) / abs(f_star) < tol
    if kind == 'grad':
        return np.linalg.norm(model.grad_F_eps(u)) <= stop[1]
    raise ValueError('unknown stop rule %r' % (stop,))


def psc_solve(model, decomp, config, x0=None):
    """Fixed-step multilevel iteration.  Aborts with diverged status when
    the energy increases divergence_window times in a row."""
    u = _as_array(x0, model.n_dofs)
    report = SolveReport()
    t0 = time.perf_counter()
    energy = model.eval_F_eps(u)
    report.extras['energy0'] = energy
    increases = 0
    for n in range(1, config.max_outer + 1):
        u, sweep = psc_step(model, decomp, u, config.tau,
                            config.local_newton)
        new_energy = model.eval_F_eps(u)
        report.iterations = n
        report.energies.append(new_energy)
        report.taus.append(config.tau)
        report.residuals.append(model.pressure_l2(model.B @ u - model.gh))
        if not sweep.all_converged:
            report.flags.append(('local_newton_maxiter', n))
        increases = increases + 1 if new_energy > energy else 0
        energy = new_energy
        if increases >= config.divergence_window:
            report.diverged = True
            break
        if _stop_satisfied(model, config.stop, u, energy):
            report.converged = True
            break
    report.wall_time = time.perf_counter() - t0
    return VelocityField(model.space, u), report


def psc_backtracking_solve(model, decomp, config, x0=None):
    """Multilevel iteration with the adaptive step rule: double the last
    accepted step, then halve until the global energy decay is at least
    tau times the summed local decays."""
    u = _as_array(x0, model.n_dofs)
    report = SolveReport()
    t0 = time.perf_counter()
    energy = model.eval_F_eps(u)
    report.extras['energy0'] = energy
    tau = config.tau0
    for n in range(1, config.max_outer + 1):
        sweep = decomp.sweep(model, u, config.local_newton)
        if not sweep.all_converged:
            report.flags.append(('local_newton_maxiter', n))
        local_sum = max(sweep.local_decrease_sum, 0.0)
        tau_try = 2.0 * tau
        accepted = False
        for _halve in range(config.max_backtrack_halvings + 1):
            trial = u + tau_try * sweep.correction
            trial_energy = model.eval_F_eps(trial)
            if energy - trial_energy >= tau_try * local_sum:
                accepted = True
                break
            tau_try *= 0.5
        if not accepted:
            raise SolverError('backtracking exhausted %d halvings; local '
                              'decreases inconsistent with the energy'
                              % config.max_backtrack_halvings, report)
        tau = tau_try
        u = trial
        energy = trial_energy
        report.iterations = n
        report.energies.append(energy)
        report.taus.append(tau)
        report.residuals.append(model.pressure_l2(model.B @ u - model.gh))
        if _stop_satisfied(model, config.stop, u, energy):
            report.converged = True
            break
    report.wall_time = time.perf_counter() - t0
    return VelocityField(model.space, u), report


# ---------------------------------------------------------------------------
# Preconditioned CG for the quadratic case

def ml_pcg_solve(model, decomp, stop=('residual', 1e-10), max_iter=500):
    """Conjugate gradients on grad F_eps(u) = 0 for beta = 0, with one
    additive pass of exact patch solves as the preconditioner."""
    if not model.is_quadratic:
        raise ValueError('ml_pcg_solve requires beta = 0')
    precond = AdditivePatchPreconditioner(decomp, model)
    A = model.hess_F_eps(np.zeros(model.n_dofs)).tocsr()
    b = -model.grad_F_eps(np.zeros(model.n_dofs))
    report = SolveReport()
    t0 = time.perf_counter()
    u = np.zeros(model.n_dofs)
    r = b.copy()
    bnorm = np.linalg.norm(b)
    z = precond.apply(r)
    pdir = z.copy()
    rz = float(r @ z)
    for n in range(1, max_iter + 1):
        Ap = A @ pdir
        denom = float(pdir @ Ap)
        if denom <= 0:
            raise SolverError('CG breakdown: nonpositive curvature', report)
        alpha = rz / denom
        u = u + alpha * pdir
        r = r - alpha * Ap
        report.iterations = n
        report.energies.append(model.eval_F_eps(u))
        report.residuals.append(np.linalg.norm(r) / bnorm)
        if stop[0] == 'residual':
            done = report.residuals[-1] <= stop[1]
        else:
            done = _stop_satisfied(model, stop, u, report.energies[-1])
        if done:
            report.converged = True
            break
        z = precond.apply(r)
        rz_new = float(r @ z)
        pdir = z + (rz_new / rz) * pdir
        rz = rz_new
    report.wall_time = time.perf_counter() - t0
    if not report.converged:
        raise SolverError('PCG did not converge in %d iterations' % max_iter,
                          report)
    return VelocityField(model.space, u), report
