"""Desk-scale verification of the augmented Lagrangian method in an
abstract setting: linearly constrained convex minimization in R^n with
Euclidean inner products, the proximal point algorithm on the dual, their
iterate equivalence, and the per-step contraction bounds

    ||p^(n+1) - p|| <= eps/(mu + eps) ||p^(n) - p||,
    D_sym(u^(n+1), u) <= mu eps^2/(mu+eps)^2 ||p^(n) - p||^2   (eps <= mu)
                         eps/4 ||p^(n) - p||^2                 (eps > mu),

with mu estimated as the smallest dual-Hessian eigenvalue over the visited
region.  Everything is dense and capped at 20 unknowns: this module is a
verification harness, not a solver.
"""

import numpy as np

__all__ = ['GeneralProblem', 'quadratic_problem', 'quartic_problem',
           'kkt_solve', 'alm_general', 'ppa_dual', 'estimate_mu_hat',
           'sym_bregman', 'verify_thm_a1']

MAX_DIM = 20


class GeneralProblem:
    """min F(v) subject to Bv = g, with F strictly convex and B of full
    row rank (so the adjoint is injective and the dual is strongly convex
    near the iterates)."""

    def __init__(self, F, grad, hess, B, g):
        B = np.atleast_2d(np.asarray(B, dtype=float))
        g = np.asarray(g, dtype=float)
        nw, nv = B.shape
        if nv > MAX_DIM or nw > MAX_DIM:
            raise ValueError('verification instances are capped at %d dims'
                             % MAX_DIM)
        if np.linalg.matrix_rank(B) != nw:
            raise ValueError('B must have full row rank')
        self.F = F
        self.grad = grad
        self.hess = hess
        self.B = B
        self.g = g
        self.nv = nv
        self.nw = nw


def quadratic_problem(A, b, B, g):
    """F(v) = 1/2 v^T A v - b^T v with A symmetric positive definite."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    return GeneralProblem(
        F=lambda v: 0.5 * v @ A @ v - b @ v,
        grad=lambda v: A @ v - b,
        hess=lambda v: A,
        B=B, g=g)


def quartic_problem(B, g, quartic=1.0):
    """F(v) = 1/2 ||v||^2 + (quartic/4) sum v_i^4; strictly convex with a
    non-quadratic tail so the conjugate has no closed form."""
    def F(v):
        return 0.5 * v @ v + 0.25 * quartic * np.sum(v ** 4)

    def grad(v):
        return v + quartic * v ** 3

    def hess(v):
        return np.eye(len(v)) + np.diag(3.0 * quartic * v ** 2)

    return GeneralProblem(F, grad, hess, B, g)


def _newton(grad, hess, x0, tol=1e-12, max_iter=200):
    x = np.asarray(x0, dtype=float).copy()
    for _ in range(max_iter):
        gx = grad(x)
        if np.linalg.norm(gx) <= tol:
            return x
        x = x - np.linalg.solve(hess(x), gx)
    if np.linalg.norm(grad(x)) <= 10 * tol:
        return x
    raise RuntimeError('dense Newton failed to reach %g (at %g)'
                       % (tol, np.linalg.norm(grad(x))))


def kkt_solve(problem, tol=1e-12):
    """Exact primal/dual pair from the optimality system
    grad F(u) + B^T p = 0, Bu = g, by Newton on the coupled equations."""
    B, g = problem.B, problem.g
    nv, nw = problem.nv, problem.nw

    def res(x):
        u, p = x[:nv], x[nv:]
        return np.concatenate([problem.grad(u) + B.T @ p, B @ u - g])

    def jac(x):
        u = x[:nv]
        top = np.hstack([problem.hess(u), B.T])
        bot = np.hstack([B, np.zeros((nw, nw))])
        return np.vstack([top, bot])

    x = _newton(res, jac, np.zeros(nv + nw), tol=tol)
    return x[:nv], x[nv:]


def alm_general(problem, eps, p0=None, n_steps=10, inner_tol=1e-12):
    """Augmented Lagrangian trajectory [(u^(1), p^(1)), ...] with
    u^(n+1) = argmin F(v) + (p^(n), Bv - g) + ||Bv - g||^2/(2 eps) and
    p^(n+1) = p^(n) + (B u^(n+1) - g)/eps."""
    B, g = problem.B, problem.g
    p = np.zeros(problem.nw) if p0 is None else np.asarray(p0, dtype=float)
    u = np.zeros(problem.nv)
    BtB = B.T @ B
    traj = []
    for _ in range(n_steps):
        pn = p

        def grad(v):
            return problem.grad(v) + B.T @ pn + (BtB @ v - B.T @ g) / eps

        def hess(v):
            return problem.hess(v) + BtB / eps

        u = _newton(grad, hess, u, tol=inner_tol)
        p = pn + (B @ u - g) / eps
        traj.append((u.copy(), p.copy()))
    return traj


def _argsup(problem, w, x0, tol=1e-12):
    """argmax_v {(w, v) - F(v)}, i.e. the solution of grad F(v) = w."""
    return _newton(lambda v: problem.grad(v) - w,
                   lambda v: problem.hess(v), x0, tol=tol)


def fenchel_conjugate(problem, w, x0=None, tol=1e-12):
    """F*(w) evaluated by inner maximization (never symbolically)."""
    v = _argsup(problem, w, np.zeros(problem.nv) if x0 is None else x0, tol)
    return w @ v - problem.F(v), v


def ppa_dual(problem, eps, q0=None, n_steps=10, tol=1e-12):
    """Proximal point trajectory [q^(1), ...] for the dual problem
    min_q F*(-B^T q) + (g, q), with F* evaluated by inner Newton."""
    B, g = problem.B, problem.g
    q = np.zeros(problem.nw) if q0 is None else np.asarray(q0, dtype=float)
    v = np.zeros(problem.nv)
    traj = []
    for _ in range(n_steps):
        qn = q

        def grad(qq):
            vv = _argsup(problem, -B.T @ qq, v, tol=tol)
            return -B @ vv + g + eps * (qq - qn)

        def hess(qq):
            vv = _argsup(problem, -B.T @ qq, v, tol=tol)
            Hinv = np.linalg.inv(problem.hess(vv))
            return B @ Hinv @ B.T + eps * np.eye(problem.nw)

        q = _newton(grad, hess, qn, tol=tol)
        v = _argsup(problem, -B.T @ q, v, tol=tol)
        traj.append(q.copy())
    return traj


def dual_hessian(problem, q):
    """Hessian of q -> F*(-B^T q) + (g, q): B hess F(v*)^{-1} B^T."""
    v = _argsup(problem, -problem.B.T @ q, np.zeros(problem.nv))
    Hinv = np.linalg.inv(problem.hess(v))
    return problem.B @ Hinv @ problem.B.T


def estimate_mu_hat(problem, qs):
    """Strong-convexity modulus of the dual over the visited region: the
    smallest dual-Hessian eigenvalue sampled at the given multipliers."""
    mu = np.inf
    for q in qs:
        ev = np.linalg.eigvalsh(dual_hessian(problem, q))
        mu = min(mu, ev[0])
    return mu


def sym_bregman(problem, v, w):
    return float((problem.grad(v) - problem.grad(w)) @ (v - w))


def verify_thm_a1(problem, eps, p0=None, n_steps=8):
    """Run the ALM trajectory and check, per step, the multiplier
    contraction and the symmetrized-Bregman bound against the exact KKT
    pair.  Returns a report dict with the observed margins; any negative
    margin means a bound violation."""
    u_exact, p_exact = kkt_solve(problem)
    traj = alm_general(problem, eps, p0=p0, n_steps=n_steps)
    ps = [np.zeros(problem.nw) if p0 is None else np.asarray(p0, float)]
    ps += [p for _, p in traj]
    # sample the hull of the visited region, not just the iterates: the
    # contraction factor uses a modulus valid along the whole path
    samples = list(ps) + [p_exact]
    samples += [0.5 * (q + p_exact) for q in ps]
    mu_hat = estimate_mu_hat(problem, samples)
    factor = eps / (mu_hat + eps)
    if eps <= mu_hat:
        dfactor = mu_hat * eps ** 2 / (mu_hat + eps) ** 2
        branch = 'eps<=mu'
    else:
        dfactor = eps / 4.0
        branch = 'eps>mu'
    contraction_margins = []
    bregman_margins = []
    for n, (u, p) in enumerate(traj):
        before = np.linalg.norm(ps[n] - p_exact)
        after = np.linalg.norm(p - p_exact)
        contraction_margins.append(factor * before - after)
        dsym = sym_bregman(problem, u, u_exact)
        bregman_margins.append(dfactor * before ** 2 - dsym)
    return {
        'mu_hat': mu_hat,
        'factor': factor,
        'branch': branch,
        'contraction_margins': contraction_margins,
        'bregman_margins': bregman_margins,
        'u_exact': u_exact,
        'p_exact': p_exact,
        'trajectory': traj,
    }
