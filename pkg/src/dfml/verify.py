"""Cross-cutting verification suite behind `df verify`: derivative checks,
energy-split identities, Bregman properties, the abstract ALM/PPA
equivalence and bounds, decomposition rank tests, and discretization
consistency checks.  All checks run on desk-scale meshes in seconds."""

import numpy as np

from . import abstract_alm as aa
from .discretization import (divergence_matrix, evaluate_velocity,
                             interpolate_velocity, error_l2_velocity,
                             prolongation)
from .energy import EnergyModel
from .mesh import build_hierarchy
from .multilevel import MultilevelDecomposition
from .problems import benchmark_problem
from .solvers import reference_mixed_solve

__all__ = ['run_verification', 'CheckResult']


class CheckResult:
    def __init__(self, name, passed, detail):
        self.name = name
        self.passed = passed
        self.detail = detail

    def __repr__(self):
        return '%s %s (%s)' % ('PASS' if self.passed else 'FAIL',
                               self.name, self.detail)


def _small_model(beta=20.0, eps=0.1, J=3, example='ex1'):
    prob, _ = benchmark_problem(example, beta)
    return EnergyModel(prob, build_hierarchy(2, J), epsilon=eps)


def check_gradient_fd(rtol=1e-6, n_dirs=20, seed=11):
    """Central differences of the penalized energy along random directions
    against the assembled gradient."""
    model = _small_model()
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(model.n_dofs)
    g = model.grad_F_eps(v)
    worst = 0.0
    for _ in range(n_dirs):
        d = rng.standard_normal(model.n_dofs)
        d /= np.linalg.norm(d)
        step = 1e-5 * max(1.0, np.linalg.norm(v))
        fd = (model.eval_F_eps(v + step * d)
              - model.eval_F_eps(v - step * d)) / (2 * step)
        worst = max(worst, abs(fd - g @ d) / max(abs(fd), 1e-30))
    return worst <= rtol, 'max rel error %.2e (tol %.0e)' % (worst, rtol)


def check_hessian_fd(rtol=1e-5, n_dirs=10, seed=12):
    """Hessian-vector products against finite differences of the gradient,
    away from the origin where the cubic term is twice differentiable."""
    model = _small_model()
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(model.n_dofs) + 0.5
    H = model.hess_F_eps(v)
    worst = 0.0
    for _ in range(n_dirs):
        d = rng.standard_normal(model.n_dofs)
        d /= np.linalg.norm(d)
        step = 1e-5 * max(1.0, np.linalg.norm(v))
        fd = (model.grad_F_eps(v + step * d)
              - model.grad_F_eps(v - step * d)) / (2 * step)
        hv = H @ d
        worst = max(worst, np.linalg.norm(fd - hv) / np.linalg.norm(fd))
    return worst <= rtol, 'max rel error %.2e (tol %.0e)' % (worst, rtol)


def check_energy_split(rtol=1e-13, seed=13):
    """Directly assembled F_eps against F0 + eps*F1 on random fields."""
    model = _small_model(eps=0.01)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(20):
        v = rng.standard_normal(model.n_dofs)
        a = model.eval_F_eps(v)
        b = model.eval_F0(v) + model.epsilon * model.eval_F1(v)
        worst = max(worst, abs(a - b) / max(abs(a), 1e-30))
    return worst <= rtol, 'max rel mismatch %.2e (tol %.0e)' % (worst, rtol)


def check_d0_base_independence(seed=14):
    """d0(w; v) must not depend on the base point at all."""
    model = _small_model()
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(model.n_dofs)
    vals = {model.bregman_d0(w, rng.standard_normal(model.n_dofs))
            for _ in range(10)}
    return len(vals) == 1, '%d distinct values over 10 base points' % len(vals)


def check_sym_bregman_identity(rtol=1e-10, seed=15):
    """(F'(v)-F'(w), v-w) equals d_F(v-w; w) + d_F(w-v; v)."""
    model = _small_model()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(10):
        v = rng.standard_normal(model.n_dofs)
        w = rng.standard_normal(model.n_dofs)
        lhs = model.sym_bregman(v, w)
        d_vw = (model.eval_F(v) - model.eval_F(w)
                - float(model.grad_F(w) @ (v - w)))
        d_wv = (model.eval_F(w) - model.eval_F(v)
                - float(model.grad_F(v) @ (w - v)))
        worst = max(worst, abs(lhs - (d_vw + d_wv)) / max(abs(lhs), 1e-30))
    return worst <= rtol, 'max rel mismatch %.2e' % worst


def _verification_instances(seed=16):
    rng = np.random.default_rng(seed)
    inst = [aa.quadratic_problem(np.eye(2), np.zeros(2), [[1.0, 1.0]], [1.0])]
    B = rng.standard_normal((2, 5))
    inst.append(aa.quartic_problem(B, rng.standard_normal(2)))
    A = rng.standard_normal((6, 6))
    A = A @ A.T + 6 * np.eye(6)
    inst.append(aa.quadratic_problem(A, rng.standard_normal(6),
                                     rng.standard_normal((3, 6)),
                                     rng.standard_normal(3)))
    return inst


def check_alm_ppa_equivalence(tol=1e-8, n_steps=10):
    """Multiplier trajectories of the primal ALM and the dual-space
    proximal point algorithm coincide when started from the same point."""
    worst = 0.0
    for prob in _verification_instances():
        alm = aa.alm_general(prob, 0.3, n_steps=n_steps)
        ppa = aa.ppa_dual(prob, 0.3, n_steps=n_steps)
        for (_, p), q in zip(alm, ppa):
            worst = max(worst, np.linalg.norm(p - q))
    return worst <= tol, 'max multiplier gap %.2e over 10 steps' % worst


def check_alm_bounds(margin_tol=1e-9):
    """Per-step multiplier contraction and symmetrized-Bregman bounds on
    the verification instances, for one eps per branch."""
    worst = np.inf
    for prob in _verification_instances():
        for eps in (0.1, 10.0):
            rep = aa.verify_thm_a1(prob, eps, n_steps=8)
            scale = max(1.0, np.linalg.norm(rep['p_exact']) ** 2)
            worst = min(worst,
                        min(rep['contraction_margins']) / scale,
                        min(rep['bregman_margins']) / scale)
    return worst >= -margin_tol, 'min scaled margin %.2e' % worst


def check_kernel_decomposition_rank():
    """The div-free subspace must decompose over patches: the stacked
    div-free patch bases of the two-level 4x4 hierarchy span ker B."""
    hier = build_hierarchy(2, 2)
    decomp = MultilevelDecomposition(hier)
    B = divergence_matrix(hier.finest).toarray()
    dim_ker = hier.finest.n_edges - np.linalg.matrix_rank(B)
    cols = []
    for k in (1, 2):
        for ij, gi, row in decomp.iter_patches(k):
            P = decomp.patch_matrix(k, ij).toarray()
            ns = _nullspace(B @ P)
            if ns.shape[1]:
                cols.append(P @ ns)
    stacked = np.hstack(cols)
    rank = np.linalg.matrix_rank(stacked, tol=1e-10)
    ok = rank == dim_ker
    return ok, 'rank %d vs dim ker B = %d' % (rank, dim_ker)


def _nullspace(A, tol=1e-12):
    u, s, vt = np.linalg.svd(A)
    ns = vt[np.concatenate([s, np.zeros(vt.shape[0] - len(s))]) <= tol]
    return ns.T


def check_space_decomposition_rank():
    """The prolonged patch subspaces of all levels must sum to the whole
    finest velocity space."""
    hier = build_hierarchy(2, 2)
    decomp = MultilevelDecomposition(hier)
    cols = []
    for k in (1, 2):
        for ij, gi, row in decomp.iter_patches(k):
            cols.append(decomp.patch_matrix(k, ij).toarray())
    stacked = np.hstack(cols)
    rank = np.linalg.matrix_rank(stacked)
    n = hier.finest.n_edges
    return rank == n, 'rank %d vs dim V = %d' % (rank, n)


def check_rt0_interpolation_roundtrip(tol=1e-13, seed=17):
    """Edge-flux interpolation of an evaluated member field reproduces its
    coefficients."""
    model = _small_model(J=3)
    rng = np.random.default_rng(seed)
    space = model.space
    v = rng.standard_normal(space.dof_count)
    u = interpolate_velocity(
        lambda x, y: tuple(evaluate_velocity(space, v,
                                             np.column_stack([x, y])).T),
        space)
    err = np.abs(u.values - v).max() / max(1.0, np.abs(v).max())
    return err <= tol, 'roundtrip error %.2e' % err


def check_rt0_convergence(lo=1.7, hi=2.3):
    """First-order velocity convergence of the mixed reference solve:
    the L2 error halves from h=2^-4 to h=2^-5."""
    prob, exact = benchmark_problem('ex1', 10.0)
    errs = []
    for J in (4, 5):
        model = EnergyModel(prob, build_hierarchy(2, J), epsilon=1.0)
        u, p = reference_mixed_solve(model)
        errs.append(error_l2_velocity(u, exact.u))
    ratio = errs[0] / errs[1]
    return lo <= ratio <= hi, 'error ratio %.3f (expect ~2)' % ratio


def check_prolongation_consistency():
    """Divergence commutes with prolongation: the operator B_{k+1} P_k
    equals replication of B_k onto child cells, entry for entry.  All
    entries are dyadic rationals, so the comparison is exact."""
    import scipy.sparse as sp

    hier = build_hierarchy(2, 3)
    worst = 0.0
    for k in (1, 2):
        coarse, fine = hier.level(k), hier.level(k + 1)
        P = prolongation(hier, k)
        Bc = divergence_matrix(coarse)
        Bf = divergence_matrix(fine)
        # replication: fine cell (i,j) -> coarse cell (i//2, j//2)
        fi, fj = np.meshgrid(np.arange(fine.nx), np.arange(fine.ny),
                             indexing='xy')
        rep = (fj.ravel() // 2) * coarse.nx + (fi.ravel() // 2)
        R = sp.csr_matrix((np.ones(fine.n_cells),
                           (np.arange(fine.n_cells), rep)),
                          shape=(fine.n_cells, coarse.n_cells))
        diff = (Bf @ P - R @ Bc)
        worst = max(worst, abs(diff).max() if diff.nnz else 0.0)
    return worst == 0.0, 'max replication defect %.2e (exact expected)' % worst


def check_strengthened_convexity(n_samples=100, seed=19):
    """Convex-combination inequality behind the admissible step size, with
    tau = 1/(4 * max patch overlap * J), sampled over random fields and
    patch corrections on the two-level hierarchy."""
    hier = build_hierarchy(2, 2)
    decomp = MultilevelDecomposition(hier)
    model = _small_model(J=2, eps=0.1)
    mats = []
    for k in (1, 2):
        for ij, gi, row in decomp.iter_patches(k):
            mats.append(decomp.patch_matrix(k, ij))
    tau = 1.0 / (4.0 * 4.0 * hier.J)
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(n_samples):
        v = rng.standard_normal(model.n_dofs)
        ws = [P @ rng.standard_normal(P.shape[1]) for P in mats]
        lhs = ((1 - tau) * model.eval_F_eps(v)
               + tau * sum(model.eval_F_eps(v + w) for w in ws))
        rhs = model.eval_F_eps(v + tau * sum(ws))
        scale = max(1.0, abs(lhs))
        worst = min(worst, (lhs - rhs) / scale)
    return worst >= -1e-12, 'min scaled margin %.2e over %d samples' \
        % (worst, n_samples)


ALL_CHECKS = [
    ('gradient finite differences', check_gradient_fd),
    ('hessian finite differences', check_hessian_fd),
    ('penalized energy split identity', check_energy_split),
    ('d0 base-point independence', check_d0_base_independence),
    ('symmetrized Bregman identity', check_sym_bregman_identity),
    ('ALM/PPA iterate equivalence', check_alm_ppa_equivalence),
    ('ALM contraction and Bregman bounds', check_alm_bounds),
    ('kernel decomposition rank', check_kernel_decomposition_rank),
    ('space decomposition rank', check_space_decomposition_rank),
    ('RT0 interpolation roundtrip', check_rt0_interpolation_roundtrip),
    ('RT0 reference-solve convergence', check_rt0_convergence),
    ('prolongation/divergence consistency', check_prolongation_consistency),
    ('strengthened convexity probe', check_strengthened_convexity),
]


def run_verification():
    """Run every check; returns a list of CheckResult."""
    results = []
    for name, fn in ALL_CHECKS:
        try:
            passed, detail = fn()
        except Exception as exc:   # a crashed check is a failed check
            passed, detail = False, 'raised %r' % exc
        results.append(CheckResult(name, passed, detail))
    return results
