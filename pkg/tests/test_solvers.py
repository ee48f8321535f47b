import numpy as np
import pytest
from scipy.sparse.linalg import splu

from dfml.discretization import error_l2_velocity
from dfml.energy import EnergyModel
from dfml.mesh import build_hierarchy
from dfml.multilevel import MultilevelDecomposition
from dfml.problems import benchmark_problem
from dfml.solvers import (ALMConfig, PSCConfig, SolverError, alm_solve,
                          local_patch_minimize, ml_pcg_solve,
                          newton_minimize, psc_backtracking_solve, psc_solve,
                          psc_step, reference_min_F_eps,
                          reference_mixed_solve)

from conftest import make_model


# ---------------------------------------------------------------------------
# reference solvers

def test_mixed_solve_satisfies_optimality():
    prob, _ = benchmark_problem('ex2', 10.0)
    model = EnergyModel(prob, build_hierarchy(2, 4), epsilon=1.0)
    u, p = reference_mixed_solve(model)
    assert np.abs(model.B @ u.values - model.gh).max() <= 1e-10
    r1 = model.grad_F(u.values) - model.cell_area * (model.B.T @ p.values)
    assert np.linalg.norm(r1) <= 1e-12


def test_mixed_solve_linear_single_step():
    # beta = 0 is a linear saddle point: one Newton step reaches rounding
    prob, _ = benchmark_problem('ex1', 0.0)
    model = EnergyModel(prob, build_hierarchy(2, 3), epsilon=1.0)
    u, p = reference_mixed_solve(model)
    ne, nc = model.n_dofs, model.pspace.dof_count
    # compare with a direct dense saddle solve
    H = model.hess_F(np.zeros(ne)).toarray()
    B = model.B.toarray()
    Ct = model.cell_area * B.T
    K = np.block([[H, -Ct], [Ct.T, np.zeros((nc, nc))]])
    rhs = np.concatenate([-model.grad_F(np.zeros(ne)),
                          model.cell_area * model.gh])
    x = np.linalg.solve(K, rhs)
    assert np.allclose(u.values, x[:ne], atol=1e-9)
    assert np.allclose(p.values, x[ne:], atol=1e-9)


def test_mixed_solve_first_order_convergence():
    prob, exact = benchmark_problem('ex1', 10.0)
    errs = []
    for J in (4, 5):
        model = EnergyModel(prob, build_hierarchy(2, J), epsilon=1.0)
        u, _ = reference_mixed_solve(model)
        errs.append(error_l2_velocity(u, exact.u))
    assert errs[0] / errs[1] == pytest.approx(2.0, abs=0.3)


def test_reference_min_is_minimal(rng):
    model = make_model(build_hierarchy(2, 3), beta=20.0, eps=0.1)
    ustar, fstar = reference_min_F_eps(model)
    for _ in range(100):
        noise = 1e-3 * rng.standard_normal(model.n_dofs)
        assert model.eval_F_eps(ustar.values + noise) >= fstar


def test_reference_min_linear_agrees_with_direct():
    prob, _ = benchmark_problem('ex2', 0.0)
    model = EnergyModel(prob, build_hierarchy(2, 4), epsilon=0.01)
    ustar, fstar = reference_min_F_eps(model)
    H = model.hess_F_eps(np.zeros(model.n_dofs)).tocsc()
    b = -model.grad_F_eps(np.zeros(model.n_dofs))
    direct = splu(H).solve(b)
    rel = np.linalg.norm(ustar.values - direct) / np.linalg.norm(direct)
    assert rel <= 1e-8


def test_penalty_limit_monotone():
    # as eps shrinks the constraint residual of the minimizer shrinks
    prob, _ = benchmark_problem('ex2', 10.0)
    base = EnergyModel(prob, build_hierarchy(2, 4), epsilon=1.0)
    residuals = []
    for eps in (0.1, 0.01, 0.001):
        model = base.with_epsilon(eps)
        ustar, _ = reference_min_F_eps(model)
        residuals.append(model.pressure_l2(model.B @ ustar.values
                                           - model.gh))
    assert residuals[0] > residuals[1] > residuals[2]


def test_newton_rejects_bad_problems():
    model = make_model(build_hierarchy(2, 2), beta=10.0)
    with pytest.raises(SolverError):
        newton_minimize(model, max_iter=1, grad_tol=1e-300)


# ---------------------------------------------------------------------------
# augmented Lagrangian

def test_alm_iteration_counts_sample():
    # two table cells: (ex1, beta=30, eps=1e-2, h=2^-4) -> 3 and
    # (ex2, beta=20, eps=1e-1, h=2^-4) -> 4
    for name, beta, eps, expected in (('ex1', 30.0, 0.01, 3),
                                      ('ex2', 20.0, 0.1, 4)):
        prob, _ = benchmark_problem(name, beta)
        model = EnergyModel(prob, build_hierarchy(2, 4), epsilon=eps)
        u, p, rep = alm_solve(model, ALMConfig())
        assert rep.iterations == expected


def test_alm_multiplier_contraction_monotone_in_eps():
    # observed contraction ratios stay below one and decrease with eps
    prob, _ = benchmark_problem('ex1', 10.0)
    base = EnergyModel(prob, build_hierarchy(2, 4), epsilon=1.0)
    max_ratios = []
    for eps in (1.0, 0.1, 0.01):
        model = base.with_epsilon(eps)
        u, p, rep = alm_solve(model, ALMConfig(stop_tol=1e-9, max_outer=400))
        perr = rep.extras['p_errors']
        ratios = [b / a for a, b in zip(perr, perr[1:]) if a > 1e-12]
        ratios = ratios[:-1] or ratios   # last step may sit at rounding
        assert max(ratios) <= 1.0 + 1e-9
        max_ratios.append(max(ratios))
    assert max_ratios[0] > max_ratios[1] > max_ratios[2]


def test_alm_bregman_bound_every_iteration():
    prob, _ = benchmark_problem('ex1', 10.0)
    base = EnergyModel(prob, build_hierarchy(2, 4), epsilon=1.0)
    for eps in (1.0, 0.1):
        model = base.with_epsilon(eps)
        u, p, rep = alm_solve(model, ALMConfig())
        for d, bound in zip(rep.extras['dsym'], rep.extras['dsym_bound']):
            assert d <= bound * (1 + 1e-12)


def test_alm_nonconvergence_surfaces():
    prob, _ = benchmark_problem('ex1', 30.0)
    model = EnergyModel(prob, build_hierarchy(2, 4), epsilon=1.0)
    with pytest.raises(SolverError) as err:
        alm_solve(model, ALMConfig(max_outer=3))
    assert err.value.report.iterations == 3


def test_alm_multilevel_inner_matches_newton_counts():
    prob, _ = benchmark_problem('ex1', 10.0)
    model = EnergyModel(prob, build_hierarchy(2, 3), epsilon=0.1)
    u1, p1, rep1 = alm_solve(model, ALMConfig(inner='newton'))
    u2, p2, rep2 = alm_solve(model, ALMConfig(inner='multilevel'))
    assert rep1.iterations == rep2.iterations
    assert np.linalg.norm(u1.values - u2.values) \
        <= 1e-6 * np.linalg.norm(u1.values)


# ---------------------------------------------------------------------------
# multilevel solvers

def test_psc_step_first_order(rng):
    # at vanishing step the energy change matches the directional
    # derivative of the summed correction
    model = make_model(build_hierarchy(2, 3), beta=30.0, eps=0.1)
    decomp = MultilevelDecomposition(model.hierarchy)
    u = 0.2 * rng.standard_normal(model.n_dofs)
    u_next, sweep = psc_step(model, decomp, u, 1e-4)
    drop = model.eval_F_eps(u) - model.eval_F_eps(u_next)
    slope = -float(model.grad_F_eps(u) @ sweep.correction)
    assert drop == pytest.approx(1e-4 * slope, rel=1e-3)
    # and the local decreases are all nonnegative
    assert sweep.local_decrease_sum >= 0.0


def test_psc_fixed_step_convergence_order():
    # tau = 1/8 converges, tau = 1/16 needs more iterations
    model = make_model(build_hierarchy(2, 4), beta=30.0, eps=0.1)
    decomp = MultilevelDecomposition(model.hierarchy)
    ustar, fstar = reference_min_F_eps(model)
    iters = {}
    for tau in (0.125, 0.0625):
        u, rep = psc_solve(model, decomp,
                           PSCConfig(tau=tau,
                                     stop=('energy', fstar, 1e-3)))
        assert rep.converged
        iters[tau] = rep.iterations
    assert iters[0.0625] > iters[0.125]


def test_psc_divergence_detector():
    model = make_model(build_hierarchy(2, 4), beta=30.0, eps=0.01)
    decomp = MultilevelDecomposition(model.hierarchy)
    ustar, fstar = reference_min_F_eps(model)
    u, rep = psc_solve(model, decomp,
                       PSCConfig(tau=0.25, stop=('energy', fstar, 1e-3),
                                 max_outer=100))
    assert rep.diverged
    assert not rep.converged


def test_backtracking_monotone_and_min_step():
    model = make_model(build_hierarchy(2, 4), beta=30.0, eps=0.01)
    decomp = MultilevelDecomposition(model.hierarchy)
    ustar, fstar = reference_min_F_eps(model)
    u, rep = psc_backtracking_solve(
        model, decomp, PSCConfig(tau0=1.0, stop=('energy', fstar, 1e-3)))
    assert rep.converged
    energies = [rep.extras['energy0']] + rep.energies
    assert all(b <= a for a, b in zip(energies, energies[1:]))
    assert rep.min_tau >= 2.0 ** -6


def test_backtracking_grad_stop(rng):
    model = make_model(build_hierarchy(2, 3), beta=10.0, eps=0.1)
    decomp = MultilevelDecomposition(model.hierarchy)
    u, rep = psc_backtracking_solve(
        model, decomp, PSCConfig(tau0=1.0, stop=('grad', 1e-8),
                                 max_outer=300))
    assert rep.converged
    assert np.linalg.norm(model.grad_F_eps(u.values)) <= 1e-8


def test_local_patch_minimize_at_optimum():
    model = make_model(build_hierarchy(2, 3), beta=10.0, eps=0.1)
    decomp = MultilevelDecomposition(model.hierarchy)
    ustar, _ = reference_min_F_eps(model)
    w, prolonged, dec, iters, conv = local_patch_minimize(
        model, decomp, ustar.values, 3, (4, 4))
    assert conv
    assert iters == 0
    assert np.abs(w).max() == 0.0


def test_pcg_matches_direct_solver():
    prob, _ = benchmark_problem('ex1', 0.0)
    model = EnergyModel(prob, build_hierarchy(2, 4), epsilon=0.01)
    decomp = MultilevelDecomposition(model.hierarchy)
    u, rep = ml_pcg_solve(model, decomp, stop=('residual', 1e-10))
    assert rep.converged
    H = model.hess_F_eps(np.zeros(model.n_dofs)).tocsc()
    b = -model.grad_F_eps(np.zeros(model.n_dofs))
    direct = splu(H).solve(b)
    rel = np.linalg.norm(u.values - direct) / np.linalg.norm(direct)
    assert rel <= 1e-8


def test_pcg_iterations_stable_in_h():
    prob, _ = benchmark_problem('ex1', 0.0)
    counts = []
    for J in (4, 5, 6):
        model = EnergyModel(prob, build_hierarchy(2, J), epsilon=0.01)
        decomp = MultilevelDecomposition(model.hierarchy)
        ustar, fstar = reference_min_F_eps(model)
        u, rep = ml_pcg_solve(model, decomp, stop=('energy', fstar, 1e-3))
        counts.append(rep.iterations)
    assert max(counts) - min(counts) <= 2


def test_pcg_requires_quadratic():
    model = make_model(build_hierarchy(2, 2), beta=10.0)
    decomp = MultilevelDecomposition(model.hierarchy)
    with pytest.raises(ValueError):
        ml_pcg_solve(model, decomp)
