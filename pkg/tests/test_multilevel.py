import numpy as np
import pytest

import dfml.multilevel as ml
from dfml._kernels import get_backend
from dfml.energy import EnergyModel
from dfml.mesh import build_hierarchy
from dfml.multilevel import (AdditivePatchPreconditioner, LocalNewtonConfig,
                             MultilevelDecomposition)
from dfml.problems import benchmark_problem

from conftest import make_model


def test_patch_counts(decomp4):
    assert decomp4.n_patches == 1 + 9 + 49 + 225
    # interior patches have 4 dofs, sides 6, corners 8, the coarsest 12
    for k in range(1, 5):
        for g in decomp4.level_groups[k - 1]:
            if k == 1:
                assert g.m == 12
            elif not any(g.flags):
                assert g.m == 4


def test_templates_match_direct_subspace(decomp3, hier3):
    # template edge ids agree with the directly computed patch subspace
    from dfml.discretization import patch_subspace
    from dfml.mesh import Patch
    for k in (1, 2, 3):
        mesh = hier3.level(k)
        for ij, gi, row in decomp3.iter_patches(k):
            group = decomp3.level_groups[k - 1][gi]
            direct = patch_subspace(mesh, Patch(mesh, ij))
            assert list(group.edge_ids[row]) == list(direct)


def test_local_solve_matches_dense_oracle(decomp2, hier2, rng):
    # beta = 0: one Newton step must equal the dense solve of
    # (P^T H P) w = -P^T g on every patch of both levels
    prob, _ = benchmark_problem('ex1', 0.0)
    model = EnergyModel(prob, hier2, epsilon=0.1)
    u = 0.1 * rng.standard_normal(model.n_dofs)
    H = model.hess_F_eps(u).toarray()
    G = model.grad_F_eps(u)
    for k in (1, 2):
        for ij, gi, row in decomp2.iter_patches(k):
            w, prolonged, dec, iters, conv = decomp2.solve_one_patch(
                model, u, k, ij)
            P = decomp2.patch_matrix(k, ij).toarray()
            w_ref = np.linalg.solve(P.T @ H @ P, -(P.T @ G))
            assert np.abs(w - w_ref).max() < 1e-12
            assert conv


def test_local_solve_is_local_minimizer(decomp2, hier2, rng):
    prob, _ = benchmark_problem('ex1', 30.0)
    model = EnergyModel(prob, hier2, epsilon=0.01)
    u = 0.1 * rng.standard_normal(model.n_dofs)
    w, prolonged, dec, iters, conv = decomp2.solve_one_patch(model, u, 2,
                                                             (2, 2))
    assert conv
    P = decomp2.patch_matrix(2, (2, 2)).toarray()
    reduced = P.T @ model.grad_F_eps(u + prolonged)
    assert np.linalg.norm(reduced) <= 1e-10
    # the local decrease equals the global energy difference
    e0 = model.eval_F_eps(u)
    e1 = model.eval_F_eps(u + prolonged)
    assert dec == pytest.approx(e0 - e1, abs=1e-12 * max(1, abs(e0)))
    assert e1 <= e0


def test_zero_correction_at_optimum(decomp3):
    from dfml.solvers import reference_min_F_eps
    model = make_model(build_hierarchy(2, 3), beta=10.0, eps=0.1)
    ustar, _ = reference_min_F_eps(model)
    sweep = decomp3.sweep(model, ustar.values)
    assert np.abs(sweep.correction).max() < 1e-9
    assert sweep.local_decrease_sum < 1e-14


def test_sweep_bitwise_deterministic(decomp3, rng):
    model = make_model(build_hierarchy(2, 3), beta=20.0, eps=0.01)
    u = 0.1 * rng.standard_normal(model.n_dofs)
    a = decomp3.sweep(model, u)
    b = decomp3.sweep(model, u)
    assert np.array_equal(a.correction, b.correction)
    assert a.local_decrease_sum == b.local_decrease_sum


def test_sweep_equals_per_patch_assembly(decomp2, hier2, rng):
    # solving the patches one by one in shuffled order and reducing in
    # canonical order reproduces the sweep
    model = make_model(hier2, beta=30.0, eps=0.1)
    u = 0.1 * rng.standard_normal(model.n_dofs)
    sweep = decomp2.sweep(model, u)
    jobs = [(k, tuple(ij)) for k in (1, 2)
            for ij, _, _ in decomp2.iter_patches(k)]
    shuffled = list(jobs)
    rng.shuffle(shuffled)
    pieces = {}
    for k, ij in shuffled:
        _, prolonged, _, _, _ = decomp2.solve_one_patch(model, u, k, ij)
        pieces[(k, ij)] = prolonged
    total = np.zeros(model.n_dofs)
    for k, ij in jobs:      # canonical reduction order
        total += pieces[(k, ij)]
    assert np.abs(total - sweep.correction).max() < 1e-12


def test_kernel_backends_agree(decomp3, rng):
    try:
        cy = get_backend('cython')
    except ImportError:
        pytest.skip('compiled kernel not built')
    py = get_backend('python')
    model = make_model(build_hierarchy(2, 3), example='ex2', beta=30.0,
                       eps=0.01)
    u = 0.1 * rng.standard_normal(model.n_dofs)
    saved = ml._kernels.solve_patch_batch
    try:
        ml._kernels.solve_patch_batch = cy.solve_patch_batch
        a = decomp3.sweep(model, u)
        ml._kernels.solve_patch_batch = py.solve_patch_batch
        b = decomp3.sweep(model, u)
    finally:
        ml._kernels.solve_patch_batch = saved
    assert np.abs(a.correction - b.correction).max() < 1e-10
    assert a.local_decrease_sum == pytest.approx(b.local_decrease_sum,
                                                 rel=1e-12)
    assert a.all_converged and b.all_converged


def test_local_newton_respects_iteration_cap(decomp2, rng):
    model = make_model(build_hierarchy(2, 2), beta=30.0, eps=0.01)
    u = 0.5 * rng.standard_normal(model.n_dofs)
    cfg = LocalNewtonConfig(max_iter=1)
    sweep = decomp2.sweep(model, u, cfg)
    assert not sweep.all_converged
    assert sweep.max_local_iters == 1
    # the energy still never increases
    e0 = model.eval_F_eps(u)
    assert model.eval_F_eps(u + sweep.correction * 0.0) == e0


def test_preconditioner_symmetry(decomp3, rng):
    prob, _ = benchmark_problem('ex2', 0.0)
    model = EnergyModel(prob, decomp3.hierarchy, epsilon=0.01)
    M = AdditivePatchPreconditioner(decomp3, model)
    r1 = rng.standard_normal(model.n_dofs)
    r2 = rng.standard_normal(model.n_dofs)
    assert float(M.apply(r1) @ r2) == pytest.approx(float(r1 @ M.apply(r2)),
                                                    rel=1e-12)


def test_preconditioner_requires_quadratic(decomp2):
    model = make_model(build_hierarchy(2, 2), beta=10.0)
    with pytest.raises(ValueError):
        AdditivePatchPreconditioner(decomp2, model)


def test_preconditioner_matches_patch_solves(decomp2, rng):
    # M r equals the sum of exact local solves of the linear sweep
    prob, _ = benchmark_problem('ex1', 0.0)
    model = EnergyModel(prob, decomp2.hierarchy, epsilon=0.1)
    M = AdditivePatchPreconditioner(decomp2, model)
    H = model.hess_F_eps(np.zeros(model.n_dofs)).toarray()
    r = rng.standard_normal(model.n_dofs)
    expected = np.zeros_like(r)
    for k in (1, 2):
        for ij, gi, row in decomp2.iter_patches(k):
            P = decomp2.patch_matrix(k, ij).toarray()
            expected += P @ np.linalg.solve(P.T @ H @ P, P.T @ r)
    assert np.allclose(M.apply(r), expected, rtol=1e-11, atol=1e-12)
