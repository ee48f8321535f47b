"""Benchmark and verification command line.

  df alm-table    iteration counts of the augmented Lagrangian outer loop
                  over a (beta, epsilon, h) grid
  df ml-table     iteration counts of the multilevel method (backtracking
                  for beta > 0, patch-preconditioned CG for beta = 0)
  df curves       per-iteration relative energy errors for fixed step
                  sizes and backtracking
  df verify       property suite; nonzero exit on any failure
  df kernel-bench timing comparison of the compiled and numpy patch kernels

Config files are plain `key=value` lines (lists comma-separated, `#`
comments); command-line flags override file keys.  Mesh sizes are given as
exponents: `h=4,5` means h = 2^-4 and 2^-5.  Reruns with the same
configuration produce byte-identical CSV files; the optional --timing
column is excluded from that guarantee.
"""

import argparse
import csv
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .energy import EnergyModel
from .mesh import build_hierarchy
from .multilevel import MultilevelDecomposition
from .problems import EXAMPLE_NAMES, benchmark_problem
from .solvers import (ALMConfig, PSCConfig, SolverError, alm_solve,
                      ml_pcg_solve, psc_backtracking_solve, psc_solve,
                      reference_min_F_eps, reference_mixed_solve)

TABLE_DEFAULTS = {
    'example': ['ex1', 'ex2'],
    'beta': [0.0, 10.0, 20.0, 30.0],
    'epsilon': [1.0, 0.1, 0.01, 0.001],
    'h': [4, 5, 6, 7],
    'stop_tol': 1e-3,
    'max_outer': 300,
    'tau0': 1.0,
    'jobs': 1,
}

CURVE_DEFAULTS = {
    'example': ['ex1'],
    'beta': [30.0],
    'epsilon': [1.0, 0.1, 0.01, 0.001],
    'h': [5],
    'taus': [0.25, 0.125, 0.0625],
    'stop_tol': 1e-3,
    'max_outer': 200,
    'tau0': 1.0,
    'jobs': 1,
}


class ResultRow:
    """One benchmark grid cell."""

    def __init__(self, example, beta, epsilon, h_exp, solver, iterations,
                 converged, final_energy_error=None, min_step=None,
                 wall_ms=None):
        self.example = example
        self.beta = beta
        self.epsilon = epsilon
        self.h_exp = h_exp
        self.solver = solver
        self.iterations = iterations
        self.converged = converged
        self.final_energy_error = final_energy_error
        self.min_step = min_step
        self.wall_ms = wall_ms

    @property
    def sort_key(self):
        return (self.example, self.beta, -self.epsilon, self.h_exp)


def parse_config_file(path):
    """Plain key=value file; values with commas become lists of strings."""
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ValueError('bad config line %r' % line)
            key, val = line.split('=', 1)
            out[key.strip()] = val.strip()
    return out


def _as_list(val, cast):
    if isinstance(val, str):
        val = val.split(',')
    if not isinstance(val, (list, tuple)):
        val = [val]
    parsed = [cast(x) for x in val]
    if not parsed:
        raise ValueError('empty list in configuration')
    return parsed


def _resolve(defaults, file_cfg, args, key, cast, is_list):
    val = getattr(args, key.replace('-', '_'), None)
    if val is None:
        val = file_cfg.get(key)
    if val is None:
        val = defaults[key]
    return _as_list(val, cast) if is_list else cast(val)


def load_settings(args, defaults):
    file_cfg = parse_config_file(args.config) if args.config else {}
    cfg = {
        'example': _resolve(defaults, file_cfg, args, 'example', str, True),
        'beta': _resolve(defaults, file_cfg, args, 'beta', float, True),
        'epsilon': _resolve(defaults, file_cfg, args, 'epsilon', float, True),
        'h': _resolve(defaults, file_cfg, args, 'h', int, True),
        'stop_tol': _resolve(defaults, file_cfg, args, 'stop_tol',
                             float, False),
        'max_outer': _resolve(defaults, file_cfg, args, 'max_outer',
                              int, False),
        'tau0': _resolve(defaults, file_cfg, args, 'tau0', float, False),
        'jobs': _resolve(defaults, file_cfg, args, 'jobs', int, False),
    }
    if 'taus' in defaults:
        cfg['taus'] = _resolve(defaults, file_cfg, args, 'taus', float, True)
    for name in cfg['example']:
        if name not in EXAMPLE_NAMES:
            raise ValueError('unknown example %r' % name)
    for e in cfg['h']:
        if e < 4:
            raise ValueError('h exponents must be >= 4 (hierarchy from 2x2)')
    out = getattr(args, 'output', None) or file_cfg.get('output')
    return cfg, out


def _fmt(x):
    if x is None:
        return ''
    if isinstance(x, bool):
        return 'true' if x else 'false'
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path, header, rows, timing=False):
    if timing:
        header = header + ['wall_ms']
    out = sys.stdout if path in (None, '-') else open(path, 'w', newline='')
    try:
        writer = csv.writer(out, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])
    finally:
        if out is not sys.stdout:
            out.close()


# ---------------------------------------------------------------------------
# grid runners

def _grid_cells(cfg):
    for example in cfg['example']:
        for beta in cfg['beta']:
            for h_exp in cfg['h']:
                yield example, beta, h_exp


def _run_cells(cfg, cell_fn):
    """Run cell_fn over the (example, beta, h) grid, one task per grid
    point (each task sweeps the epsilon list to share reference solves)."""
    tasks = list(_grid_cells(cfg))
    rows = []
    if cfg['jobs'] > 1:
        with ThreadPoolExecutor(max_workers=cfg['jobs']) as pool:
            for chunk in pool.map(cell_fn, tasks):
                rows.extend(chunk)
    else:
        for task in tasks:
            rows.extend(cell_fn(task))
    rows.sort(key=lambda r: r.sort_key)
    return rows


def run_alm_table(cfg):
    """ALM outer-iteration counts; the reference mixed solve is shared
    across the epsilon sweep of each (example, beta, h) point."""

    def one(task):
        example, beta, h_exp = task
        prob, _ = benchmark_problem(example, beta)
        hier = build_hierarchy(2, h_exp)
        base = EnergyModel(prob, hier, epsilon=1.0)
        reference = reference_mixed_solve(base)
        out = []
        for eps in cfg['epsilon']:
            model = base.with_epsilon(eps)
            t0 = time.perf_counter()
            try:
                u, p, rep = alm_solve(
                    model, ALMConfig(max_outer=cfg['max_outer'],
                                     stop_tol=cfg['stop_tol']),
                    reference=reference)
                iters, conv = rep.iterations, True
            except SolverError:
                iters, conv = -1, False
            out.append(ResultRow(example, beta, eps, h_exp, 'alm', iters,
                                 conv,
                                 wall_ms=1e3 * (time.perf_counter() - t0)))
        return out

    return _run_cells(cfg, one)


def run_ml_table(cfg):
    """Multilevel iteration counts: backtracking correction for beta > 0,
    patch-preconditioned CG for beta = 0, both stopped by the relative
    energy error against the reference minimum."""
    decomps = {}

    def decomp_for(h_exp):
        if h_exp not in decomps:
            decomps[h_exp] = MultilevelDecomposition(build_hierarchy(2, h_exp))
        return decomps[h_exp]

    for h_exp in cfg['h']:
        decomp_for(h_exp)

    def one(task):
        example, beta, h_exp = task
        prob, _ = benchmark_problem(example, beta)
        decomp = decomp_for(h_exp)
        base = EnergyModel(prob, decomp.hierarchy, epsilon=1.0)
        out = []
        for eps in cfg['epsilon']:
            model = base.with_epsilon(eps)
            t0 = time.perf_counter()
            try:
                ustar, fstar = reference_min_F_eps(model)
                stop = ('energy', fstar, cfg['stop_tol'])
                if beta == 0.0:
                    solver = 'pcg'
                    u, rep = ml_pcg_solve(model, decomp, stop=stop,
                                          max_iter=cfg['max_outer'])
                else:
                    solver = 'ml-backtracking'
                    u, rep = psc_backtracking_solve(
                        model, decomp,
                        PSCConfig(tau0=cfg['tau0'], stop=stop,
                                  max_outer=cfg['max_outer']))
                if not rep.converged:
                    raise SolverError('not converged', rep)
                err = (rep.energies[-1] - fstar) / abs(fstar)
                out.append(ResultRow(
                    example, beta, eps, h_exp, solver, rep.iterations, True,
                    final_energy_error=err, min_step=rep.min_tau,
                    wall_ms=1e3 * (time.perf_counter() - t0)))
            except SolverError:
                solver = 'pcg' if beta == 0.0 else 'ml-backtracking'
                out.append(ResultRow(
                    example, beta, eps, h_exp, solver, -1, False,
                    wall_ms=1e3 * (time.perf_counter() - t0)))
        return out

    return _run_cells(cfg, one)


def run_curves(cfg):
    """Relative energy error per iteration for each fixed step size and
    for backtracking; divergent fixed-step runs stop at the divergence
    detector.  Returns (rows, any_backtracking_failure)."""
    rows = []
    failure = False
    for example in cfg['example']:
        for beta in cfg['beta']:
            for h_exp in cfg['h']:
                prob, _ = benchmark_problem(example, beta)
                decomp = MultilevelDecomposition(build_hierarchy(2, h_exp))
                base = EnergyModel(prob, decomp.hierarchy, epsilon=1.0)
                for eps in cfg['epsilon']:
                    model = base.with_epsilon(eps)
                    ustar, fstar = reference_min_F_eps(model)
                    stop = ('energy', fstar, cfg['stop_tol'])
                    runs = [('ml-fixed', tau) for tau in cfg['taus']]
                    runs.append(('ml-backtracking', None))
                    for solver, tau in runs:
                        if solver == 'ml-fixed':
                            u, rep = psc_solve(
                                model, decomp,
                                PSCConfig(tau=tau, stop=stop,
                                          max_outer=cfg['max_outer']))
                        else:
                            try:
                                u, rep = psc_backtracking_solve(
                                    model, decomp,
                                    PSCConfig(tau0=cfg['tau0'], stop=stop,
                                              max_outer=cfg['max_outer']))
                            except SolverError as exc:
                                rep = exc.report
                                failure = True
                        if rep.converged:
                            status = 'converged'
                        elif rep.diverged:
                            status = 'diverged'
                            failure = failure or solver == 'ml-backtracking'
                        else:
                            status = 'maxiter'
                            failure = failure or solver == 'ml-backtracking'
                        for n, en in enumerate(rep.energies, start=1):
                            rows.append((example, beta, h_exp, solver,
                                         tau if tau is not None else '',
                                         eps, n,
                                         (en - fstar) / abs(fstar), status))
    return rows, failure


# ---------------------------------------------------------------------------
# subcommands

def cmd_alm_table(args):
    cfg, output = load_settings(args, TABLE_DEFAULTS)
    rows = run_alm_table(cfg)
    header = ['example', 'beta', 'epsilon', 'h', 'iterations', 'converged']
    data = [[r.example, r.beta, r.epsilon, 2.0 ** -r.h_exp, r.iterations,
             r.converged] + ([r.wall_ms] if args.timing else [])
            for r in rows]
    write_csv(output, header, data, timing=args.timing)
    return 0 if all(r.converged for r in rows) else 1


def cmd_ml_table(args):
    cfg, output = load_settings(args, TABLE_DEFAULTS)
    rows = run_ml_table(cfg)
    header = ['example', 'beta', 'epsilon', 'h', 'solver', 'iterations',
              'converged', 'final_energy_error', 'min_step']
    data = [[r.example, r.beta, r.epsilon, 2.0 ** -r.h_exp, r.solver,
             r.iterations, r.converged, r.final_energy_error, r.min_step]
            + ([r.wall_ms] if args.timing else [])
            for r in rows]
    write_csv(output, header, data, timing=args.timing)
    return 0 if all(r.converged for r in rows) else 1


def cmd_curves(args):
    cfg, output = load_settings(args, CURVE_DEFAULTS)
    rows, failure = run_curves(cfg)
    header = ['example', 'beta', 'h_exp', 'solver', 'tau', 'epsilon', 'n',
              'rel_error', 'status']
    write_csv(output, header, rows)
    return 1 if failure else 0


def cmd_verify(args):
    from .verify import run_verification
    results = run_verification()
    for r in results:
        print(r)
    failed = [r for r in results if not r.passed]
    print('%d/%d checks passed' % (len(results) - len(failed), len(results)))
    return 1 if failed else 0


def cmd_kernel_bench(args):
    from ._kernels import get_backend
    import dfml.multilevel as ml

    prob, _ = benchmark_problem('ex1', args.beta)
    decomp = MultilevelDecomposition(build_hierarchy(2, args.h))
    model = EnergyModel(prob, decomp.hierarchy, epsilon=args.epsilon)
    rng = np.random.default_rng(0)
    u = 0.1 * rng.standard_normal(model.n_dofs)
    results = {}
    for name in ('cython', 'python'):
        try:
            backend = get_backend(name)
        except ImportError:
            print('%-8s unavailable (extension not built)' % name)
            continue
        saved = ml._kernels.solve_patch_batch
        ml._kernels.solve_patch_batch = backend.solve_patch_batch
        try:
            decomp.sweep(model, u)     # warmup
            times = []
            for _ in range(args.repeat):
                t0 = time.perf_counter()
                decomp.sweep(model, u)
                times.append(time.perf_counter() - t0)
            results[name] = min(times)
            print('%-8s best sweep %8.1f ms  (h=2^-%d, %d patches)'
                  % (name, 1e3 * results[name], args.h, decomp.n_patches))
        finally:
            ml._kernels.solve_patch_batch = saved
    if len(results) == 2:
        print('speedup: %.1fx' % (results['python'] / results['cython']))
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog='df', description='Darcy-Forchheimer multilevel solver benchmarks')
    sub = parser.add_subparsers(dest='command', required=True)

    def add_grid_flags(p, curves=False):
        p.add_argument('--config', help='key=value configuration file')
        p.add_argument('--example', help='comma list: ex1,ex2')
        p.add_argument('--beta', help='comma list of Forchheimer coefficients')
        p.add_argument('--epsilon', help='comma list of penalty parameters')
        p.add_argument('--h', help='comma list of mesh exponents (4 => 2^-4)')
        p.add_argument('--stop-tol', dest='stop_tol', type=float)
        p.add_argument('--max-outer', dest='max_outer', type=int)
        p.add_argument('--tau0', type=float)
        p.add_argument('--jobs', type=int)
        p.add_argument('--output', help='CSV path (default stdout)')
        if curves:
            p.add_argument('--taus', help='comma list of fixed step sizes')
        else:
            p.add_argument('--timing', action='store_true',
                           help='append wall_ms column (breaks rerun '
                                'byte-identity)')

    p = sub.add_parser('alm-table', help='augmented Lagrangian counts')
    add_grid_flags(p)
    p.set_defaults(fn=cmd_alm_table)

    p = sub.add_parser('ml-table', help='multilevel method counts')
    add_grid_flags(p)
    p.set_defaults(fn=cmd_ml_table)

    p = sub.add_parser('curves', help='convergence curves')
    add_grid_flags(p, curves=True)
    p.set_defaults(fn=cmd_curves)

    p = sub.add_parser('verify', help='run the property suite')
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser('kernel-bench', help='compare kernel backends')
    p.add_argument('--h', type=int, default=5)
    p.add_argument('--beta', type=float, default=30.0)
    p.add_argument('--epsilon', type=float, default=0.01)
    p.add_argument('--repeat', type=int, default=3)
    p.set_defaults(fn=cmd_kernel_bench)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == '__main__':
    sys.exit(main())
