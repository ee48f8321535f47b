"""Manufactured benchmark problems with known exact solutions.

Both live on the unit square with mu = rho = K = 1 by default and a
tunable Forchheimer coefficient beta.  The body force is built so the
given (u, p) pair solves the flow model exactly:
  ex1: divergence-free exponential velocity, polynomial bump pressure;
  ex2: velocity (x e^y, y e^x) with source g = e^x + e^y, sine pressure.
"""

import numpy as np

__all__ = ['ExactSolution', 'benchmark_problem', 'EXAMPLE_NAMES']

EXAMPLE_NAMES = ('ex1', 'ex2')


class ExactSolution:
    """Exact velocity/pressure pair of a manufactured problem."""

    def __init__(self, u, p):
        self.u = u
        self.p = p


def _ex1(beta, mu, rho, K):
    def u(x, y):
        return np.exp(x) * np.sin(y), np.exp(x) * np.cos(y)

    def p(x, y):
        return x * y * (1 - x) * (1 - y)

    def f(x, y):
        ux, uy = u(x, y)
        lin = mu / (rho * K) + (beta / rho) * np.exp(x)
        px = y * (1 - 2 * x) * (1 - y)
        py = x * (1 - x) * (1 - 2 * y)
        return lin * ux + px, lin * uy + py

    def g(x, y):
        return np.zeros_like(np.asarray(x, dtype=float))

    return f, g, ExactSolution(u, p)


def _ex2(beta, mu, rho, K):
    def u(x, y):
        return x * np.exp(y), y * np.exp(x)

    def p(x, y):
        return np.sin(np.pi * x) * np.sin(np.pi * y)

    def f(x, y):
        ux, uy = u(x, y)
        speed = np.sqrt(ux ** 2 + uy ** 2)
        lin = mu / (rho * K) + (beta / rho) * speed
        px = np.pi * np.cos(np.pi * x) * np.sin(np.pi * y)
        py = np.pi * np.sin(np.pi * x) * np.cos(np.pi * y)
        return lin * ux + px, lin * uy + py

    def g(x, y):
        return np.exp(x) + np.exp(y)

    return f, g, ExactSolution(u, p)


def benchmark_problem(name, beta, mu=1.0, rho=1.0, K=1.0):
    """Return (ProblemData, ExactSolution) for 'ex1' or 'ex2'."""
    from .energy import ProblemData

    if name == 'ex1':
        f, g, exact = _ex1(beta, mu, rho, K)
    elif name == 'ex2':
        f, g, exact = _ex2(beta, mu, rho, K)
    else:
        raise ValueError("unknown example %r (expected 'ex1' or 'ex2')" % name)
    return ProblemData(mu, rho, K, beta, f, g), exact
