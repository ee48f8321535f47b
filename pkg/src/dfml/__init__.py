"""Mixed finite-element solvers for Darcy-Forchheimer porous-media flow.

The discretized mixed problem is recast, through the augmented Lagrangian
method, as a penalized convex minimization that a parallel multilevel
vertex-patch correction method (with optional backtracking line search)
solves robustly in both the penalty parameter and the mesh size.  The
`df` command line runs the iteration-count benchmark grids, convergence
curves and the verification suite.
"""

__version__ = '0.1.0'

from .mesh import MeshHierarchy, build_hierarchy, patches
from .energy import EnergyModel, ProblemData
from .problems import benchmark_problem

__all__ = ['MeshHierarchy', 'build_hierarchy', 'patches', 'EnergyModel',
           'ProblemData', 'benchmark_problem', '__version__']
