"""Numerical laboratory for fully nonlinear Hessian-type equations on complex tori.

Modules
-------
symfun     symmetric operator kernels f(lambda) and their cones
conegeo    level sets, tangent cones at infinity, rank and dichotomy witnesses
hermgeo    spectral grids, Hermitian metrics, Chern connection and curvature
solver     continuity-method Newton solver for f(lambda(chi[u] + ddbar u)) = psi + b
estimates  numerical checks of the structural hypotheses and a priori estimates
cli        command-line experiment runner
"""

from .errors import LabError
from .symfun import ConeSpec, LambdaVec, OperatorSpec

__all__ = ["ConeSpec", "LabError", "LambdaVec", "OperatorSpec"]
__version__ = "0.1.0"
