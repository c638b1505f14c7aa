"""Efficient data-driven predictive control for discrete-time LTI systems."""
from .core import (ConstraintSet, DimensionError, HankelMatrix, Setpoint, SystemDims, Trajectory,
                   behavior_rank_check, build_hankel, is_equilibrium, pe_order)
from .numerics import aligned_basis, cadzow_slra, mirsky_check, nullspace, principal_angles, tsvd
from .representation import (Predictor, build_gamma, hankel_predictor, kernel_rep, predictor_from_data,
                             select_rows, svd_predictor)
from .systems import LtiPlant, StateSpaceModel, four_tank
from .qp import QpProblem, QpSolution, solve

__version__ = "0.1.0"
