"""Weighted hierarchical task-priority control with passivity-based torque laws."""

from .decomp import cholesky, cod_rate, compact_cod, sorted_qr
from .wmpi import WeightPair, build_projected_stack, projector, wmpi
from .whqp import (Hierarchy, TaskLevel, active_search, ewhqp_dual, ewhqp_primal, oracle_lex_solve,
                   parse_problem)

__all__ = [
    "cholesky", "sorted_qr", "compact_cod", "cod_rate",
    "WeightPair", "wmpi", "build_projected_stack", "projector",
    "Hierarchy", "TaskLevel", "ewhqp_primal", "ewhqp_dual", "active_search", "oracle_lex_solve",
    "parse_problem",
]
