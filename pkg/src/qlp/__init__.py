"""Linearized l_q penalty method for equality-constrained nonconvex problems."""

from .core import (
    DomainError,
    EvalCounters,
    EvaluationError,
    KnownConstants,
    ProblemOracle,
    kkt_residual,
    multiplier_estimate,
    penalty_gradient,
    penalty_value,
    qnorm_pow,
    sign_pow,
    sign_pow_vec,
)
from .criticality import (
    CriticalityReport,
    certify_first_order,
    criticality_report,
    psi_bar,
    psi_r,
)
from .model import LinearizedModel, build_model, model_gradient, model_value
from .solver import (
    BacktrackFailure,
    BetaMode,
    IterRecord,
    QlpConfig,
    SolveReport,
    PrecisionFloor,
    SolveStatus,
    qlp_solve,
    qlp_step,
    qlp_with_rho_search,
)

__version__ = "0.1.0"

__all__ = [
    "LinearizedModel",
    "build_model",
    "model_gradient",
    "model_value",
    "DomainError",
    "EvalCounters",
    "EvaluationError",
    "KnownConstants",
    "ProblemOracle",
    "kkt_residual",
    "multiplier_estimate",
    "penalty_gradient",
    "penalty_value",
    "qnorm_pow",
    "sign_pow",
    "sign_pow_vec",
    "CriticalityReport",
    "certify_first_order",
    "criticality_report",
    "psi_bar",
    "psi_r",
    "BacktrackFailure",
    "BetaMode",
    "IterRecord",
    "QlpConfig",
    "SolveReport",
    "PrecisionFloor",
    "SolveStatus",
    "qlp_solve",
    "qlp_step",
    "qlp_with_rho_search",
]
