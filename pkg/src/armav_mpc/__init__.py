"""Error-model-compensated convex MPC for quadruped locomotion."""

from .armav import ArmavModel, SeriesWindow, fit_armav, residual_autocorrelation, select_order
from .error_model import ErrorBuffer, ErrorCompensator, ErrorSample, InputAwareErrorModel, fit_error_model
from .mpc import Command, MpcConfig, MpcController
from .qp import QpProblem, QpSolver
from .srb import ModelParams, RobotState, discrete_dynamics

__version__ = "0.1.0"

__all__ = [
    "ArmavModel",
    "SeriesWindow",
    "fit_armav",
    "residual_autocorrelation",
    "select_order",
    "ErrorBuffer",
    "ErrorCompensator",
    "ErrorSample",
    "InputAwareErrorModel",
    "fit_error_model",
    "Command",
    "MpcConfig",
    "MpcController",
    "QpProblem",
    "QpSolver",
    "ModelParams",
    "RobotState",
    "discrete_dynamics",
]
