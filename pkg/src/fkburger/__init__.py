"""Hamburger-cheeseburger words, FK loop statistics and cone-exit experiments."""
from .params import ModelParams, ParameterError, p0_from_q, p_from_q, q_from_p, resolve_params, theta0_from_p

__version__ = "0.1.0"

__all__ = ["ModelParams", "ParameterError", "p0_from_q", "p_from_q", "q_from_p", "resolve_params",
           "theta0_from_p", "__version__"]
