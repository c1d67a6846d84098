"""Parabolic complex Hessian-type flows on flat complex tori."""
from .ops import Case, DomainError, Kind, OperatorSpec
from .torus import ChiSpec, ConfigurationError, TorusGeometry

__version__ = "0.1.0"

__all__ = ["Case", "ChiSpec", "ConfigurationError", "DomainError", "Kind", "OperatorSpec",
           "TorusGeometry", "__version__"]
