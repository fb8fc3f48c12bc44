"""SIR dynamics on homogeneous trees and their continuum limit."""

__version__ = "0.1.0"

__all__ = ["__version__"]
