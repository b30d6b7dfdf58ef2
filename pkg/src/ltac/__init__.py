"""Certified bounds on long-time averages of polynomial ODEs and expensive-control synthesis."""

from .poly import Polynomial, PolyMatrix, PolyVector, parse_polynomial
from .system import PolySystem, parse_system, read_system

__version__ = "0.1.0"

__all__ = [
    "Polynomial",
    "PolyMatrix",
    "PolyVector",
    "PolySystem",
    "parse_polynomial",
    "parse_system",
    "read_system",
]
