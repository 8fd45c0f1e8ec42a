"""Randomized sketching, multi-precision block Gram-Schmidt, and block Krylov solvers."""

__version__ = "0.1.0"
