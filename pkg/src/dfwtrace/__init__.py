"""Distributed Frank-Wolfe for trace-norm constrained matrix learning."""

__version__ = "0.1.0"
