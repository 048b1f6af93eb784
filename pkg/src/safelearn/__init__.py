"""Safe data-driven controller synthesis on interval MDP abstractions."""

__version__ = "0.1.0"
