"""Desk-scale verification laboratory for martingale decoupling inequalities."""

__version__ = "0.1.0"
