"""Finite element and spectral toolkit for a wave/plate transmission system
with dynamical boundary feedback."""

__version__ = "0.1.0"
