"""Damping-factor error mitigation workbench."""

__version__ = "0.1.0"
