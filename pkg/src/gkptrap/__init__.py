"""Truncated-Fock simulation of GKP states for atoms in optical traps."""

__version__ = "0.1.0"
