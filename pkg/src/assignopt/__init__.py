"""Distributed Bregman-ADMM solver for generalized constrained assignment problems."""

__version__ = "0.1.0"
