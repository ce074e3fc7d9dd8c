"""Ancilla-entangled VQE with weighted-SSVQE and MCVQE baselines on a noisy statevector simulator."""

__version__ = "0.1.0"
