"""Numerical laboratory for magnetic Schrodinger waveguides.

Fibered Crank-Nicolson solves, Dirichlet-to-Neumann traces, geometric-optics
probes and X-ray/Fourier recovery of the aligned magnetic field beta_23.
"""

__version__ = "0.1.0"
