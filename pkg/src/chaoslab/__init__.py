"""Particle laboratory for propagation of chaos in regularized Coulomb systems.

Heavy submodules (numba kernels, scipy) are imported lazily so that the CLI
can fix the thread budget before numba initialises.
"""

__version__ = "0.1.0"
