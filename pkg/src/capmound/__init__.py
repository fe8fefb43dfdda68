"""Groundwater mound spreading in a stratum with capillary retention of water.

Solvers for h_t = kappa(sign h_t) (h^2)_xx, the self-similar exponents of
the second kind found by shooting, and the analysis tools that tie them
together.
"""

__version__ = "0.1.0"
