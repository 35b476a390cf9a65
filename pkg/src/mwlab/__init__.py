"""Numerical laboratory for matrix A2 weights, squared Riesz transforms and
dyadic martingale transforms.

Modules: ``matlin`` (small Hermitian linear algebra), ``weight_field`` (grid
weights and vector fields), ``heat_ext`` (heat extensions and the heat A2
characteristic), ``riesz_ops`` (Riesz multipliers and weighted norms),
``lp_functional`` (gradient pairings and duality), ``dyadic_mart`` (Haar trees
and martingale transforms), ``bellman_probe`` (domain and witness checks) and
``harness`` (experiment runner behind the ``mwlab`` CLI).
"""
__version__ = "0.1.0"
