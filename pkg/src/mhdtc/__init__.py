"""Spectral laboratory for the magnetized Taylor-Couette instability.

Modules
-------
grid     radial Chebyshev collocation on the annulus
field    Fourier x Chebyshev fields, calculus, norms, checkpoints
steady   Taylor-Couette steady state and its Navier-Stokes audit
oper     linearized blocks, Leray projection, nonlinear terms
spectra  per-mode eigensolves, scans, scaling and smoothing checks
evolve   CNAB2 time integration of the perturbation system
lab      configs, experiments, command line front end
"""

__version__ = "0.1.0"
