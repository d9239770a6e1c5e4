"""
Finite-element ground truth for density-driven flow and solute transport.

Submodules: `grid` (Q1 mesh and quadrature), `physics` (constitutive laws),
`pressure` and `transport` (the two implicit solves), `run` (the coupled
time loop) and `store` (snapshot directories).
"""
