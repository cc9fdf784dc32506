"""Variational bounds on Petz-Renyi divergences and the device-independent
key-rate / advantage-distillation machinery built on top of them.

Subpackages are organized by layer:

- quadrature: Gauss-Jacobi and Gauss-Radau-Jacobi rules with one-sided error behavior
- matrixkernel: exact small-matrix oracles and variational bound evaluation
- ncalgebra: noncommutative words, rewrite rules, moment-matrix structure
- conic: cone program container, exponential-cone modeling, solver backends, CBF export
- scenario: honest behaviors, test statistics, accept-set tolerances
- keyrate: single-round entropy programs and finite-size rates
- advdist: pretty-good-fidelity programs and noise-tolerance search
- cli: command-line front end
"""

__version__ = "0.1.0"
