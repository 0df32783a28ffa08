"""Bayesian calibration with data and non-empirical constraints.

A sequential Monte Carlo sampler anneals the likelihood temperature and
an approximate-Bayesian-computation discrepancy threshold together, so
that the final ensemble follows ``prior * likelihood`` restricted to
parameters whose model output satisfies every constraint.
"""

__version__ = "0.1.0"
