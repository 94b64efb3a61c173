"""Bayesian-optimization grid point allocation for gridded robust and LPV control."""
