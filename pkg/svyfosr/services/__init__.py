"""Estimation, resampling, simulation and evaluation services."""

