"""Demand-side-management scheduling: microgrid MILP, bundled solver, retrieval pipeline."""

__version__ = "0.1.0"
