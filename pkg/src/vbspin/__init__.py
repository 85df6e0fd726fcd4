"""Spin-1 defect ensemble simulator: ODMR, Rabi, T1, Hahn echo and Ramsey
experiments, with least-squares fitting and a reproducible command line."""

__version__ = "0.1.0"
