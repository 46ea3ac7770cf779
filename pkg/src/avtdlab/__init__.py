"""Numerical laboratory for vacuum cosmological singularities.

Gowdy matrix wave maps with monotone energies and an H^-1 AVTD decay
certificate, alongside T^2-symmetric AVTD functionals.  The cmcflow
subpackage treats homogeneous CMC Einstein flows and their monotone volumes.
"""

__version__ = "0.1.0"
