"""Workbench for the range of transient random walk and its boundary.

Submodules:
    lattice     unit directions, neighbor bitmasks, isometry classes
    green       lattice Green's function tables and hitting/cover machinery
    walk        path generators: SRW, no-double-backtrack skeleton, clock, splice
    ranges      streaming range/boundary statistics and intersection functionals
    decompose   sample-path martingale decomposition, dyadic error, Hammersley
    experiments Monte Carlo estimators, exact enumeration oracles
    cli         command-line entry point
"""

__version__ = "0.1.0"
