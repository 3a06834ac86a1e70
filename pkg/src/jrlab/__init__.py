"""Numerical laboratory for Jackiw--Rossi type operators on surfaces.

Submodules are imported on demand; ``import jrlab`` stays cheap so the
command line front end can pin BLAS threads before numpy loads.
"""

__version__ = "0.1.0"
