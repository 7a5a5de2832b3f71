"""Renormalized Wick squares and local temperatures of free scalar fields on static geometries.

The package is organised bottom-up:

``geometry``
    Conformally flat shell geometries and their scalar curvature.
``lattice``
    Discretized spatial operators on tori and radial grids.
``spectral``
    Eigendecompositions and functional-calculus kernels.
``thermal``
    Stationary states, renormalized Wick squares and extrapolation.
``scenarios``
    Configured experiments producing pass/fail reports.
``cli``
    The ``wickthermo`` command.
"""

__version__ = "0.1.0"
