"""Numerical laboratory for fourth-order conformal curvature calculus.

Submodules
----------
grid          rectangular chart grids, tensor fields, binary serialization
curvature     curvature tensors, Q-curvature, Paneitz operator (finite differences)
rational      exact rational scalar fields closed under differentiation
jets          partial-derivative jets of tensor fields at scattered points
charts        conformal (stereographic) sphere charts with exact derivatives
variations    first/second variation identities with finite-difference oracles
bubbles       bubbles, tensor splitting, corrector, Green's functions, Q-mass
flow          zonal spectral integration of the non-local Q-curvature flow
decomposition bubble-profile fitting, weighted spectral projectors
config, cli   scenario configuration and the ``qflow`` entry point
"""

__version__ = "0.1.0"
