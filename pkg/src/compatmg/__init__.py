"""Divergence-conforming B-spline discretizations of generalized Stokes and
Oseen flow, solved by a structure-preserving geometric multigrid method with
overlapping Schwarz smoothers on compatible subdomains."""

from .splines import (
    KnotVector,
    UnivariateSpace,
    TensorSpace,
    TransferMatrix,
    open_uniform_space,
    uniform_dyadic_refine,
    knot_insertion_matrix,
)

__version__ = "0.1.0"
