"""Hierarchical null-controllability lab for 1D semilinear parabolic equations.

A leader control steers the state to zero at the final time while two
follower controls sit at their mutual best response; the package computes
the follower equilibrium, the leader's control by two independent
constructions, and a battery of weighted-inequality diagnostics, all on an
implicit-Euler grid whose adjoints are exact transposes.
"""

__version__ = "0.1.0"
