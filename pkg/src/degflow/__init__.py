"""Weak Kahler-Ricci flow on flat complex tori from degenerate initial data.

Modules: ``fields`` (grid fields and spectral operators), ``background``
(reference forms and weights), ``regularize`` (approximation ladders),
``solvers`` (elliptic and parabolic Monge-Ampere solvers), ``harness``
(estimate checks) and ``cli`` (scenario runner).
"""

__version__ = "0.1.0"
