"""Extraction of neural-network feedback controllers from reward landscapes.

The offline phase samples finite-difference gradients of a noisy objective,
fits a multi-kernel surrogate with a certified error budget, and enumerates
b-separated parameter vectors where the surrogate gradient lies within the
budget.  The online phase shortlists candidates against observed
state-action pairs.
"""

__version__ = "0.1.0"
