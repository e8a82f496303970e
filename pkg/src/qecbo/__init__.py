"""Discovery of CSS quantum LDPC codes by Bayesian optimization.

The package builds candidate codes from binary search vectors, estimates
logical error rates by Monte Carlo decoding, models the log error rate
with a Gaussian process over a learned chain-complex embedding, and
proposes new candidates by expected-improvement hill climbing.
"""

__version__ = "0.1.0"
