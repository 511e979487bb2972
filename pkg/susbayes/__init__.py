"""
SusBayes - Bayesian evidence by subset simulation.

Estimates the marginal likelihood of high-dimensional, multi-modal
problems as an integral of failure probabilities, reports single-run
uncertainty and produces weighted and equally weighted posterior samples.
"""

__version__ = "0.1.0"
__author__ = "SusBayes Contributors"
