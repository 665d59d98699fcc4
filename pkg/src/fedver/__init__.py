"""Deterministic simulator of federated face-verification training.

Edge devices each hold one identity's feature vectors, train a local model
(a supervised verifier or an autoencoder), and submit it either in the clear
or through a pairwise-masking secure aggregator.  The evaluation harness
computes per-device equal error rates and compares conditions.
"""

__version__ = "0.1.0"
