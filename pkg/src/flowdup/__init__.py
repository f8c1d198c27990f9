"""Desk-scale federated learning simulator.

Personalized models are produced by a shared set-encoding hypernetwork whose
output lives in a random low-dimensional subspace of the client model's
parameter space, so unlabeled clients can participate in training and receive
models generated from their raw features alone.
"""

__version__ = "0.1.0"
