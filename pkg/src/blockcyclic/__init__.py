"""Federated optimisation over block-cyclic data: FedAvg, MM-PSGD and MC-PSGD."""

__version__ = "0.1.0"
