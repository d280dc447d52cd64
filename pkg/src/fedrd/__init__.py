"""Federated learning simulator with debiased local classification and
generalization-aware aggregation (FedRD), plus FedAvg and FedProx baselines."""

__version__ = "0.1.0"
