"""Federated averaging with an invariant penalty, plus contribution scoring and bound checks."""

__version__ = "0.1.0"
