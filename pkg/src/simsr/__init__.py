"""Behavioural metrics on finite MDPs and SimSR representation learning."""

__version__ = "0.1.0"
