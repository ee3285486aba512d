"""Cooperative perception simulator with learned CPM gating."""

__version__ = "0.1.0"
