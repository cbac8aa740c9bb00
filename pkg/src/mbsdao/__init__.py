"""Simulator for mortgage-backed securities run as token-governed on-chain pools."""

__version__ = "0.1.0"
