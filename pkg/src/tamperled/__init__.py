"""Permissioned, tamper-evident ledger with a simulated IoT telemetry network."""

__version__ = "0.1.0"
