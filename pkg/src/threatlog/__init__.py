"""Threat detection and mitigation recommendation for IoT security logs."""

__version__ = "0.1.0"
