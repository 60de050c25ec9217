"""portdrift: port-scan diffing and reconfiguration triage toolkit."""

__version__ = "0.1.0"
