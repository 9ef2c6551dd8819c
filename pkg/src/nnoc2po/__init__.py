"""1-bit massive MU-MIMO precoding with learned C2PO iteration parameters."""

__version__ = "0.1.0"
