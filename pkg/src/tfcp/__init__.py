"""Tales From the Crypt Protocol: a desk-scale simulator for ledger-based
death acknowledgment with threshold-shared Wills."""

__version__ = "0.1.0"
