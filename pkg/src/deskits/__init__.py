"""Desk-scale C-ITS station testbed.

Runs ETSI-style vehicular stations (CAM generation, local dynamic map,
GNSS ingestion) against a simulated 5.9 GHz channel, and provides the
RF capture / drive-test analysis tools used to characterize them.
"""

__version__ = "0.1.0"
