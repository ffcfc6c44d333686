"""avguard: deterministic AV security stack.

Synthetic multi-sensor fleet -> LSTM anomaly detection with adaptive
thresholds -> PBFT consortium ledger of signed alerts -> rule-driven
graduated mitigation, plus a campaign harness that measures detection
quality, ledger throughput, and end-to-end response time.
"""

__version__ = "0.1.0"
