"""Hearthgate: a desk-scale smart-home onboarding stack.

Protocol roles (authenticator, device, server), a simulated three-channel
consortium ledger with access control and risk alerts, a symbolic network
adversary with trace-level security checkers, and a load benchmark for the
ledger's ordering service.
"""

from . import bench, channels, config, crypto, harness, ledger, payloads, risk, roles, wire

__version__ = "0.1.0"

__all__ = [
    "bench",
    "channels",
    "config",
    "crypto",
    "harness",
    "ledger",
    "payloads",
    "risk",
    "roles",
    "wire",
    "__version__",
]
