"""Certificates and constructive trajectories for exit-time optimal control.

The package verifies candidate restraint functions on sampled bands,
synthesizes trajectories that realize the certified decrease with an
explicit cost budget, composes a class-KL decay bound from sampled
distance envelopes, and cross-checks everything against a brute-force
dynamic-programming value table.
"""

from __future__ import annotations

__version__ = "0.1.0"
