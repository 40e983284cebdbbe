"""Membership-oracle convex geometry toolkit.

Deterministic eps-kernel construction, randomized and simulated-quantum
volume estimators with exact oracle-query accounting, spherical-cap hard
instances, and a benchmark harness for query-complexity exponents.
"""

__version__ = "0.1.0"
