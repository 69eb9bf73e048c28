"""
paint-twin - parallel-in-time neural twins.

Reconstructs and forecasts chaotic flow fields from sparse probe measurements
with a flow-matching window model, and compares it against an autoregressive
baseline.
"""

__version__ = "0.1.0"
__license__ = "MIT"

__all__ = [
    "__version__",
    "__license__",
]
