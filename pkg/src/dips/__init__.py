"""Double-indexed permutation statistics: decomposition, exchangeable pairs,
Stein envelopes and Monte Carlo moderate-deviation checks."""

__version__ = "0.1.0"
