"""Physical-layer sender anonymity: detection attack, anonymous precoders,
and a Monte Carlo link harness."""

__version__ = "0.1.0"
