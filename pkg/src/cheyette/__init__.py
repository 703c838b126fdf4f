"""One-factor Cheyette stochastic-local-volatility toolkit."""
__version__ = "0.1.0"
