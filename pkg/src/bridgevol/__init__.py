"""Homogeneous OHLC bridge estimators of volatility and variance."""

__version__ = "0.1.0"
