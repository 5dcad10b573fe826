"""Price-of-stability toolkit for first-price auctions."""

__version__ = "0.1.0"
