"""Morton-order degradation estimation and restoration toolkit."""

__version__ = "0.1.0"
