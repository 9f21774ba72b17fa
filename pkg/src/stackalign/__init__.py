"""Stack-transition neural alignment of heterogeneous sequences."""

__version__ = "0.1.0"
