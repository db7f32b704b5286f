"""Tools for building and evaluating parallel detoxification corpora."""

__version__ = "0.1.0"
