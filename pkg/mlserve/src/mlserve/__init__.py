"""Scorer service and seq2seq detoxifier trainer."""

__version__ = "0.1.0"
