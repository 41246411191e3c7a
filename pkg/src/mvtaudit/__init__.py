"""Benchmark and audit toolkit for cardinality-constrained mean-variance-turnover portfolio selection."""

__version__ = "0.1.0"
