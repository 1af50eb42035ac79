"""Tuple embeddings for relational databases via foreign-key random walks."""

__version__ = "0.1.0"
