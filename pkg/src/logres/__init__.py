"""Logres: Byzantine fault tolerant replication of an append-only log."""

__version__ = "0.1.0"
