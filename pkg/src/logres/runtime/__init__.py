"""Networked prototype: deployment config, transport, node runtime, client and benchmarks."""
