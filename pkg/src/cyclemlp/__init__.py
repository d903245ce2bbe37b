"""Cycle FC and the CycleMLP backbone family, in NumPy."""
