"""Temporal-mode interferometry: coupled-mode propagation, Green functions and Schmidt analysis."""
