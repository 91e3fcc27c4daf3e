"""Distributed linearly-solvable optimal control for networked agents."""
