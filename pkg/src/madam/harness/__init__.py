"""Experiment engine: synthetic tasks, training loops, grids, CLI."""
