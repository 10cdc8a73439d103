"""Synthetic hourly load, dispatch and line-flow datasets for transmission grids."""

__version__ = "0.1.0"
