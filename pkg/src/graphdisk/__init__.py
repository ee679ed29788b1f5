"""Disk-resident ANN search with a graph-prioritized data layout."""

__version__ = "0.1.0"
