"""Toroidal territory-control game: engine, bots, replays and a local ranked arena."""

__version__ = "0.1.0"
