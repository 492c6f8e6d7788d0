"""Closed-loop imitation learning lab with temporally sequenced expert policies."""

__version__ = "0.1.0"
