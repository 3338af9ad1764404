"""Joint power control, routing, and congestion control optimizer for
interference-limited wireless mesh networks."""

__version__ = "0.1.0"
