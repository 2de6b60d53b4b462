"""Multi-intersection traffic microsimulator with end/edge/cloud control."""

__version__ = "0.1.0"
