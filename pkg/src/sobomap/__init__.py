"""Strong density of manifold-valued maps with crossing-free singular sets."""

__version__ = "0.1.0"
