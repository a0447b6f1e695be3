"""First-cycle annotated repetitive action counting on per-frame feature sequences."""

__version__ = "0.1.0"
