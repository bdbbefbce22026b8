"""Analysis toolkit for MOOC discussion-forum logs."""

__version__ = "0.1.0"
