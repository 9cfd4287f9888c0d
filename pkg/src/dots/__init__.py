"""Simplified-context task-oriented dialogue with domain-state tracking."""
__version__ = "0.1.0"
