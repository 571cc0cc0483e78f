"""Desk-scale greenhouse digital twin with LLM-in-the-loop temperature control."""

__version__ = "0.1.0"
