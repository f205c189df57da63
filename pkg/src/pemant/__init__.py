"""Household trip generation by persona-enriched multi-agent negotiation."""

__version__ = "0.1.0"
