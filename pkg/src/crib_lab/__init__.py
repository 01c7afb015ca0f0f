"""Curiosity-driven embodied learning lab: self-touch and hand regard at desk scale."""

__version__ = "0.1.0"
