"""Multimodal molecular property prediction with thermodynamic-equation heads."""

__version__ = "0.1.0"
