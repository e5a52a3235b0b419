"""Sector storage cloud and Sphere compute engine at desk scale."""

__version__ = "0.1.0"
