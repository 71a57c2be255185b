"""Manipulation detection and localization: semantic proposals rectified by forensic evidence."""

__version__ = "0.1.0"
