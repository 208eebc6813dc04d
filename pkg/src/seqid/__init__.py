"""Testable implications and mediation effects for sequential designs with two instruments."""

__version__ = "0.1.0"
