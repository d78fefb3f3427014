"""Stabilized mixed DG solver for double porosity/permeability flow."""

__version__ = "0.1.0"
