"""Pressure estimation for water distribution networks.

Parse EPANET INP files, solve steady-state hydraulics, generate snapshot
datasets, and train a residual graph-attention surrogate that fills in
pressures at unmonitored junctions.
"""

__version__ = "0.1.0"
