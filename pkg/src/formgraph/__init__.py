"""Hierarchical form structure extraction by multi-modal patch association.

Submodules are imported lazily so the command-line entry point can set
thread limits before numpy loads.
"""

__version__ = "0.1.0"
