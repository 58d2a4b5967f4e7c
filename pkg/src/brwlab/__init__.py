"""Simulation and verification tools for boundary-case branching random walks."""
import os as _os

# the TBB layer on this platform is too old and only produces a warning
_os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"
