"""Spectral-edge expansions and localization diagnostics for weakly
disordered periodic operators.

Submodules are imported explicitly (``from weakloc import grids``); none
are re-exported here to keep import cost proportional to use.
"""

__version__ = "0.1.0"

__all__ = [
    "boxes",
    "cli",
    "disorder",
    "expansion",
    "expressions",
    "grids",
    "models",
    "reports",
    "spectral",
]
