"""svoarena, Social Value Orientation agents in intertemporal social dilemmas.

The package simulates the HarvestPatch and Cleanup gridworlds, shapes each
agent's learning signal with its Social Value Orientation, trains populations
of actor-critic agents over parallel arenas and computes the outcome and
behavioural measures used to compare populations.
"""

from typing import TYPE_CHECKING

# On Python 3.8+, use importlib.metadata from the standard library.
# On older versions, a compatibility package can be installed from PyPI.
try:
    import importlib.metadata as importlib_metadata
except ImportError:
    if not TYPE_CHECKING:
        import importlib_metadata

try:
    __version__ = importlib_metadata.version('svoarena')
except importlib_metadata.PackageNotFoundError:
    # Running from a source checkout that was never installed.
    __version__ = '0+unknown'

__all__ = ["__version__"]
