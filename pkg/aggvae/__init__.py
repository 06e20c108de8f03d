"""Aggregated-GP priors encoded with a variational autoencoder, for areal prevalence
estimated across two incompatible boundary systems.
"""

from ._version import __version__, version_info
from .errors import AggVAEError

__all__ = ["__version__", "version_info", "AggVAEError"]
