"""Desk-scale simulator of differentially-private semantic image transmission
over a wiretap channel.

Alice inverts an image into disentangled latent codes, a learned protection
map perturbs the private codes so they look like Laplace-noised codes, and
the result goes over AWGN to Bob (who holds the matching deprotection map)
and to Eve (who does not).
"""

from wiretap_dp.errors import (
    ConfigError,
    DivergenceError,
    MissingArtifactError,
    NumericalError,
    TrainingDivergence,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DivergenceError",
    "MissingArtifactError",
    "NumericalError",
    "TrainingDivergence",
    "__version__",
]
