"""Clipping, sensitivity, the Laplace mechanism, and the approximate-epsilon
estimator for learned (fake) DP noise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClipBounds:
    a: float
    b: float
    q_low: float = 0.005
    q_high: float = 0.995

    def __post_init__(self):
        if not self.a <= self.b:
            raise ValueError(f"clip bounds need a <= b, got a={self.a}, b={self.b}")
        if not 0.0 <= self.q_low < self.q_high <= 1.0:
            raise ValueError(f"need 0 <= q_low < q_high <= 1, got {self.q_low}, {self.q_high}")


@dataclass(frozen=True)
class DpParams:
    """Privacy budget and sensitivity; ``scale`` is the Laplace scale."""

    epsilon: float
    delta_f: float
    n_elements: int = 1

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.delta_f >= 0:
            raise ValueError(f"delta_f must be >= 0, got {self.delta_f}")

    @property
    def scale(self) -> float:
        return self.delta_f / self.epsilon


@dataclass(frozen=True)
class LaplaceFit:
    location: float
    scale_hat: float
    sample_count: int


def compute_clip_bounds(latent_dataset, q_low: float = 0.005, q_high: float = 0.995) -> ClipBounds:
    """Empirical quantiles over every scalar of every latent in the dataset.

    Uses linear interpolation between order statistics.
    """
    values = np.asarray(latent_dataset, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("cannot compute clip bounds of an empty dataset")
    if not 0.0 <= q_low < q_high <= 1.0:
        raise ValueError(f"need 0 <= q_low < q_high <= 1, got {q_low}, {q_high}")
    a, b = np.quantile(values, [q_low, q_high], method="linear")
    return ClipBounds(float(a), float(b), q_low, q_high)


def clip(z, bounds: ClipBounds) -> np.ndarray:
    return np.clip(np.asarray(z, dtype=np.float64), bounds.a, bounds.b)


def sensitivity_closed_form(bounds: ClipBounds, n: int) -> float:
    """l2 distance between the all-``b`` and all-``a`` latents of ``n`` elements."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return math.sqrt((bounds.b - bounds.a) ** 2 * n)


def sensitivity_bruteforce(clipped_latent_dataset) -> float:
    """Largest pairwise l2 distance between flattened latents (exhaustive).

    Pairs within rounding distance of the vectorised maximum are re-summed
    with ``math.fsum`` so the result is correctly rounded; an all-``a`` vs
    all-``b`` pair then reproduces :func:`sensitivity_closed_form` exactly.
    """
    data = np.asarray(clipped_latent_dataset, dtype=np.float64)
    if data.shape[0] < 2:
        raise ValueError("need at least 2 latents for a pairwise sensitivity")
    flat = data.reshape(data.shape[0], -1)
    sq = []
    for i in range(flat.shape[0] - 1):
        sq.append(np.sum((flat[i + 1 :] - flat[i]) ** 2, axis=1))
    rough = max(float(s.max()) for s in sq)
    best = 0.0
    for i, s in enumerate(sq):
        for j in np.flatnonzero(s >= rough * (1.0 - 1e-9)):
            diff = flat[i + 1 + j] - flat[i]
            best = max(best, math.fsum(diff**2))
    return math.sqrt(best)


def sample_laplace(count: int, scale: float, rng_seed: int) -> np.ndarray:
    """I.i.d. ``Lap(0, scale)`` draws by inverse CDF.

    ``u`` is uniform on the open interval (-1/2, 1/2) and
    ``x = -scale * sign(u) * log(1 - 2|u|)``. The same seed always yields the
    same uniforms, so draws at different scales are exact rescalings of one
    another (up to rounding).
    """
    if scale < 0:
        raise ValueError(f"scale must be >= 0, got {scale}")
    rng = np.random.default_rng(rng_seed)
    u = rng.random(int(count)) - 0.5
    # random() is on [0, 1); remap the single excluded endpoint.
    u[u == -0.5] = 0.0
    return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def apply_dp(z_private, params: DpParams, rng_seed: int) -> np.ndarray:
    """Genuine Laplace mechanism: add i.i.d. ``Lap(0, delta_f / epsilon)`` per element."""
    z = np.asarray(z_private, dtype=np.float64)
    noise = sample_laplace(z.size, params.scale, rng_seed).reshape(z.shape)
    return z + noise


def fit_laplace_scale(noise_samples) -> LaplaceFit:
    """Maximum-likelihood Laplace scale with the location pinned at zero."""
    x = np.asarray(noise_samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("cannot fit a Laplace scale to zero samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("noise samples must be finite")
    return LaplaceFit(location=0.0, scale_hat=float(np.mean(np.abs(x))), sample_count=x.size)


def approximate_epsilon(fit: LaplaceFit, delta_f: float) -> float:
    """Privacy budget implied by a fitted scale: ``delta_f / scale_hat``.

    A zero scale means the protection map added no measurable noise; that is
    reported as ``math.inf`` (unbounded budget) rather than raised.
    """
    if fit.scale_hat == 0.0:
        logger.warning("no measurable noise; epsilon' unbounded")
        return math.inf
    return delta_f / fit.scale_hat


def laplace_cdf(x, scale: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x < 0, 0.5 * np.exp(x / scale), 1.0 - 0.5 * np.exp(-x / scale))
