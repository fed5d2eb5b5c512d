"""Toy disentangled generator, gradient-descent inversion, and latent
partition utilities.

The generator is linear: ``x = sum_i A_i @ z_i``. The first ``shared_count``
codes act on every pixel; each remaining (local) code owns one contiguous
pixel block, so perturbing a local code only changes its own region.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from wiretap_dp.errors import DivergenceError

#: Spectral scale of the block maps. Local blocks are ``GAIN`` times a matrix
#: with orthonormal columns (or rows), which bounds the smallest singular value
#: of the full map from below and keeps gradient-descent inversion well
#: conditioned at the default step size.
GAIN = 8.0


def _as_index_tuple(private_idx: Sequence[int], m: int) -> tuple[int, ...]:
    idx = tuple(int(i) for i in private_idx)
    if not idx:
        raise ValueError("private_idx must be nonempty")
    if len(set(idx)) != len(idx):
        raise ValueError(f"private_idx has duplicates: {idx}")
    if any(i < 0 or i >= m for i in idx):
        raise ValueError(f"private_idx {idx} out of range for m={m}")
    return tuple(sorted(idx))


@dataclass(frozen=True)
class LatentCodes:
    """An ``(m, k)`` code matrix together with its private/common split."""

    codes: np.ndarray
    private_idx: tuple[int, ...]

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.float64)
        if codes.ndim != 2:
            raise ValueError(f"codes must be 2-D (m, k), got shape {codes.shape}")
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "private_idx", _as_index_tuple(self.private_idx, codes.shape[0]))

    @property
    def m(self) -> int:
        return self.codes.shape[0]

    @property
    def k(self) -> int:
        return self.codes.shape[1]

    @property
    def common_idx(self) -> tuple[int, ...]:
        return common_indices(self.private_idx, self.m)


def common_indices(private_idx: Sequence[int], m: int) -> tuple[int, ...]:
    priv = set(private_idx)
    return tuple(i for i in range(m) if i not in priv)


@dataclass(frozen=True)
class GeneratorModel:
    """Seeded linear block-structured synthesis model.

    Build instances with :meth:`create`; the arrays are read-only.
    """

    d: int
    m: int
    k: int
    shared_count: int
    seed: int
    matrix: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def create(
        cls, d: int = 96, m: int = 8, k: int = 16, shared_count: int = 2, seed: int = 42
    ) -> "GeneratorModel":
        if min(d, m, k) < 1:
            raise ValueError("d, m and k must be positive")
        if not 0 <= shared_count < m:
            raise ValueError(f"shared_count must be in [0, m), got {shared_count}")
        n_local = m - shared_count
        block = d // n_local
        if block < 1:
            raise ValueError(f"d={d} too small for {n_local} local blocks")

        rng = np.random.default_rng(seed)
        mat = np.zeros((d, m * k))
        for i in range(m):
            cols = slice(i * k, (i + 1) * k)
            if i < shared_count:
                mat[:, cols] = rng.normal(0.0, GAIN / np.sqrt(k), size=(d, k))
            else:
                j = i - shared_count
                g = rng.normal(size=(max(block, k), min(block, k)))
                q, _ = np.linalg.qr(g)
                if block < k:
                    q = q.T
                mat[j * block : (j + 1) * block, cols] = GAIN * q
        mat.setflags(write=False)
        return cls(d=d, m=m, k=k, shared_count=shared_count, seed=seed, matrix=mat)

    @property
    def n_local(self) -> int:
        return self.m - self.shared_count

    @property
    def block_size(self) -> int:
        return self.d // self.n_local

    @property
    def n_elements(self) -> int:
        return self.m * self.k

    def block_map(self, i: int) -> np.ndarray:
        """The ``d x k`` map ``A_i`` for code ``i`` (read-only view)."""
        return self.matrix[:, i * self.k : (i + 1) * self.k]

    def pixel_block(self, i: int) -> slice:
        """Pixel range owned by local code ``i``."""
        if i < self.shared_count:
            raise ValueError(f"code {i} is shared and has no private pixel block")
        j = i - self.shared_count
        return slice(j * self.block_size, (j + 1) * self.block_size)

    def image_shape(self) -> tuple[int, int]:
        """Display layout: one row per local block when ``d`` divides evenly."""
        if self.d % self.n_local == 0:
            return self.n_local, self.block_size
        return 1, self.d


def _codes_array(model: GeneratorModel, z) -> np.ndarray:
    arr = z.codes if isinstance(z, LatentCodes) else np.asarray(z, dtype=np.float64)
    if arr.shape[-2:] != (model.m, model.k):
        raise ValueError(
            f"latent shape {arr.shape} does not match generator (m={model.m}, k={model.k})"
        )
    return arr


def generate(model: GeneratorModel, z) -> np.ndarray:
    """Synthesize pixels from codes.

    Accepts a :class:`LatentCodes`, an ``(m, k)`` array, or a batch of shape
    ``(..., m, k)``; returns pixels of shape ``(..., d)``.
    """
    arr = _codes_array(model, z)
    flat = arr.reshape(*arr.shape[:-2], model.n_elements)
    return flat @ model.matrix.T


@dataclass(frozen=True)
class InversionConfig:
    max_iters: int = 2000
    step_size: float = 1e-2
    tol: float = 1e-8
    init: str = "zero"
    init_seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if not self.tol >= 0:
            raise ValueError("tol must be >= 0")
        if self.init not in ("zero", "random"):
            raise ValueError(f"init must be 'zero' or 'random', got {self.init!r}")

    def replace(self, **changes) -> "InversionConfig":
        return dataclasses.replace(self, **changes)


def invert_batch(model: GeneratorModel, images: np.ndarray, cfg: InversionConfig) -> np.ndarray:
    """Gradient-descent inversion of a batch of images, shape ``(N, d)``.

    Each image is an independent least-squares problem on the pixel MSE. An
    image stops updating as soon as its own MSE reaches ``cfg.tol``, so the
    result for each row matches what :func:`invert` returns for it alone
    (up to floating-point rounding in the matrix products).

    Returns codes of shape ``(N, m, k)``.

    Raises:
        DivergenceError: if any image's loss becomes non-finite.
    """
    x = np.atleast_2d(np.asarray(images, dtype=np.float64))
    if x.shape[1] != model.d:
        raise ValueError(f"image length {x.shape[1]} does not match generator d={model.d}")
    n = x.shape[0]
    a = model.matrix
    if cfg.init == "zero":
        z = np.zeros((n, model.n_elements))
    else:
        z = np.random.default_rng(cfg.init_seed).normal(size=(n, model.n_elements))

    active = np.ones(n, dtype=bool)
    scale = 2.0 * cfg.step_size / model.d
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(cfg.max_iters + 1):
            idx = np.flatnonzero(active)
            zi = z[idx]
            resid = zi @ a.T - x[idx]
            mse = np.mean(resid**2, axis=1)
            bad = ~np.isfinite(mse)
            if bad.any():
                raise DivergenceError(it, float(mse[bad][0]))
            done = mse <= cfg.tol
            if done.any():
                active[idx[done]] = False
                idx, resid, zi = idx[~done], resid[~done], zi[~done]
            if idx.size == 0 or it == cfg.max_iters:
                break
            z[idx] = zi - scale * (resid @ a)
    return z.reshape(n, model.m, model.k)


def invert(
    model: GeneratorModel,
    x: np.ndarray,
    cfg: InversionConfig | None = None,
    private_idx: Sequence[int] | None = None,
) -> LatentCodes:
    """Recover latent codes for one image by gradient descent on pixel MSE.

    ``private_idx`` only labels the returned codes; it defaults to the shared
    codes, which are always private.
    """
    cfg = cfg or InversionConfig()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a single image vector, got shape {x.shape}")
    codes = invert_batch(model, x[None, :], cfg)[0]
    if private_idx is None:
        private_idx = tuple(range(max(model.shared_count, 1)))
    return LatentCodes(codes, tuple(private_idx))


def partition(z: LatentCodes) -> tuple[np.ndarray, np.ndarray]:
    """Split codes into ``(private, common)`` row blocks, each in index order."""
    return z.codes[list(z.private_idx)], z.codes[list(z.common_idx)]


def combine(private: np.ndarray, common: np.ndarray, private_idx: Sequence[int]) -> LatentCodes:
    """Inverse of :func:`partition`."""
    private = np.asarray(private, dtype=np.float64)
    common = np.asarray(common, dtype=np.float64)
    m = private.shape[0] + common.shape[0]
    idx = _as_index_tuple(private_idx, m)
    if private.shape[0] != len(idx):
        raise ValueError(f"private has {private.shape[0]} rows, expected {len(idx)}")
    k = private.shape[1] if private.ndim == 2 else common.shape[1]
    if common.shape[0] and common.shape[1] != k:
        raise ValueError("private and common code dims differ")
    codes = np.empty((m, k))
    codes[list(idx)] = private
    codes[list(common_indices(idx, m))] = common.reshape(-1, k)
    return LatentCodes(codes, idx)


def split_batch(codes: np.ndarray, private_idx: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Batched :func:`partition` on ``(N, m, k)`` arrays."""
    m = codes.shape[-2]
    return codes[..., list(private_idx), :], codes[..., list(common_indices(private_idx, m)), :]


def merge_batch(private: np.ndarray, common: np.ndarray, private_idx: Sequence[int]) -> np.ndarray:
    """Batched :func:`combine` on ``(N, p, k)`` and ``(N, m - p, k)`` arrays."""
    m = private.shape[-2] + common.shape[-2]
    out = np.empty(private.shape[:-2] + (m, private.shape[-1]))
    out[..., list(private_idx), :] = private
    out[..., list(common_indices(private_idx, m)), :] = common
    return out


def least_squares_codes(model: GeneratorModel, images: np.ndarray) -> np.ndarray:
    """Minimum-norm least-squares codes via the normal equations.

    Zero-initialised gradient descent stays in the row space of the map, so
    this is the point it converges to.
    """
    a = model.matrix
    x = np.atleast_2d(np.asarray(images, dtype=np.float64))
    gram = a @ a.T
    sol = np.linalg.solve(gram, x.T)
    return (a.T @ sol).T.reshape(-1, model.m, model.k)


def sample_latents(model: GeneratorModel, count: int, seed: int) -> np.ndarray:
    """Synthetic dataset: i.i.d. standard normal codes, shape ``(count, m, k)``."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal((count, model.m, model.k))
