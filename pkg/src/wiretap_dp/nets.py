"""Single fully-connected protection / deprotection maps with a hand-written
backward pass, and the joint training loop.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from wiretap_dp import channel as ch
from wiretap_dp import dp
from wiretap_dp.errors import TrainingDivergence
from wiretap_dp.latent_model import merge_batch, split_batch
from wiretap_dp.seeding import derive_seed, rng_for

logger = logging.getLogger(__name__)

PROTECTION = "protection"
DEPROTECTION = "deprotection"


@dataclass(frozen=True)
class AffineNet:
    """``y = W @ vec(x) + b`` on the row-major flattened private codes."""

    weight: np.ndarray
    bias: np.ndarray
    role: str

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"weight must be square, got {w.shape}")
        if b.shape != (w.shape[0],):
            raise ValueError(f"bias shape {b.shape} does not match weight {w.shape}")
        if self.role not in (PROTECTION, DEPROTECTION):
            raise ValueError(f"unknown role {self.role!r}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("network parameters must be finite")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def dim(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def identity(cls, dim: int, role: str) -> "AffineNet":
        return cls(np.eye(dim), np.zeros(dim), role)

    @classmethod
    def init(cls, dim: int, role: str, init_std: float, seed: int) -> "AffineNet":
        rng = np.random.default_rng(seed)
        return cls(np.eye(dim) + init_std * rng.standard_normal((dim, dim)), np.zeros(dim), role)


def _apply(net: AffineNet, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2:
        raise ValueError(f"expected (..., codes, dims) input, got shape {x.shape}")
    lead, tail = x.shape[:-2], x.shape[-2:]
    if tail[0] * tail[1] != net.dim:
        raise ValueError(f"input with {tail[0] * tail[1]} elements does not match net dim {net.dim}")
    flat = x.reshape(*lead, net.dim)
    return (flat @ net.weight.T + net.bias).reshape(x.shape)


def protect(net: AffineNet, z_private) -> np.ndarray:
    """Perturb private codes with the learned protection map."""
    if net.role != PROTECTION:
        raise ValueError(f"protect() needs a protection net, got role {net.role!r}")
    return _apply(net, z_private)


def deprotect(net: AffineNet, y_private) -> np.ndarray:
    """Undo the protection map on received private codes."""
    if net.role != DEPROTECTION:
        raise ValueError(f"deprotect() needs a deprotection net, got role {net.role!r}")
    return _apply(net, y_private)


def loss(z, s1, z1_private, z2_private, lam: float) -> float:
    """Reconstruction MSE plus ``lam`` times the fake-vs-genuine noise MSE."""
    rec = np.mean((np.asarray(s1) - np.asarray(z)) ** 2)
    imit = np.mean((np.asarray(z1_private) - np.asarray(z2_private)) ** 2)
    return float(rec + lam * imit)


@dataclass
class Gradients:
    weight_p: np.ndarray
    bias_p: np.ndarray
    weight_d: np.ndarray
    bias_d: np.ndarray


def forward_backward(
    protection: AffineNet,
    deprotection: AffineNet,
    batch: np.ndarray,
    target: np.ndarray,
    channel_noise: np.ndarray,
    private_idx: Sequence[int],
    lam: float,
) -> tuple[float, Gradients]:
    """Loss and exact parameter gradients for one batch.

    ``batch`` is ``(B, m, k)``; ``target`` holds the genuinely noised private
    codes ``(B, p, k)``; ``channel_noise`` is the additive noise in latent units
    ``(B, m * k)``. Both noises are constants of the differentiation.
    """
    z = np.asarray(batch, dtype=np.float64)
    bsz, m, k = z.shape
    zp, zc = split_batch(z, private_idx)
    dim = protection.dim
    zp_flat = zp.reshape(bsz, dim)
    t_flat = np.asarray(target, dtype=np.float64).reshape(bsz, dim)

    z2 = zp_flat @ protection.weight.T + protection.bias
    sent = merge_batch(z2.reshape(zp.shape), zc, private_idx).reshape(bsz, m * k)
    recv = (sent + channel_noise).reshape(bsz, m, k)
    yp, yc = split_batch(recv, private_idx)
    yp_flat = yp.reshape(bsz, dim)
    sp = yp_flat @ deprotection.weight.T + deprotection.bias
    s1 = merge_batch(sp.reshape(yp.shape), yc, private_idx)

    value = loss(z, s1, t_flat, z2, lam)

    g_s1 = 2.0 * (s1 - z) / z.size
    g_sp = split_batch(g_s1, private_idx)[0].reshape(bsz, dim)
    g_wd = g_sp.T @ yp_flat
    g_bd = g_sp.sum(axis=0)
    g_z2 = g_sp @ deprotection.weight + lam * 2.0 * (z2 - t_flat) / t_flat.size
    g_wp = g_z2.T @ zp_flat
    g_bp = g_z2.sum(axis=0)
    return value, Gradients(g_wp, g_bp, g_wd, g_bd)


def sample_channel_noise(sent: np.ndarray, cfg: ch.ChannelConfig, rng: np.random.Generator) -> np.ndarray:
    """AWGN as seen in latent units after per-vector power normalization."""
    _, gain = ch.power_normalize(sent, cfg.power)
    n = sent.shape[-1]
    sym = ch.pack_complex(np.zeros_like(sent)).shape
    noise = ch.unpack_complex(ch.complex_noise(sym, cfg.noise_var, rng), n)
    return noise / np.asarray(gain).reshape(-1, 1)


def train_step(
    protection: AffineNet,
    deprotection: AffineNet,
    batch: np.ndarray,
    dp_params: dp.DpParams,
    channel_cfg: ch.ChannelConfig,
    lam: float,
    lr: float,
    rng: np.random.Generator,
    private_idx: Sequence[int],
    target: np.ndarray | None = None,
) -> tuple[AffineNet, AffineNet, float]:
    """One plain gradient-descent update of both nets.

    Runs private codes through protect, the AWGN link (after power
    normalization) and deprotect. If ``target`` is None a fresh genuine-DP
    target is drawn from ``rng``.
    """
    z = np.asarray(batch, dtype=np.float64)
    zp, zc = split_batch(z, private_idx)
    if target is None:
        target = dp.apply_dp(zp, dp_params, int(rng.integers(2**63)))

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        z2 = protect(protection, zp)
        sent = merge_batch(z2, zc, private_idx).reshape(z.shape[0], -1)
        if channel_cfg.noise_var > 0:
            noise = sample_channel_noise(sent, channel_cfg, rng)
        else:
            noise = np.zeros_like(sent)
        value, g = forward_backward(protection, deprotection, z, target, noise, private_idx, lam)
    grads_ok = all(np.all(np.isfinite(a)) for a in (g.weight_p, g.weight_d, g.bias_p, g.bias_d))
    if not (math.isfinite(value) and grads_ok):
        raise TrainingDivergence(epoch=-1, batch=-1, lr=lr, loss=value)
    with np.errstate(over="ignore", invalid="ignore"):
        wp, bp = protection.weight - lr * g.weight_p, protection.bias - lr * g.bias_p
        wd, bd = deprotection.weight - lr * g.weight_d, deprotection.bias - lr * g.bias_d
    if not all(np.all(np.isfinite(a)) for a in (wp, bp, wd, bd)):
        raise TrainingDivergence(epoch=-1, batch=-1, lr=lr, loss=value)
    return AffineNet(wp, bp, PROTECTION), AffineNet(wd, bd, DEPROTECTION), value


@dataclass(frozen=True)
class WarmRestartSchedule:
    lr0: float = 5.0
    t0: int = 10
    t_mult: int = 2
    lr_min: float = 0.0


def lr_at(schedule: WarmRestartSchedule, epoch: int) -> float:
    """Cosine annealing with warm restarts after ``t0``, ``t0*t_mult``, ... epochs."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    t, period = epoch, schedule.t0
    while t >= period:
        t -= period
        period *= schedule.t_mult
    return schedule.lr_min + 0.5 * (schedule.lr0 - schedule.lr_min) * (1.0 + math.cos(math.pi * t / period))


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1e-3
    lr0: float = 5.0
    epochs: int = 100
    batch_size: int = 512
    t0: int = 10
    t_mult: int = 2
    lr_min: float = 0.0
    init_std: float = 0.01
    dp_target: str = "fixed"
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        for name in ("lr0", "epochs", "batch_size", "t0", "t_mult"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.dp_target not in ("fixed", "fresh"):
            raise ValueError(f"dp_target must be 'fixed' or 'fresh', got {self.dp_target!r}")

    @property
    def schedule(self) -> WarmRestartSchedule:
        return WarmRestartSchedule(self.lr0, self.t0, self.t_mult, self.lr_min)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lambda"] = d.pop("lam")
        return d


@dataclass
class TrainResult:
    protection: AffineNet
    deprotection: AffineNet
    epoch_loss: list[float] = field(default_factory=list)
    epoch_lr: list[float] = field(default_factory=list)


def train_nets(
    latents: np.ndarray,
    private_idx: Sequence[int],
    dp_params: dp.DpParams,
    channel_cfg: ch.ChannelConfig,
    cfg: TrainConfig,
    clip_bounds: dp.ClipBounds | None = None,
    on_epoch: Callable[[int, float, float], None] | None = None,
) -> TrainResult:
    """Jointly train a protection/deprotection pair on a latent dataset.

    Random streams are derived from ``cfg.seed`` only, never from epsilon: the
    genuine-DP targets at different budgets are rescalings of the same
    standard Laplace draws. With ``dp_target='fixed'`` each training latent
    keeps one target for the whole run; ``'fresh'`` redraws it every batch.
    """
    z = np.asarray(latents, dtype=np.float64)
    n, m, k = z.shape
    zp = split_batch(z, private_idx)[0]
    dim = zp.shape[1] * k
    base = zp if clip_bounds is None else dp.clip(zp, clip_bounds)

    prot = AffineNet.init(dim, PROTECTION, cfg.init_std, derive_seed(cfg.seed, "init", PROTECTION))
    deprot = AffineNet.init(dim, DEPROTECTION, cfg.init_std, derive_seed(cfg.seed, "init", DEPROTECTION))
    rng = rng_for(cfg.seed, "train")
    fixed_targets = None
    if cfg.dp_target == "fixed":
        fixed_targets = dp.apply_dp(base, dp_params, derive_seed(cfg.seed, "dp-target"))

    result = TrainResult(prot, deprot)
    for epoch in range(cfg.epochs):
        lr = lr_at(cfg.schedule, epoch)
        order = rng.permutation(n)
        losses = []
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            if fixed_targets is not None:
                target = fixed_targets[idx]
            else:
                target = dp.apply_dp(base[idx], dp_params, derive_seed(cfg.seed, "dp-target", epoch, bi))
            try:
                prot, deprot, value = train_step(
                    prot, deprot, z[idx], dp_params, channel_cfg, cfg.lam, lr, rng, private_idx, target
                )
            except TrainingDivergence as exc:
                raise TrainingDivergence(epoch, bi, lr, exc.loss) from None
            losses.append(value)
        mean_loss = float(np.mean(losses))
        result.epoch_loss.append(mean_loss)
        result.epoch_lr.append(lr)
        if on_epoch is not None:
            on_epoch(epoch, lr, mean_loss)
    result.protection, result.deprotection = prot, deprot
    return result


def fake_noise(protection: AffineNet, z_private) -> np.ndarray:
    """Noise the protection map adds: ``protect(z) - z``."""
    return protect(protection, z_private) - np.asarray(z_private, dtype=np.float64)
