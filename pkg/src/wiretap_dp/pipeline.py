"""End-to-end Alice -> (Bob, Eve) transmission, metrics, the unprotected
baseline, and the privacy-budget sweep.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from wiretap_dp import channel as ch
from wiretap_dp import dp, formats
from wiretap_dp.config import RunConfig
from wiretap_dp.errors import MissingArtifactError, NumericalError
from wiretap_dp.latent_model import (
    GeneratorModel,
    InversionConfig,
    generate,
    invert,
    invert_batch,
    merge_batch,
    partition,
    combine,
    sample_latents,
    split_batch,
)
from wiretap_dp.nets import AffineNet, TrainConfig, deprotect, protect, train_nets
from wiretap_dp.seeding import derive_seed

logger = logging.getLogger(__name__)

CSV_HEADER = "epsilon,epsilon_prime,mse_bob,mse_eve,psnr_bob,psnr_eve,fppsr_bob,fppsr_eve,is_baseline"


@dataclass(frozen=True)
class System:
    """Everything Alice, Bob and Eve share. ``protection=None`` is the baseline."""

    generator: GeneratorModel
    private_idx: tuple[int, ...]
    channel: ch.ChannelConfig
    inversion: InversionConfig = InversionConfig()
    protection: AffineNet | None = None
    deprotection: AffineNet | None = None
    dp_params: dp.DpParams | None = None
    identity_threshold: float = 0.9

    @property
    def protected(self) -> bool:
        return self.protection is not None


@dataclass(frozen=True)
class TransmissionResult:
    x_hat_bob: np.ndarray
    x_hat_eve: np.ndarray
    epsilon_prime: float
    recon_mse_bob: float
    recon_mse_eve: float
    psnr_bob: float
    psnr_eve: float
    identity_match_bob: bool
    identity_match_eve: bool


def psnr(mse: float) -> float:
    """PSNR in dB for a nominal pixel range of [0, 1]."""
    return 10.0 * math.log10(1.0 / mse) if mse > 0 else math.inf


def _cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a.reshape(a.shape[0], -1)
    b = b.reshape(b.shape[0], -1)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("zero-norm embedding; identity similarity undefined")
    return np.sum(a * b, axis=1) / (na * nb)


def identity_similarity(x_src, x_rec, generator: GeneratorModel, cfg: InversionConfig | None = None) -> float:
    """Cosine similarity of the inverted latents of two images."""
    cfg = cfg or InversionConfig()
    emb = invert_batch(generator, np.stack([np.asarray(x_src), np.asarray(x_rec)]), cfg)
    return float(_cosine(emb[:1], emb[1:])[0])


def identity_match(
    x_src, x_rec, generator: GeneratorModel, threshold: float, cfg: InversionConfig | None = None
) -> bool:
    """Stand-in for a face-recognition verdict: same identity iff the latent
    embeddings have cosine similarity >= ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    return identity_similarity(x_src, x_rec, generator, cfg) >= threshold


def fppsr(matches: Sequence[bool] | Sequence[TransmissionResult], for_party: str = "eve") -> float:
    """Fraction of reconstructions judged a different identity from the source."""
    if for_party not in ("bob", "eve"):
        raise ValueError(f"for_party must be 'bob' or 'eve', got {for_party!r}")
    items = list(matches)
    if not items:
        raise ValueError("fppsr needs at least one result")
    if isinstance(items[0], TransmissionResult):
        items = [getattr(r, f"identity_match_{for_party}") for r in items]
    return 1.0 - float(np.mean(np.asarray(items, dtype=bool)))


# --------------------------------------------------------------------------
# single-image path


def _receive(system: System, received: np.ndarray) -> np.ndarray:
    """Bob's latent estimate S1 from his received codes."""
    if not system.protected:
        return received
    yp, yc = split_batch(received, system.private_idx)
    return merge_batch(deprotect(system.deprotection, yp), yc, system.private_idx)


def transmit_image(x, system: System, seeds: tuple[int, int]) -> TransmissionResult:
    """Run one image through the full Alice/Bob/Eve chain.

    ``seeds`` are the (Bob, Eve) channel seeds.
    """
    gen = system.generator
    x = np.asarray(x, dtype=np.float64)
    z = invert(gen, x, system.inversion, system.private_idx)
    zp, zc = partition(z)
    if system.protected:
        z2p = protect(system.protection, zp)
        eps_prime = _epsilon_prime(z2p - zp, system.dp_params)
    else:
        z2p = zp
        eps_prime = math.inf
    z2 = combine(z2p, zc, system.private_idx).codes

    sent, gain = ch.power_normalize(z2.ravel(), system.channel.power)
    y1 = (ch.transmit(sent, system.channel, seeds[0]) / gain).reshape(z2.shape)
    y2 = (ch.transmit(sent, system.channel, seeds[1]) / gain).reshape(z2.shape)

    s1 = _receive(system, y1[None])[0]
    x_bob = generate(gen, s1)
    x_eve = generate(gen, y2)
    mse_b = float(np.mean((x_bob - x) ** 2))
    mse_e = float(np.mean((x_eve - x) ** 2))
    if not (math.isfinite(mse_b) and math.isfinite(mse_e)):
        raise NumericalError(f"non-finite reconstruction error (bob={mse_b}, eve={mse_e})")
    thr = system.identity_threshold
    return TransmissionResult(
        x_hat_bob=x_bob,
        x_hat_eve=x_eve,
        epsilon_prime=eps_prime,
        recon_mse_bob=mse_b,
        recon_mse_eve=mse_e,
        psnr_bob=psnr(mse_b),
        psnr_eve=psnr(mse_e),
        identity_match_bob=identity_match(x, x_bob, gen, thr, system.inversion),
        identity_match_eve=identity_match(x, x_eve, gen, thr, system.inversion),
    )


def _epsilon_prime(noise: np.ndarray, params: dp.DpParams | None) -> float:
    if params is None:
        return math.inf
    return dp.approximate_epsilon(dp.fit_laplace_scale(noise), params.delta_f)


# --------------------------------------------------------------------------
# batched evaluation


@dataclass
class BatchEvaluation:
    """Per-image outcomes for one system over a set of images."""

    x_hat_bob: np.ndarray
    x_hat_eve: np.ndarray
    mse_bob: np.ndarray
    mse_eve: np.ndarray
    sim_bob: np.ndarray
    sim_eve: np.ndarray
    epsilon_prime: float
    threshold: float | None = None

    @property
    def psnr_bob(self) -> np.ndarray:
        return 10.0 * np.log10(1.0 / self.mse_bob)

    @property
    def psnr_eve(self) -> np.ndarray:
        return 10.0 * np.log10(1.0 / self.mse_eve)

    def matches(self, party: str) -> np.ndarray:
        if self.threshold is None:
            raise ValueError("identity threshold not set")
        sims = self.sim_bob if party == "bob" else self.sim_eve
        return sims >= self.threshold

    def fppsr(self, party: str) -> float:
        return fppsr(self.matches(party).tolist(), party)


def channel_seeds(seed: int, split: str, count: int) -> list[tuple[int, int]]:
    """Per-image (Bob, Eve) seeds. Independent of epsilon, so every system in a
    sweep sees the same channel realizations."""
    return [(derive_seed(seed, split, "bob", i), derive_seed(seed, split, "eve", i)) for i in range(count)]


def _evaluate_chunk(system: System, images, latents, seeds) -> tuple:
    gen = system.generator
    zp, zc = split_batch(latents, system.private_idx)
    z2p = protect(system.protection, zp) if system.protected else zp
    z2 = merge_batch(z2p, zc, system.private_idx)
    flat = z2.reshape(len(images), -1)
    sent, gain = ch.power_normalize(flat, system.channel.power)
    y1 = np.stack([ch.transmit(sent[i], system.channel, s[0]) for i, s in enumerate(seeds)])
    y2 = np.stack([ch.transmit(sent[i], system.channel, s[1]) for i, s in enumerate(seeds)])
    y1 = (y1 / gain[:, None]).reshape(z2.shape)
    y2 = (y2 / gain[:, None]).reshape(z2.shape)
    x_bob = generate(gen, _receive(system, y1))
    x_eve = generate(gen, y2)
    emb_bob = invert_batch(gen, x_bob, system.inversion)
    emb_eve = invert_batch(gen, x_eve, system.inversion)
    return x_bob, x_eve, emb_bob, emb_eve, z2p - zp


def evaluate(
    system: System,
    images: np.ndarray,
    latents: np.ndarray,
    seeds: Sequence[tuple[int, int]],
    threads: int = 1,
    threshold: float | None = None,
) -> BatchEvaluation:
    """Vectorised :func:`transmit_image` over a dataset.

    ``latents`` are Alice's inversions of ``images`` (computed once and shared
    across systems). With ``threads > 1`` contiguous chunks run in a thread
    pool and are reassembled in image order.
    """
    images = np.asarray(images, dtype=np.float64)
    n = images.shape[0]
    bounds = np.linspace(0, n, min(threads, n) + 1).astype(int)
    chunks = [(images[a:b], latents[a:b], seeds[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: _evaluate_chunk(system, *c), chunks))
    else:
        parts = [_evaluate_chunk(system, *c) for c in chunks]
    x_bob, x_eve, emb_bob, emb_eve, noise = (np.concatenate(p) for p in zip(*parts))

    mse_b = np.mean((x_bob - images) ** 2, axis=1)
    mse_e = np.mean((x_eve - images) ** 2, axis=1)
    if not (np.all(np.isfinite(mse_b)) and np.all(np.isfinite(mse_e))):
        raise NumericalError("non-finite reconstruction error in evaluation")
    eps_prime = _epsilon_prime(noise, system.dp_params) if system.protected else math.inf
    return BatchEvaluation(
        x_hat_bob=x_bob,
        x_hat_eve=x_eve,
        mse_bob=mse_b,
        mse_eve=mse_e,
        sim_bob=_cosine(latents, emb_bob),
        sim_eve=_cosine(latents, emb_eve),
        epsilon_prime=eps_prime,
        threshold=threshold,
    )


def calibrate_threshold(baseline_similarities: np.ndarray, quantile: float) -> float:
    """Identity threshold = ``quantile`` of baseline Bob similarities, so about
    ``1 - quantile`` of unprotected transmissions count as a match."""
    thr = float(np.quantile(np.asarray(baseline_similarities), quantile))
    return min(max(thr, 1e-12), 1.0 - 1e-12)


# --------------------------------------------------------------------------
# experiment


@dataclass(frozen=True)
class ReportRow:
    epsilon: float
    epsilon_prime: float
    mse_bob: float
    mse_eve: float
    psnr_bob: float
    psnr_eve: float
    fppsr_bob: float
    fppsr_eve: float
    is_baseline: bool = False

    def csv(self) -> str:
        vals = [self.epsilon, self.epsilon_prime, self.mse_bob, self.mse_eve, self.psnr_bob,
                self.psnr_eve, self.fppsr_bob, self.fppsr_eve]
        return ",".join(f"{v:.6f}" for v in vals) + f",{int(self.is_baseline)}"


@dataclass
class SweepReport:
    rows: list[ReportRow] = field(default_factory=list)
    threshold: float | None = None

    @property
    def protected_rows(self) -> list[ReportRow]:
        return sorted((r for r in self.rows if not r.is_baseline), key=lambda r: r.epsilon)

    @property
    def baseline(self) -> ReportRow | None:
        return next((r for r in self.rows if r.is_baseline), None)

    def row(self, epsilon: float) -> ReportRow:
        for r in self.rows:
            if not r.is_baseline and r.epsilon == epsilon:
                return r
        raise KeyError(epsilon)

    def to_csv(self) -> str:
        ordered = self.protected_rows + ([self.baseline] if self.baseline else [])
        return "\n".join([CSV_HEADER] + [r.csv() for r in ordered]) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "SweepReport":
        lines = text.strip().splitlines()
        if lines[0] != CSV_HEADER:
            raise ValueError("unexpected report header")
        rows = []
        for line in lines[1:]:
            *vals, base = line.split(",")
            rows.append(ReportRow(*(float(v) for v in vals), is_baseline=base == "1"))
        return cls(rows)


def row_from_evaluation(epsilon: float, ev: BatchEvaluation, is_baseline: bool = False) -> ReportRow:
    return ReportRow(
        epsilon=epsilon,
        epsilon_prime=ev.epsilon_prime,
        mse_bob=float(np.mean(ev.mse_bob)),
        mse_eve=float(np.mean(ev.mse_eve)),
        psnr_bob=float(np.mean(ev.psnr_bob)),
        psnr_eve=float(np.mean(ev.psnr_eve)),
        fppsr_bob=ev.fppsr("bob"),
        fppsr_eve=ev.fppsr("eve"),
        is_baseline=is_baseline,
    )


def eps_label(epsilon: float) -> str:
    return f"{epsilon:g}"


@dataclass
class Dataset:
    images: np.ndarray
    latents: np.ndarray  # Alice's inversions of ``images``


class Experiment:
    """Shared state of one configured run: generator, datasets, DP calibration.

    Every random stream derives from ``config.seed`` through labelled
    sub-seeds; see :meth:`seed_manifest`.
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.generator = GeneratorModel.create(
            config.d, config.m, config.k, config.shared_count, config.generator_seed
        )
        self.private_idx = config.private_tuple
        self.inversion = InversionConfig(
            config.inv_max_iters, config.inv_step_size, config.inv_tol, config.inv_init,
            derive_seed(config.seed, "inversion-init"),
        )
        self.channel = ch.ChannelConfig(config.snr_db, config.power, derive_seed(config.seed, "channel"))
        self._data: dict[str, Dataset] = {}
        self._threshold: float | None = None

        train = self.dataset("train")
        self.clip_bounds = dp.compute_clip_bounds(train.latents, config.q_low, config.q_high)
        if config.sensitivity_scope == "full":
            self.n_elements = config.m * config.k
        else:
            self.n_elements = len(self.private_idx) * config.k
        self.delta_f = dp.sensitivity_closed_form(self.clip_bounds, self.n_elements)
        logger.info(
            "clip bounds a=%.6f b=%.6f, n=%d, delta_f=%.6f",
            self.clip_bounds.a, self.clip_bounds.b, self.n_elements, self.delta_f,
        )

    # -- data -------------------------------------------------------------

    def dataset(self, split: str) -> Dataset:
        if split not in self._data:
            size = {"train": self.config.train_size, "calib": self.config.calib_size,
                    "test": self.config.test_size}[split]
            true_codes = sample_latents(self.generator, size, derive_seed(self.config.seed, "data", split))
            images = generate(self.generator, true_codes)
            latents = invert_batch(self.generator, images, self.inversion)
            self._data[split] = Dataset(images, latents)
        return self._data[split]

    def dp_params(self, epsilon: float) -> dp.DpParams:
        return dp.DpParams(epsilon, self.delta_f, self.n_elements)

    def train_config(self) -> TrainConfig:
        c = self.config
        return TrainConfig(c.lam, c.lr0, c.epochs, c.batch_size, c.t0, c.t_mult, c.lr_min,
                           c.init_std, c.dp_target, derive_seed(c.seed, "training"))

    def seed_manifest(self) -> dict[str, int]:
        c = self.config
        return {
            "seed": c.seed,
            "generator_seed": c.generator_seed,
            "data/train": derive_seed(c.seed, "data", "train"),
            "data/calib": derive_seed(c.seed, "data", "calib"),
            "data/test": derive_seed(c.seed, "data", "test"),
            "training": self.train_config().seed,
            "inversion-init": self.inversion.init_seed,
            "channel/<split>/<party>/<index>": derive_seed(c.seed, "test", "bob", 0),
        }

    # -- systems ----------------------------------------------------------

    def system(self, nets: tuple[AffineNet, AffineNet] | None = None, epsilon: float | None = None) -> System:
        thr = self._threshold if self._threshold is not None else 0.5
        if nets is None:
            return System(self.generator, self.private_idx, self.channel, self.inversion,
                          identity_threshold=thr)
        return System(self.generator, self.private_idx, self.channel, self.inversion,
                      nets[0], nets[1], self.dp_params(epsilon), thr)

    def train(self, epsilon: float, on_epoch=None):
        clip_bounds = self.clip_bounds if self.config.clip_before_noise else None
        return train_nets(self.dataset("train").latents, self.private_idx, self.dp_params(epsilon),
                          self.channel, self.train_config(), clip_bounds, on_epoch)

    def identity_threshold(self) -> float:
        """Configured threshold, or one calibrated on baseline transmissions of
        the calibration split."""
        if self._threshold is None:
            if self.config.identity_threshold > 0:
                self._threshold = self.config.identity_threshold
            else:
                calib = self.dataset("calib")
                ev = evaluate(self.system(), calib.images, calib.latents,
                              channel_seeds(self.config.seed, "calib", len(calib.images)),
                              self.config.threads)
                self._threshold = calibrate_threshold(ev.sim_bob, self.config.calib_quantile)
                logger.info("calibrated identity threshold %.6f", self._threshold)
        return self._threshold

    def evaluate_test(self, nets: tuple[AffineNet, AffineNet] | None = None,
                      epsilon: float | None = None) -> BatchEvaluation:
        thr = self.identity_threshold()
        test = self.dataset("test")
        seeds = channel_seeds(self.config.seed, "test", len(test.images))
        return evaluate(self.system(nets, epsilon), test.images, test.latents, seeds,
                        self.config.threads, thr)

    # -- artifacts ----------------------------------------------------------

    def out(self) -> Path:
        return Path(self.config.out_dir)

    def checkpoint_path(self, epsilon: float) -> Path:
        return self.out() / "checkpoints" / f"eps_{eps_label(epsilon)}.wdpc"

    def checkpoint_meta(self, epsilon: float) -> dict:
        return {"train_config": self.train_config().to_dict(), "epsilon": epsilon,
                "delta_f": self.delta_f, "n_elements": self.n_elements,
                "private_idx": list(self.private_idx)}

    def train_and_save(self, epsilon: float) -> tuple[AffineNet, AffineNet]:
        def log_epoch(epoch, lr, value):
            logger.info("eps=%s epoch=%d lr=%.6g loss=%.6f", eps_label(epsilon), epoch, lr, value)

        result = self.train(epsilon, log_epoch)
        formats.save_checkpoint(self.checkpoint_path(epsilon), result.protection, result.deprotection,
                                self.checkpoint_meta(epsilon))
        curve = self.out() / "train" / f"eps_{eps_label(epsilon)}_loss.csv"
        curve.parent.mkdir(parents=True, exist_ok=True)
        lines = ["epoch,lr,loss"] + [
            f"{i},{lr:.9g},{v:.9g}" for i, (lr, v) in enumerate(zip(result.epoch_lr, result.epoch_loss))
        ]
        curve.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return result.protection, result.deprotection

    def load_nets(self, epsilon: float) -> tuple[AffineNet, AffineNet]:
        prot, deprot, _ = formats.load_checkpoint(self.checkpoint_path(epsilon))
        if prot.dim != len(self.private_idx) * self.config.k:
            raise ValueError(f"checkpoint for epsilon={eps_label(epsilon)} has the wrong dimension")
        return prot, deprot

    def require_checkpoints(self, epsilons: Sequence[float]) -> None:
        missing = [e for e in epsilons if not self.checkpoint_path(e).exists()]
        if missing:
            labels = ",".join(eps_label(e) for e in missing)
            raise MissingArtifactError(f"missing checkpoints for epsilon: {labels}", missing)

    def dump_images(self, epsilon_label: str, ev: BatchEvaluation) -> None:
        count = self.config.dump_count
        count = len(ev.mse_bob) if count < 0 else min(count, len(ev.mse_bob))
        shape = self.generator.image_shape()
        base = self.out() / epsilon_label
        for i in range(count):
            formats.write_pgm(base / "bob" / f"img_{i}.pgm", ev.x_hat_bob[i], shape)
            formats.write_pgm(base / "eve" / f"img_{i}.pgm", ev.x_hat_eve[i], shape)


def run_baseline(exp: Experiment) -> ReportRow:
    """Direct transmission of the unprotected codes over the same channels."""
    return row_from_evaluation(math.inf, exp.evaluate_test(), is_baseline=True)


def run_sweep(exp: Experiment, epsilons: Sequence[float] | None = None, train: bool = True,
              dump: bool = True) -> SweepReport:
    """Train (or load) one net pair per budget, evaluate each on the test set,
    and append the baseline row."""
    epsilons = sorted(epsilons or exp.config.epsilons)
    if not train:
        exp.require_checkpoints(epsilons)
    report = SweepReport(threshold=exp.identity_threshold())
    for eps in epsilons:
        nets = exp.train_and_save(eps) if train else exp.load_nets(eps)
        ev = exp.evaluate_test(nets, eps)
        row = row_from_evaluation(eps, ev)
        logger.info("eps=%s eps'=%.3f mse_bob=%.6f mse_eve=%.6f fppsr_bob=%.3f fppsr_eve=%.3f",
                    eps_label(eps), row.epsilon_prime, row.mse_bob, row.mse_eve, row.fppsr_bob, row.fppsr_eve)
        report.rows.append(row)
        if dump:
            exp.dump_images(f"eps_{eps_label(eps)}", ev)
    report.rows.append(run_baseline(exp))
    return report
