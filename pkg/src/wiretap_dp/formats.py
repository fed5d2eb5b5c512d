"""On-disk formats: PGM image dumps, LATC latent datasets, WDPC checkpoints."""

from __future__ import annotations

import json
import re
import struct
from pathlib import Path

import numpy as np

from wiretap_dp.nets import DEPROTECTION, PROTECTION, AffineNet

LATC_MAGIC = b"LATC"
WDPC_MAGIC = b"WDPC"
WDPC_VERSION = 1


def write_pgm(path, pixels, shape: tuple[int, int]) -> None:
    """Binary PGM (P5, maxval 255). Pixels are clamped to [0, 1] then scaled."""
    rows, cols = shape
    arr = np.asarray(pixels, dtype=np.float64).reshape(rows, cols)
    data = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(data.tobytes(order="C"))


def read_pgm(path) -> np.ndarray:
    """Read a P5 file written by :func:`write_pgm`; returns uint8 ``(rows, cols)``."""
    raw = Path(path).read_bytes()
    head = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if head is None:
        raise ValueError(f"{path}: not a binary PGM")
    cols, rows, maxval = (int(g) for g in head.groups())
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    body = raw[head.end() :]
    return np.frombuffer(body[: rows * cols], dtype=np.uint8).reshape(rows, cols)


def write_latents(path, latents) -> None:
    """Header ``LATC`` + u32 count, m, k (little endian), then float32 codes."""
    z = np.asarray(latents)
    if z.ndim != 3:
        raise ValueError(f"expected (count, m, k) latents, got {z.shape}")
    count, m, k = z.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(LATC_MAGIC + struct.pack("<III", count, m, k))
        fh.write(z.astype("<f4").tobytes(order="C"))


def read_latents(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != LATC_MAGIC:
        raise ValueError(f"{path}: not a LATC latent file")
    count, m, k = struct.unpack("<III", raw[4:16])
    expected = 16 + 4 * count * m * k
    if len(raw) != expected:
        raise ValueError(f"{path}: size {len(raw)} != expected {expected}")
    return np.frombuffer(raw[16:], dtype="<f4").reshape(count, m, k).astype(np.float64)


def save_checkpoint(path, protection: AffineNet, deprotection: AffineNet, train_config: dict) -> None:
    """Binary weights plus a ``.json`` sidecar with the training config.

    Layout: ``WDPC``, u32 version, u32 D, then for protection and deprotection
    in that order the D x D weight (row-major) and D bias, all float64 LE.
    """
    dim = protection.dim
    if deprotection.dim != dim:
        raise ValueError("protection and deprotection dims differ")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(WDPC_MAGIC + struct.pack("<II", WDPC_VERSION, dim))
        for net in (protection, deprotection):
            fh.write(net.weight.astype("<f8").tobytes(order="C"))
            fh.write(net.bias.astype("<f8").tobytes(order="C"))
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps(train_config, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[AffineNet, AffineNet, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != WDPC_MAGIC:
        raise ValueError(f"{path}: not a WDPC checkpoint")
    version, dim = struct.unpack("<II", raw[4:12])
    if version != WDPC_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    per_net = dim * dim + dim
    vals = np.frombuffer(raw[12:], dtype="<f8")
    if vals.size != 2 * per_net:
        raise ValueError(f"{path}: truncated checkpoint")
    nets = []
    for i, role in enumerate((PROTECTION, DEPROTECTION)):
        chunk = vals[i * per_net : (i + 1) * per_net]
        nets.append(AffineNet(chunk[: dim * dim].reshape(dim, dim).copy(), chunk[dim * dim :].copy(), role))
    sidecar = Path(path).with_suffix(".json")
    cfg = json.loads(sidecar.read_text(encoding="utf-8")) if sidecar.exists() else {}
    return nets[0], nets[1], cfg
