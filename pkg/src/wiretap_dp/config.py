"""Flat ``key = value`` run configuration.

Resolution order, lowest to highest: built-in defaults, config file,
``WDP_OUT`` environment variable (output dir only), command-line flags.
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

from wiretap_dp.errors import ConfigError

DEFAULT_EPSILONS = (1.0, 3.0, 5.0, 8.0, 10.0, 15.0, 30.0, 100.0, 300.0, 800.0)


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.replace(" ", "").split(",") if p)


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.replace(" ", "").split(",") if p)


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        val = text.strip()
        if val not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {val!r}")
        return val

    return parse


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _opt(default, parse, help_: str = ""):
    return field(default=default, metadata={"parse": parse, "help": help_})


@dataclass(frozen=True)
class RunConfig:
    # generator
    d: int = _opt(96, int, "image dimension")
    m: int = _opt(8, int, "number of latent codes")
    k: int = _opt(16, int, "dimension of each code")
    shared_count: int = _opt(2, int, "codes that act on every pixel")
    generator_seed: int = _opt(42, int, "seed of the synthesis model")
    private_idx: tuple = _opt((0, 1, 3, 4, 5, 6), _parse_int_list, "comma list of private code indices")
    # inversion
    inv_max_iters: int = _opt(2000, int)
    inv_step_size: float = _opt(1e-2, float)
    inv_tol: float = _opt(1e-8, float)
    inv_init: str = _opt("zero", _choice("zero", "random"))
    # dp
    q_low: float = _opt(0.005, float, "low clipping quantile")
    q_high: float = _opt(0.995, float, "high clipping quantile")
    sensitivity_scope: str = _opt("full", _choice("full", "private"), "elements counted in n")
    clip_before_noise: bool = _opt(True, _parse_bool, "clip private codes before genuine noising")
    epsilon: tuple = _opt(DEFAULT_EPSILONS, _parse_float_list, "comma list of privacy budgets")
    # channel
    snr_db: float = _opt(20.0, float)
    power: float = _opt(1.0, float, "average power per complex symbol")
    # training
    lam: float = _opt(1e-3, float, "weight of the noise-imitation term")
    lr0: float = _opt(5.0, float, "initial (and restart) learning rate")
    lr_min: float = _opt(0.0, float)
    epochs: int = _opt(100, int)
    batch_size: int = _opt(512, int)
    t0: int = _opt(10, int, "epochs in the first cosine cycle")
    t_mult: int = _opt(2, int, "cycle length growth factor")
    init_std: float = _opt(0.01, float)
    dp_target: str = _opt("fixed", _choice("fixed", "fresh"), "genuine-noise target per sample")
    # data
    train_size: int = _opt(1024, int)
    calib_size: int = _opt(200, int)
    test_size: int = _opt(500, int)
    # evaluation
    identity_threshold: float = _opt(0.0, float, "0 = calibrate on the baseline")
    calib_quantile: float = _opt(0.02, float, "baseline similarity quantile used as threshold")
    dump_count: int = _opt(16, int, "PGM dumps per party and epsilon (-1 = all)")
    # run
    seed: int = _opt(0, int, "master seed")
    out_dir: str = _opt("out", str)
    threads: int = _opt(1, int)

    def __post_init__(self):
        check = self._check
        check("d", self.d >= 1, "must be >= 1")
        check("m", self.m >= 1, "must be >= 1")
        check("k", self.k >= 1, "must be >= 1")
        check("shared_count", 0 <= self.shared_count < self.m, "must be in [0, m)")
        check("d", self.d >= self.m - self.shared_count, "must be >= number of local codes")
        idx = self.private_idx
        check("private_idx", len(idx) > 0, "must be nonempty")
        check("private_idx", len(set(idx)) == len(idx), "has duplicates")
        check("private_idx", all(0 <= i < self.m for i in idx), f"indices must be in [0, {self.m})")
        check("inv_max_iters", self.inv_max_iters >= 1, "must be >= 1")
        check("inv_step_size", self.inv_step_size > 0, "must be > 0")
        check("inv_tol", self.inv_tol >= 0, "must be >= 0")
        check("q_low", 0 <= self.q_low < self.q_high, "must be in [0, q_high)")
        check("q_high", self.q_high <= 1, "must be <= 1")
        check("epsilon", len(self.epsilon) > 0, "must be nonempty")
        check("epsilon", all(e > 0 and math.isfinite(e) for e in self.epsilon), "values must be finite and > 0")
        check("epsilon", len(set(self.epsilon)) == len(self.epsilon), "has duplicates")
        check("power", self.power > 0, "must be > 0")
        check("lam", self.lam >= 0, "must be >= 0")
        check("lr0", self.lr0 > 0, "must be > 0")
        check("lr_min", 0 <= self.lr_min <= self.lr0, "must be in [0, lr0]")
        for name in ("epochs", "batch_size", "t0", "t_mult", "calib_size", "test_size", "threads"):
            check(name, getattr(self, name) >= 1, "must be >= 1")
        check("init_std", self.init_std >= 0, "must be >= 0")
        check("train_size", self.train_size >= 2, "must be >= 2")
        check("identity_threshold", 0 <= self.identity_threshold < 1, "must be in [0, 1)")
        check("calib_quantile", 0 < self.calib_quantile < 1, "must be in (0, 1)")
        check("dump_count", self.dump_count >= -1, "must be >= -1")

    @staticmethod
    def _check(key: str, ok: bool, message: str) -> None:
        if not ok:
            raise ConfigError(message, key=config_key(key))

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @property
    def private_tuple(self) -> tuple[int, ...]:
        return tuple(sorted(self.private_idx))

    @property
    def epsilons(self) -> tuple[float, ...]:
        return tuple(sorted(self.epsilon))

    def resolved_text(self) -> str:
        lines = [f"{config_key(f.name)} = {_fmt(getattr(self, f.name))}" for f in dataclasses.fields(self)]
        return "\n".join(lines) + "\n"


# Attribute names differ from config keys only where the key is a Python keyword.
_KEY_TO_ATTR = {"lambda": "lam"}
_ATTR_TO_KEY = {v: k for k, v in _KEY_TO_ATTR.items()}
_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def config_key(attr: str) -> str:
    return _ATTR_TO_KEY.get(attr, attr)


def config_keys() -> list[str]:
    return [config_key(name) for name in _FIELDS]


def field_help(key: str) -> str:
    return _FIELDS[_KEY_TO_ATTR.get(key, key)].metadata.get("help", "")


def _convert(key: str, text: str, line: int | None) -> tuple[str, Any]:
    attr = _KEY_TO_ATTR.get(key, key)
    if attr not in _FIELDS:
        raise ConfigError("unknown key", key=key, line=line)
    try:
        return attr, _FIELDS[attr].metadata["parse"](text)
    except ValueError as exc:
        raise ConfigError(f"bad value {text!r}: {exc}", key=key, line=line) from None


def parse_config_text(text: str) -> dict[str, tuple[Any, int]]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, tuple[Any, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        key, val = (p.strip() for p in line.split("=", 1))
        attr, parsed = _convert(key, val, lineno)
        values[attr] = (parsed, lineno)
    return values


def parse_config(
    path: str | os.PathLike | None = None,
    flags: Mapping[str, str] | None = None,
    env: Mapping[str, str] | None = None,
) -> RunConfig:
    """Resolve a :class:`RunConfig` from defaults, a file, env and flags.

    ``flags`` maps config keys (snake_case or kebab-case) to raw strings.
    """
    env = os.environ if env is None else env
    merged: dict[str, Any] = {}
    lines: dict[str, int] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
        for attr, (val, lineno) in parse_config_text(text).items():
            merged[attr] = val
            lines[attr] = lineno
    if env.get("WDP_OUT"):
        merged["out_dir"] = env["WDP_OUT"]
        lines.pop("out_dir", None)
    for key, raw in (flags or {}).items():
        attr, val = _convert(key.replace("-", "_"), raw, None)
        merged[attr] = val
        lines.pop(attr, None)
    try:
        return RunConfig(**merged)
    except ConfigError as exc:
        attr = _KEY_TO_ATTR.get(exc.key, exc.key)
        if attr in lines and exc.line is None:
            raise ConfigError(str(exc).rsplit(" (", 1)[0], key=exc.key, line=lines[attr]) from None
        raise
