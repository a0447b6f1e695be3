"""Flat ``key = value`` run configuration.

Lines starting with ``#`` are comments. ``scales`` accepts ``3,4,5`` or a
range such as ``2-6``. Unknown keys and unparsable values raise
:class:`ConfigError`.
"""

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    alpha: float = 10.0
    k: int = 4
    scales: tuple = (3, 4, 5)
    K: int = 5
    fusion: str = "attention"
    sigma_rule: str = "ci99"
    lr_pretrain: float = 8e-4
    lr_finetune: float = 2e-4
    steps_pretrain: int = 2000
    steps_finetune: int = 200
    batch_size: int = 8
    width: int = 32
    hidden: int = 32
    normalize_mtgc: bool = True
    exclude_self: bool = False
    freeze_encoder: bool = False
    baseline: str = "none"
    tta_steps: int = 10
    tta_lr: float = 1e-4
    round_obo: bool = False
    seed: int = 0

    def validate(self) -> "Config":
        if self.k < 2 or self.k % 2:
            raise ConfigError(f"k must be an even integer >= 2, got {self.k}")
        if not self.scales or min(self.scales) < 1:
            raise ConfigError(f"scales must be positive integers, got {self.scales}")
        if self.K < 0:
            raise ConfigError("K must be >= 0")
        if self.fusion not in ("attention", "softmax", "average", "max"):
            raise ConfigError(f"unknown fusion {self.fusion!r}")
        if self.sigma_rule not in ("ci99", "bins"):
            raise ConfigError(f"unknown sigma_rule {self.sigma_rule!r}")
        if self.baseline not in ("none", "fcv", "vv"):
            raise ConfigError(f"unknown baseline {self.baseline!r}")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if min(self.lr_pretrain, self.lr_finetune) <= 0:
            raise ConfigError("learning rates must be positive")
        if min(self.steps_pretrain, self.steps_finetune, self.tta_steps) < 0:
            raise ConfigError("step counts must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        return self

    def with_(self, **kw) -> "Config":
        return replace(self, **kw).validate()

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def parse_scales(raw: str) -> tuple:
    raw = raw.strip()
    if "-" in raw and "," not in raw:
        lo, hi = (int(x) for x in raw.split("-"))
        if hi < lo:
            raise ValueError(f"empty scale range {raw!r}")
        return tuple(range(lo, hi + 1))
    return tuple(sorted(int(x) for x in raw.split(",") if x.strip()))


def _convert(name: str, template, raw: str):
    if name == "scales":
        return parse_scales(raw)
    if isinstance(template, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(template, int):
        return int(raw)
    if isinstance(template, float):
        return float(raw)
    return raw


def parse_kv(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (x.strip() for x in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def config_from_mapping(kv: dict, base: Config | None = None) -> Config:
    base = base or Config()
    known = {f.name: getattr(base, f.name) for f in fields(base)}
    updates = {}
    for key, raw in kv.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            updates[key] = _convert(key, known[key], str(raw))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from exc
    return replace(base, **updates).validate()


def parse_config(text: str, base: Config | None = None) -> Config:
    return config_from_mapping(parse_kv(text), base)


def load_config(path) -> Config:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
