"""Line-oriented ``key=value`` experiment configuration."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .errors import ConfigError, DomainError
from .mc import ExperimentSpec, Model

REQUIRED = ("model", "events", "kappa", "ladder", "trials", "seed")
OPTIONAL = {
    "mode": "interior",
    "box": "0",
    "n_max": "0",
    "max_steps": "0",
    "capacity": "16",
    "base_steps": "1024",
    "x": "1",
    "a_angle": "1",
    "refine": "0.1",
    "shard_size": "1000",
    "purpose": "main",
    "label": "",
}
KEYS = REQUIRED + tuple(OPTIONAL)


@dataclass(frozen=True)
class Config:
    values: dict
    spec: ExperimentSpec
    shard_size: int
    purpose: str
    label: str

    def canonical_text(self) -> str:
        """Normalized document: every key, in a fixed order."""
        return "".join(f"{k}={self.values[k]}\n" for k in KEYS)

    @property
    def sha(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]

    @property
    def name(self):
        return self.label or f"{self.spec.model.value}-{self.spec.mode}-k{self.spec.kappa:g}"


def parse_ladder(text):
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        e, _, r = item.partition(":")
        out.append((float(e), float(r)))
    return tuple(out)


def format_ladder(ladder):
    return ",".join(f"{e:g}:{r:g}" for e, r in ladder)


def parse_config(text: str) -> Config:
    """Parse and validate a configuration document.

    Raises
    ------
    ConfigError
        On unknown or missing keys, malformed values or out-of-range numbers;
        the message names the offending key.
    """
    raw = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in KEYS:
            raise ConfigError(f"unknown key {k!r}")
        if k in raw:
            raise ConfigError(f"duplicate key {k!r}")
        raw[k] = v
    for k in REQUIRED:
        if k not in raw:
            raise ConfigError(f"missing required key {k!r}")
    vals = dict(OPTIONAL)
    vals.update(raw)

    def num(key, kind):
        try:
            return kind(vals[key])
        except ValueError:
            raise ConfigError(f"key {key!r}: cannot parse {vals[key]!r} as {kind.__name__}") from None

    try:
        model = Model(vals["model"])
    except ValueError:
        raise ConfigError(f"key 'model': expected LoopSoup or Sle, got {vals['model']!r}") from None
    events = tuple(e.strip() for e in vals["events"].split(",") if e.strip())
    if not events:
        raise ConfigError("key 'events': empty list")
    try:
        ladder = parse_ladder(vals["ladder"])
    except ValueError:
        raise ConfigError(f"key 'ladder': expected eps:r pairs, got {vals['ladder']!r}") from None
    shard = num("shard_size", int)
    if shard < 1:
        raise ConfigError("key 'shard_size' must be >= 1")
    seed = num("seed", int)
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("key 'seed' must be a 64-bit unsigned integer")
    trials = num("trials", int)
    if trials < 0:
        raise ConfigError("key 'trials' must be >= 0")
    if vals["purpose"] not in ("main", "local"):
        raise ConfigError("key 'purpose' must be main or local")
    try:
        spec = ExperimentSpec(model, events, num("kappa", float), ladder, trials, seed,
                              mode=vals["mode"], box=num("box", int), n_max=num("n_max", int),
                              max_steps=num("max_steps", int), capacity=num("capacity", float),
                              base_steps=num("base_steps", int), x=num("x", float),
                              a_angle=num("a_angle", float), refine=num("refine", float))
    except DomainError as exc:
        raise ConfigError(str(exc)) from None
    if spec.n_max and spec.n_max % 2:
        raise ConfigError("key 'n_max' must be even")
    if spec.capacity <= 0 or spec.base_steps < 1 or not 0 < spec.refine < 1:
        raise ConfigError("keys 'capacity', 'base_steps', 'refine' out of range")
    vals["ladder"] = format_ladder(ladder)
    vals["events"] = ",".join(events)
    return Config(vals, spec, shard, vals["purpose"], vals["label"])
