"""Run configuration and the flat ``key = value`` config format.

One setting per line, ``#`` starts a comment, blank lines are ignored::

    epochs = 50
    dilations = 1, 3, 5
    no_tlatt = true
    omega = auto
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping, Optional

ABLATIONS = ("no_slatt", "no_tlatt", "no_latt", "no_align")
MODES = ("standard", "iterative", "multistep")
MODELS = ("popnet", "gru")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data
    data_dir: str = ""
    num_locations: int = 1015
    num_steps: int = 63
    num_features: int = 22
    noise_sigma: float = 1.0
    latency_interval: int = 5
    impute_spatial: bool = False
    # graph
    alpha: float = 0.35
    beta: float = 0.37
    gamma: float = 30.0
    omega: Optional[float] = None
    # model
    model: str = "popnet"
    gat_dim: int = 32
    heads: int = 2
    hidden: int = 256
    filters: int = 16
    kernel: int = 3
    dilations: tuple = (1, 3, 5)
    sie_dim: int = 32
    att_dim: int = 32
    head_width: int = 128
    horizon: int = 1
    dropout: float = 0.5
    gru_hidden: int = 128
    # training
    lr: float = 0.001
    epochs: int = 200
    refresh_epochs: int = 50
    full_history_epochs: int = 200
    seed: int = 42
    batch: str = "sequence"
    mode: str = "standard"
    # ablations
    no_slatt: bool = False
    no_tlatt: bool = False
    no_latt: bool = False
    no_align: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.batch != "sequence":
            raise ConfigError("only batch = sequence (one full-sequence step per epoch) is supported")
        if self.epochs < 0 or self.refresh_epochs < 0 or self.full_history_epochs < 0:
            raise ConfigError("epoch counts must be nonnegative")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.no_latt and self.no_slatt:
            warnings.warn("no_latt already disables S-LAtt; no_slatt is redundant", UserWarning, stacklevel=3)
        if self.no_latt and self.no_tlatt:
            warnings.warn("no_latt already disables T-LAtt; no_tlatt is redundant", UserWarning, stacklevel=3)

    @property
    def use_slatt(self) -> bool:
        return not (self.no_latt or self.no_slatt)

    @property
    def use_tlatt(self) -> bool:
        return not (self.no_latt or self.no_tlatt)

    @property
    def variant(self) -> str:
        if self.model == "gru":
            return "GRU"
        tags = [t for t, on in (("LAtt", self.no_latt), ("SLAtt", self.no_slatt and not self.no_latt),
                                ("TLAtt", self.no_tlatt and not self.no_latt), ("La", self.no_align)) if on]
        return "PopNet" + "".join("-" + t for t in tags)

    def replace(self, **changes) -> "RunConfig":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["dilations"] = list(self.dilations)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunConfig":
        d = dict(d)
        if "dilations" in d:
            d["dilations"] = tuple(d["dilations"])
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


_TRUE = {"true", "yes", "1", "on"}
_FALSE = {"false", "no", "0", "off"}


def _field_types() -> dict[str, Any]:
    return {f.name: f.default for f in fields(RunConfig)}


def parse_value(key: str, raw: str) -> Any:
    """Convert ``raw`` text to the type of field ``key``."""
    defaults = _field_types()
    if key not in defaults:
        raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(sorted(defaults))}")
    raw = raw.strip()
    default = defaults[key]
    try:
        if key == "omega":
            return None if raw.lower() in ("auto", "none", "") else float(raw)
        if key == "dilations":
            vals = tuple(int(v) for v in raw.replace(",", " ").split())
            if not vals:
                raise ValueError("empty")
            return vals
        if isinstance(default, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError("not a boolean")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        kind = "integer list" if key == "dilations" else type(default).__name__
        raise ConfigError(f"config key {key!r}: cannot read {raw!r} as {kind}") from None


def parse_config_text(text: str) -> dict[str, Any]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        values[key] = parse_value(key, raw)
    return values


def load_config(path: Optional[str | Path] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """File values first, then ``overrides`` (already typed or raw strings)."""
    values: dict[str, Any] = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text()))
    for key, val in (overrides or {}).items():
        key = key.replace("-", "_")
        values[key] = parse_value(key, val) if isinstance(val, str) else val
    defaults = _field_types()
    for key in values:
        if key not in defaults:
            raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(sorted(defaults))}")
    if values.get("mode") == "multistep" and "horizon" not in values:
        values["horizon"] = 5
    return RunConfig(**values)


def format_config(cfg: RunConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if k == "dilations":
            v = ", ".join(str(d) for d in v)
        elif v is None:
            v = "auto"
        elif isinstance(v, bool):
            v = str(v).lower()
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
