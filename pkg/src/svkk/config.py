"""Experiment configuration: defaults, validation, YAML round trip, overrides.

A LinkConfig fully describes one link run; a SweepSpec adds parameter axes
and trial counts on top of a base config.  Every field has a default, so a
minimal file (or even an empty one) is a valid starting point.
"""

from __future__ import annotations

import hashlib
import json
import typing
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional, Sequence, Tuple, Union

import yaml

from .channel import FiberParams, ImpairmentSet
from .errors import InvalidConfigError
from .txdsp import FrameLayout

CD_COMP_ARMS = ("lms_only", "pre", "post")
EQUALIZER_KINDS = ("real_mimo", "complex_butterfly")
ROTATION_KINDS = ("identity", "given", "random")
KK_FILTERS = ("rrc", "brickwall", "none")


@dataclass(frozen=True)
class RotationSpec:
    """State-of-polarization choice: identity, a fixed rotation, or seeded random."""

    kind: str = "identity"
    theta: float = 0.0
    phi: float = 0.0
    seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ROTATION_KINDS:
            raise InvalidConfigError(f"rotation.kind must be one of {ROTATION_KINDS}")
        if self.kind == "random" and self.seed is None:
            raise InvalidConfigError("rotation.kind='random' needs rotation.seed")


@dataclass(frozen=True)
class EqualizerSpec:
    kind: str = "real_mimo"
    n_taps: int = 61
    step_size: float = 1e-3
    train_passes: int = 2
    samples_per_symbol: int = 2
    dd_after_training: bool = True

    def __post_init__(self):
        if self.kind not in EQUALIZER_KINDS:
            raise InvalidConfigError(f"equalizer.kind must be one of {EQUALIZER_KINDS}")
        if self.n_taps < 1 or self.n_taps % 2 == 0:
            raise InvalidConfigError("equalizer.n_taps must be odd and >= 1")
        if self.step_size <= 0:
            raise InvalidConfigError("equalizer.step_size must be > 0")
        if self.samples_per_symbol < 1:
            raise InvalidConfigError("equalizer.samples_per_symbol must be >= 1")
        if self.train_passes < 1:
            raise InvalidConfigError("equalizer.train_passes must be >= 1")


@dataclass(frozen=True)
class LinkConfig:
    """Everything one end-to-end run depends on, seed included."""

    baud_hz: float = 27e9
    modulation: str = "16QAM"
    rolloff: float = 0.1
    cspr_db: float = 11.5
    guard_band_hz: float = 4e9
    sps: int = 6
    kk_oversampling: int = 1
    kk_filter: str = "rrc"
    rrc_span: int = 128
    fiber: FiberParams = field(default_factory=FiberParams)
    rotation: RotationSpec = field(default_factory=RotationSpec)
    osnr_db: Optional[float] = None
    tx_impairments: ImpairmentSet = field(default_factory=ImpairmentSet)
    rx_impairments: ImpairmentSet = field(default_factory=ImpairmentSet)
    equalizer: EqualizerSpec = field(default_factory=EqualizerSpec)
    cd_comp: str = "lms_only"
    frame: FrameLayout = field(default_factory=FrameLayout)
    skip_derotation: bool = False
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def sample_rate(self) -> float:
        return self.sps * self.baud_hz

    @property
    def carrier_freq_hz(self) -> float:
        return self.baud_hz * (1.0 + self.rolloff) / 2.0 + self.guard_band_hz

    @property
    def eq_rate(self) -> float:
        return self.equalizer.samples_per_symbol * self.baud_hz

    def validate(self) -> None:
        if self.baud_hz <= 0:
            raise InvalidConfigError("baud_hz must be > 0")
        if not 0.0 <= self.rolloff <= 1.0:
            raise InvalidConfigError("rolloff must be in [0, 1]")
        if self.sps < 2:
            raise InvalidConfigError("sps must be >= 2")
        if not 1 <= self.kk_oversampling <= 8:
            raise InvalidConfigError("kk_oversampling must be in [1, 8]")
        if self.kk_filter not in KK_FILTERS:
            raise InvalidConfigError(f"kk_filter must be one of {KK_FILTERS}")
        if self.cd_comp not in CD_COMP_ARMS:
            raise InvalidConfigError(f"cd_comp must be one of {CD_COMP_ARMS}")
        if self.guard_band_hz < 0:
            raise InvalidConfigError("guard_band_hz must be >= 0")
        if self.rrc_span < 2:
            raise InvalidConfigError("rrc_span must be >= 2")
        nyquist = self.sample_rate / 2.0
        if self.carrier_freq_hz >= nyquist:
            raise InvalidConfigError(
                f"carrier at {self.carrier_freq_hz / 1e9:.3f} GHz (signal edge "
                f"{self.baud_hz * (1 + self.rolloff) / 2e9:.3f} GHz + guard "
                f"{self.guard_band_hz / 1e9:.3f} GHz) is at or above the Nyquist "
                f"frequency {nyquist / 1e9:.3f} GHz; raise sps or shrink the guard band"
            )
        if self.equalizer.samples_per_symbol > self.sps:
            raise InvalidConfigError("equalizer rate cannot exceed the simulation rate")

    def replace(self, **kwargs) -> "LinkConfig":
        d = to_dict(self)
        for key, value in kwargs.items():
            _set_dotted(d, key, value)
        return link_config_from_dict(d)


@dataclass(frozen=True)
class SweepSpec:
    """Cartesian sweep: axes of dotted config fields over value lists."""

    base: LinkConfig
    axes: Tuple[Tuple[str, tuple], ...]
    trials: int = 1
    output: str = "sweep.csv"

    def __post_init__(self):
        if self.trials < 1:
            raise InvalidConfigError("trials must be >= 1")
        axes = tuple((str(n), tuple(v)) for n, v in self.axes)
        for name, values in axes:
            if not values:
                raise InvalidConfigError(f"axis {name!r} has no values")
            self.base.replace(**{name: values[0]})  # existence check
        object.__setattr__(self, "axes", axes)

    @property
    def points(self) -> List[dict]:
        grids = [[(name, v) for v in values] for name, values in self.axes]
        out = [{}]
        for axis in grids:
            out = [dict(p, **{name: v}) for p in out for name, v in axis]
        return out


def to_dict(obj) -> dict:
    return asdict(obj)


_NESTED_TYPES = {
    "fiber": FiberParams,
    "rotation": RotationSpec,
    "tx_impairments": ImpairmentSet,
    "rx_impairments": ImpairmentSet,
    "equalizer": EqualizerSpec,
    "frame": FrameLayout,
}


def _coerce_scalar(hint, value, path: str):
    """Coerce YAML scalars onto the declared field type.

    Classic-YAML quirk: '27.0e9' (no sign after 'e') loads as a string, so
    numeric fields accept numeric-looking strings here.
    """
    args = typing.get_args(hint)
    if typing.get_origin(hint) is Union:
        if value is None and type(None) in args:
            return None
        hint = next(a for a in args if a is not type(None))
    if hint is float and not isinstance(value, bool):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise InvalidConfigError(f"{path} must be a number, got {value!r}") from None
    if hint is int and not isinstance(value, bool):
        try:
            as_float = float(value)
        except (TypeError, ValueError):
            raise InvalidConfigError(f"{path} must be an integer, got {value!r}") from None
        if as_float != int(as_float):
            raise InvalidConfigError(f"{path} must be an integer, got {value!r}")
        return int(as_float)
    if hint is bool and not isinstance(value, bool):
        raise InvalidConfigError(f"{path} must be true/false, got {value!r}")
    return value


def _build_dataclass(cls, data: dict, path: str):
    known = {f.name: f for f in fields(cls)}
    hints = typing.get_type_hints(cls)
    unknown = set(data) - set(known)
    if unknown:
        raise InvalidConfigError(
            f"unknown config key(s) {sorted(unknown)} under {path or 'top level'}; "
            f"known keys: {sorted(known)}"
        )
    kwargs = {}
    for name, value in data.items():
        sub = _NESTED_TYPES.get(name)
        if sub is not None and cls is LinkConfig:
            if not isinstance(value, dict):
                raise InvalidConfigError(f"{path}{name} must be a mapping")
            kwargs[name] = _build_dataclass(sub, value, f"{path}{name}.")
        else:
            kwargs[name] = _coerce_scalar(hints.get(name), value, f"{path}{name}")
    return cls(**kwargs)


def link_config_from_dict(data: dict) -> LinkConfig:
    return _build_dataclass(LinkConfig, dict(data), "")


def _set_dotted(tree: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = tree
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise InvalidConfigError(f"unknown config section {part!r} in {dotted!r}")
        node = node[part]
    if parts[-1] not in node:
        raise InvalidConfigError(f"unknown config key {dotted!r}")
    node[parts[-1]] = value


def parse_override(text: str) -> Tuple[str, object]:
    """Parse 'dotted.key=value' with YAML scalar semantics for the value."""
    if "=" not in text:
        raise InvalidConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def load_link_config(path, overrides: Sequence[str] = ()) -> LinkConfig:
    """Read a YAML config file, apply key=value overrides, validate fully."""
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise InvalidConfigError(f"config file {path} must hold a mapping")
    base = to_dict(LinkConfig())
    _merge(base, data, "")
    for text in overrides:
        key, value = parse_override(text)
        _set_dotted(base, key, value)
    return link_config_from_dict(base)


def _merge(base: dict, incoming: dict, path: str) -> None:
    for key, value in incoming.items():
        if key not in base:
            raise InvalidConfigError(
                f"unknown config key {path + key!r}; known: {sorted(base)}"
            )
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise InvalidConfigError(f"{path + key!r} must be a mapping")
            _merge(base[key], value, path + key + ".")
        else:
            base[key] = value


def save_config(path, cfg: LinkConfig) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(to_dict(cfg), fh, sort_keys=True)


def config_hash(cfg: LinkConfig) -> str:
    """Stable short digest of the effective config (seed included)."""
    blob = json.dumps(to_dict(cfg), sort_keys=True, default=float)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


__all__ = [
    "LinkConfig",
    "SweepSpec",
    "RotationSpec",
    "EqualizerSpec",
    "link_config_from_dict",
    "load_link_config",
    "save_config",
    "to_dict",
    "parse_override",
    "config_hash",
    "CD_COMP_ARMS",
    "EQUALIZER_KINDS",
]
