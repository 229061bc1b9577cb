"""Generator configuration: TOML files, ``--set`` overrides and presets."""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .datasetgen import DEFAULT_RATIOS, ParameterGrid, SelectionPolicy, split_sizes
from .dynamics import GlobalDynamicsConfig, WaveParams
from .lattice import DEFAULT_RADIUS

PRESET_PREFIX = "preset:"


class ConfigError(ValueError):
    pass


@dataclass
class GridConfig:
    altered: list[str] = field(default_factory=list)
    base: dict = field(default_factory=dict)
    spread: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)

    def build(self) -> ParameterGrid:
        try:
            base = WaveParams(**self.base)
        except TypeError as exc:
            raise ConfigError(f"grid.base: {exc}") from None
        stray = (set(self.values) | set(self.spread)) - set(self.altered)
        if stray:
            raise ConfigError(f"grid values/spread given for non-altered parameters: {sorted(stray)}")
        if not self.altered:
            raise ConfigError("grid.altered is empty")
        axes = []
        for name in self.altered:
            if name in self.values:
                axes.append((name, tuple(self.values[name])))
            elif name in self.spread:
                sub = ParameterGrid.from_spread(base, {name: self.spread[name]}, [name])
                axes.append(sub.axes[0])
            else:
                raise ConfigError(f"altered parameter {name!r} needs grid.spread or grid.values")
        return ParameterGrid(tuple(axes), base)


@dataclass
class GeneratorConfig:
    master_seed: int = 0
    retina_radius: float = DEFAULT_RADIUS
    image_side: int = 256
    images_per_class: int = 1000
    split_ratios: tuple = DEFAULT_RATIOS
    workers: int = 1
    output_dir: str | None = None
    grid: GridConfig = field(default_factory=GridConfig)
    selection: SelectionPolicy = field(default_factory=SelectionPolicy)
    dynamics: GlobalDynamicsConfig = field(default_factory=GlobalDynamicsConfig)

    def validate(self, require_grid: bool = True) -> "GeneratorConfig":
        """Check cross-field invariants; returns self.

        ``require_grid=False`` accepts an empty ``grid.altered`` (enough for
        simulating the base parameters).
        """
        try:
            if isinstance(self.master_seed, bool) or not isinstance(self.master_seed, int):
                raise ConfigError("master_seed must be an integer")
            if not 0 <= self.master_seed < 2**64:
                raise ConfigError("master_seed must fit in 64 bits (unsigned)")
            if not self.retina_radius >= 1:
                raise ConfigError("retina_radius must be >= 1")
            if not isinstance(self.image_side, int) or self.image_side < 8:
                raise ConfigError("image_side must be an integer >= 8")
            if not isinstance(self.images_per_class, int) or self.images_per_class < 1:
                raise ConfigError("images_per_class must be a positive integer")
            if not isinstance(self.workers, int) or self.workers < 1:
                raise ConfigError("workers must be a positive integer")
            if len(self.split_ratios) != 3:
                raise ConfigError("split_ratios needs three entries (train, val, test)")
            split_sizes(self.images_per_class, self.split_ratios)
            if require_grid or self.grid.altered:
                self.grid.build()
            else:
                self.base_params()
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        return self

    def parameter_grid(self) -> ParameterGrid:
        return self.grid.build()

    def base_params(self) -> WaveParams:
        try:
            return WaveParams(**self.grid.base)
        except TypeError as exc:
            raise ConfigError(f"grid.base: {exc}") from None

    def echo(self) -> dict:
        """Everything that determines output bytes (no worker count or paths)."""
        d = to_dict(self)
        d.pop("workers")
        d.pop("output_dir")
        return d


_TOP_KEYS = {f.name for f in dataclasses.fields(GeneratorConfig)}
_SECTION_TYPES = {"selection": SelectionPolicy, "dynamics": GlobalDynamicsConfig}


def from_dict(data: dict, require_grid: bool = True) -> GeneratorConfig:
    data = copy.deepcopy(data)
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kw = {}
    for key, value in data.items():
        if key == "grid":
            if not isinstance(value, dict):
                raise ConfigError("grid must be a table")
            bad = set(value) - {f.name for f in dataclasses.fields(GridConfig)}
            if bad:
                raise ConfigError(f"unknown grid keys: {sorted(bad)}")
            kw[key] = GridConfig(**value)
        elif key in _SECTION_TYPES:
            cls = _SECTION_TYPES[key]
            if not isinstance(value, dict):
                raise ConfigError(f"{key} must be a table")
            bad = set(value) - {f.name for f in dataclasses.fields(cls)}
            if bad:
                raise ConfigError(f"unknown {key} keys: {sorted(bad)}")
            try:
                kw[key] = cls(**value)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{key}: {exc}") from None
        elif key == "split_ratios":
            kw[key] = tuple(value)
        else:
            kw[key] = value
    return GeneratorConfig(**kw).validate(require_grid)


def to_dict(cfg: GeneratorConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["split_ratios"] = list(cfg.split_ratios)
    return d


def parse_value(text: str):
    """TOML scalar/array if it parses, else the raw string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(data: dict, assignment: str) -> None:
    key, sep, raw = assignment.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override must look like KEY=VALUE, got {assignment!r}")
    parts = key.strip().split(".")
    node = data
    for p in parts[:-1]:
        nxt = node.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"cannot set {key!r}: {p!r} is not a table")
        node = nxt
    node[parts[-1]] = parse_value(raw.strip())


def load_raw(source: str | Path | None) -> dict:
    if source is None:
        return {}
    s = str(source)
    try:
        if s.startswith(PRESET_PREFIX):
            name = s[len(PRESET_PREFIX) :]
            text = resources.files("rewave.presets").joinpath(f"{name}.toml").read_text("utf-8")
        else:
            text = Path(s).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config not found: {s}") from None
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{s}: {exc}") from None


def load_config(source=None, overrides=(), require_grid: bool = True) -> GeneratorConfig:
    data = load_raw(source)
    for item in overrides:
        apply_override(data, item)
    return from_dict(data, require_grid)


def preset_names() -> list[str]:
    files = resources.files("rewave.presets").iterdir()
    return sorted(p.name[:-5] for p in files if p.name.endswith(".toml"))
