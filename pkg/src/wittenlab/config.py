"""Experiment configuration: flat key=value files, flag overrides and the run manifest."""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .forms import Grid
from .manifold import ClosedOneForm, SampleManifold, parse_field

FORMATS = ("csv", "json", "svg")
CONVENTIONS = ("pi-over-t", "t-over-pi")
COMMAND_T_GRIDS = {"whs": (5.0, 10.0, 20.0)}
DEFAULT_T_GRID = (4.0, 6.0, 8.0, 10.0, 12.0)


@dataclass
class ExperimentConfig:
    manifold: str = "circle"
    periods: tuple[float, ...] | None = None
    field: str = "cos-sum"
    harmonic: tuple[float, ...] = ()
    grid: tuple[int, ...] | None = None
    t: float = 8.0
    t_grid: tuple[float, ...] | None = None
    q: tuple[int, ...] | None = None
    seed: int = 42
    out: str = "wittenlab-out"
    format: tuple[str, ...] = FORMATS
    scaling_convention: str = "pi-over-t"
    route: str = "composition"
    # oscillator model and eigenpair counts
    n: int = 1
    k: int = 0
    count: int = 4
    eta: float | None = None
    scan_resolution: int = 64

    # -- derived objects -------------------------------------------------
    @property
    def dimension(self) -> int:
        name, _, dim = self.manifold.partition(":")
        if name == "circle":
            return 1
        return int(dim) if dim else 2

    def sample_manifold(self) -> SampleManifold:
        n = self.dimension
        periods = self.periods or (2 * math.pi,) * n
        return SampleManifold(tuple(periods))

    def scalar_field(self):
        return parse_field(self.sample_manifold(), self.field)

    def one_form(self) -> ClosedOneForm:
        M = self.sample_manifold()
        return ClosedOneForm(M, parse_field(M, self.field), self.harmonic)

    def make_grid(self) -> Grid:
        return Grid(self.sample_manifold(), self.grid)

    def degrees(self) -> list[int]:
        return list(self.q) if self.q is not None else list(range(self.dimension + 1))


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def parse_t_grid(text: str) -> tuple[float, ...]:
    """'a:b:step' (inclusive of b up to rounding) or a comma-separated list."""
    if ":" in text:
        parts = [float(v) for v in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
            raise ConfigError(f"t-grid must be a:b:step with step > 0, got {text!r}")
        a, b, step = parts
        count = int(math.floor((b - a) / step + 1e-9)) + 1
        return tuple(float(np.round(a + i * step, 12)) for i in range(count))
    return _floats(text)


_PARSERS = {
    "manifold": str.strip,
    "periods": _floats,
    "field": str.strip,
    "harmonic": _floats,
    "grid": _ints,
    "t": float,
    "t_grid": parse_t_grid,
    "q": _ints,
    "seed": int,
    "out": str.strip,
    "format": lambda s: tuple(v.strip() for v in s.split(",") if v.strip()),
    "scaling_convention": str.strip,
    "route": str.strip,
    "n": int,
    "k": int,
    "count": int,
    "eta": float,
    "scan_resolution": int,
}


def normalize_key(key: str) -> str:
    return key.strip().lstrip("-").replace("-", "_")


def read_config_file(path) -> dict[str, str]:
    """Flat key=value text, '#' comments, UTF-8."""
    raw = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        raw[normalize_key(key)] = value.strip()
    return raw


def build_config(raw: dict[str, str], command: str | None = None) -> ExperimentConfig:
    """Validate raw string values and resolve command-dependent defaults."""
    values = {}
    for key, text in raw.items():
        key = normalize_key(key)
        if key not in _PARSERS:
            raise ConfigError(f"unknown configuration key {key!r}")
        if text is None or str(text).strip().lower() in ("", "none"):
            values[key] = None
            continue
        try:
            values[key] = _PARSERS[key](str(text))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from exc
    defaults = ExperimentConfig()
    for key, val in list(values.items()):
        if val is None and _FIELDS[key].default is not None and key not in ("periods", "grid", "t_grid", "q", "eta"):
            values[key] = getattr(defaults, key)
    cfg = ExperimentConfig(**values)
    if cfg.t_grid is None:
        cfg.t_grid = COMMAND_T_GRIDS.get(command, DEFAULT_T_GRID)
    validate(cfg, command)
    if cfg.grid is None:
        cfg.grid = cfg.make_grid().shape
    if cfg.periods is None:
        cfg.periods = cfg.sample_manifold().periods
    return cfg


def validate(cfg: ExperimentConfig, command: str | None = None) -> None:
    name, _, dim = cfg.manifold.partition(":")
    if name not in ("circle", "torus") or (name == "circle" and dim):
        raise ConfigError(f"manifold must be 'circle', 'torus' or 'torus:n', got {cfg.manifold!r}")
    if name == "torus" and dim and (not dim.isdigit() or int(dim) < 1):
        raise ConfigError(f"bad torus dimension {dim!r}")
    n = cfg.dimension
    if cfg.periods is not None and (len(cfg.periods) != n or min(cfg.periods) <= 0):
        raise ConfigError(f"periods must be {n} positive numbers")
    if cfg.harmonic and len(cfg.harmonic) != n:
        raise ConfigError(f"harmonic needs {n} coefficients")
    if cfg.grid is not None and len(cfg.grid) not in (1, n):
        raise ConfigError(f"grid needs 1 or {n} sizes")
    if cfg.grid is not None and len(cfg.grid) == 1:
        cfg.grid = cfg.grid * n
    if cfg.grid is not None and any(N % 2 == 0 for N in cfg.grid):
        # the zeroed Nyquist mode adds a spurious kernel vector on even grids
        raise ConfigError(f"grid sizes must be odd, got {cfg.grid}")
    if cfg.t <= 0 or not math.isfinite(cfg.t):
        raise ConfigError("t must be positive")
    if any(t <= 0 for t in cfg.t_grid) or list(cfg.t_grid) != sorted(cfg.t_grid):
        raise ConfigError("t-grid must be positive and ascending")
    top = max(n, cfg.n) if command == "oscillator" else n
    if cfg.q is not None and any(not 0 <= q <= top for q in cfg.q):
        raise ConfigError(f"q must lie in [0, {top}]")
    bad = [f for f in cfg.format if f not in FORMATS]
    if bad:
        raise ConfigError(f"unknown output formats {bad}; choose from {FORMATS}")
    if cfg.scaling_convention not in CONVENTIONS:
        raise ConfigError(f"scaling-convention must be one of {CONVENTIONS}")
    if cfg.route not in ("composition", "direct"):
        raise ConfigError("route must be 'composition' or 'direct'")
    if cfg.count < 1 or cfg.scan_resolution < 8 or cfg.n < 1:
        raise ConfigError("count, n and scan-resolution must be positive")
    try:
        cfg.one_form()
        if cfg.grid is not None:
            cfg.make_grid()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def manifest_text(cfg: ExperimentConfig) -> str:
    lines = ["# resolved wittenlab configuration"]
    for f in dataclasses.fields(cfg):
        lines.append(f"{f.name} = {_fmt(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


def config_digest(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(manifest_text(cfg).encode("utf-8")).hexdigest()


def parse_manifest(text: str) -> ExperimentConfig:
    raw = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            key, value = line.split("=", 1)
            raw[key.strip()] = value.strip()
    return build_config(raw)
