"""Run configuration: a single JSON document resolved into typed blocks with defaults."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

MODES = ("poisson-test", "trajectory", "velocity-lemma", "decay-scan", "picard", "run")


@dataclass
class DomainBlock:
    kind: str = "ball"
    radius: float = 1.0
    semi_axes: list | None = None
    terms: list | None = None
    center: list = field(default_factory=lambda: [0.0, 0.0, 0.0])


@dataclass
class GridBlock:
    h: float | None = None
    cells: int | None = 32
    tol: float = 1e-10
    preconditioner: str = "jacobi"


@dataclass
class InitialBlock:
    profile: str = "maxwellian-bump"
    amplitude: float = 2.0
    x_center: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    x_radius: float = 0.6
    v_center: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    v_radius: float = 1.0
    temperature: float = 0.1
    ring_speed: float = 0.5
    ring_width: float = 0.1
    delta0: float | None = None
    seed: int = 0
    N: int = 10000


@dataclass
class TimeBlock:
    T: float = 0.1
    dt: float = 1e-3


@dataclass
class PoissonTestBlock:
    hs: list = field(default_factory=lambda: [1 / 16, 1 / 32, 1 / 64])
    density: str = "uniform"
    min_order: float = 1.8


@dataclass
class TrajectoryBlock:
    x0: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    v0: list = field(default_factory=lambda: [1.0, 0.0, 0.0])
    field: str = "ball-uniform"
    rho0: float = 1.0
    max_reflections: int | None = None


@dataclass
class VelocityLemmaBlock:
    depths: list = field(default_factory=lambda: [0.04, 0.02, 0.01, 0.005])
    speed: float = 1.0
    reflections: int = 5
    dts: list = field(default_factory=lambda: [1e-3, 5e-4])
    field: str = "ball-uniform"
    rho0: float = 1.0


@dataclass
class DecayScanBlock:
    d0: float = 0.2
    levels: int = 7
    density: str = "linear"
    axis: int = 1
    h: float = 1 / 64
    point: list | None = None


@dataclass
class PicardBlock:
    n_max: int = 8
    tol: float = 1e-3


@dataclass
class RunConfig:
    mode: str = "run"
    domain: DomainBlock = field(default_factory=DomainBlock)
    grid: GridBlock = field(default_factory=GridBlock)
    initial: InitialBlock = field(default_factory=InitialBlock)
    time: TimeBlock = field(default_factory=TimeBlock)
    poisson_test: PoissonTestBlock = field(default_factory=PoissonTestBlock)
    trajectory: TrajectoryBlock = field(default_factory=TrajectoryBlock)
    velocity_lemma: VelocityLemmaBlock = field(default_factory=VelocityLemmaBlock)
    decay_scan: DecayScanBlock = field(default_factory=DecayScanBlock)
    picard: PicardBlock = field(default_factory=PicardBlock)
    output_dir: str = "vpconvex-out"
    workers: int = 1
    blowup_ceiling: float | str = "auto"
    dump_fields: bool = False

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_BLOCKS = {f.name: f.type for f in dataclasses.fields(RunConfig)}
_BLOCK_TYPES = {
    "domain": DomainBlock,
    "grid": GridBlock,
    "initial": InitialBlock,
    "time": TimeBlock,
    "poisson_test": PoissonTestBlock,
    "trajectory": TrajectoryBlock,
    "velocity_lemma": VelocityLemmaBlock,
    "decay_scan": DecayScanBlock,
    "picard": PicardBlock,
}


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(unknown)}")
    return cls(**data)


def from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a JSON object")
    data = {k.replace("-", "_"): v for k, v in data.items()}
    kw = {}
    for key, value in data.items():
        if key == "grid" and isinstance(value, dict) and value.get("h") is not None and "cells" not in value:
            value = {**value, "cells": None}
        if key in _BLOCK_TYPES:
            kw[key] = _build(_BLOCK_TYPES[key], value, key)
        elif key in _BLOCKS:
            kw[key] = value
        else:
            raise ConfigError(f"config: unknown field {key!r}")
    cfg = RunConfig(**kw)
    validate(cfg)
    return cfg


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc})") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return from_dict(data)


def _positive(value, where: str):
    if value is None:
        return
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value) or value <= 0:
        raise ConfigError(f"{where}: must be a positive number (got {value!r})")


def validate(cfg: RunConfig) -> None:
    if cfg.mode not in MODES:
        raise ConfigError(f"mode: {cfg.mode!r} is not one of {', '.join(MODES)}")
    d = cfg.domain
    if d.kind == "ball":
        _positive(d.radius, "domain.radius")
    elif d.kind == "ellipsoid":
        if not d.semi_axes or len(d.semi_axes) != 3:
            raise ConfigError("domain.semi_axes: need three values")
        for i, a in enumerate(d.semi_axes):
            _positive(a, f"domain.semi_axes[{i}]")
    elif d.kind in ("generic-level-set", "level-set"):
        if not d.terms:
            raise ConfigError("domain.terms: a level-set domain needs a coefficient table")
    else:
        raise ConfigError(f"domain.kind: unknown kind {d.kind!r}")
    if len(d.center) != 3:
        raise ConfigError("domain.center: need three coordinates")
    g = cfg.grid
    if (g.h is None) == (g.cells is None):
        if g.h is not None:
            raise ConfigError("grid: give h or cells, not both")
        raise ConfigError("grid: give one of h or cells")
    _positive(g.h, "grid.h")
    _positive(g.cells, "grid.cells")
    _positive(g.tol, "grid.tol")
    if g.preconditioner not in ("jacobi", "amg"):
        raise ConfigError(f"grid.preconditioner: unknown {g.preconditioner!r}")
    i = cfg.initial
    for name in ("x_radius", "v_radius", "temperature", "ring_width"):
        _positive(getattr(i, name), f"initial.{name}")
    if i.amplitude < 0:
        raise ConfigError("initial.amplitude: must be nonnegative")
    if i.delta0 is not None:
        _positive(i.delta0, "initial.delta0")
    _positive(i.N, "initial.N")
    _positive(cfg.time.T, "time.T")
    _positive(cfg.time.dt, "time.dt")
    if not isinstance(cfg.workers, int) or cfg.workers < 1:
        raise ConfigError("workers: must be a positive integer")
    if cfg.blowup_ceiling != "auto":
        _positive(cfg.blowup_ceiling, "blowup_ceiling")
    for k, h in enumerate(cfg.poisson_test.hs):
        _positive(h, f"poisson_test.hs[{k}]")
    for k, x in enumerate(cfg.velocity_lemma.depths):
        _positive(x, f"velocity_lemma.depths[{k}]")
    for k, x in enumerate(cfg.velocity_lemma.dts):
        _positive(x, f"velocity_lemma.dts[{k}]")
    _positive(cfg.decay_scan.d0, "decay_scan.d0")
    _positive(cfg.decay_scan.h, "decay_scan.h")
    _positive(cfg.picard.tol, "picard.tol")
    _positive(cfg.picard.n_max, "picard.n_max")
