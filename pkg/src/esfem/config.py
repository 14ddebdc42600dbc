"""Run configuration: TOML/JSON documents with fail-closed key checking."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .io import tomllib

THREADS_ENV = "ESFEM_THREADS"


class ConfigError(ValueError):
    pass


@dataclass
class SequenceSection:
    manifest: str | None = None
    synthetic: str = "static_sphere"
    subdivisions: int = 3
    frame_count: int = 2
    frame_dt: float = 4.0
    radius: float = 1.0
    rate: float = 0.1
    amplitude: float = 0.25
    period: float = 4.0
    frames: int | None = None


@dataclass
class DiffusionSection:
    D: float = 1.0
    dt: float = 0.04
    t_end: float | None = None
    initial: str = "constant"
    value: float = 1.0
    streamline: bool = True
    vtk_every: int = 0


@dataclass
class FrapSection:
    D_um2_per_s: float = 0.05
    dt: float = 0.04
    fit_window: float = 12.0
    duration: float | None = None
    roi_center: list[float] = field(default_factory=lambda: [0.25, 0.25, 0.25])
    roi_radius: float | None = None
    start_frames: list[int] = field(default_factory=lambda: [0])
    sampling: str = "frozen"
    membership: str = "barycenter"
    streamline: bool = True


@dataclass
class RdsSection:
    D_u: float = 1.0
    D_w: float = 10.0
    gamma: float = 200.0
    a: float = 0.1
    b: float = 0.9
    dt: float = 1e-4
    swap_interval: float = 1.0
    t_end: float = 70.0
    amplitude: float = 0.1
    seed: int = 0
    snapshot_every: float = 10.0
    streamline: bool = True


@dataclass
class OutputSection:
    directory: str = "esfem-out"
    vtk: bool = True


@dataclass
class SolverSection:
    rtol: float = 1e-10
    max_iter: int | None = None
    preconditioner: str = "jacobi"
    threads: int = 1


@dataclass
class RunConfig:
    sequence: SequenceSection = field(default_factory=SequenceSection)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    frap: FrapSection = field(default_factory=FrapSection)
    rds: RdsSection = field(default_factory=RdsSection)
    output: OutputSection = field(default_factory=OutputSection)
    solver: SolverSection = field(default_factory=SolverSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def set(self, dotted: str, value) -> None:
        """Override one value, e.g. ``set("frap.dt", 0.02)``."""
        section, _, key = dotted.partition(".")
        sec = getattr(self, section, None)
        if sec is None or key not in {f.name for f in fields(sec)}:
            raise ConfigError(f"unknown configuration key {dotted!r}")
        setattr(sec, key, value)


def _coerce(section: str, f, value):
    name = f"{section}.{f.name}"
    t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    if value is None:
        if "None" in t:
            return None
        raise ConfigError(f"{name} may not be null")
    if t.startswith("bool"):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be a boolean")
        return value
    if t.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer")
        return value
    if t.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number")
        return float(value)
    if t.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(f"{name} must be a string")
        return value
    if t.startswith("list"):
        if not isinstance(value, list):
            raise ConfigError(f"{name} must be a list")
        return list(value)
    return value


def from_dict(doc: dict) -> RunConfig:
    cfg = RunConfig()
    for section, body in doc.items():
        sec = getattr(cfg, section, None) if section in {f.name for f in fields(cfg)} else None
        if sec is None:
            raise ConfigError(f"unknown configuration section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        known = {f.name: f for f in fields(sec)}
        for key, value in body.items():
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            setattr(sec, key, _coerce(section, known[key], value))
    return cfg


def load_config(path: str | os.PathLike | None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
            doc = json.loads(text) if p.suffix.lower() == ".json" else tomllib.loads(text)
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"{p}: {exc}") from None
        cfg = from_dict(doc)
    env = os.environ.get(THREADS_ENV)
    if env and (path is None or "threads" not in _raw_solver_keys(path)):
        try:
            cfg.solver.threads = max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return cfg


def _raw_solver_keys(path) -> set[str]:
    p = Path(path)
    text = p.read_text()
    doc = json.loads(text) if p.suffix.lower() == ".json" else tomllib.loads(text)
    return set(doc.get("solver", {}))
