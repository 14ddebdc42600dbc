"""Simulated FRAP: bleach a ball-shaped region, track its mean concentration, fit the recovery."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import discrete_mass, run_diffusion
from .geometry import MeshSequence, SurfaceMesh
from .lsq import FitError, FitResult, fit_recovery
from .sparse import SolverOptions

logger = logging.getLogger(__name__)

#: 5e-10 cm^2/s expressed in um^2/s
DEFAULT_D = 0.05


@dataclass(frozen=True)
class RoiSpec:
    center: tuple[float, float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"ROI radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @classmethod
    def quarter_radius(cls, mesh: SurfaceMesh, center=(0.25, 0.25, 0.25)) -> "RoiSpec":
        """Ball of a quarter of the cell radius (bounding sphere about the vertex centroid)."""
        return cls(tuple(center), 0.25 * mesh.bounding_radius())


@dataclass
class FrapConfig:
    D: float = DEFAULT_D
    dt: float = 0.04
    fit_window: float = 12.0
    duration: float | None = None
    roi: RoiSpec | None = None
    start_frame: int = 0
    sampling: str = "frozen"
    membership: str = "barycenter"
    streamline: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.D >= 0:
            raise ValueError("D must be non-negative")
        if not self.fit_window > 0:
            raise ValueError("fit window must be positive")
        if self.duration is not None and self.fit_window > self.duration * (1 + 1e-12):
            raise ValueError("fit window exceeds the simulated duration")
        if self.sampling not in ("frozen", "fixed-ball"):
            raise ValueError(f"unknown sampling mode {self.sampling!r}")
        if self.membership not in ("barycenter", "all-vertices"):
            raise ValueError(f"unknown ROI membership rule {self.membership!r}")
        if self.start_frame < 0:
            raise ValueError("start frame must be >= 0")

    @property
    def simulated_duration(self) -> float:
        return self.fit_window if self.duration is None else self.duration


@dataclass
class FrapResult:
    times: np.ndarray
    mean_concentration: np.ndarray
    roi_area: np.ndarray
    total_mass: np.ndarray
    bleached_fraction: float
    roi_area_fraction: float
    roi_elements: np.ndarray
    fit: FitResult | None
    config: FrapConfig
    roi_fallback: bool = False
    fit_message: str = ""
    warnings: list[str] = field(default_factory=list)

    @property
    def t_half(self) -> float:
        if self.fit is None or self.fit.degenerate:
            return math.nan
        return self.fit.t_half

    def summary(self) -> dict:
        fit = self.fit
        return {
            "A": None if fit is None else _num(fit.A),
            "B": None if fit is None else _num(fit.B),
            "A_stderr": None if fit is None else _num(fit.stderr[0]),
            "B_stderr": None if fit is None else _num(fit.stderr[1]),
            "T_half": _num(self.t_half),
            "rss": None if fit is None else _num(fit.rss),
            "converged": bool(fit is not None and fit.converged),
            "degenerate": bool(fit is None or fit.degenerate),
            "fit_message": self.fit_message,
            "bleached_fraction": self.bleached_fraction,
            "roi_area_fraction": self.roi_area_fraction,
            "roi_element_count": int(len(self.roi_elements)),
            "roi_fallback": self.roi_fallback,
            "samples": int(len(self.times)),
            "warnings": list(self.warnings),
        }


def _num(x) -> float | None:
    x = float(x)
    return x if math.isfinite(x) else None


def roi_elements(mesh: SurfaceMesh, roi: RoiSpec, membership: str = "barycenter") -> np.ndarray:
    """Indices of triangles inside the ball.

    ``barycenter``: the triangle barycenter lies strictly inside.
    ``all-vertices``: all three vertices lie strictly inside.
    """
    c = np.asarray(roi.center)
    if membership == "barycenter":
        bary = mesh.vertices[mesh.triangles].mean(axis=1)
        inside = np.linalg.norm(bary - c, axis=1) < roi.radius
    elif membership == "all-vertices":
        vin = np.linalg.norm(mesh.vertices - c, axis=1) < roi.radius
        inside = vin[mesh.triangles].all(axis=1)
    else:
        raise ValueError(f"unknown membership rule {membership!r}")
    return np.flatnonzero(inside)


def bleach_initial(mesh: SurfaceMesh, roi: RoiSpec) -> np.ndarray:
    """Nodal interpolant of the bleach profile: 0 inside the ball, 1 outside."""
    d = np.linalg.norm(mesh.vertices - np.asarray(roi.center), axis=1)
    return np.where(d < roi.radius, 0.0, 1.0)


def mean_concentration(mesh: SurfaceMesh, u: np.ndarray, elements: np.ndarray) -> float:
    """Area-weighted mean of the P1 field over a union of triangles."""
    elements = np.asarray(elements)
    if elements.size == 0:
        raise ValueError("empty element set")
    area = mesh.geometry.area[elements]
    vals = np.asarray(u)[mesh.triangles[elements]].mean(axis=1)
    return float(area @ vals / area.sum())


def _nearest_element(mesh: SurfaceMesh, point) -> np.ndarray:
    bary = mesh.vertices[mesh.triangles].mean(axis=1)
    return np.array([int(np.argmin(np.linalg.norm(bary - np.asarray(point), axis=1)))])


def recovery_fit(times, values, window: float) -> tuple[FitResult, float]:
    """Fit the recovery model over ``t <= window``; returns the fit and ``B ln 2``."""
    fit = fit_recovery(times, values, window)
    return fit, (math.nan if fit.degenerate else fit.t_half)


def run_frap(seq: MeshSequence, cfg: FrapConfig, opts: SolverOptions = SolverOptions()) -> FrapResult:
    """Bleach at the start frame, diffuse, sample the ROI mean every step, fit.

    In ``frozen`` sampling the ROI is the set of triangles selected on the
    initial frame, carried along as the mesh moves. ``fixed-ball`` instead
    reselects triangles against the fixed ball on every frame.
    """
    if cfg.start_frame >= len(seq):
        raise ValueError(f"start frame {cfg.start_frame} beyond sequence of {len(seq)} frames")
    if len(seq) - cfg.start_frame >= 2:
        sub = seq.subsequence(cfg.start_frame)
        sub = sub.shifted(-sub.t_start)
    else:
        # single frame: a static surface for the whole run
        f = seq[cfg.start_frame]
        sub = MeshSequence(
            [f.with_vertices(f.vertices, 0.0), f.with_vertices(f.vertices, cfg.simulated_duration)],
            validate=False,
        )
    duration = cfg.simulated_duration
    if duration > sub.t_end * (1 + 1e-12):
        raise ValueError(
            f"sequence covers {sub.t_end:g} s from frame {cfg.start_frame}, run needs {duration:g} s"
        )
    mesh0 = sub[0]
    roi = cfg.roi if cfg.roi is not None else RoiSpec.quarter_radius(mesh0)
    warnings = []
    if roi.radius > 0.5 * mesh0.bounding_radius():
        warnings.append("ROI radius exceeds half the cell radius")
    elements = roi_elements(mesh0, roi, cfg.membership)
    fallback = False
    if elements.size == 0:
        elements = _nearest_element(mesh0, roi.center)
        fallback = True
        warnings.append("ROI contains no triangle; sampling the triangle nearest its centre")
    for w in warnings:
        logger.warning(w)

    u0 = bleach_initial(mesh0, roi)
    area0 = mesh0.total_area()
    mass0 = discrete_mass(mesh0, u0)
    roi_area_fraction = float(mesh0.geometry.area[elements].sum() / area0)

    times, means, areas, masses = [], [], [], []

    def sample(n, t, mesh, u):
        els = elements
        if cfg.sampling == "fixed-ball":
            els = roi_elements(mesh, roi, cfg.membership)
            if els.size == 0:
                els = _nearest_element(mesh, roi.center)
        times.append(t)
        means.append(mean_concentration(mesh, u, els))
        areas.append(float(mesh.geometry.area[els].sum()))
        masses.append(discrete_mass(mesh, u))

    run_diffusion(
        sub, u0, cfg.D, cfg.dt, t_end=duration, streamline=cfg.streamline,
        opts=opts, callback=sample, keep=False,
    )
    times, means = np.array(times), np.array(means)
    eps = 1e-6
    if means.min() < -eps or means.max() > 1 + eps:
        warnings.append(f"ROI mean left [0, 1]: range [{means.min():.3g}, {means.max():.3g}]")

    fit, message = None, ""
    try:
        fit, _ = recovery_fit(times, means, cfg.fit_window)
        message = fit.message
    except FitError as exc:
        fit, message = exc.result, f"fit failed: {exc}"
        logger.warning(message)

    return FrapResult(
        times=times,
        mean_concentration=means,
        roi_area=np.array(areas),
        total_mass=np.array(masses),
        bleached_fraction=1.0 - mass0 / area0,
        roi_area_fraction=roi_area_fraction,
        roi_elements=elements,
        fit=fit,
        config=cfg,
        roi_fallback=fallback,
        fit_message=message,
        warnings=warnings,
    )


def config_dict(cfg: FrapConfig) -> dict:
    d = asdict(cfg)
    if cfg.roi is not None:
        d["roi"] = {"center": list(cfg.roi.center), "radius": cfg.roi.radius}
    return d
