"""Triangulated surface frames, their element geometry and time evolution.

Lengths are in mesh units (micrometres by convention) and times in seconds.
All arrays held by the types here are made read-only on construction so that
frames can be shared freely between steps and threads.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

DEGENERATE_TOL = 1e-12


class MeshError(ValueError):
    """Invalid mesh topology, geometry or frame sequence."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    frame_time: float = 0.0

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64)
        t = np.array(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must have shape (n, 3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError(f"triangles must have shape (m, 3), got {t.shape}")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError("triangle references a vertex index out of range")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "triangles", _frozen(t))
        object.__setattr__(self, "frame_time", float(self.frame_time))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def with_vertices(self, vertices: np.ndarray, frame_time: float | None = None) -> "SurfaceMesh":
        """Same connectivity, new positions."""
        vertices = np.asarray(vertices, dtype=np.float64)
        if vertices.shape != self.vertices.shape:
            raise MeshError(
                f"vertex array shape {vertices.shape} does not match {self.vertices.shape}"
            )
        t = self.frame_time if frame_time is None else frame_time
        mesh = SurfaceMesh.__new__(SurfaceMesh)
        object.__setattr__(mesh, "vertices", _frozen(vertices.copy()))
        object.__setattr__(mesh, "triangles", self.triangles)
        object.__setattr__(mesh, "frame_time", float(t))
        return mesh

    @cached_property
    def geometry(self) -> "ElementGeometry":
        return element_geometry(self)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges, sorted vertex pairs."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges) + self.n_triangles

    def diameter(self) -> float:
        """Bounding-box diagonal; cheap stand-in for the true diameter."""
        if not len(self.vertices):
            return 0.0
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    def total_area(self) -> float:
        return float(self.geometry.area.sum())

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def bounding_radius(self) -> float:
        """Radius of the smallest sphere about the vertex centroid containing all vertices."""
        return float(np.linalg.norm(self.vertices - self.centroid(), axis=1).max())


@dataclass(frozen=True, eq=False)
class ElementGeometry:
    """Per-triangle unit normal, area and tangential gradients of the P1 basis.

    ``basis_gradients[k, a]`` is the surface gradient of the hat function of
    local vertex ``a`` on triangle ``k``.
    """

    unit_normal: np.ndarray
    area: np.ndarray
    basis_gradients: np.ndarray


def _triangle_frames(vertices: np.ndarray, triangles: np.ndarray):
    p = vertices[triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    cross = np.cross(e1, e2)
    dbl_area = np.linalg.norm(cross, axis=1)
    return p, cross, dbl_area


def element_geometry(mesh: SurfaceMesh) -> ElementGeometry:
    p, cross, dbl_area = _triangle_frames(mesh.vertices, mesh.triangles)
    tol = DEGENERATE_TOL * mesh.diameter() ** 2
    bad = np.flatnonzero(0.5 * dbl_area <= tol)
    if bad.size:
        raise MeshError(f"degenerate triangle {int(bad[0])} (area {0.5 * dbl_area[bad[0]]:.3e})")
    normal = cross / dbl_area[:, None]
    # grad(phi_a) = (nu x e_a) / (2|T|), e_a the edge opposite vertex a, oriented b -> c
    opposite = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    grads = np.cross(normal[:, None, :], opposite) / dbl_area[:, None, None]
    return ElementGeometry(
        unit_normal=_frozen(normal),
        area=_frozen(0.5 * dbl_area),
        basis_gradients=_frozen(grads),
    )


@dataclass
class ValidationReport:
    n_vertices: int
    n_triangles: int
    n_edges: int
    euler_characteristic: int
    boundary_edges: list[tuple[int, int]] = field(default_factory=list)
    nonmanifold_edges: list[tuple[int, int]] = field(default_factory=list)
    orientation_conflicts: list[tuple[int, int]] = field(default_factory=list)
    degenerate_triangles: list[int] = field(default_factory=list)

    def violations(self) -> list[str]:
        out = []
        if self.boundary_edges:
            out.append(
                f"open surface: {len(self.boundary_edges)} boundary edges, "
                f"first {self.boundary_edges[0]}"
            )
        if self.nonmanifold_edges:
            out.append(
                f"non-manifold: {len(self.nonmanifold_edges)} edges shared by more than "
                f"two triangles, first {self.nonmanifold_edges[0]}"
            )
        if self.orientation_conflicts:
            out.append(
                f"inconsistent orientation: {len(self.orientation_conflicts)} edges, "
                f"first {self.orientation_conflicts[0]}"
            )
        if self.degenerate_triangles:
            out.append(
                f"degenerate: {len(self.degenerate_triangles)} triangles, "
                f"first {self.degenerate_triangles[0]}"
            )
        if not out and self.euler_characteristic != 2:
            out.append(f"not genus zero: Euler characteristic {self.euler_characteristic} != 2")
        return out

    @property
    def accepted(self) -> bool:
        return not self.violations()

    def raise_if_invalid(self) -> None:
        v = self.violations()
        if v:
            raise MeshError(v[0])


def validate_mesh(mesh: SurfaceMesh) -> ValidationReport:
    t = mesh.triangles
    directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    undirected = np.sort(directed, axis=1)
    edges, counts = np.unique(undirected, axis=0, return_counts=True)
    _, dcounts = np.unique(directed, axis=0, return_counts=True)
    dup_directed = np.unique(directed, axis=0)[dcounts > 1]

    _, _, dbl_area = _triangle_frames(mesh.vertices, t)
    tol = DEGENERATE_TOL * mesh.diameter() ** 2

    def pairs(a):
        return [tuple(int(i) for i in row) for row in a]

    return ValidationReport(
        n_vertices=mesh.n_vertices,
        n_triangles=mesh.n_triangles,
        n_edges=len(edges),
        euler_characteristic=mesh.n_vertices - len(edges) + mesh.n_triangles,
        boundary_edges=pairs(edges[counts == 1]),
        nonmanifold_edges=pairs(edges[counts > 2]),
        orientation_conflicts=pairs(dup_directed),
        degenerate_triangles=[int(i) for i in np.flatnonzero(0.5 * dbl_area <= tol)],
    )


def max_element_diameter(mesh: SurfaceMesh) -> float:
    """Longest edge over all triangles."""
    p = mesh.vertices[mesh.triangles]
    lengths = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
    return float(lengths.max())


def vertex_velocity(prev: SurfaceMesh, curr: SurfaceMesh, tau: float) -> np.ndarray:
    """Per-vertex difference quotient ``(x_curr - x_prev) / tau``."""
    if not tau > 0:
        raise ValueError(f"time step must be positive, got {tau}")
    if prev.vertices.shape != curr.vertices.shape:
        raise MeshError("frames have different vertex counts")
    return (curr.vertices - prev.vertices) / tau


class MeshSequence:
    """Frames with strictly increasing times and one shared triangle list.

    Only the first frame is validated topologically; later frames reuse its
    connectivity and are only checked for vertex count.
    """

    def __init__(self, frames: Sequence[SurfaceMesh], validate: bool = True):
        if not frames:
            raise MeshError("a sequence needs at least one frame")
        first = frames[0]
        if validate:
            validate_mesh(first).raise_if_invalid()
        times = np.array([f.frame_time for f in frames])
        if np.any(np.diff(times) <= 0):
            raise MeshError("frame times must be strictly increasing")
        shared = []
        for i, f in enumerate(frames):
            if f.vertices.shape != first.vertices.shape:
                raise MeshError(
                    f"frame {i} has {f.n_vertices} vertices, expected {first.n_vertices}"
                )
            if f.triangles is not first.triangles and not np.array_equal(
                f.triangles, first.triangles
            ):
                raise MeshError(f"frame {i} connectivity differs from frame 0")
            shared.append(f if f.triangles is first.triangles else f.with_vertices(f.vertices))
        self.frames: tuple[SurfaceMesh, ...] = tuple(shared)
        self.times = _frozen(times)
        self._still = [
            np.array_equal(a.vertices, b.vertices) for a, b in zip(self.frames, self.frames[1:])
        ]

    @property
    def connectivity(self) -> np.ndarray:
        return self.frames[0].triangles

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i: int) -> SurfaceMesh:
        return self.frames[i]

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def subsequence(self, start: int, stop: int | None = None) -> "MeshSequence":
        return MeshSequence(self.frames[start:stop], validate=False)

    def shifted(self, offset: float) -> "MeshSequence":
        """Copy with every frame time shifted by ``offset``."""
        return MeshSequence(
            [f.with_vertices(f.vertices, f.frame_time + offset) for f in self.frames],
            validate=False,
        )

    def retimed(self, times: Sequence[float]) -> "MeshSequence":
        return MeshSequence(
            [f.with_vertices(f.vertices, t) for f, t in zip(self.frames, times, strict=True)],
            validate=False,
        )

    def interpolate(self, t: float) -> SurfaceMesh:
        return interpolate_frames(self, t)


def interpolate_frames(seq: MeshSequence, t: float) -> SurfaceMesh:
    """Vertex positions linear in time between neighbouring frames."""
    times = seq.times
    # relative slack so that accumulated step times still hit the last frame
    slack = 1e-12 * max(1.0, abs(times[-1]))
    if t < times[0] - slack or t > times[-1] + slack:
        raise ValueError(f"t={t} outside sequence range [{times[0]}, {times[-1]}]")
    i = int(np.searchsorted(times, t, side="left"))
    if i < len(times) and abs(times[i] - t) <= slack:
        return seq.frames[i]
    if i == 0:
        return seq.frames[0]
    if i >= len(times):
        return seq.frames[-1]
    if seq._still[i - 1]:
        return seq.frames[i - 1].with_vertices(seq.frames[i - 1].vertices, t)
    t0, t1 = times[i - 1], times[i]
    s = (t - t0) / (t1 - t0)
    x = (1.0 - s) * seq.frames[i - 1].vertices + s * seq.frames[i].vertices
    return seq.frames[0].with_vertices(x, t)


# --- synthetic geometry -------------------------------------------------------

_PHI = (1.0 + 5.0**0.5) / 2.0
_ICO_VERTICES = np.array(
    [
        [-1, _PHI, 0], [1, _PHI, 0], [-1, -_PHI, 0], [1, -_PHI, 0],
        [0, -1, _PHI], [0, 1, _PHI], [0, -1, -_PHI], [0, 1, -_PHI],
        [_PHI, 0, -1], [_PHI, 0, 1], [-_PHI, 0, -1], [-_PHI, 0, 1],
    ],
    dtype=np.float64,
)
_ICO_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ],
    dtype=np.int64,
)


def icosphere(subdivisions: int = 0, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> SurfaceMesh:
    """Icosahedron refined by 1:4 midpoint subdivision, projected onto a sphere.

    ``icosphere(k)`` has ``10 * 4**k + 2`` vertices; ``icosphere(5)`` has the
    10242 vertices / 20480 triangles of typical cell-surface triangulations.
    """
    if subdivisions < 0:
        raise ValueError("subdivisions must be >= 0")
    v = _ICO_VERTICES / np.linalg.norm(_ICO_VERTICES, axis=1, keepdims=True)
    f = _ICO_FACES
    for _ in range(subdivisions):
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        uniq, inv = np.unique(np.sort(e, axis=1), axis=0, return_inverse=True)
        inv = inv.reshape(3, -1).T + len(v)
        mid = v[uniq[:, 0]] + v[uniq[:, 1]]
        v = np.vstack([v, mid / np.linalg.norm(mid, axis=1, keepdims=True)])
        a, b, c = f.T
        ab, bc, ca = inv.T
        f = np.concatenate(
            [
                np.stack([a, ab, ca], axis=1),
                np.stack([ab, b, bc], axis=1),
                np.stack([ca, bc, c], axis=1),
                np.stack([ab, bc, ca], axis=1),
            ]
        )
    return SurfaceMesh(radius * v + np.asarray(center, dtype=np.float64), f)


def synth_sequence(
    kind: str,
    frame_count: int,
    frame_dt: float,
    subdivisions: int = 3,
    radius: float = 1.0,
    rate: float = 0.1,
    amplitude: float = 0.25,
    period: float = 4.0,
) -> MeshSequence:
    """Icosphere-based test sequences.

    ``static_sphere`` repeats one frame; ``expanding_sphere`` has radius
    ``radius + rate * t``; ``oscillating_ellipsoid`` stretches the x axis by
    ``1 + amplitude * sin(2 pi t / period)``.
    """
    if frame_count < 2:
        raise ValueError("frame_count must be >= 2")
    if not frame_dt > 0:
        raise ValueError("frame_dt must be positive")
    base = icosphere(subdivisions)
    times = frame_dt * np.arange(frame_count)
    frames = []
    for t in times:
        if kind == "static_sphere":
            scale = np.array([radius, radius, radius])
        elif kind == "expanding_sphere":
            r = radius + rate * t
            if r <= 0:
                raise ValueError(f"radius {r} <= 0 at t={t}")
            scale = np.array([r, r, r])
        elif kind == "oscillating_ellipsoid":
            a = 1.0 + amplitude * np.sin(2.0 * np.pi * t / period)
            if a <= 0:
                raise ValueError(f"x semi-axis {a} <= 0 at t={t}")
            scale = radius * np.array([a, 1.0, 1.0])
        else:
            raise ValueError(f"unknown sequence kind {kind!r}")
        frames.append(base.with_vertices(base.vertices * scale, float(t)))
    return MeshSequence(frames)
