"""P1 evolving-surface finite elements: assembly and backward-Euler steps.

Nodal fields are plain ``numpy`` arrays with one value per vertex of the
frame they live on. All element integrals are evaluated in closed form on
flat triangles; the velocity-dependent integrands are polynomials of degree
two, so the closed forms are exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .geometry import ElementGeometry, MeshSequence, SurfaceMesh, max_element_diameter, vertex_velocity
from .sparse import SolverError, SolverOptions, SparseMatrix, SparsityPattern, bicgstab

logger = logging.getLogger(__name__)

# integral of phi_a * phi_b over a triangle, divided by its area
_LOCAL_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0

_PATTERNS: dict[int, SparsityPattern] = {}


class StepError(RuntimeError):
    """A time step failed; carries the step index and the solver residual."""

    def __init__(self, message: str, step: int | None = None, residual: float = float("nan")):
        super().__init__(message)
        self.step = step
        self.residual = residual


def pattern_for(mesh: SurfaceMesh) -> SparsityPattern:
    """Sparsity pattern shared by every frame with this connectivity."""
    key = id(mesh.triangles)
    pat = _PATTERNS.get(key)
    if pat is None or pat.scatter.shape[0] != mesh.n_triangles:
        pat = SparsityPattern(mesh.triangles, mesh.n_vertices)
        # keep the triangles array alive together with its pattern
        pat.owner = mesh.triangles
        _PATTERNS[key] = pat
    return pat


def _geom(mesh: SurfaceMesh, geom: ElementGeometry | None) -> ElementGeometry:
    return mesh.geometry if geom is None else geom


def local_mass(geom: ElementGeometry) -> np.ndarray:
    return geom.area[:, None, None] * _LOCAL_MASS


def assemble_mass(mesh: SurfaceMesh, geom: ElementGeometry | None = None) -> SparseMatrix:
    """Consistent P1 mass matrix (no lumping)."""
    return pattern_for(mesh).assemble(local_mass(_geom(mesh, geom)))


def local_stiffness(geom: ElementGeometry) -> np.ndarray:
    g = geom.basis_gradients
    return geom.area[:, None, None] * np.einsum("kai,kbi->kab", g, g)


def assemble_stiffness(mesh: SurfaceMesh, geom: ElementGeometry | None = None) -> SparseMatrix:
    """Laplace-Beltrami stiffness ``S[j, k] = int grad chi_k . grad chi_j``."""
    return pattern_for(mesh).assemble(local_stiffness(_geom(mesh, geom)))


def element_velocities(geom: ElementGeometry, triangles: np.ndarray, w: np.ndarray):
    """Nodal values of ``w_h`` and ``v_h`` on every triangle.

    Returns ``(w_loc, v_loc)`` of shape ``(n_triangles, 3, 3)``: the vertex
    velocities seen from each triangle and their projections onto the
    triangle's constant unit normal, so ``w_loc - v_loc`` is tangential.
    """
    w_loc = np.asarray(w)[triangles]
    nu = geom.unit_normal
    wn = np.einsum("kai,ki->ka", w_loc, nu)
    v_loc = wn[:, :, None] * nu[:, None, :]
    return w_loc, v_loc


def local_advection(geom: ElementGeometry, triangles: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Element matrices ``L[k, j, m] = int chi_m (w - v) . grad chi_j``.

    ``j`` indexes the test function (row), ``m`` the trial function (column).
    """
    w_loc, v_loc = element_velocities(geom, triangles, w)
    tang = w_loc - v_loc
    # (w - v) . grad chi_j at local vertex a
    proj = np.einsum("kai,kji->kja", tang, geom.basis_gradients)
    # int chi_m chi_a over T = area * _LOCAL_MASS[m, a]
    return geom.area[:, None, None] * np.einsum("kja,ma->kjm", proj, _LOCAL_MASS)


def assemble_advection(
    mesh: SurfaceMesh,
    geom: ElementGeometry | None,
    w: np.ndarray,
) -> SparseMatrix:
    """ALE transport term ``b_adv(chi_k, chi_j) = int chi_k (w_h - v_h) . grad chi_j``.

    ``v_h`` is the projection of ``w_h`` onto each facet normal, evaluated
    pointwise from the P1 interpolant of ``w_h``.
    """
    return pattern_for(mesh).assemble(local_advection(_geom(mesh, geom), mesh.triangles, w))


def local_streamline(geom: ElementGeometry, triangles: np.ndarray, w: np.ndarray, coeff: float) -> np.ndarray:
    w_loc = np.asarray(w)[triangles]
    # w(x_a) . grad chi_j
    d = np.einsum("kai,kji->kja", w_loc, geom.basis_gradients)
    # int (w . grad chi_j)(w . grad chi_m) = sum_ab d[j,a] d[m,b] int chi_a chi_b
    return coeff * geom.area[:, None, None] * np.einsum("kja,ab,kmb->kjm", d, _LOCAL_MASS, d)


def assemble_streamline_diffusion(
    mesh: SurfaceMesh,
    geom: ElementGeometry | None,
    w: np.ndarray,
    D: float,
    g_h: float,
) -> SparseMatrix:
    """Streamline diffusion ``D g(h) int (w . grad u)(w . grad chi_j)``."""
    geom = _geom(mesh, geom)
    return pattern_for(mesh).assemble(local_streamline(geom, mesh.triangles, w, D * g_h))


def streamline_factor(mesh: SurfaceMesh) -> float:
    """``g(h) = h**2`` with ``h`` the longest edge of the frame."""
    return max_element_diameter(mesh) ** 2


@dataclass(frozen=True, eq=False)
class StepContext:
    """Everything one backward-Euler step from ``prev`` to ``curr`` needs."""

    prev: SurfaceMesh
    curr: SurfaceMesh
    tau: float
    D: float
    w: np.ndarray
    streamline: bool = True
    index: int | None = None

    @classmethod
    def between(cls, prev: SurfaceMesh, curr: SurfaceMesh, tau: float, D: float, **kw) -> "StepContext":
        return cls(prev, curr, tau, D, vertex_velocity(prev, curr, tau), **kw)

    @property
    def g_h(self) -> float:
        return streamline_factor(self.curr) if self.streamline else 0.0

    @cached_property
    def moving(self) -> bool:
        return bool(np.any(self.w != 0.0))

    @cached_property
    def material_velocity(self) -> np.ndarray:
        """Per-triangle nodal values of ``v_h``, shape ``(n_triangles, 3, 3)``."""
        return element_velocities(self.curr.geometry, self.curr.triangles, self.w)[1]

    @cached_property
    def mass_prev(self) -> SparseMatrix:
        return assemble_mass(self.prev)

    @cached_property
    def mass_curr(self) -> SparseMatrix:
        return self.mass_prev if self.curr is self.prev else assemble_mass(self.curr)

    def transport_local(self, D: float) -> np.ndarray:
        """Element matrices of ``D S + b_adv + b_sld`` on the current frame."""
        geom = self.curr.geometry
        loc = D * local_stiffness(geom)
        if self.moving:
            tri = self.curr.triangles
            loc = loc + local_advection(geom, tri, self.w)
            if self.streamline:
                loc = loc + local_streamline(geom, tri, self.w, D * self.g_h)
        return loc

    def system_matrix(self, D: float | None = None) -> SparseMatrix:
        """``M(curr) + tau (D S + A_adv + A_sld)``."""
        D = self.D if D is None else D
        geom = self.curr.geometry
        loc = local_mass(geom) + self.tau * self.transport_local(D)
        return pattern_for(self.curr).assemble(loc)


def esfem_step(
    ctx: StepContext,
    u_prev: np.ndarray,
    opts: SolverOptions = SolverOptions(),
    system: SparseMatrix | None = None,
) -> np.ndarray:
    """Advance ``u_prev`` (on ``ctx.prev``) to the current frame.

    Solves ``(M + tau D S + tau A_adv + tau A_sld) u = M_prev u_prev``.
    ``system`` may carry a precomputed left-hand side (static meshes).
    """
    u_prev = np.asarray(u_prev, dtype=np.float64)
    if u_prev.shape != (ctx.prev.n_vertices,):
        raise ValueError(f"field has shape {u_prev.shape}, expected ({ctx.prev.n_vertices},)")
    K = ctx.system_matrix() if system is None else system
    rhs = ctx.mass_prev @ u_prev
    try:
        u, _ = bicgstab(K, rhs, u_prev, opts)
    except SolverError as exc:
        raise StepError(f"step {ctx.index}: {exc}", ctx.index, exc.residual) from exc
    return u


def discrete_mass(mesh: SurfaceMesh, u: np.ndarray) -> float:
    """``1^T M u``, the integral of the P1 field over the frame."""
    return float(local_mass(mesh.geometry).sum(axis=2).ravel() @ np.asarray(u)[mesh.triangles].ravel())


@dataclass
class Trajectory:
    times: np.ndarray
    fields: list[np.ndarray]
    meshes: list[SurfaceMesh]


def step_times(t_start: float, dt: float, t_end: float) -> np.ndarray:
    """Step endpoints ``t_start + n dt``; the final step may be shortened to hit ``t_end``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n = int(np.floor((t_end - t_start) / dt + 1e-9))
    times = t_start + dt * np.arange(n + 1)
    if t_end - times[-1] > 1e-9 * dt:
        times = np.append(times, t_end)
    return times


def step_sizes(times: np.ndarray, dt: float) -> np.ndarray:
    """Step lengths with round-off snapped back to ``dt``.

    Keeps ``tau`` bit-identical across regular steps so cached matrices stay valid.
    """
    taus = np.diff(times)
    regular = np.abs(taus - dt) <= 1e-9 * dt
    taus[regular] = dt
    return taus


class StepCache:
    """Reuses the system matrix while consecutive steps are identical.

    Identical means a static mesh, unchanged ``tau`` and coefficient; then the
    left-hand side does not change from step to step.
    """

    def __init__(self):
        self._key = None
        self._verts = None
        self._K = None

    def system(self, ctx: StepContext, D: float | None = None) -> SparseMatrix:
        D = ctx.D if D is None else D
        if ctx.moving:
            self._key = None
            return ctx.system_matrix(D)
        key = (ctx.tau, D, ctx.streamline)
        if self._key != key or not np.array_equal(ctx.curr.vertices, self._verts):
            self._K = ctx.system_matrix(D)
            self._key = key
            self._verts = ctx.curr.vertices
        return self._K


def run_diffusion(
    seq: MeshSequence,
    u0: np.ndarray,
    D: float,
    dt: float,
    t_end: float | None = None,
    t_start: float | None = None,
    streamline: bool = True,
    opts: SolverOptions = SolverOptions(),
    callback=None,
    keep: bool = True,
) -> Trajectory:
    """Advection-diffusion on an evolving surface with step ``dt``.

    Frames at every step endpoint come from linear interpolation of the
    sequence, so ``w_h`` is constant within each frame interval.
    ``callback(n, t, mesh, u)`` is invoked after the initial state and every
    step. With ``keep=False`` only the initial and final states are stored.
    """
    if not D >= 0:
        raise ValueError("D must be non-negative")
    t_start = seq.t_start if t_start is None else t_start
    t_end = seq.t_end if t_end is None else t_end
    if t_end > seq.t_end + 1e-9 * max(1.0, abs(seq.t_end)) or t_start < seq.t_start:
        raise ValueError(f"[{t_start}, {t_end}] not covered by sequence [{seq.t_start}, {seq.t_end}]")
    times = step_times(t_start, dt, t_end)
    mesh = seq.interpolate(times[0])
    u = np.array(u0, dtype=np.float64)
    if u.shape != (mesh.n_vertices,):
        raise ValueError(f"initial field has shape {u.shape}, expected ({mesh.n_vertices},)")
    out = Trajectory(times=times, fields=[u.copy()], meshes=[mesh])
    if callback is not None:
        callback(0, times[0], mesh, u)
    cache = StepCache()
    taus = step_sizes(times, dt)
    for n in range(1, len(times)):
        curr = seq.interpolate(times[n])
        ctx = StepContext.between(mesh, curr, taus[n - 1], D, streamline=streamline, index=n)
        u = esfem_step(ctx, u, opts, cache.system(ctx))
        mesh = curr
        if keep or n == len(times) - 1:
            out.fields.append(u.copy())
            out.meshes.append(mesh)
        if callback is not None:
            callback(n, times[n], mesh, u)
    if not keep:
        out.times = times[[0, -1]]
    return out
