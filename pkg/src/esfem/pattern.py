"""Activator / depleted-substrate reaction-diffusion on evolving surfaces.

Kinetics::

    f(u, w) = gamma (a - u + u^2 w)
    g(u, w) = gamma (b - u^2 w)

Each backward-Euler step linearises ``f`` and ``g`` about the previous state
and solves the coupled 2x2 block system in one BiCGStab call. Reaction terms
are integrated with the nodal interpolant of the kinetics, so they enter the
system as the mass matrix times diagonal matrices of nodal partials.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .core import StepContext, StepError, discrete_mass, local_mass, pattern_for, step_sizes, step_times
from .geometry import MeshSequence, SurfaceMesh
from .sparse import SolverError, SolverOptions, bicgstab

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SchnakenbergParams:
    D_u: float = 1.0
    D_w: float = 10.0
    gamma: float = 200.0
    a: float = 0.1
    b: float = 0.9

    def __post_init__(self):
        for name in ("D_u", "D_w", "gamma", "a", "b"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.D_w <= self.D_u:
            logger.warning("D_w <= D_u: no diffusion-driven instability expected")

    def kinetics(self, u, w):
        u2w = u * u * w
        return self.gamma * (self.a - u + u2w), self.gamma * (self.b - u2w)

    def jacobian(self, u, w):
        """``(f_u, f_w, g_u, g_w)`` evaluated nodewise."""
        g = self.gamma
        return g * (-1.0 + 2.0 * u * w), g * u * u, -2.0 * g * u * w, -g * u * u


def steady_state(params: SchnakenbergParams) -> tuple[float, float]:
    """Homogeneous steady state ``(a + b, b / (a + b)**2)``."""
    s = params.a + params.b
    if s == 0:
        raise ValueError("a + b must be non-zero")
    return s, params.b / (s * s)


def perturbed_initial(
    mesh: SurfaceMesh,
    params: SchnakenbergParams,
    amplitude: float = 0.1,
    seed: int | None = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Steady state times ``1 + amplitude * xi`` with ``xi`` i.i.d. uniform on [-1, 1]."""
    if not 0 <= amplitude < 1:
        raise ValueError("amplitude must lie in [0, 1)")
    u_s, w_s = steady_state(params)
    rng = np.random.default_rng(seed)
    xi = rng.uniform(-1.0, 1.0, mesh.n_vertices)
    eta = rng.uniform(-1.0, 1.0, mesh.n_vertices)
    return u_s * (1.0 + amplitude * xi), w_s * (1.0 + amplitude * eta)


@dataclass
class RdsConfig:
    params: SchnakenbergParams = field(default_factory=SchnakenbergParams)
    dt: float = 1e-4
    swap_interval: float = 1.0
    t_end: float = 70.0
    amplitude: float = 0.1
    seed: int = 0
    snapshot_every: float = 10.0
    streamline: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.swap_interval < self.dt:
            raise ValueError("swap interval must be at least dt")
        if not self.t_end > 0:
            raise ValueError("end time must be positive")
        if not self.snapshot_every > 0:
            raise ValueError("snapshot cadence must be positive")


class _BlockAssembler:
    """Assembles the 2J x 2J system directly into one precomputed CSR pattern."""

    def __init__(self, mesh: SurfaceMesh):
        pat = pattern_for(mesh)
        n = pat.n
        self.pat = pat
        self.n = n
        # block (r, c) occupies the mesh pattern shifted by (r n, c n)
        tmpl = sp.csr_matrix((np.arange(1, pat.nnz + 1, dtype=np.float64), pat.cols, pat.indptr), shape=(n, n))
        # template data holds (source position + 1) so it survives bmat
        big = sp.bmat([[tmpl, tmpl], [tmpl, tmpl]], format="csr")
        big.sort_indices()
        self.indptr, self.indices = big.indptr, big.indices
        # position of each block entry inside the big data array
        rows = np.repeat(np.arange(2 * n), np.diff(big.indptr))
        src = big.data.astype(np.int64) - 1
        self.pos = {}
        for r in (0, 1):
            for c in (0, 1):
                mask = ((rows >= r * n) & (rows < (r + 1) * n)
                        & (big.indices >= c * n) & (big.indices < (c + 1) * n))
                order = np.empty(pat.nnz, dtype=np.int64)
                order[src[mask]] = np.flatnonzero(mask)
                self.pos[r, c] = order
        self.nnz = big.nnz
        self.diag_pos = pat.diagonal_positions

    def assemble(self, blocks: dict[tuple[int, int], np.ndarray]) -> sp.csr_matrix:
        data = np.zeros(self.nnz)
        for key, vals in blocks.items():
            data[self.pos[key]] = vals
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(2 * self.n, 2 * self.n))


def _weighted_mass(pat, mass_data: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Data array of ``M diag(weights)`` (column scaling) on the mesh pattern."""
    return mass_data * weights[pat.cols]


def rds_step(
    ctx: StepContext,
    params: SchnakenbergParams,
    u_prev: np.ndarray,
    w_prev: np.ndarray,
    opts: SolverOptions = SolverOptions(),
    cache: dict | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One linearised backward-Euler step of the coupled system.

    ``ctx`` supplies frames, ``tau`` and the mesh velocity; its ``D`` is
    ignored in favour of ``params.D_u`` / ``params.D_w``. ``cache`` (a dict
    owned by the caller) keeps transport matrices between steps on a static
    mesh.
    """
    n = ctx.curr.n_vertices
    pat = pattern_for(ctx.curr)
    tau = ctx.tau

    key = (id(ctx.curr), tau, ctx.moving)
    if cache is not None and cache.get("key") == key and not ctx.moving:
        mass_data, base_u, base_w = cache["mats"]
    else:
        mass_data = np.bincount(pat.scatter.ravel(), local_mass(ctx.curr.geometry).ravel(), pat.nnz)

        def base(D):
            loc = tau * ctx.transport_local(D)
            return mass_data + np.bincount(pat.scatter.ravel(), loc.ravel(), pat.nnz)

        base_u, base_w = base(params.D_u), base(params.D_w)
        if cache is not None:
            cache["key"] = key
            cache["mats"] = (mass_data, base_u, base_w)
            cache["asm"] = cache.get("asm") or _BlockAssembler(ctx.curr)

    asm = cache["asm"] if cache is not None else _BlockAssembler(ctx.curr)

    f, g = params.kinetics(u_prev, w_prev)
    f_u, f_w, g_u, g_w = params.jacobian(u_prev, w_prev)
    K = asm.assemble(
        {
            (0, 0): base_u - tau * _weighted_mass(pat, mass_data, f_u),
            (0, 1): -tau * _weighted_mass(pat, mass_data, f_w),
            (1, 0): -tau * _weighted_mass(pat, mass_data, g_u),
            (1, 1): base_w - tau * _weighted_mass(pat, mass_data, g_w),
        }
    )
    M = pat.matrix(mass_data)
    M_prev = M if ctx.prev is ctx.curr else ctx.mass_prev
    rhs_u = M_prev @ u_prev + tau * (M @ (f - f_u * u_prev - f_w * w_prev))
    rhs_w = M_prev @ w_prev + tau * (M @ (g - g_u * u_prev - g_w * w_prev))
    try:
        x, _ = bicgstab(K, np.concatenate([rhs_u, rhs_w]), np.concatenate([u_prev, w_prev]), opts)
    except SolverError as exc:
        raise StepError(f"step {ctx.index}: {exc}", ctx.index, exc.residual) from exc
    return x[:n], x[n:]


@dataclass
class Snapshot:
    time: float
    mesh: SurfaceMesh
    u: np.ndarray
    w: np.ndarray

    def stats(self) -> dict:
        return {
            "time": self.time,
            "u_mean": float(self.u.mean()),
            "u_std": float(self.u.std()),
            "u_min": float(self.u.min()),
            "u_max": float(self.u.max()),
            "w_mean": float(self.w.mean()),
            "w_std": float(self.w.std()),
            "w_min": float(self.w.min()),
            "w_max": float(self.w.max()),
            "mass_u": discrete_mass(self.mesh, self.u),
            "mass_w": discrete_mass(self.mesh, self.w),
            "positive": bool(self.u.min() > 0 and self.w.min() > 0),
            "finite": bool(np.isfinite(self.u).all() and np.isfinite(self.w).all()),
        }


def mesh_supplier(source: MeshSequence | SurfaceMesh, swap_interval: float, t_end: float) -> MeshSequence:
    """Sequence in model time: frame ``k`` placed at ``k * swap_interval``.

    A single mesh (or one-frame sequence) becomes a static surface on
    ``[0, t_end]``. Physical frame times and length units are ignored.
    """
    if isinstance(source, SurfaceMesh):
        frames = [source]
    else:
        frames = list(source.frames)
    if len(frames) == 1:
        f = frames[0]
        return MeshSequence(
            [f.with_vertices(f.vertices, 0.0), f.with_vertices(f.vertices, t_end)], validate=False
        )
    needed = int(math.ceil(t_end / swap_interval - 1e-9)) + 1
    if len(frames) < needed:
        raise ValueError(
            f"{len(frames)} frames cover {(len(frames) - 1) * swap_interval:g} time units, "
            f"run needs {t_end:g}"
        )
    frames = frames[:needed]
    return MeshSequence(
        [f.with_vertices(f.vertices, k * swap_interval) for k, f in enumerate(frames)], validate=False
    )


def run_rds(
    source: MeshSequence | SurfaceMesh,
    cfg: RdsConfig,
    opts: SolverOptions = SolverOptions(),
    initial: tuple[np.ndarray, np.ndarray] | None = None,
    on_snapshot=None,
) -> list[Snapshot]:
    """Time loop with step ``cfg.dt``; snapshots at multiples of ``cfg.snapshot_every``.

    ``on_snapshot(snapshot)`` is called as each snapshot is taken.
    """
    seq = mesh_supplier(source, cfg.swap_interval, cfg.t_end)
    times = step_times(0.0, cfg.dt, cfg.t_end)
    mesh = seq.interpolate(0.0)
    if initial is None:
        u, w = perturbed_initial(mesh, cfg.params, cfg.amplitude, cfg.seed)
    else:
        u, w = (np.array(a, dtype=np.float64) for a in initial)
    n_snaps = int(cfg.t_end / cfg.snapshot_every + 1e-9) + 1
    snap_idx = {int(round(k * cfg.snapshot_every / cfg.dt)) for k in range(n_snaps)}
    snap_idx.add(len(times) - 1)
    snaps = []

    def take(n):
        s = Snapshot(float(times[n]), mesh, u.copy(), w.copy())
        snaps.append(s)
        st = s.stats()
        if not st["finite"]:
            raise StepError(f"non-finite values at t={times[n]:g}", n)
        if not st["positive"]:
            logger.warning("non-positive values at t=%g", times[n])
        if on_snapshot is not None:
            on_snapshot(s)

    take(0)
    cache: dict = {}
    taus = step_sizes(times, cfg.dt)
    for n in range(1, len(times)):
        curr = seq.interpolate(times[n])
        tau = taus[n - 1]
        if not np.array_equal(curr.vertices, mesh.vertices):
            ctx = StepContext.between(mesh, curr, tau, 0.0, streamline=cfg.streamline, index=n)
        else:
            # identical positions: reuse the frame object so cached matrices stay valid
            curr = mesh
            ctx = StepContext(mesh, mesh, tau, 0.0, np.zeros_like(mesh.vertices),
                              streamline=cfg.streamline, index=n)
        u, w = rds_step(ctx, cfg.params, u, w, opts, cache)
        mesh = curr
        if n in snap_idx:
            take(n)
    return snaps


def config_dict(cfg: RdsConfig) -> dict:
    return asdict(cfg)
