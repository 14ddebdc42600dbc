"""Levenberg-Marquardt least squares and the exponential recovery model."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)

# model(params, t) -> (values, jacobian of shape (len(t), len(params)))
Model = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]

COND_LIMIT = 1e12


class FitError(RuntimeError):
    """Fitting failed; ``result`` holds the last iterate when there is one."""

    def __init__(self, message: str, result: "FitResult | None" = None):
        super().__init__(message)
        self.result = result


@dataclass
class FitResult:
    params: np.ndarray
    stderr: np.ndarray
    rss: float
    converged: bool
    degenerate: bool = False
    iterations: int = 0
    message: str = ""
    rss_history: list[float] = field(default_factory=list, repr=False)

    @property
    def A(self) -> float:
        return float(self.params[0])

    @property
    def B(self) -> float:
        return float(self.params[1])

    @property
    def t_half(self) -> float:
        """Half-recovery time of ``A (1 - exp(-t / B))``."""
        return self.B * np.log(2.0)


def recovery_model(params: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``A (1 - exp(-t / B))`` and its partial derivatives in ``(A, B)``."""
    A, B = params
    e = np.exp(-t / B)
    value = A * (1.0 - e)
    jac = np.column_stack([1.0 - e, -A * t * e / B**2])
    return value, jac


def levenberg_marquardt(
    model: Model,
    times: np.ndarray,
    observations: np.ndarray,
    initial: np.ndarray,
    max_iter: int = 200,
    xtol: float = 1e-10,
    lam0: float = 1e-3,
    admissible: Callable[[np.ndarray], bool] | None = None,
) -> FitResult:
    """Unweighted nonlinear least squares with Marquardt's damping schedule.

    Damping starts at ``lam0``, is multiplied by 10 on a rejected step and
    divided by 10 on an accepted one. Iteration stops once the relative
    parameter change drops below ``xtol``. Standard errors are
    ``sqrt(s^2 diag((J^T J)^-1))`` with ``s^2 = rss / (n - p)``. A normal
    matrix with condition number above ``1e12`` marks the fit degenerate
    (some parameter is not identifiable) instead of raising.

    ``admissible(params)`` may reject trial steps, e.g. to keep a time scale
    positive; rejected trials count as failed steps.

    Raises :class:`FitError` if ``max_iter`` is exhausted.
    """
    t = np.asarray(times, dtype=np.float64)
    y = np.asarray(observations, dtype=np.float64)
    p = np.array(initial, dtype=np.float64)
    if t.shape != y.shape or t.ndim != 1:
        raise ValueError("times and observations must be 1-d arrays of equal length")
    if len(y) < len(p):
        raise ValueError(f"need at least {len(p)} observations, got {len(y)}")

    f, J = model(p, t)
    r = y - f
    rss = float(r @ r)
    history = [rss]
    lam = lam0
    converged = False
    message = f"no convergence in {max_iter} iterations"
    it = 0
    for it in range(1, max_iter + 1):
        JtJ = J.T @ J
        g = J.T @ r
        scale = np.diag(JtJ).copy()
        scale[scale == 0] = 1.0
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(JtJ + lam * np.diag(scale), g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = p + step
            if admissible is None or admissible(trial):
                f_t, J_t = model(trial, t)
                r_t = y - f_t
                rss_t = float(r_t @ r_t)
                if np.isfinite(rss_t) and rss_t <= rss:
                    accepted = True
                    break
            lam *= 10.0
        if not accepted:
            converged = True
            message = "no decrease possible; at a local minimum"
            break
        p, f, J, r = trial, f_t, J_t, r_t
        rss = rss_t
        history.append(rss)
        lam = max(lam / 10.0, 1e-15)
        if np.linalg.norm(step) <= xtol * (np.linalg.norm(p) + xtol):
            converged = True
            message = "relative parameter change below tolerance"
            break
        if rss == 0.0:
            converged = True
            message = "exact fit"
            break

    n, k = len(y), len(p)
    JtJ = J.T @ J
    cond = np.linalg.cond(JtJ)
    degenerate = bool(not np.isfinite(cond) or cond > COND_LIMIT)
    if degenerate:
        stderr = np.full(k, np.inf)
        message += "; normal matrix singular, parameters not identifiable"
    else:
        s2 = rss / (n - k) if n > k else np.inf
        stderr = np.sqrt(s2 * np.diag(np.linalg.inv(JtJ)))
    result = FitResult(
        params=p,
        stderr=stderr,
        rss=rss,
        converged=converged,
        degenerate=degenerate,
        iterations=it,
        message=message,
        rss_history=history,
    )
    if not converged:
        raise FitError(message, result)
    return result


def recovery_initial_guess(times: np.ndarray, values: np.ndarray, window: float) -> np.ndarray:
    """``A0`` = last value; ``B0`` = first time above ``A0 (1 - 1/e)``, else ``window / 2``."""
    A0 = float(values[-1])
    above = np.flatnonzero(values >= A0 * (1.0 - np.exp(-1.0)))
    B0 = float(times[above[0]]) if above.size and times[above[0]] > 0 else 0.5 * window
    return np.array([A0, B0])


def fit_recovery(times: np.ndarray, values: np.ndarray, window: float | None = None) -> FitResult:
    """Fit ``A (1 - exp(-t / B))`` to samples with ``t <= window``.

    Constant series (no recovery) cannot determine ``B``; they are returned
    as degenerate without iterating.
    """
    t = np.asarray(times, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    if window is None:
        window = float(t.max())
    sel = t <= window * (1 + 1e-12)
    t, y = t[sel], y[sel]
    if len(t) < 3:
        raise FitError(f"need at least 3 samples inside the fit window, got {len(t)}")
    spread = np.ptp(y)
    if spread <= 1e-12 * max(1.0, float(np.abs(y).max())):
        return FitResult(
            params=np.array([float(y.mean()), np.nan]),
            stderr=np.full(2, np.inf),
            rss=float(((y - y.mean()) ** 2).sum()),
            converged=False,
            degenerate=True,
            message="constant series; recovery time not identifiable",
        )
    p0 = recovery_initial_guess(t, y, window)
    if p0[1] <= 0:
        p0[1] = 0.5 * window
    return levenberg_marquardt(
        recovery_model, t, y, p0, admissible=lambda p: p[1] > 0 and np.isfinite(p).all()
    )
