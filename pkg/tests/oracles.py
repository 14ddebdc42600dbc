"""Reference implementations used only by the tests.

Each one is written independently of the package: plain Python loops,
textbook formulas and quadrature instead of closed forms, so agreement
is evidence rather than tautology.
"""

from __future__ import annotations

import math

import numpy as np


def gauss_solve(A, b):
    """Dense Gaussian elimination with partial pivoting."""
    a = [list(map(float, row)) for row in np.asarray(A)]
    x = list(map(float, np.asarray(b)))
    n = len(a)
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(a[r][col]))
        if a[piv][col] == 0.0:
            raise ZeroDivisionError("singular matrix")
        a[col], a[piv] = a[piv], a[col]
        x[col], x[piv] = x[piv], x[col]
        for r in range(col + 1, n):
            f = a[r][col] / a[col][col]
            if f:
                row_r, row_c = a[r], a[col]
                for c in range(col, n):
                    row_r[c] -= f * row_c[c]
                x[r] -= f * x[col]
    out = [0.0] * n
    for r in range(n - 1, -1, -1):
        s = x[r] - sum(a[r][c] * out[c] for c in range(r + 1, n))
        out[r] = s / a[r][r]
    return np.array(out)


def _plane_frame(p0, p1, p2):
    """Orthonormal in-plane basis (e1, e2), unit normal, and 2-d vertex coordinates."""
    e1 = (p1 - p0) / np.linalg.norm(p1 - p0)
    n = np.cross(p1 - p0, p2 - p0)
    n /= np.linalg.norm(n)
    e2 = np.cross(n, e1)
    xy = [np.array([(p - p0) @ e1, (p - p0) @ e2]) for p in (p0, p1, p2)]
    return e1, e2, n, xy


def _flat_gradients(xy):
    """Gradients of the three hat functions of a 2-d triangle (textbook inverse-Jacobian form)."""
    J = np.array([[xy[1][0] - xy[0][0], xy[2][0] - xy[0][0]],
                  [xy[1][1] - xy[0][1], xy[2][1] - xy[0][1]]])
    Jinv_T = np.linalg.inv(J).T
    ref = [np.array([-1.0, -1.0]), np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    return [Jinv_T @ g for g in ref], abs(np.linalg.det(J)) / 2.0


# edge-midpoint rule: exact for polynomials of degree <= 2 on a triangle
_MIDPOINTS = [(0.5, 0.5, 0.0), (0.0, 0.5, 0.5), (0.5, 0.0, 0.5)]


def _element_data(vertices, tri):
    p = [np.asarray(vertices[i], dtype=float) for i in tri]
    e1, e2, n, xy = _plane_frame(*p)
    g2, area = _flat_gradients(xy)
    grads = [g[0] * e1 + g[1] * e2 for g in g2]
    return grads, area, n


def reference_mass(vertices, triangles):
    n = len(vertices)
    M = np.zeros((n, n))
    for tri in triangles:
        _, area, _ = _element_data(vertices, tri)
        for lam in _MIDPOINTS:
            for a in range(3):
                for b in range(3):
                    M[tri[a], tri[b]] += area / 3.0 * lam[a] * lam[b]
    return M


def reference_stiffness(vertices, triangles):
    n = len(vertices)
    S = np.zeros((n, n))
    for tri in triangles:
        grads, area, _ = _element_data(vertices, tri)
        for a in range(3):
            for b in range(3):
                S[tri[a], tri[b]] += area * grads[a] @ grads[b]
    return S


def reference_advection(vertices, triangles, w):
    """``A[j, m] = int chi_m (w - (w.nu) nu) . grad chi_j`` by the edge-midpoint rule."""
    n = len(vertices)
    A = np.zeros((n, n))
    w = np.asarray(w, dtype=float)
    for tri in triangles:
        grads, area, nu = _element_data(vertices, tri)
        for lam in _MIDPOINTS:
            wq = sum(lam[a] * w[tri[a]] for a in range(3))
            tang = wq - (wq @ nu) * nu
            for j in range(3):
                for m in range(3):
                    A[tri[j], tri[m]] += area / 3.0 * lam[m] * (tang @ grads[j])
    return A


def reference_streamline(vertices, triangles, w, coeff):
    """``A[j, m] = coeff int (w . grad chi_j)(w . grad chi_m)`` by the edge-midpoint rule."""
    n = len(vertices)
    A = np.zeros((n, n))
    w = np.asarray(w, dtype=float)
    for tri in triangles:
        grads, area, _ = _element_data(vertices, tri)
        for lam in _MIDPOINTS:
            wq = sum(lam[a] * w[tri[a]] for a in range(3))
            for j in range(3):
                for m in range(3):
                    A[tri[j], tri[m]] += coeff * area / 3.0 * (wq @ grads[j]) * (wq @ grads[m])
    return A


def torus_mesh(n_major=8, n_minor=6, R=2.0, r=0.5):
    """Structured torus: V = n_major n_minor, E = 3V, F = 2V, so V - E + F = 0."""
    verts = []
    for i in range(n_major):
        phi = 2 * math.pi * i / n_major
        for j in range(n_minor):
            th = 2 * math.pi * j / n_minor
            verts.append(((R + r * math.cos(th)) * math.cos(phi),
                          (R + r * math.cos(th)) * math.sin(phi),
                          r * math.sin(th)))
    tris = []
    for i in range(n_major):
        for j in range(n_minor):
            a = i * n_minor + j
            b = ((i + 1) % n_major) * n_minor + j
            c = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
            d = i * n_minor + (j + 1) % n_minor
            tris += [(a, b, c), (a, c, d)]
    return np.array(verts), np.array(tris)


def cap_area_fraction(chord_radius, sphere_radius=1.0):
    """Fraction of a sphere's area inside a ball of the given radius centred on the sphere.

    The ball meets the sphere on a cap of half-angle theta with chord
    ``2 R sin(theta / 2) = r``; the cap holds ``(1 - cos theta) / 2`` of the area.
    """
    theta = 2.0 * math.asin(chord_radius / (2.0 * sphere_radius))
    return (1.0 - math.cos(theta)) / 2.0


def explicit_rds(M, S, u, w, params, t_end, dt):
    """Forward Euler on ``M u' = -D_u S u + M f``, ``M w' = -D_w S w + M g``."""
    Minv = np.linalg.inv(M)
    Lu = -params.D_u * Minv @ S
    Lw = -params.D_w * Minv @ S
    g_, a, b = params.gamma, params.a, params.b
    u, w = u.copy(), w.copy()
    for _ in range(int(round(t_end / dt))):
        u2w = u * u * w
        du = Lu @ u + g_ * (a - u + u2w)
        dw = Lw @ w + g_ * (b - u2w)
        u, w = u + dt * du, w + dt * dw
    return u, w
