"""SGP allocation: choose transfer proportions that maximize the SGP's own utility."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .model import AllocationVector, ContractMenu, SgpTypeModel, stack


def project_capped_box(v: np.ndarray, weights: np.ndarray, cap: float,
                       iters: int = 200) -> np.ndarray:
    """Euclidean projection onto {0 <= x <= 1, weights . x <= cap}.

    ``weights`` must be nonnegative. The multiplier of the linear constraint
    is found by bisection.
    """
    x = np.clip(v, 0.0, 1.0)
    if np.dot(weights, x) <= cap:
        return x
    pos = weights > 0
    lo, hi = 0.0, float(np.max(v[pos] / weights[pos])) + 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.dot(weights, np.clip(v - mid * weights, 0.0, 1.0)) > cap:
            lo = mid
        else:
            hi = mid
    return np.clip(v - hi * weights, 0.0, 1.0)


def _closed_form(phi, rho, xi, zeta, cap) -> float:
    if rho <= 0:
        return 0.0
    upper = 1.0 if xi <= 0 else min(1.0, cap / xi)
    if xi <= 0:
        return upper
    return float(np.clip(phi / (zeta * xi) - 1.0 / rho, 0.0, upper))


def solve_allocation(phi: float, rho: np.ndarray, xi: np.ndarray, zeta: float, cap: float,
                     tol: float = 1e-8, max_iter: int = 20000) -> AllocationVector:
    """Maximize phi*ln(1 + rho.pi) - zeta*xi.pi over the capped unit box.

    Projected gradient ascent with Barzilai-Borwein steps and an Armijo
    backtracking safeguard. Stops once the projected-gradient residual is
    below ``tol``.
    """
    rho = np.asarray(rho, dtype=float)
    xi = np.asarray(xi, dtype=float)
    n = rho.size
    if n == 1:
        p = _closed_form(phi, rho[0], xi[0], zeta, cap)
        return AllocationVector(np.array([p]), 0.0, 0, {"method": "closed_form"})

    def f(pi):
        return phi * np.log1p(rho @ pi) - zeta * (xi @ pi)

    def grad(pi):
        return phi * rho / (1.0 + rho @ pi) - zeta * xi

    def proj(v):
        return project_capped_box(v, xi, cap)

    pi = proj(np.full(n, 0.5))
    g = grad(pi)
    fx = f(pi)
    step = 1.0 / max(1.0, float(np.max(np.abs(g))))
    resid = float(np.max(np.abs(pi - proj(pi + g))))
    it = 0
    while resid > tol and it < max_iter:
        it += 1
        t = step
        while True:
            cand = proj(pi + t * g)
            fc = f(cand)
            if fc >= fx + 1e-4 * g @ (cand - pi) or t < 1e-20:
                break
            t *= 0.5
        s = cand - pi
        g_new = grad(cand)
        y = g_new - g
        sy = s @ y
        # ascent on a concave function: s.y <= 0 on curved directions
        step = float(-(s @ s) / sy) if sy < -1e-300 else 1e3 * max(t, 1e-12)
        step = min(max(step, 1e-12), 1e12)
        pi, g, fx = cand, g_new, fc
        resid = float(np.max(np.abs(pi - proj(pi + g))))
        if not np.any(s):
            break
    return AllocationVector(pi, resid, it, {"method": "projected_gradient"})


def solve_p1(menus: Sequence[ContractMenu], phi: int, model: SgpTypeModel,
             tol: float = 1e-8) -> AllocationVector:
    """SGP of type ``phi`` picks proportions given the CSs' bundles for that type."""
    rho, xi = stack(menus)
    k = phi - model.phi_min
    return solve_allocation(phi, rho[:, k], xi[:, k], model.zeta, float(model.capacity(phi)), tol)
