"""Brute-force references for the market solvers, for tiny instances only."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import ContractMenu, MarketConfig, SgpTypeModel, _pi_array, stack


def p1_grid_oracle(phi: float, rho: np.ndarray, xi: np.ndarray, zeta: float, cap: float,
                   step: float = 1e-4) -> tuple[np.ndarray, float]:
    """Grid search with spacing ``step`` over all coordinates but the last (I <= 3).

    The last coordinate is maximized exactly on its segment, so the search is a
    grid in I-1 dimensions. Returns ``(pi, utility)``.
    """
    rho = np.asarray(rho, dtype=float)
    xi = np.asarray(xi, dtype=float)
    n = rho.size
    if not 1 <= n <= 3:
        raise ValueError("grid oracle supports 1 to 3 CSs")
    grid = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)

    def value(r, x):
        return phi * np.log1p(r) - zeta * x

    if n == 1:
        pts = grid[grid * xi[0] <= cap + 1e-12]
        vals = value(pts * rho[0], pts * xi[0])
        k = int(np.argmax(vals))
        return np.array([pts[k]]), float(vals[k])

    best_val, best_pi = -np.inf, None
    outer = [grid] * (n - 2)
    for head in itertools.product(*outer):
        head = np.array(head)
        r0 = float(head @ rho[:n - 2]) if head.size else 0.0
        x0 = float(head @ xi[:n - 2]) if head.size else 0.0
        br = r0 + grid * rho[n - 2]
        bx = x0 + grid * xi[n - 2]
        t, ok = _line_max_batch(phi, br, bx, rho[-1], xi[-1], zeta, cap)
        vals = np.where(ok, value(br + t * rho[-1], bx + t * xi[-1]), -np.inf)
        k = int(np.argmax(vals))
        if vals[k] > best_val:
            best_val = float(vals[k])
            best_pi = np.concatenate([head, [grid[k], t[k]]])
    return best_pi, best_val


@dataclass
class GridBestResponse:
    menu: ContractMenu | None
    utility: float
    n_feasible: int

    @property
    def found(self) -> bool:
        return self.menu is not None


def _bundle_feasible(R, X, rho_own, model: SgpTypeModel, include_upward: bool, tol=1e-9):
    """Feasibility of candidate aggregates; arrays have types on the last axis."""
    phis = model.types.astype(float)
    ok = np.all(X <= model.capacity() + tol, axis=-1)
    ok &= phis[0] * np.log1p(R[..., 0]) - model.zeta * X[..., 0] >= -tol
    if phis.size > 1:
        dR = np.diff(R, axis=-1)
        dX = np.diff(X, axis=-1)
        ok &= np.all(phis[1:] * dR - (1.0 + R[..., 1:]) * model.zeta * dX >= -tol, axis=-1)
        ok &= np.all(np.diff(rho_own, axis=-1) >= -tol, axis=-1)
        if include_upward:
            up = model.zeta * dX - (phis[1:] - 1.0) * np.diff(np.log1p(R), axis=-1)
            ok &= np.all(up >= -tol, axis=-1)
    return ok


def _payment_ceiling(model: SgpTypeModel, xi_hi: np.ndarray, pi_i: float,
                     x_other=0.0, r_other=0.0) -> float:
    """Generous cap on one CS's payments: 1.5x the cheapest IR/local-IC chain
    with every type requesting ``xi_hi`` on top of the others' aggregates."""
    phis = model.types.astype(float)
    X = np.maximum.accumulate(x_other + pi_i * xi_hi)
    R = [np.expm1(model.zeta * X[0] / phis[0])]
    for k in range(1, phis.size):
        c = model.zeta * (X[k] - X[k - 1])
        R.append((phis[k] * R[-1] + c) / max(phis[k] - c, 1e-3))
    need = max(R[-1] - float(np.min(r_other)), 1e-3)
    return 1.5 * need / max(pi_i, 1e-12) + 1e-3


def best_response_grid_oracle(i: int, menus: Sequence[ContractMenu], pi_hat,
                              model: SgpTypeModel, config: MarketConfig, n: int = 50,
                              rho_max: float | None = None,
                              include_upward: bool = False) -> GridBestResponse:
    """Exhaustive search of CS ``i``'s menu over an ``n``-point grid per variable (<= 2 types).

    Energy grids run from 0 to each type's own upper bound; payment grids
    from 0 to ``rho_max``. Proportions and the other menus stay fixed.
    """
    if model.n_types > 2:
        raise ValueError("grid oracle supports at most 2 types")
    pi = _pi_array(pi_hat)
    rho_all, xi_all = stack(menus)
    mask = np.arange(len(menus)) != i
    xo = pi[mask] @ xi_all[mask]
    ro = pi[mask] @ rho_all[mask]
    if pi[i] <= 0:
        return GridBestResponse(menus[i].copy(), 0.0, 1)
    ub = np.maximum((model.capacity() - xo) / pi[i], 0.0)
    if config.demand_cap:
        ub = np.minimum(ub, config.demands[i])
    if rho_max is None:
        rho_max = _payment_ceiling(model, ub, pi[i], xo, ro)
    T = model.n_types
    xi_axes = [np.linspace(0.0, u, n) for u in ub]
    rho_axis = np.linspace(0.0, rho_max, n)
    grids = np.meshgrid(*([rho_axis] * T + xi_axes), indexing="ij")
    rho_c = np.stack(grids[:T], axis=-1).reshape(-1, T)
    xi_c = np.stack(grids[T:], axis=-1).reshape(-1, T)
    R = ro + pi[i] * rho_c
    X = xo + pi[i] * xi_c
    ok = _bundle_feasible(R, X, rho_c, model, include_upward)
    if not np.any(ok):
        return GridBestResponse(None, -np.inf, 0)
    util = pi[i] * ((config.varrho[i] * xi_c - rho_c) @ model.p)
    util = np.where(ok, util, -np.inf)
    k = int(np.argmax(util))
    menu = ContractMenu(menus[i].cs_id, rho_c[k].copy(), xi_c[k].copy())
    return GridBestResponse(menu, float(util[k]), int(ok.sum()))


def _p1_two(phi, rho_t, xi_t, zeta, cap, step=1e-3):
    """Vectorized P1 for up to two CSs: grid on the first share, exact on the second.

    ``rho_t``/``xi_t`` have shape (B, I); returns (B, I) shares.
    """
    B, I = rho_t.shape
    if I == 1:
        t, ok = _line_max_batch(phi, np.zeros(B), np.zeros(B), rho_t[:, 0], xi_t[:, 0], zeta, cap)
        return t[:, None]
    grid = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
    br = grid[None, :] * rho_t[:, :1]
    bx = grid[None, :] * xi_t[:, :1]
    t, ok = _line_max_batch(phi, br, bx, rho_t[:, 1:2], xi_t[:, 1:2], zeta, cap)
    vals = np.where(ok, phi * np.log1p(br + t * rho_t[:, 1:2]) - zeta * (bx + t * xi_t[:, 1:2]),
                    -np.inf)
    k = np.argmax(vals, axis=1)
    rows = np.arange(B)
    return np.stack([grid[k], t[rows, k]], axis=1)


def _line_max_batch(phi, base_r, base_x, rho, xi, zeta, cap):
    """Exact maximizer over one share of phi*ln(1+base_r+rho*t) - zeta*(base_x+xi*t)."""
    rho = np.broadcast_to(rho, np.broadcast(base_r, rho).shape)
    xi = np.broadcast_to(xi, rho.shape)
    room = cap - base_x
    safe_xi = np.where(xi > 0, xi, 1.0)
    upper = np.where(xi > 0, np.minimum(1.0, np.maximum(room, 0.0) / safe_xi), 1.0)
    safe_rho = np.where(rho > 0, rho, 1.0)
    interior = np.clip(phi / (zeta * safe_xi) - (1.0 + base_r) / safe_rho, 0.0, upper)
    t = np.where(rho <= 0, 0.0, np.where(xi <= 0, upper, interior))
    return t, room >= 0


@dataclass
class BruteForceEquilibrium:
    status: str                      # "equilibrium", "no_feasible_point" or "not_found"
    menus: list[ContractMenu] = field(default_factory=list)
    pi: np.ndarray | None = None
    utilities: np.ndarray | None = None
    sweeps: int = 0


def brute_force_equilibrium(model: SgpTypeModel, config: MarketConfig, n_grid: int = 8,
                            rho_max: float | None = None, max_sweeps: int = 50,
                            include_upward: bool = False) -> BruteForceEquilibrium:
    """Grid equilibrium with shares re-solved for every deviation (I <= 2, <= 2 types).

    Each CS in turn moves to its best grid menu, evaluated with the SGP's
    shares re-solved at the true type. A full sweep with no move certifies that
    no CS can gain by switching to any grid menu.
    """
    I = config.n_cs
    if I > 2 or model.n_types > 2 or n_grid > 50:
        raise ValueError("brute force supports I <= 2, at most 2 types and 50 grid points")
    T = model.n_types
    if rho_max is None:
        rho_max = _payment_ceiling(model, np.full(T, float(config.demands.max())), 1.0)
    cand_rho, cand_xi = [], []
    for i in range(I):
        xi_hi = model.capacity() if not config.demand_cap else np.minimum(
            model.capacity(), config.demands[i])
        axes = [np.linspace(0.0, rho_max, n_grid)] * T + [np.linspace(0.0, u, n_grid) for u in xi_hi]
        g = np.meshgrid(*axes, indexing="ij")
        r = np.stack(g[:T], axis=-1).reshape(-1, T)
        x = np.stack(g[T:], axis=-1).reshape(-1, T)
        keep = np.all(np.diff(r, axis=1) >= 0, axis=1) if T > 1 else np.ones(len(r), bool)
        cand_rho.append(r[keep])
        cand_xi.append(x[keep])

    k_true = model.true_index
    phi_true = float(model.true_type)
    cap_true = float(model.capacity(model.true_type))

    def evaluate(i, current):
        """Utility and feasibility of every candidate of CS i against the others' current menus."""
        rows = len(cand_rho[i])
        rho = np.zeros((rows, I, T))
        xi = np.zeros((rows, I, T))
        for j in range(I):
            if j == i:
                rho[:, j] = cand_rho[i]
                xi[:, j] = cand_xi[i]
            else:
                rho[:, j] = cand_rho[j][current[j]]
                xi[:, j] = cand_xi[j][current[j]]
        pi = _p1_two(phi_true, rho[:, :, k_true], xi[:, :, k_true], model.zeta, cap_true)
        R = np.einsum("bi,bit->bt", pi, rho)
        X = np.einsum("bi,bit->bt", pi, xi)
        ok = _bundle_feasible(R, X, cand_rho[i], model, include_upward)
        util = pi[:, i] * ((config.varrho[i] * cand_xi[i] - cand_rho[i]) @ model.p)
        return np.where(ok, util, -np.inf), pi

    # start from the cheapest feasible point: zero menus
    current = [int(np.flatnonzero(np.all(cand_rho[i] == 0, axis=1)
                                  & np.all(cand_xi[i] == 0, axis=1))[0]) for i in range(I)]
    any_feasible = False
    for sweep in range(1, max_sweeps + 1):
        moved = False
        for i in range(I):
            util, _ = evaluate(i, current)
            if not np.any(np.isfinite(util)):
                continue
            any_feasible = True
            best = int(np.argmax(util))
            if util[best] > util[current[i]] + 1e-9:
                current[i] = best
                moved = True
        if not any_feasible:
            return BruteForceEquilibrium("no_feasible_point", sweeps=sweep)
        if not moved:
            util, pi = evaluate(0, current)
            pi_eq = pi[current[0]]
            menus = [ContractMenu(config.cs_ids[i], cand_rho[i][current[i]].copy(),
                                  cand_xi[i][current[i]].copy()) for i in range(I)]
            utils = np.array([pi_eq[i] * ((config.varrho[i] * menus[i].xi - menus[i].rho) @ model.p)
                              for i in range(I)])
            return BruteForceEquilibrium("equilibrium", menus, pi_eq, utils, sweep)
    return BruteForceEquilibrium("not_found", sweeps=max_sweeps)
