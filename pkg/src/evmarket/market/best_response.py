"""Best response of one CS against fixed proportions and rival menus.

The CS maximizes its expected profit over its own menu subject to capacity per
type, IR at the lowest type, local IC between consecutive types, payment
monotonicity and nonnegativity. Payments enter the objective with a negative
sign and every payment constraint is a lower bound that is increasing in the
previous type's payment, so for fixed requested energy the cheapest feasible
payment schedule is obtained by a forward recursion. The remaining problem is
a box-constrained ascent over requested energy, solved by projected gradient
ascent from several seeded starts.

The reduced system only bounds each type's bundle from below relative to the
next lower type. With a finite type grid that leaves the adjacent upward IC
(type phi-1 preferring the bundle of phi) unchecked. It is pursued as a
refinement: an augmented Lagrangian over the penalty schedule 10, 100, ...,
1e8 is tried, and its point is kept only if it actually satisfies upward IC.
Upward IC depends on the other CSs' payments, so one CS cannot always reach
it; feasibility is judged on the reduced system alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .constraints import max_violation, reduced_residuals, upward_residuals
from .model import ContractMenu, MarketConfig, SgpTypeModel, _pi_array, stack

N_RESTARTS = 5
FEAS_TOL = 1e-8
PENALTY_SCHEDULE = tuple(10.0 ** k for k in range(1, 9))


@dataclass
class BestResponse:
    menu: ContractMenu
    utility: float
    max_violation: float
    feasible: bool
    restarts: int = N_RESTARTS
    upward_violation: float = 0.0


class _Chain:
    """Minimal payment schedule and its gradient for one CS."""

    def __init__(self, pi_i, x_other, r_other, phis, probs, varrho, zeta):
        self.pi = pi_i
        self.xo = x_other
        self.ro = r_other
        self.phis = phis
        self.p = probs
        self.varrho = varrho
        self.zeta = zeta

    def forward(self, xi):
        pi, zeta, phis = self.pi, self.zeta, self.phis
        T = xi.size
        X = self.xo + pi * xi
        R = np.empty(T)
        branch = np.zeros(T, dtype=np.int8)  # 0: IC/IR bound, 1: monotone, 2: nonneg
        d = np.ones(T)
        ir = np.expm1(zeta * X[0] / phis[0])
        if ir >= self.ro[0]:
            R[0], branch[0] = ir, 0
        else:
            R[0], branch[0] = self.ro[0], 2
        for k in range(1, T):
            c = zeta * (X[k] - X[k - 1])
            d[k] = phis[k] - c
            if d[k] <= 0:
                return X, None, branch, d
            b = (phis[k] * R[k - 1] + c) / d[k]
            m = self.ro[k] + (R[k - 1] - self.ro[k - 1])
            n = self.ro[k]
            if b >= m and b >= n:
                R[k], branch[k] = b, 0
            elif m >= n:
                R[k], branch[k] = m, 1
            else:
                R[k], branch[k] = n, 2
        return X, R, branch, d

    def value(self, xi):
        _, R, _, _ = self.forward(xi)
        if R is None or not np.all(np.isfinite(R)):
            return -np.inf
        return float(np.dot(self.p, self.varrho * self.pi * xi - (R - self.ro)))

    def _backward(self, X, R, branch, d, gR, gX):
        zeta, phis = self.zeta, self.phis
        gR = gR.copy()
        gX = gX.copy()
        for k in range(R.size - 1, 0, -1):
            if branch[k] == 0:
                dbdc = phis[k] * (1.0 + R[k - 1]) / d[k] ** 2
                gX[k] += gR[k] * dbdc * zeta
                gX[k - 1] -= gR[k] * dbdc * zeta
                gR[k - 1] += gR[k] * phis[k] / d[k]
            elif branch[k] == 1:
                gR[k - 1] += gR[k]
        if branch[0] == 0:
            gX[0] += gR[0] * np.exp(zeta * X[0] / phis[0]) * zeta / phis[0]
        return gX * self.pi

    def upward(self, X, R):
        """Adjacent upward IC slack: type phi-1 must not gain from the bundle of phi (<= 0 ok)."""
        lg = np.log1p(R)
        return (self.phis[1:] - 1.0) * np.diff(lg) - self.zeta * np.diff(X)

    def value_and_grad(self, xi, lam=None, mu=0.0):
        """Augmented-Lagrangian objective: profit minus penalties on upward IC."""
        X, R, branch, d = self.forward(xi)
        if R is None or not np.all(np.isfinite(R)):
            return -np.inf, None
        val = float(np.dot(self.p, self.varrho * self.pi * xi - (R - self.ro)))
        gR = -self.p.copy()
        gX = np.zeros(R.size)
        if mu > 0 and R.size > 1:
            v = self.upward(X, R)
            mult = np.maximum(0.0, lam + mu * v)
            val -= float(np.sum(mult ** 2 - lam ** 2) / (2.0 * mu))
            w = self.phis[1:] - 1.0
            gR[1:] -= mult * w / (1.0 + R[1:])
            gR[:-1] += mult * w / (1.0 + R[:-1])
            gX[1:] += mult * self.zeta
            gX[:-1] -= mult * self.zeta
        grad = self.p * self.varrho * self.pi + self._backward(X, R, branch, d, gR, gX)
        return val, grad

    def upward_violation(self, xi) -> float:
        X, R, _, _ = self.forward(xi)
        if R is None or R.size < 2:
            return 0.0 if R is not None else np.inf
        return float(max(0.0, np.max(self.upward(X, R))))

    def payments(self, xi):
        _, R, _, _ = self.forward(xi)
        return np.maximum((R - self.ro) / self.pi, 0.0)


def _ascend(chain: _Chain, x0, ub, lam=None, mu=0.0, max_iter=500, tol=1e-10):
    x = np.clip(x0, 0.0, ub)
    f, g = chain.value_and_grad(x, lam, mu)
    if g is None:
        return x, f
    scale = max(1.0, float(np.max(ub)))
    step = scale / max(1e-12, float(np.max(np.abs(g))))
    for _ in range(max_iter):
        t = step
        while True:
            cand = np.clip(x + t * g, 0.0, ub)
            fc, gc = chain.value_and_grad(cand, lam, mu)
            if gc is not None and fc >= f + 1e-6 * np.dot(g, cand - x):
                break
            t *= 0.5
            if t * np.max(np.abs(g)) < 1e-14 * scale:
                return x, f
        s = cand - x
        y = gc - g
        sy = float(np.dot(s, y))
        x, f, g = cand, fc, gc
        if np.max(np.abs(s)) <= tol * scale:
            break
        step = -float(np.dot(s, s)) / sy if sy < 0 else 4.0 * t
        step = min(max(step, 1e-12 * scale), 1e6 * scale)
    return x, f


def _solve_from(chain: _Chain, x0, ub):
    """Plain ascent, plus an augmented-Lagrangian point if upward IC is violated.

    Returns ``(plain, refined)``; ``refined`` is None when not needed or not reached.
    """
    plain, _ = _ascend(chain, x0, ub)
    if chain.upward_violation(plain) <= FEAS_TOL:
        return plain, None
    x = plain
    lam = np.zeros(ub.size - 1)
    for mu in PENALTY_SCHEDULE:
        x, _ = _ascend(chain, x, ub, lam, mu)
        X, R, _, _ = chain.forward(x)
        if R is None:
            return plain, None
        v = chain.upward(X, R)
        lam = np.maximum(0.0, lam + mu * v)
        if np.max(v) <= 1e-12:
            break
    return plain, (x if chain.upward_violation(x) <= FEAS_TOL else None)


def _feasible_start(chain, x, ub):
    x = np.clip(x, 0.0, ub)
    for _ in range(60):
        if np.isfinite(chain.value(x)):
            return x
        x = 0.5 * x
    return None


def best_response(i: int, menus: Sequence[ContractMenu], pi_hat, model: SgpTypeModel,
                  config: MarketConfig, start: ContractMenu | None = None,
                  seed: int = 0, n_restarts: int = N_RESTARTS) -> BestResponse:
    """Utility-maximizing menu for CS ``i`` with every other menu and ``pi_hat`` fixed."""
    pi = _pi_array(pi_hat)
    start = menus[i] if start is None else start
    rho_all, xi_all = stack(menus)
    if pi[i] <= 0:
        return _finish(i, start.copy(), menus, pi, model, config, n_restarts)

    mask = np.arange(len(menus)) != i
    xo = pi[mask] @ xi_all[mask]
    ro = pi[mask] @ rho_all[mask]
    cap = model.capacity()
    ub = np.maximum((cap - xo) / pi[i], 0.0)
    if config.demand_cap:
        ub = np.minimum(ub, config.demands[i])
    chain = _Chain(pi[i], xo, ro, model.types.astype(float), model.p,
                   float(config.varrho[i]), model.zeta)

    rng = np.random.default_rng(seed)
    starts = [start.xi]
    for _ in range(n_restarts - 1):
        starts.append(start.xi + rng.uniform(-0.5, 0.5, size=ub.size) * ub)
    best_x, best_key = None, None
    for s in starts:
        x0 = _feasible_start(chain, s, ub)
        if x0 is None:
            continue
        for x in _solve_from(chain, x0, ub):
            if x is None:
                continue
            # points meeting upward IC first, then by utility
            key = (chain.upward_violation(x) > FEAS_TOL, -chain.value(x))
            if best_key is None or key < best_key:
                best_x, best_key = x, key
    if best_x is None:
        return _finish(i, start.copy(), menus, pi, model, config, n_restarts)
    menu = ContractMenu(start.cs_id, chain.payments(best_x), best_x.copy())
    return _finish(i, menu, menus, pi, model, config, n_restarts)


def _finish(i, menu, menus, pi, model, config, n_restarts) -> BestResponse:
    trial = list(menus)
    trial[i] = menu
    rho, xi = stack(trial)
    viol = max_violation(reduced_residuals(rho, xi, pi, model))
    up = float(max(0.0, -np.min(upward_residuals(rho, xi, pi, model), initial=0.0)))
    util = float(pi[i] * np.dot(model.p, config.varrho[i] * menu.xi - menu.rho))
    return BestResponse(menu, util, viol, viol <= FEAS_TOL, n_restarts, up)
