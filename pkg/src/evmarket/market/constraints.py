"""IR / IC audits, the reduced (local) constraint system, and constraint counting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import ContractMenu, SgpTypeModel, _pi_array, stack

IR_TOL = 1e-8
IC_TOL = 1e-8
MONO_TOL = 1e-10


def _type_utilities(menus, pi_hat, model) -> np.ndarray:
    """U[a, b]: utility of an SGP of type a choosing the bundle designed for type b."""
    pi = _pi_array(pi_hat)
    rho, xi = stack(menus)
    gain = np.log1p(pi @ rho)          # per bundle type
    cost = model.zeta * (pi @ xi)
    phis = model.types.astype(float)
    return phis[:, None] * gain[None, :] - cost[None, :]


def check_ir(menus: Sequence[ContractMenu], pi_hat, model: SgpTypeModel) -> np.ndarray:
    """Per-type IR residual phi*G - C at the bundle designed for that type."""
    return np.diag(_type_utilities(menus, pi_hat, model)).copy()


def check_ic(menus: Sequence[ContractMenu], pi_hat, model: SgpTypeModel) -> np.ndarray:
    """Pairwise IC residuals; entry [a, b] is U(a, own) - U(a, bundle b), zero on the diagonal."""
    u = _type_utilities(menus, pi_hat, model)
    return np.diag(u)[:, None] - u


def ir_satisfied(residuals, tol: float = IR_TOL) -> bool:
    return bool(np.all(np.asarray(residuals) >= -tol))


def ic_satisfied(residuals, tol: float = IC_TOL) -> bool:
    return bool(np.all(np.asarray(residuals) >= -tol))


def check_monotonicity(menu: ContractMenu | np.ndarray, phi_min: int = 1,
                       tol: float = MONO_TOL) -> tuple[bool, int | None]:
    """Return ``(ok, first_violating_type)`` for non-decreasing payments."""
    rho = menu.rho if isinstance(menu, ContractMenu) else np.asarray(menu, dtype=float)
    bad = np.nonzero(np.diff(rho) < -tol)[0]
    if bad.size:
        return False, int(bad[0]) + 1 + phi_min
    return True, None


def full_constraint_count(n_types: int) -> int:
    """Capacity + IR per type and IC per ordered pair of distinct types."""
    return n_types + n_types + n_types * (n_types - 1)


def reduced_constraint_count(n_types: int) -> int:
    """Capacity per type, one IR at the lowest type, local IC and monotonicity per type."""
    return n_types + 1 + n_types + n_types


@dataclass(frozen=True)
class Constraint:
    kind: str
    phi: int
    other: int | None = None


def build_full_constraints(model: SgpTypeModel) -> list[Constraint]:
    out = [Constraint("capacity", int(p)) for p in model.types]
    out += [Constraint("ir", int(p)) for p in model.types]
    out += [Constraint("ic", int(a), int(b)) for a in model.types for b in model.types if a != b]
    return out


def build_reduced_constraints(model: SgpTypeModel) -> list[Constraint]:
    """Reduced system; the local IC and monotonicity rows at the lowest type are
    listed for the count but are vacuous (they reference type phi_min - 1)."""
    out = [Constraint("capacity", int(p)) for p in model.types]
    out.append(Constraint("ir", model.phi_min))
    out += [Constraint("local_ic", int(p)) for p in model.types]
    out += [Constraint("monotone", int(p)) for p in model.types]
    return out


def reduced_residuals(rho: np.ndarray, xi: np.ndarray, pi: np.ndarray,
                      model: SgpTypeModel) -> dict[str, np.ndarray]:
    """Residuals (>= 0 means satisfied) of the reduced system for stacked menus.

    Local IC uses backward differences over consecutive types:
    phi * sum pi*(rho(phi) - rho(phi-1)) - (1 + sum pi*rho(phi)) * zeta * sum pi*(xi(phi) - xi(phi-1)).
    """
    phis = model.types.astype(float)
    R = pi @ rho
    X = pi @ xi
    cap = model.capacity() - X
    ir = np.array([phis[0] * np.log1p(R[0]) - model.zeta * X[0]])
    local_ic = phis[1:] * np.diff(R) - (1.0 + R[1:]) * model.zeta * np.diff(X)
    mono = np.diff(rho, axis=1).ravel()
    nonneg = np.concatenate([rho.ravel(), xi.ravel()])
    return {"capacity": cap, "ir": ir, "local_ic": local_ic,
            "monotone": mono, "nonneg": nonneg}


def upward_residuals(rho: np.ndarray, xi: np.ndarray, pi: np.ndarray,
                     model: SgpTypeModel) -> np.ndarray:
    """Adjacent upward IC (type phi-1 must not prefer the bundle of phi); >= 0 ok.

    Not part of the reduced system. On a discrete grid the local IC bounds
    the payment step only from below, so this is the missing half of adjacent IC.
    """
    R = pi @ rho
    X = pi @ xi
    return model.zeta * np.diff(X) - (model.types[1:] - 1.0) * np.diff(np.log1p(R))


def max_violation(residuals: dict[str, np.ndarray]) -> float:
    worst = 0.0
    for r in residuals.values():
        if r.size:
            worst = max(worst, float(-np.min(r)))
    return worst
