"""Core types and closed-form utilities of the contract market."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class SgpTypeModel:
    """Private-type model of the smart grid provider (SGP).

    Types run over the integers ``phi_min..phi_max``. Capacity at type ``phi``
    is ``phi * s_max / phi_max`` (MWh).
    """

    phi_max: int = 10
    true_type: int = 5
    s_max: float = 500.0
    zeta: float = 0.022
    phi_min: int = 1
    p: np.ndarray | None = None

    def __post_init__(self):
        if self.phi_min < 1 or self.phi_max < self.phi_min:
            raise ValueError(f"invalid type range [{self.phi_min}, {self.phi_max}]")
        if not self.phi_min <= self.true_type <= self.phi_max:
            raise ValueError(f"true_type {self.true_type} outside type range")
        if self.zeta <= 0:
            raise ValueError("zeta must be positive")
        n = self.phi_max - self.phi_min + 1
        if self.p is None:
            probs = np.full(n, 1.0 / n)
        else:
            probs = np.asarray(self.p, dtype=float)
            if probs.shape != (n,) or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
                raise ValueError("p must be a probability vector over the type range")
        object.__setattr__(self, "p", probs)

    @property
    def types(self) -> np.ndarray:
        return np.arange(self.phi_min, self.phi_max + 1)

    @property
    def n_types(self) -> int:
        return self.phi_max - self.phi_min + 1

    @property
    def true_index(self) -> int:
        return self.true_type - self.phi_min

    def capacity(self, phi=None):
        """Capacity S(phi); the full vector over all types when ``phi`` is None."""
        phi = self.types if phi is None else phi
        return np.asarray(phi, dtype=float) * self.s_max / self.phi_max


@dataclass
class MarketConfig:
    """Prices, tolerances and per-CS demands for one market instance.

    ``varrho`` and ``rho_unit`` accept a scalar or one value per CS.
    """

    demands: np.ndarray
    varrho: np.ndarray | float = 220.0
    rho_unit: np.ndarray | float = 200.0
    kappa: float = 1e-6
    max_rounds: int = 200
    cs_ids: list[str] | None = None
    demand_cap: bool = True

    def __post_init__(self):
        self.demands = np.atleast_1d(np.asarray(self.demands, dtype=float))
        n = self.demands.size
        self.varrho = np.broadcast_to(np.asarray(self.varrho, dtype=float), (n,)).copy()
        self.rho_unit = np.broadcast_to(np.asarray(self.rho_unit, dtype=float), (n,)).copy()
        if np.any(self.demands < 0):
            raise ValueError("demands must be nonnegative")
        if np.any(self.rho_unit <= 0) or np.any(self.varrho <= 0) or self.kappa <= 0:
            raise ValueError("rho_unit, varrho and kappa must be positive")
        if self.cs_ids is None:
            self.cs_ids = [f"CS-{i + 1}" for i in range(n)]
        if len(self.cs_ids) != n:
            raise ValueError("cs_ids length must match demands")

    @property
    def n_cs(self) -> int:
        return self.demands.size


@dataclass
class ContractMenu:
    """One CS's contract bundle: payment ``rho`` and requested energy ``xi`` per type."""

    cs_id: str
    rho: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        self.xi = np.asarray(self.xi, dtype=float)
        if self.rho.shape != self.xi.shape or self.rho.ndim != 1:
            raise ValueError("rho and xi must be 1-D arrays of equal length")

    def copy(self) -> ContractMenu:
        return ContractMenu(self.cs_id, self.rho.copy(), self.xi.copy())

    def to_dict(self) -> dict:
        return {"cs_id": self.cs_id, "rho": self.rho.tolist(), "xi": self.xi.tolist()}


@dataclass
class AllocationVector:
    """Transfer proportions chosen by the SGP, one per CS."""

    pi: np.ndarray
    kkt_residual: float = 0.0
    iterations: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=float)


def stack(menus: Sequence[ContractMenu]) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(rho, xi)`` as arrays of shape (I, n_types)."""
    return np.vstack([m.rho for m in menus]), np.vstack([m.xi for m in menus])


def _pi_array(pi) -> np.ndarray:
    return pi.pi if isinstance(pi, AllocationVector) else np.asarray(pi, dtype=float)


def sgp_utility(phi: float, pi, rho_at_phi, xi_at_phi, zeta: float) -> float:
    """phi * ln(1 + sum pi*rho) - zeta * sum pi*xi for one type's bundle."""
    pi = _pi_array(pi)
    gain = np.log1p(np.dot(pi, rho_at_phi))
    cost = zeta * np.dot(pi, xi_at_phi)
    return float(phi * gain - cost)


def sgp_utility_at(phi: int, pi, menus: Sequence[ContractMenu], model: SgpTypeModel,
                   bundle_type: int | None = None) -> float:
    """SGP of type ``phi`` evaluating the bundle designed for ``bundle_type`` (default: phi)."""
    rho, xi = stack(menus)
    k = (phi if bundle_type is None else bundle_type) - model.phi_min
    return sgp_utility(phi, pi, rho[:, k], xi[:, k], model.zeta)


def cs_expected_utility(i: int, menus: Sequence[ContractMenu], pi_hat, model: SgpTypeModel,
                        config: MarketConfig) -> float:
    """Expected profit of CS ``i``: pi_i * sum_phi p(phi) (varrho_i xi_i(phi) - rho_i(phi))."""
    pi = _pi_array(pi_hat)
    m = menus[i]
    margin = config.varrho[i] * m.xi - m.rho
    return float(pi[i] * np.dot(model.p, margin))


def social_welfare(phi: int, menus: Sequence[ContractMenu], pi_hat, model: SgpTypeModel,
                   config: MarketConfig) -> float:
    """SGP utility at ``phi`` plus every CS's realized utility at that type."""
    pi = _pi_array(pi_hat)
    rho, xi = stack(menus)
    k = phi - model.phi_min
    sgp = sgp_utility(phi, pi, rho[:, k], xi[:, k], model.zeta)
    cs = np.dot(pi, config.varrho * xi[:, k] - rho[:, k])
    return float(sgp + cs)


def initial_menus(demands, model: SgpTypeModel, config: MarketConfig) -> list[ContractMenu]:
    """Linear ramp xi_i(phi) = D_i * phi / phi_max priced at each CS's unit price."""
    demands = np.asarray(demands, dtype=float)
    frac = model.types / model.phi_max
    out = []
    for cs_id, d, price in zip(config.cs_ids, demands, config.rho_unit):
        xi = d * frac
        out.append(ContractMenu(cs_id, price * xi, xi))
    return out
