"""Comparator mechanisms: full information, proportional request, spot-price request."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .equilibrium import EquilibriumResult, iterate_contracts
from .model import MarketConfig, SgpTypeModel, sgp_utility, social_welfare


@dataclass
class BaselineResult:
    name: str
    utilities: np.ndarray
    welfare: float
    pi: np.ndarray
    payments: np.ndarray
    energy: np.ndarray
    equilibrium: EquilibriumResult | None = None

    def to_dict(self) -> dict:
        return {"name": self.name, "utilities": self.utilities.tolist(), "welfare": self.welfare,
                "pi": self.pi.tolist(), "payments": self.payments.tolist(),
                "energy": self.energy.tolist()}


def known_type_model(model: SgpTypeModel) -> SgpTypeModel:
    """Single-type model at the true type with the same capacity S(true type)."""
    t = model.true_type
    return SgpTypeModel(phi_max=t, true_type=t, s_max=float(model.capacity(t)),
                        zeta=model.zeta, phi_min=t)


def baseline_information_symmetry(model: SgpTypeModel, config: MarketConfig,
                                  demands=None, seed: int = 0) -> BaselineResult:
    """CSs know the SGP's type: the same iteration with IR at that type only.

    With no type to screen, the proportions are agreed once on the initial
    menus and held. Re-solving them against bundles whose IR binds would
    shrink every share each round, since the SGP's utility is zero at the
    agreed share and positive at any smaller one.
    """
    cfg = _with_demands(config, demands)
    known = known_type_model(model)
    eq = iterate_contracts(known, cfg, seed=seed, resolve_allocation=False)
    rho = np.array([m.rho[0] for m in eq.menus])
    xi = np.array([m.xi[0] for m in eq.menus])
    welfare = social_welfare(known.true_type, eq.menus, eq.pi_hat, known, cfg)
    eq.welfare_by_type = np.array([welfare])
    return BaselineResult("information_symmetry", eq.expected_utilities.copy(),
                          welfare, eq.pi_hat.pi.copy(), rho, xi, eq)


def proportional_share(model: SgpTypeModel, requests: np.ndarray) -> float:
    """Uniform share min(1, S(true type) / total request)."""
    total = float(np.sum(requests))
    cap = float(model.capacity(model.true_type))
    return 1.0 if total <= cap else cap / total


def _fixed_price_outcome(name, model, config, requests, prices) -> BaselineResult:
    share = proportional_share(model, requests)
    pi = np.full(requests.size, share)
    payments = prices * requests
    utilities = pi * (config.varrho * requests - payments)
    sgp = sgp_utility(model.true_type, pi, payments, requests, model.zeta)
    return BaselineResult(name, utilities, float(sgp + utilities.sum()), pi, payments, requests)


def baseline_proportional_request(model: SgpTypeModel, config: MarketConfig,
                                  demands=None) -> BaselineResult:
    """Each CS requests its predicted demand at the announced unit price."""
    cfg = _with_demands(config, demands)
    prices = cfg.rho_unit.copy()
    return _fixed_price_outcome("proportional_request", model, cfg, cfg.demands.copy(), prices)


def baseline_non_prediction(model: SgpTypeModel, config: MarketConfig, actual_demands,
                            seed: int = 0) -> BaselineResult:
    """Actual demands bought at a spot price drawn from U[rho_unit, 1.2 rho_unit]."""
    cfg = _with_demands(config, actual_demands)
    rng = np.random.default_rng(seed)
    prices = rng.uniform(cfg.rho_unit, 1.2 * cfg.rho_unit, size=cfg.n_cs)
    return _fixed_price_outcome("non_prediction", model, cfg, cfg.demands.copy(), prices)


def _with_demands(config: MarketConfig, demands) -> MarketConfig:
    if demands is None:
        return config
    demands = np.asarray(demands, dtype=float)
    if demands.shape != config.demands.shape:
        raise ValueError("demands must have one entry per CS")
    return MarketConfig(demands=demands, varrho=config.varrho, rho_unit=config.rho_unit,
                        kappa=config.kappa, max_rounds=config.max_rounds,
                        cs_ids=list(config.cs_ids), demand_cap=config.demand_cap)
