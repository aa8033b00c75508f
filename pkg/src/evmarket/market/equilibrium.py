"""Iterative best-response search for the equilibrium contract menus."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .allocation import solve_p1
from .best_response import FEAS_TOL, best_response
from .constraints import (check_ic, check_ir, max_violation, reduced_residuals,
                          upward_residuals)
from .model import (AllocationVector, ContractMenu, MarketConfig, SgpTypeModel,
                    cs_expected_utility, initial_menus, social_welfare, stack)

log = logging.getLogger(__name__)

CYCLE_REPEATS = 4
CYCLE_DECAY = 0.5


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass
class Acceptance:
    round: int
    cs_index: int
    previous_utility: float
    new_utility: float
    repair: bool = False


@dataclass
class EquilibriumResult:
    menus: list[ContractMenu]
    pi_hat: AllocationVector
    expected_utilities: np.ndarray
    rounds: int
    converged: bool
    max_constraint_violation: float
    ir_residuals: np.ndarray
    ic_residuals: np.ndarray
    welfare_by_type: np.ndarray
    acceptances: list[Acceptance] = field(default_factory=list)
    stop_reason: str = "no_change"

    def utility_steps(self, i: int) -> list[tuple[float, float]]:
        """(before, after) utility pairs of CS ``i``'s improvement acceptances."""
        return [(a.previous_utility, a.new_utility) for a in self.acceptances
                if a.cs_index == i and not a.repair]

    def to_dict(self, model: SgpTypeModel, config: MarketConfig) -> dict:
        return {
            "cs_ids": list(config.cs_ids),
            "menus": [m.to_dict() for m in self.menus],
            "pi_hat": self.pi_hat.pi.tolist(),
            "expected_utilities": self.expected_utilities.tolist(),
            "rounds": self.rounds,
            "converged": self.converged,
            "kappa": config.kappa,
            "true_type": model.true_type,
            "max_constraint_violation": self.max_constraint_violation,
            "min_ir_residual": float(self.ir_residuals.min()),
            "min_ic_residual": float(self.ic_residuals.min()),
            "ir_residuals": self.ir_residuals.tolist(),
            "welfare_by_type": self.welfare_by_type.tolist(),
            "acceptances": len(self.acceptances),
            "stop_reason": self.stop_reason,
        }


def welfare_by_type(menus: Sequence[ContractMenu], model: SgpTypeModel,
                    config: MarketConfig) -> np.ndarray:
    """Social welfare at each type, with the SGP re-solving its proportions for that type."""
    out = []
    for phi in model.types:
        pi = solve_p1(menus, int(phi), model)
        out.append(social_welfare(int(phi), menus, pi, model, config))
    return np.array(out)


def iterate_contracts(model: SgpTypeModel, config: MarketConfig,
                      menus: Sequence[ContractMenu] | None = None,
                      seed: int = 0, resolve_allocation: bool = True) -> EquilibriumResult:
    """Round-based best-response iteration run by the SGP.

    Each round re-solves the SGP's proportions at its true type, then visits
    the CSs in index order; a best response replaces the current menu only if
    it raises that CS's expected utility by more than ``config.kappa``. Stops
    after the first round with no acceptance.

    Once the profile satisfies adjacent upward IC (not covered by the reduced
    system), an improving best response must keep it satisfied.
    New proportions can make the standing profile infeasible (for example a
    larger share pushing past capacity). While the profile violates either
    the reduced system or upward IC, a best response that lowers the
    violation is taken as a repair even without a utility gain; repairs are
    flagged in the acceptance log.

    With ``resolve_allocation=False`` the proportions are solved once on the
    initial menus and then held.

    Re-solved proportions can send the iteration into a loop (one CS's gain
    shifts the shares, which breaks capacity, which forces a repair, which
    shifts them back). A round pattern seen ``CYCLE_REPEATS`` times whose
    utility swings have not shrunk below ``CYCLE_DECAY`` of their size at the
    first of those sightings ends the run early, flagged non-converged. Damped
    oscillations keep running until they settle. A run that stops without
    converging reports the proportions in force during its final round, the
    ones every accepted menu of that round was checked against.
    """
    if menus is None:
        menus = initial_menus(config.demands, model, config)
    menus = [m.copy() for m in menus]
    n = len(menus)
    acceptances: list[Acceptance] = []
    converged = False
    stop = "max_rounds"
    seen: dict[bytes, list[float]] = {}
    rounds = 0
    pi = solve_p1(menus, model.true_type, model)
    for rounds in range(1, config.max_rounds + 1):
        if resolve_allocation:
            pi = solve_p1(menus, model.true_type, model)
        changed = 0
        pattern = []
        swing = 0.0
        for i in range(n):
            old = cs_expected_utility(i, menus, pi, model, config)
            br = best_response(i, menus, pi, model, config, seed=derive_seed(seed, rounds, i))
            verdict = _accept(br, old, *profile_violation(menus, pi, model), config.kappa)
            if verdict:
                menus[i] = br.menu
                acceptances.append(Acceptance(rounds, i, old, br.utility, verdict == "repair"))
                changed += 1
                pattern.append(i if verdict == "improve" else -1 - i)
                swing = max(swing, abs(br.utility - old))
        log.debug("round %d: %d acceptances", rounds, changed)
        if changed == 0:
            converged, stop = True, "no_change"
            break
        key = np.round(pi.pi, 3).tobytes() + np.array(pattern).tobytes()
        swings = seen.setdefault(key, [])
        swings.append(swing)
        if len(swings) >= CYCLE_REPEATS and swings[-1] > CYCLE_DECAY * swings[-CYCLE_REPEATS]:
            stop = "cycle"
            break
    out = summarize(menus, pi, model, config, rounds, converged, acceptances)
    out.stop_reason = stop
    return out


def _accept(br, old_utility, reduced_violation, upward_violation, kappa) -> str:
    """Return "improve", "repair" or "" (reject)."""
    keeps_upward = upward_violation > FEAS_TOL or br.upward_violation <= FEAS_TOL
    if br.feasible and keeps_upward and br.utility - old_utility > kappa:
        return "improve"
    current = max(reduced_violation, upward_violation)
    if current > FEAS_TOL and max(br.max_violation, br.upward_violation) < current - FEAS_TOL:
        return "repair"
    return ""


def profile_violation(menus, pi, model) -> tuple[float, float]:
    """(reduced-system violation, upward IC violation) of a menu profile."""
    rho, xi = stack(menus)
    pi = np.asarray(getattr(pi, "pi", pi))
    up = float(max(0.0, -np.min(upward_residuals(rho, xi, pi, model), initial=0.0)))
    return max_violation(reduced_residuals(rho, xi, pi, model)), up


def summarize(menus, pi, model, config, rounds=0, converged=True, acceptances=None):
    rho, xi = stack(menus)
    utilities = np.array([cs_expected_utility(i, menus, pi, model, config)
                          for i in range(len(menus))])
    return EquilibriumResult(
        menus=list(menus),
        pi_hat=pi,
        expected_utilities=utilities,
        rounds=rounds,
        converged=converged,
        max_constraint_violation=max_violation(reduced_residuals(rho, xi, pi.pi, model)),
        ir_residuals=check_ir(menus, pi, model),
        ic_residuals=check_ic(menus, pi, model),
        welfare_by_type=welfare_by_type(menus, model, config),
        acceptances=acceptances or [],
    )


def best_response_gaps(result: EquilibriumResult, model: SgpTypeModel,
                       config: MarketConfig, seed: int = 12345) -> np.ndarray:
    """Utility gain each CS could get from a fresh best response at the returned point.

    A gain counts only if the iteration's acceptance rule would take the move.
    """
    gaps = []
    red, up = profile_violation(result.menus, result.pi_hat, model)
    for i in range(len(result.menus)):
        br = best_response(i, result.menus, result.pi_hat, model, config, seed=seed + i)
        old = result.expected_utilities[i]
        gaps.append(br.utility - old if _accept(br, old, red, up, -np.inf) == "improve" else 0.0)
    return np.array(gaps)
