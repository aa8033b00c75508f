"""Experiment sweeps over the number of SGP types and the number of price levels."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .equilibrium import EquilibriumResult, iterate_contracts
from .model import MarketConfig, SgpTypeModel

PRICE_RANGE = (190.0, 200.0)


@dataclass
class TypeSweepRow:
    phi_tot: int
    cs_id: str
    expected_utility: float


@dataclass
class PriceSweepRow:
    price_levels: int
    welfare: float
    total_cs_utility: float


def model_with_types(template: SgpTypeModel, phi_tot: int) -> SgpTypeModel:
    """Rebuild the type grid 1..phi_tot with uniform p and the same maximum capacity.

    The true type is clipped to the new grid when it exceeds ``phi_tot``.
    """
    return SgpTypeModel(phi_max=phi_tot, true_type=min(template.true_type, phi_tot),
                        s_max=template.s_max, zeta=template.zeta, phi_min=1)


def sweep_types(phi_tots: Iterable[int], model: SgpTypeModel, config: MarketConfig,
                seed: int = 0) -> tuple[list[TypeSweepRow], dict[int, EquilibriumResult]]:
    rows: list[TypeSweepRow] = []
    results: dict[int, EquilibriumResult] = {}
    for phi_tot in phi_tots:
        m = model_with_types(model, int(phi_tot))
        res = iterate_contracts(m, config, seed=seed)
        results[int(phi_tot)] = res
        rows += [TypeSweepRow(int(phi_tot), cs, float(u))
                 for cs, u in zip(config.cs_ids, res.expected_utilities)]
    return rows, results


def price_assignment(demands: Sequence[float], n_levels: int,
                     price_range: tuple[float, float] = PRICE_RANGE) -> np.ndarray:
    """Per-CS unit price with ``n_levels`` levels spread over ``price_range``.

    Levels run from the top of the range downwards; CSs are ranked by demand
    (ties by index) and split into ``n_levels`` contiguous groups, so the
    largest demands get the lowest price. One level means the top price for all.
    """
    if n_levels < 1:
        raise ValueError("n_levels must be >= 1")
    lo, hi = price_range
    levels = np.linspace(hi, lo, n_levels) if n_levels > 1 else np.array([hi])
    demands = np.asarray(demands, dtype=float)
    order = np.lexsort((np.arange(demands.size), demands))  # ascending demand
    prices = np.empty(demands.size)
    for rank, i in enumerate(order):
        prices[i] = levels[rank * n_levels // demands.size]
    return prices


def sweep_price_units(counts: Iterable[int], model: SgpTypeModel, config: MarketConfig,
                      seed: int = 0) -> tuple[list[PriceSweepRow], dict[int, EquilibriumResult]]:
    rows: list[PriceSweepRow] = []
    results: dict[int, EquilibriumResult] = {}
    for count in counts:
        cfg = replace(config, rho_unit=price_assignment(config.demands, int(count)),
                      cs_ids=list(config.cs_ids))
        res = iterate_contracts(model, cfg, seed=seed)
        results[int(count)] = res
        rows.append(PriceSweepRow(int(count), float(res.welfare_by_type[model.true_index]),
                                  float(res.expected_utilities.sum())))
    return rows, results


def write_type_sweep(rows: Sequence[TypeSweepRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["phi_tot", "cs_id", "expected_utility"])
        for r in rows:
            w.writerow([r.phi_tot, r.cs_id, repr(r.expected_utility)])


def write_price_sweep(rows: Sequence[PriceSweepRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["price_levels", "welfare", "total_cs_utility"])
        for r in rows:
            w.writerow([r.price_levels, repr(r.welfare), repr(r.total_cs_utility)])
