"""Command-line pipeline: gen-data, train, cluster, market, experiment.

Every command reads one JSON config (defaults fill any missing key), writes
CSV/JSON into a per-command directory under the output root and puts the
only wall-clock data into ``run_metadata.json`` beside them. Commands that
audit results exit with status 1 and write ``failure_report.json`` when an
audit fails.
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime as dt
import hashlib
import json
import logging
import os
import sys
import zlib
from pathlib import Path
from typing import Any

import numpy as np

from . import ingest
from .clustering import ClusterProblem, cluster_cs, write_membership
from .federated import (FederationConfig, overhead_report, train_centralized, train_dfel,
                        write_history, write_overhead)
from .market.baselines import (baseline_information_symmetry, baseline_non_prediction,
                               baseline_proportional_request)
from .market.constraints import check_monotonicity
from .market.equilibrium import best_response_gaps, iterate_contracts
from .market.model import MarketConfig, SgpTypeModel
from .market.sweeps import (model_with_types, price_assignment, sweep_price_units, sweep_types,
                            write_price_sweep, write_type_sweep)
from .neuralnet import forward

log = logging.getLogger("evmarket")

AUDIT_TOL = 1e-6

DEFAULT_CONFIG: dict[str, Any] = {
    "seed": 0,
    "paths": {"transactions": None, "locations": None, "demands": None, "actual_demands": None,
              "out": "evmarket_out"},
    "data": {"n_stations": 6, "n_tx": 150000, "n_days": 365, "start": "2018-01-01",
             "column_map": None, "date_format": None},
    "learning": {"hidden_layers": 2, "neurons": 16, "dropout": 0.15, "lam": 0.01,
                 "gamma_eta": 0.9, "gamma_delta": 0.999, "epsilon": 1e-8, "epochs": 60,
                 "train_ratio": 0.8, "convergence_window": 5, "convergence_tol": 1e-4,
                 "output_bias_init": "label_mean", "demand_source": "dfel"},
    "clustering": {"k": 2, "size_min": 2, "size_max": 4},
    "market": {"phi_max": 10, "true_type": 5, "s_max": 500.0, "zeta": 0.022, "rho_unit": 200.0,
               "varrho": 220.0, "kappa": 1e-6, "max_rounds": 200, "demand_cap": True},
    "experiment": {"type_counts": [1, 5, 10, 20, 30, 50],
                   "price_levels": [1, 5, 10, 15, 20, 25, 30]},
}

TRAIN_MODES = ("dfel", "dfel-cluster", "centralized")
EXPERIMENTS = ("type-sweep", "price-sweep", "figure-suite")


class ConfigError(ValueError):
    pass


class AuditFailure(RuntimeError):
    def __init__(self, report: dict, directory: Path):
        self.report = report
        self.directory = directory
        super().__init__("audit failed")


# ---------------------------------------------------------------- config

def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def load_config(path: str | Path | None) -> dict:
    cfg = DEFAULT_CONFIG
    if path is not None:
        try:
            cfg = _merge(DEFAULT_CONFIG, json.loads(Path(path).read_text()))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    validate_config(cfg)
    return copy.deepcopy(cfg)


def validate_config(cfg: dict) -> None:
    def need(cond: bool, msg: str):
        if not cond:
            raise ConfigError(msg)

    d, l, c, m = cfg["data"], cfg["learning"], cfg["clustering"], cfg["market"]
    need(isinstance(cfg["seed"], int) and cfg["seed"] >= 0, "seed must be a nonnegative integer")
    need(int(d["n_stations"]) >= 1, "data.n_stations must be >= 1")
    need(int(d["n_tx"]) >= 1, "data.n_tx must be >= 1")
    need(int(d["n_days"]) >= 1, "data.n_days must be >= 1")
    need(int(l["hidden_layers"]) >= 1 and int(l["neurons"]) >= 1, "learning needs >= 1 hidden layer and neuron")
    need(0.0 <= float(l["dropout"]) < 1.0, "learning.dropout must lie in [0, 1)")
    need(float(l["lam"]) > 0 and float(l["epsilon"]) > 0, "learning.lam and epsilon must be positive")
    need(int(l["epochs"]) >= 1, "learning.epochs must be >= 1")
    need(0.0 < float(l["train_ratio"]) < 1.0, "learning.train_ratio must lie in (0, 1)")
    need(l["demand_source"] in TRAIN_MODES, f"learning.demand_source must be one of {TRAIN_MODES}")
    need(int(c["k"]) >= 1 and 0 <= int(c["size_min"]) <= int(c["size_max"]),
         "clustering needs k >= 1 and 0 <= size_min <= size_max")
    need(1 <= int(m["true_type"]) <= int(m["phi_max"]), "market.true_type must lie in 1..phi_max")
    for key in ("s_max", "zeta", "rho_unit", "varrho", "kappa"):
        need(float(m[key]) > 0, f"market.{key} must be positive")
    need(int(m["max_rounds"]) >= 1, "market.max_rounds must be >= 1")
    need(all(int(t) >= 1 for t in cfg["experiment"]["type_counts"]), "type_counts must be >= 1")
    need(all(int(p) >= 1 for p in cfg["experiment"]["price_levels"]), "price_levels must be >= 1")


def derive_seed(root: int, label: str) -> int:
    """Child seed for a named stage of the pipeline."""
    return int(np.random.SeedSequence([root, zlib.crc32(label.encode())]).generate_state(1)[0])


# ---------------------------------------------------------------- output helpers

def _dump_json(obj: Any, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


FAILURE_REPORT = "failure_report.json"


def _write_metadata(out: Path, command: str, cfg: dict, extra: dict | None = None) -> None:
    digest = hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()
    meta = {"command": command, "created": dt.datetime.now(dt.timezone.utc).isoformat(),
            "config_sha256": digest, **(extra or {})}
    _dump_json(meta, out / "run_metadata.json")


def _prepare(out: Path) -> Path:
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
        (out / FAILURE_REPORT).unlink(missing_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from exc
    return out


def _data_paths(cfg: dict, root: Path) -> tuple[Path, Path]:
    tx = cfg["paths"]["transactions"] or root / "data" / "transactions.csv"
    loc = cfg["paths"]["locations"] or root / "data" / "locations.csv"
    tx, loc = Path(tx), Path(loc)
    for p in (tx, loc):
        if not p.exists():
            raise ConfigError(f"missing input {p}; run gen-data first or set paths")
    return tx, loc


def _demand_paths(cfg: dict, root: Path) -> tuple[Path, Path | None]:
    source = cfg["learning"]["demand_source"]
    pred = Path(cfg["paths"]["demands"] or root / "train" / source / "predicted_demand.csv")
    if not pred.exists():
        raise ConfigError(f"missing demand file {pred}; run train first or set paths.demands")
    actual = cfg["paths"]["actual_demands"] or root / "train" / source / "actual_demand.csv"
    actual = Path(actual)
    return pred, actual if actual.exists() else None


def read_demands(path: Path, column: str = "predicted_mwh") -> tuple[list[str], np.ndarray]:
    ids, values = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "cs_id" not in reader.fieldnames or column not in reader.fieldnames:
            raise ConfigError(f"{path}: header must declare cs_id,{column}")
        for line, row in enumerate(reader, start=2):
            try:
                v = float(row[column])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{path}: row {line}: bad {column} {row[column]!r}") from exc
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"{path}: row {line}: {column} must be finite and >= 0")
            ids.append(row["cs_id"].strip())
            values.append(v)
    if not ids:
        raise ConfigError(f"{path}: no demand rows")
    return ids, np.array(values)


def _write_demands(path: Path, ids, values, column: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cs_id", column])
        for cs, v in zip(ids, values):
            w.writerow([cs, f"{v:.6f}"])


def market_objects(cfg: dict, ids: list[str], demands: np.ndarray) -> tuple[SgpTypeModel, MarketConfig]:
    m = cfg["market"]
    model = SgpTypeModel(phi_max=int(m["phi_max"]), true_type=int(m["true_type"]),
                         s_max=float(m["s_max"]), zeta=float(m["zeta"]))
    config = MarketConfig(demands=demands, varrho=float(m["varrho"]), rho_unit=float(m["rho_unit"]),
                          kappa=float(m["kappa"]), max_rounds=int(m["max_rounds"]), cs_ids=list(ids),
                          demand_cap=bool(m["demand_cap"]))
    return model, config


# ---------------------------------------------------------------- gen-data

def cmd_gen_data(cfg: dict, root: Path) -> dict:
    d = cfg["data"]
    if int(d["n_stations"]) < 1 or int(d["n_tx"]) < 1:
        raise ConfigError("n_stations and n_tx must be >= 1")
    out = _prepare(root / "data")
    records, locations = ingest.synth_generate(derive_seed(cfg["seed"], "data"), int(d["n_stations"]),
                                               int(d["n_tx"]), start=dt.date.fromisoformat(d["start"]),
                                               n_days=int(d["n_days"]))
    ingest.write_transactions(records, out / "transactions.csv")
    ingest.write_locations(locations, out / "locations.csv")
    _write_metadata(out, "gen-data", cfg)
    return {"transactions": len(records), "stations": len(locations)}


# ---------------------------------------------------------------- train

def load_dataset(cfg: dict, root: Path):
    tx_path, loc_path = _data_paths(cfg, root)
    locations = ingest.parse_locations(loc_path)
    registry = [s.cs_id for s in locations]
    records = ingest.parse_transactions(tx_path, registry, cfg["data"]["column_map"],
                                        cfg["data"]["date_format"])
    if not records:
        raise ConfigError("no transactions to train on")
    dataset = ingest.encode(records, registry)
    train, test = ingest.split(dataset, float(cfg["learning"]["train_ratio"]),
                               derive_seed(cfg["seed"], "split"))
    return locations, registry, train, test


def federation_config(cfg: dict, shards) -> FederationConfig:
    l = cfg["learning"]
    return FederationConfig(shards=shards,
                            hidden_sizes=tuple([int(l["neurons"])] * int(l["hidden_layers"])),
                            dropout_rate=float(l["dropout"]), epochs_max=int(l["epochs"]),
                            convergence_window=int(l["convergence_window"]),
                            convergence_tol=float(l["convergence_tol"]), lam=float(l["lam"]),
                            gamma_eta=float(l["gamma_eta"]), gamma_delta=float(l["gamma_delta"]),
                            epsilon=float(l["epsilon"]), output_bias_init=l["output_bias_init"])


def _shards(train, ids):
    shards = {cs: train.shard(cs) for cs in ids}
    empty = [cs for cs, s in shards.items() if len(s) == 0]
    if empty:
        raise ConfigError(f"stations without training rows: {empty}")
    return shards


def _cluster_solution(cfg: dict, locations):
    c = cfg["clustering"]
    problem = ClusterProblem.from_locations(locations, int(c["k"]), int(c["size_min"]), int(c["size_max"]))
    return cluster_cs(problem, derive_seed(cfg["seed"], "cluster"))


def cmd_train(cfg: dict, root: Path, mode: str) -> dict:
    if mode not in TRAIN_MODES:
        raise ConfigError(f"train mode must be one of {TRAIN_MODES}")
    locations, registry, train, test = load_dataset(cfg, root)
    out = _prepare(root / "train" / mode)
    seed = derive_seed(cfg["seed"], "train")
    predictions = np.empty(len(test))
    report: dict[str, Any] = {"mode": mode}
    if mode == "centralized":
        fed = federation_config(cfg, {"pooled": train})
        run = train_centralized(train, fed, seed)
        run.params.save(out / "model.json")
        write_history(run.history, out / "history.csv")
        predictions[:] = forward(run.params, test.features)
        ledger_report = overhead_report(run.ledger, {"pooled": train})
        overhead = {"mode": mode, "centralized_bytes": ledger_report["centralized_bytes"],
                    "epochs": run.epochs, "accounting": ledger_report["accounting"]}
        report["epochs"] = run.epochs
    elif mode == "dfel":
        shards = _shards(train, registry)
        run = train_dfel(federation_config(cfg, shards), seed)
        run.params.save(out / "model.json")
        write_history(run.history, out / "history.csv")
        predictions[:] = forward(run.params, test.features)
        overhead = {"mode": mode, **overhead_report(run.ledger, shards)}
        report["epochs"] = run.epochs
    else:
        solution = _cluster_solution(cfg, locations)
        write_membership(solution, out / "membership.csv")
        overhead = {"mode": mode, "clusters": []}
        fed_total, cent_total = 0, 0
        for k in range(int(cfg["clustering"]["k"])):
            members = solution.members(k)
            shards = _shards(train, members)
            run = train_dfel(federation_config(cfg, shards), derive_seed(seed, f"cluster-{k}"))
            run.params.save(out / f"model_cluster{k}.json")
            write_history(run.history, out / f"history_cluster{k}.csv")
            rows = np.isin(test.cs_ids, members)
            predictions[rows] = forward(run.params, test.features[rows])
            rep = {"cluster": k, "members": members, **overhead_report(run.ledger, shards)}
            overhead["clusters"].append(rep)
            fed_total += rep["federated_bytes"]
            cent_total += rep["centralized_bytes"]
        overhead.update(federated_bytes=fed_total, centralized_bytes=cent_total,
                        reduction_pct=100.0 * (1.0 - fed_total / cent_total),
                        accounting="artifact byte-count model")
    write_overhead(overhead, out / "overhead.json")
    residual = predictions - test.labels
    mean_rmse = float(np.sqrt(np.mean((test.labels - train.labels.mean()) ** 2)))
    metrics = {"mode": mode, "rmse": float(np.sqrt(np.mean(residual ** 2))),
               "label_mean_rmse": mean_rmse, "n_train": len(train), "n_test": len(test)}
    _dump_json(metrics, out / "rmse.json")
    # next-interval demand: predicted and actual energy over each station's held-out transactions
    pred_mwh = [float(predictions[test.cs_ids == cs].sum()) / 1000.0 for cs in registry]
    actual_mwh = [float(test.labels[test.cs_ids == cs].sum()) / 1000.0 for cs in registry]
    _write_demands(out / "predicted_demand.csv", registry, pred_mwh, "predicted_mwh")
    _write_demands(out / "actual_demand.csv", registry, actual_mwh, "actual_mwh")
    _write_metadata(out, f"train {mode}", cfg)
    report.update(rmse=metrics["rmse"], label_mean_rmse=mean_rmse,
                  overhead_reduction_pct=overhead.get("reduction_pct"))
    return report


# ---------------------------------------------------------------- cluster

def cmd_cluster(cfg: dict, root: Path) -> dict:
    _, loc_path = _data_paths(cfg, root)
    locations = ingest.parse_locations(loc_path)
    out = _prepare(root / "cluster")
    solution = _cluster_solution(cfg, locations)
    write_membership(solution, out / "membership.csv")
    _dump_json({"centers": solution.centers.tolist(), "objective": solution.objective,
                "iterations": solution.iterations, "converged": solution.converged,
                "objective_history": solution.objective_history}, out / "clustering.json")
    _write_metadata(out, "cluster", cfg)
    return {"sizes": np.bincount(solution.labels, minlength=int(cfg["clustering"]["k"])).tolist(),
            "objective": solution.objective}


# ---------------------------------------------------------------- market

def audit_equilibrium(result, model: SgpTypeModel, config: MarketConfig,
                      full: bool = True) -> dict:
    """Constraint audit of an iteration result.

    ``full`` also requires convergence and no best-response gain above kappa;
    otherwise convergence is reported but does not fail the audit.
    """
    gaps = best_response_gaps(result, model, config) if full else np.zeros(config.n_cs)
    checks = {
        "ir": bool(result.ir_residuals.min() >= -AUDIT_TOL),
        "ic": bool(result.ic_residuals.min() >= -AUDIT_TOL),
        "feasibility": bool(result.max_constraint_violation <= AUDIT_TOL),
        "monotone": bool(all(check_monotonicity(m)[0] for m in result.menus)),
    }
    if full:
        checks["converged"] = bool(result.converged)
        checks["fixed_point"] = bool(np.max(gaps) <= config.kappa)
    return {"passed": all(checks.values()), "checks": checks, "converged": bool(result.converged),
            "min_ir_residual": float(result.ir_residuals.min()),
            "min_ic_residual": float(result.ic_residuals.min()),
            "max_constraint_violation": float(result.max_constraint_violation),
            "max_best_response_gain": float(np.max(gaps)), "rounds": result.rounds,
            "stop_reason": result.stop_reason}


def run_market(cfg: dict, ids, demands, actual, seed: int):
    model, config = market_objects(cfg, ids, demands)
    eq = iterate_contracts(model, config, seed=seed)
    sym = baseline_information_symmetry(model, config, seed=seed)
    prop = baseline_proportional_request(model, config)
    nonpred = baseline_non_prediction(model, config, actual, seed=derive_seed(seed, "spot"))
    return model, config, eq, sym, prop, nonpred


def _comparison_rows(model, eq, sym, prop, nonpred):
    t = model.true_index
    proposed = float(eq.welfare_by_type[t])
    rows = [("proposed", proposed, eq.expected_utilities)]
    for b in (sym, prop, nonpred):
        rows.append((b.name, float(b.welfare), b.utilities))
    out = []
    for name, welfare, utilities in rows:
        gap = 100.0 * (welfare - proposed) / abs(proposed) if proposed else float("nan")
        out.append([name, repr(welfare), repr(float(np.sum(utilities))), repr(gap)])
    return out


def cmd_market(cfg: dict, root: Path) -> dict:
    pred_path, actual_path = _demand_paths(cfg, root)
    ids, demands = read_demands(pred_path)
    actual = read_demands(actual_path, "actual_mwh")[1] if actual_path else demands
    if actual.shape != demands.shape:
        raise ConfigError("actual and predicted demand files list different stations")
    out = _prepare(root / "market")
    seed = derive_seed(cfg["seed"], "market")
    model, config, eq, sym, prop, nonpred = run_market(cfg, ids, demands, actual, seed)
    audit = audit_equilibrium(eq, model, config)
    ordering = bool(sym.welfare >= eq.welfare_by_type[model.true_index] - AUDIT_TOL)
    audit["checks"]["welfare_ordering"] = ordering
    audit["passed"] = audit["passed"] and ordering
    _dump_json({**eq.to_dict(model, config), "audit": audit,
                "baselines": [b.to_dict() for b in (sym, prop, nonpred)]}, out / "equilibrium.json")
    with open(out / "welfare_by_type.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["phi", "welfare"])
        for phi, value in zip(model.types, eq.welfare_by_type):
            w.writerow([int(phi), repr(float(value))])
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mechanism", "welfare", "total_cs_utility", "welfare_gap_vs_proposed_pct"])
        w.writerows(_comparison_rows(model, eq, sym, prop, nonpred))
    _dump_json(audit, out / "audit.json")
    _write_metadata(out, "market", cfg)
    if not audit["passed"]:
        raise AuditFailure({"command": "market", **audit}, out)
    return {"welfare": float(eq.welfare_by_type[model.true_index]), "rounds": eq.rounds,
            "kappa": config.kappa}


# ---------------------------------------------------------------- experiment

def _sweep_audits(results, model_for, config_for) -> list[dict]:
    audits = []
    for key, res in results.items():
        a = audit_equilibrium(res, model_for(key), config_for(key), full=False)
        audits.append({"point": key, **a})
    return audits


def _type_sweep(cfg, ids, demands, seed, out: Path):
    model, config = market_objects(cfg, ids, demands)
    counts = [int(t) for t in cfg["experiment"]["type_counts"]]
    rows, results = sweep_types(counts, model, config, seed=seed)
    write_type_sweep(rows, out / "type_sweep.csv")
    return _sweep_audits(results, lambda k: model_with_types(model, k), lambda k: config)


def _price_sweep(cfg, ids, demands, seed, out: Path):
    model, config = market_objects(cfg, ids, demands)
    counts = [int(p) for p in cfg["experiment"]["price_levels"]]
    rows, results = sweep_price_units(counts, model, config, seed=seed)
    write_price_sweep(rows, out / "price_sweep.csv")
    with open(out / "price_sweep_by_type.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["price_levels", "phi", "welfare"])
        for count, res in results.items():
            for phi, value in zip(model.types, res.welfare_by_type):
                w.writerow([count, int(phi), repr(float(value))])

    def config_for(count):
        return MarketConfig(demands=config.demands, varrho=config.varrho,
                            rho_unit=price_assignment(config.demands, count),
                            kappa=config.kappa, max_rounds=config.max_rounds,
                            cs_ids=list(config.cs_ids), demand_cap=config.demand_cap)
    return _sweep_audits(results, lambda k: model, config_for)


def _figure_suite(cfg, ids, demands, actual, seed, root: Path, out: Path):
    audits = []
    base_model, _ = market_objects(cfg, ids, demands)
    # IR/IC table at the configured instance: SGP utility of each type at each type's bundle
    model, config, eq, *_ = run_market(cfg, ids, demands, actual, seed)
    audits.append({"point": "default", **audit_equilibrium(eq, model, config)})
    with open(out / "sgp_ir_ic.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["phi", "bundle_phi", "sgp_utility"])
        for a, phi in enumerate(model.types):
            for b in range(model.n_types):
                w.writerow([int(phi), int(model.types[b]),
                            repr(float(_sgp_utility_at_bundle(phi, b, eq, model)))])
    # welfare and CS utilities of every mechanism as the true type varies
    welfare_rows, util_rows = [], []
    for phi in base_model.types:
        cfg_t = copy.deepcopy(cfg)
        cfg_t["market"]["true_type"] = int(phi)
        m_t, c_t, eq_t, sym, prop, nonpred = run_market(cfg_t, ids, demands, actual, seed)
        audits.append({"point": f"true_type={int(phi)}",
                       **audit_equilibrium(eq_t, m_t, c_t, full=False)})
        welfare_rows.append([int(phi), repr(float(eq_t.welfare_by_type[m_t.true_index])),
                             repr(float(sym.welfare)), repr(float(prop.welfare)),
                             repr(float(nonpred.welfare))])
        for name, utils in (("proposed", eq_t.expected_utilities), (sym.name, sym.utilities),
                            (prop.name, prop.utilities), (nonpred.name, nonpred.utilities)):
            util_rows += [[int(phi), cs, name, repr(float(u))] for cs, u in zip(ids, utils)]
    with open(out / "welfare_by_true_type.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true_type", "proposed", "information_symmetry", "proportional_request",
                    "non_prediction"])
        w.writerows(welfare_rows)
    with open(out / "cs_utilities.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true_type", "cs_id", "mechanism", "utility"])
        w.writerows(util_rows)
    # learning overhead and accuracy, from whatever training runs exist
    with open(out / "learning.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "rmse", "label_mean_rmse", "federated_bytes", "centralized_bytes",
                    "reduction_pct"])
        for mode in TRAIN_MODES:
            d = root / "train" / mode
            if not (d / "rmse.json").exists():
                continue
            r = json.loads((d / "rmse.json").read_text())
            o = json.loads((d / "overhead.json").read_text())
            w.writerow([mode, repr(r["rmse"]), repr(r["label_mean_rmse"]),
                        o.get("federated_bytes", ""), o.get("centralized_bytes", ""),
                        repr(o["reduction_pct"]) if "reduction_pct" in o else ""])
    audits += [{"sweep": "type", **a} for a in _type_sweep(cfg, ids, demands, seed, out)]
    audits += [{"sweep": "price", **a} for a in _price_sweep(cfg, ids, demands, seed, out)]
    return audits


def _sgp_utility_at_bundle(phi, bundle_index, eq, model) -> float:
    """Utility of an SGP of type ``phi`` taking the bundles designed for another type."""
    rho = np.array([m.rho[bundle_index] for m in eq.menus])
    xi = np.array([m.xi[bundle_index] for m in eq.menus])
    pi = eq.pi_hat.pi
    return float(phi * np.log1p(pi @ rho) - model.zeta * (pi @ xi))


def cmd_experiment(cfg: dict, root: Path, name: str) -> dict:
    if name not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
    pred_path, actual_path = _demand_paths(cfg, root)
    ids, demands = read_demands(pred_path)
    actual = read_demands(actual_path, "actual_mwh")[1] if actual_path else demands
    out = _prepare(root / "experiment" / name)
    seed = derive_seed(cfg["seed"], "market")
    if name == "type-sweep":
        audits = _type_sweep(cfg, ids, demands, seed, out)
    elif name == "price-sweep":
        audits = _price_sweep(cfg, ids, demands, seed, out)
    else:
        audits = _figure_suite(cfg, ids, demands, actual, seed, root, out)
    failed = [a for a in audits if not a["passed"]]
    report = {"experiment": name, "passed": not failed, "points": audits}
    _dump_json(report, out / "audit.json")
    _write_metadata(out, f"experiment {name}", cfg)
    if failed:
        raise AuditFailure({"command": f"experiment {name}", "failed_points": failed}, out)
    return {"experiment": name, "points": len(audits)}


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evmarket", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("gen-data", "write synthetic transactions and locations"),
                            ("train", "train the demand model"),
                            ("cluster", "size-constrained clustering of stations"),
                            ("market", "contract equilibrium and baselines"),
                            ("experiment", "market sweeps and figure tables")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file (defaults fill missing keys)")
        p.add_argument("--out", help="output root directory (overrides paths.out)")
        if name == "train":
            p.add_argument("--mode", choices=TRAIN_MODES, default="dfel")
        if name == "experiment":
            p.add_argument("--mode", choices=EXPERIMENTS, default="figure-suite")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("EVMARKET_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        root = Path(args.out or cfg["paths"]["out"])
        if args.command == "gen-data":
            summary = cmd_gen_data(cfg, root)
        elif args.command == "train":
            summary = cmd_train(cfg, root, args.mode)
        elif args.command == "cluster":
            summary = cmd_cluster(cfg, root)
        elif args.command == "market":
            summary = cmd_market(cfg, root)
        else:
            summary = cmd_experiment(cfg, root, args.mode)
    except AuditFailure as exc:
        failure = exc.directory / FAILURE_REPORT
        _dump_json(exc.report, failure)
        print(json.dumps({"status": "audit_failed", "report": str(failure)}), file=sys.stderr)
        return 1
    except (ConfigError, ingest.IngestError, ValueError) as exc:
        print(json.dumps({"status": "error", "message": str(exc)}), file=sys.stderr)
        return 2
    print(json.dumps({"status": "ok", **summary}, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
