import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evmarket.market import oracles
from evmarket.market.allocation import solve_allocation, solve_p1
from evmarket.market.baselines import (baseline_information_symmetry, baseline_non_prediction,
                                       baseline_proportional_request)
from evmarket.market.best_response import best_response
from evmarket.market.constraints import (build_full_constraints, build_reduced_constraints,
                                         check_ic, check_ir, check_monotonicity,
                                         full_constraint_count, reduced_constraint_count)
from evmarket.market.equilibrium import best_response_gaps, iterate_contracts
from evmarket.market.model import (ContractMenu, MarketConfig, SgpTypeModel, cs_expected_utility,
                                   initial_menus, sgp_utility, social_welfare)
from evmarket.market.oracles import (best_response_grid_oracle, brute_force_equilibrium,
                                     p1_grid_oracle)
from evmarket.market.sweeps import price_assignment, sweep_price_units, sweep_types

E = math.e


def one_type(s_max=10.0, zeta=0.022):
    return SgpTypeModel(phi_max=1, true_type=1, s_max=s_max, zeta=zeta)


# --- utilities ---------------------------------------------------------------

def test_sgp_utility_examples():
    assert sgp_utility(3, [0.5, 0.2], [0, 0], [0, 0], 0.022) == 0.0
    assert sgp_utility(1, [1.0], [E - 1], [10.0], 0.022) == pytest.approx(0.78, abs=1e-12)


@given(st.lists(st.floats(0, 0.5), min_size=1, max_size=4), st.integers(0, 100))
@settings(max_examples=40, deadline=None)
def test_doubling_shares_without_payment_never_helps(pi, seed):
    xi = np.random.default_rng(seed).uniform(0, 50, len(pi))
    rho = np.zeros(len(pi))
    pi = np.array(pi)
    assert sgp_utility(2, 2 * pi, rho, xi, 0.022) <= sgp_utility(2, pi, rho, xi, 0.022)


def test_cs_expected_utility_examples():
    m = SgpTypeModel(phi_max=2, true_type=1)
    cfg = MarketConfig(demands=[2.0])
    menus = [ContractMenu("a", [200.0, 400.0], [1.0, 2.0])]
    assert cs_expected_utility(0, menus, [0.5], m, cfg) == pytest.approx(15.0, abs=1e-12)
    assert cs_expected_utility(0, menus, [0.0], m, cfg) == 0.0
    zero_margin = [ContractMenu("a", [220.0, 440.0], [1.0, 2.0])]
    assert cs_expected_utility(0, zero_margin, [0.7], m, cfg) == 0.0


def test_social_welfare_examples():
    m = SgpTypeModel(phi_max=2, true_type=1)
    cfg = MarketConfig(demands=[2.0])
    menus = [ContractMenu("a", [200.0, 400.0], [1.0, 2.0])]
    zero = [ContractMenu("a", [0.0, 0.0], [0.0, 0.0])]
    assert social_welfare(1, zero, [0.4], m, cfg) == 0.0
    # type 2 bundle at pi=0.5: SGP term plus 0.5 * (440 - 400) = 20
    sgp = 2 * math.log(1 + 200.0) - 0.022 * 1.0
    assert social_welfare(2, menus, [0.5], m, cfg) == pytest.approx(sgp + 20.0, rel=1e-12)
    cs_only = cs_expected_utility(0, menus, [0.5], m, cfg)
    assert social_welfare(2, menus, [0.5], m, cfg) != pytest.approx(cs_only)


def test_initial_menus_ramp():
    m = SgpTypeModel()
    cfg = MarketConfig(demands=[10.0, 4.0])
    menus = initial_menus(cfg.demands, m, cfg)
    assert menus[0].xi.tolist() == pytest.approx(list(range(1, 11)))
    assert menus[0].rho[4] == pytest.approx(1000.0)
    assert all(check_monotonicity(x)[0] for x in menus)


# --- allocation ----------------------------------------------------------------

def test_allocation_examples():
    assert solve_allocation(1, np.array([0.0]), np.array([3.0]), 0.022, 10).pi[0] == 0.0
    assert solve_allocation(1, np.array([1.0]), np.array([2.0]), 0.4, 10).pi[0] == pytest.approx(0.25)
    assert solve_allocation(1, np.array([1.0]), np.array([2.0]), 0.4, 0.2).pi[0] == pytest.approx(0.1)
    pi, val = p1_grid_oracle(1, np.array([1.0]), np.array([2.0]), 0.4, 10)
    assert pi[0] == pytest.approx(0.25, abs=1e-4)


@given(st.integers(0, 2**31))
@settings(max_examples=15, deadline=None)
def test_allocation_feasible_and_matches_grid(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    phi = int(rng.integers(1, 11))
    rho, xi = rng.uniform(0, 5, n), rng.uniform(0, 100, n)
    cap = float(rng.uniform(5, 200))
    pi = solve_allocation(phi, rho, xi, 0.022, cap).pi
    assert np.all(pi >= 0) and np.all(pi <= 1) and pi @ xi <= cap + 1e-9
    _, grid = p1_grid_oracle(phi, rho, xi, 0.022, cap, step=1e-3)
    assert sgp_utility(phi, pi, rho, xi, 0.022) >= grid - 1e-3


def test_solve_p1_uses_true_type_bundle():
    m = SgpTypeModel(phi_max=2, true_type=2, s_max=20.0)
    cfg = MarketConfig(demands=[5.0, 5.0])
    menus = initial_menus(cfg.demands, m, cfg)
    pi = solve_p1(menus, 2, m).pi
    rho = np.array([x.rho[1] for x in menus])
    xi = np.array([x.xi[1] for x in menus])
    assert np.allclose(pi, solve_allocation(2, rho, xi, m.zeta, 20.0).pi)


# --- constraints -----------------------------------------------------------------

def test_ir_examples():
    m = one_type()
    zero = [ContractMenu("a", [0.0], [0.0])]
    assert check_ir(zero, [0.3], m).tolist() == [0.0]
    menus = [ContractMenu("a", [E - 1], [10.0])]
    assert check_ir(menus, [1.0], m)[0] == pytest.approx(0.78, abs=1e-12)
    assert check_ir([ContractMenu("a", [0.0], [4.0])], [0.5], m)[0] < 0


def test_ic_examples():
    m = SgpTypeModel(phi_max=3, true_type=1)
    same = [ContractMenu("a", [5.0] * 3, [2.0] * 3)]
    assert np.all(check_ic(same, [0.8], m) == 0.0)
    # higher payment at the lowest type: higher types prefer that bundle
    bad = [ContractMenu("a", [9.0, 3.0, 3.0], [1.0, 1.0, 1.0])]
    assert check_ic(bad, [1.0], m).min() < 0
    assert not check_monotonicity(bad[0])[0]


@pytest.mark.parametrize("n", [2, 5, 10, 50])
def test_constraint_counts(n):
    m = SgpTypeModel(phi_max=n, true_type=1)
    assert len(build_full_constraints(m)) == full_constraint_count(n) == n * n + n
    assert len(build_reduced_constraints(m)) == reduced_constraint_count(n) == 3 * n + 1
    if n == 10:
        assert (full_constraint_count(n), reduced_constraint_count(n)) == (110, 31)


def test_monotonicity_examples():
    assert check_monotonicity(np.array([5.0, 5.0, 5.0])) == (True, None)
    assert check_monotonicity(np.array([100.0, 90.0])) == (False, 2)
    assert check_monotonicity(np.array([1.0, 2.0, 3.0]))[0]


# --- best response -----------------------------------------------------------------

def test_best_response_zero_capacity():
    m = SgpTypeModel(phi_max=3, true_type=2, s_max=0.0)
    cfg = MarketConfig(demands=[5.0])
    menus = [ContractMenu("a", np.zeros(3), np.zeros(3))]
    br = best_response(0, menus, [1.0], m, cfg)
    assert np.allclose(br.menu.xi, 0, atol=1e-9) and np.allclose(br.menu.rho, 0, atol=1e-9)
    assert br.utility == pytest.approx(0.0, abs=1e-6)


def test_best_response_single_type_closed_form():
    m = one_type()
    cfg = MarketConfig(demands=[20.0])
    br = best_response(0, [ContractMenu("a", [0.0], [0.0])], [1.0], m, cfg)
    assert br.feasible
    assert br.menu.xi[0] == pytest.approx(10.0, abs=1e-6)
    assert br.menu.rho[0] == pytest.approx(math.expm1(0.22), abs=1e-6)
    assert br.utility == pytest.approx(2200 - math.expm1(0.22), abs=1e-5)
    assert br.utility == pytest.approx(2199.75, abs=0.01)
    grid = best_response_grid_oracle(0, [ContractMenu("a", [0.0], [0.0])], [1.0], m, cfg,
                                      n=1001, rho_max=1.0)
    assert grid.utility <= br.utility + 1e-9 and grid.utility >= br.utility - 1.0


def test_best_response_near_two_type_grid_oracle():
    m = SgpTypeModel(phi_max=2, true_type=2, s_max=20.0)
    cfg = MarketConfig(demands=[8.0, 6.0])
    menus = initial_menus(cfg.demands, m, cfg)
    for x in menus:
        x.rho = x.rho / 1000.0
    pi = np.array([0.6, 0.9])
    br = best_response(1, menus, pi, m, cfg)
    grid = best_response_grid_oracle(1, menus, pi, m, cfg, n=50)
    assert br.feasible
    assert abs(grid.utility - br.utility) <= 0.01 * abs(grid.utility)


# --- iteration -------------------------------------------------------------------

def test_single_cs_single_type_iteration():
    m = one_type()
    cfg = MarketConfig(demands=[20.0])
    start = initial_menus(cfg.demands, m, cfg)
    pi0 = solve_p1(start, 1, m)
    first = best_response(0, start, pi0, m, cfg, seed=0)
    res = iterate_contracts(m, cfg, start)
    assert res.converged and res.acceptances
    assert res.acceptances[0].new_utility == pytest.approx(first.utility, rel=1e-9)
    assert np.all(best_response_gaps(res, m, cfg) <= cfg.kappa)


def test_huge_kappa_means_no_acceptance():
    m = SgpTypeModel(phi_max=3, true_type=2, s_max=60.0)
    cfg = MarketConfig(demands=[10.0, 5.0], kappa=1e9)
    start = initial_menus(cfg.demands, m, cfg)
    res = iterate_contracts(m, cfg, start)
    assert res.rounds == 1 and res.acceptances == [] and res.converged
    for a, b in zip(res.menus, start):
        assert np.array_equal(a.rho, b.rho) and np.array_equal(a.xi, b.xi)


@pytest.fixture(scope="module")
def small_equilibrium():
    m = SgpTypeModel(phi_max=3, true_type=2, s_max=90.0)
    cfg = MarketConfig(demands=[30.0, 20.0, 12.0])
    return m, cfg, iterate_contracts(m, cfg, seed=1)


def test_equilibrium_audit(small_equilibrium):
    m, cfg, res = small_equilibrium
    assert res.converged and res.rounds <= cfg.max_rounds
    assert res.ir_residuals.min() >= -1e-6 and res.ic_residuals.min() >= -1e-6
    assert res.max_constraint_violation <= 1e-6
    assert all(check_monotonicity(x)[0] for x in res.menus)
    assert np.all(best_response_gaps(res, m, cfg) <= cfg.kappa)


def test_accepted_improvements_exceed_kappa(small_equilibrium):
    _, cfg, res = small_equilibrium
    for i in range(cfg.n_cs):
        for before, after in res.utility_steps(i):
            assert after - before > cfg.kappa


def test_sgp_utility_ordered_by_type_at_equilibrium(small_equilibrium):
    m, _, res = small_equilibrium
    own = check_ir(res.menus, res.pi_hat, m)
    assert np.all(np.diff(own) >= -1e-8)


def test_identical_cs_reach_verified_equilibrium():
    m = SgpTypeModel(phi_max=2, true_type=2, s_max=20.0)
    cfg = MarketConfig(demands=[8.0, 8.0])
    res = iterate_contracts(m, cfg)
    assert res.converged
    assert np.all(best_response_gaps(res, m, cfg) <= cfg.kappa)
    assert res.ir_residuals.min() >= -1e-6 and res.ic_residuals.min() >= -1e-6
    # identical CSs need not end with equal utilities: one can be crowded out
    assert res.expected_utilities.sum() > 0


# --- baselines ----------------------------------------------------------------------

def test_information_symmetry_single_type_matches_best_response():
    m = one_type()
    cfg = MarketConfig(demands=[20.0])
    sym = baseline_information_symmetry(m, cfg)
    assert sym.utilities[0] == pytest.approx(2200 - math.expm1(0.22), abs=1e-4)


def test_information_symmetry_zero_capacity():
    m = SgpTypeModel(phi_max=2, true_type=1, s_max=0.0)
    cfg = MarketConfig(demands=[5.0, 3.0])
    assert baseline_information_symmetry(m, cfg).welfare == pytest.approx(0.0, abs=1e-6)


def test_information_symmetry_welfare_dominates(small_equilibrium):
    m, cfg, res = small_equilibrium
    sym = baseline_information_symmetry(m, cfg, seed=1)
    assert sym.welfare >= res.welfare_by_type[m.true_index] - 1e-6


def test_proportional_request_examples():
    m = SgpTypeModel(phi_max=10, true_type=5, s_max=100.0)   # S(5) = 50
    cfg = MarketConfig(demands=[10.0, 20.0])
    assert baseline_proportional_request(m, cfg).pi.tolist() == [1.0, 1.0]
    doubled = baseline_proportional_request(m, cfg, demands=[40.0, 60.0])
    assert doubled.pi.tolist() == [0.5, 0.5]
    assert doubled.utilities.tolist() == pytest.approx([0.5 * 20 * 40, 0.5 * 20 * 60])


def test_non_prediction_examples():
    m = SgpTypeModel()
    cfg = MarketConfig(demands=[40.0, 0.0, 25.0])
    a = baseline_non_prediction(m, cfg, cfg.demands, seed=3)
    b = baseline_non_prediction(m, cfg, cfg.demands, seed=3)
    assert np.array_equal(a.utilities, b.utilities) and a.utilities[1] == 0.0
    prop = baseline_proportional_request(m, cfg).utilities.sum()
    draws = [baseline_non_prediction(m, cfg, cfg.demands, seed=s).utilities.sum()
             for s in range(1000)]
    assert np.mean(draws) < prop


# --- sweeps and brute force ------------------------------------------------------------

def test_type_sweep_rows():
    cfg = MarketConfig(demands=[20.0, 12.0])
    rows, results = sweep_types([1, 3], SgpTypeModel(phi_max=10, true_type=2, s_max=60.0), cfg)
    assert len(rows) == 4 and {r.phi_tot for r in rows} == {1, 3}
    for res in results.values():
        assert np.all(np.isfinite(res.expected_utilities))
        assert res.ir_residuals.min() >= -1e-6 and res.ic_residuals.min() >= -1e-6


def test_price_assignment_rule():
    prices = price_assignment([50.0, 10.0, 30.0, 90.0], 2)
    assert prices.tolist() == [190.0, 200.0, 200.0, 190.0]
    assert price_assignment([5.0, 7.0], 1).tolist() == [200.0, 200.0]


def test_price_sweep_single_level_matches_single_price_run():
    m = SgpTypeModel(phi_max=3, true_type=2, s_max=90.0)
    cfg = MarketConfig(demands=[30.0, 20.0, 12.0])
    rows, results = sweep_price_units([1, 3], m, cfg)
    assert [r.price_levels for r in rows] == [1, 3]
    single = iterate_contracts(m, MarketConfig(demands=cfg.demands, rho_unit=200.0))
    assert rows[0].welfare == pytest.approx(single.welfare_by_type[m.true_index], rel=1e-12)


def test_brute_force_single_cs_single_type():
    m = one_type()
    cfg = MarketConfig(demands=[20.0])
    bf = brute_force_equilibrium(m, cfg, n_grid=50, rho_max=1.0)
    assert bf.status == "equilibrium"
    # with shares re-solved, a full share needs rho / (1 + rho) >= zeta * xi
    analytic = 0.22 / 0.78
    assert bf.menus[0].xi[0] == pytest.approx(10.0)
    assert abs(bf.menus[0].rho[0] - analytic) <= 1.0 / 49


def test_brute_force_reports_empty_grid(monkeypatch):
    monkeypatch.setattr(oracles, "_bundle_feasible",
                        lambda R, X, rho, model, up, tol=1e-9: np.zeros(R.shape[0], bool))
    bf = brute_force_equilibrium(one_type(), MarketConfig(demands=[5.0]), n_grid=4)
    assert bf.status == "no_feasible_point"


def test_brute_force_relabeling_symmetry():
    m = SgpTypeModel(phi_max=2, true_type=2, s_max=20.0)
    a = brute_force_equilibrium(m, MarketConfig(demands=[8.0, 8.0]), n_grid=6)
    assert a.status == "equilibrium"
    b = brute_force_equilibrium(m, MarketConfig(demands=[8.0, 8.0], cs_ids=["CS-2", "CS-1"]),
                                n_grid=6)
    assert sorted(a.utilities) == pytest.approx(sorted(b.utilities))
