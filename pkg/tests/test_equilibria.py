"""Dissipation-free sets: projection, dimension, steady pairs, distance bounds."""

from __future__ import annotations

import numpy as np
import pytest

from conftest import SAMPLE_BOXES, draw_states
from riphs import (
    Box,
    ControlBounds,
    CostWeights,
    EquilibriumSet,
    ModelError,
    NotSteadyError,
    distance_to_equilibria,
    entropy_production,
    find_optimal_steady_state,
    fit_distance_constant,
    likely_empty,
    manifold_dimension,
    rhs,
    steady_state_cost,
    subspace_distance_equivalence_check,
)
from riphs.systems import (
    GasPistonParams,
    HeatExchangerParams,
    NetworkParams,
    gas_piston_state,
    heat_exchanger_equilibria,
    heat_exchanger_state,
    heat_network_coenergy_inverse,
)

# ---------------------------------------------------------------------------
# dimension reports
# ---------------------------------------------------------------------------


def test_exchanger_dissipation_free_set_is_a_line(heat_exchanger_system):
    model, params, _ = heat_exchanger_system
    rep = manifold_dimension(model, rng=0)
    assert (rep.rank, rep.dimension) == (1, 1)
    assert rep.regular
    assert rep.samples_checked == 25
    assert rep.min_rank_margin > 0.0


def test_piston_dissipation_free_set_is_a_surface(gas_piston_system):
    model, params, _ = gas_piston_system
    # sample where the gas temperature stays moderate so the rank test is
    # well scaled
    box = Box(np.array([-0.1, 0.1, -2.0]), np.array([0.3, 0.9, 2.0]))
    rep = manifold_dimension(model, rng=0, sample_box=box)
    assert (rep.rank, rep.dimension) == (1, 2)
    assert rep.regular


def test_network_dissipation_free_set_is_a_line(heat_network_system):
    model, params, _ = heat_network_system
    rep = manifold_dimension(model, rng=0)
    assert (rep.rank, rep.dimension) == (4, 1)
    assert rep.regular


def test_frictionless_piston_reports_full_dimension():
    from riphs.systems import gas_piston

    model = gas_piston(GasPistonParams(kappa=0.0))
    rep = manifold_dimension(model, rng=0)
    assert (rep.rank, rep.dimension) == (0, 3)


# ---------------------------------------------------------------------------
# distances and projection
# ---------------------------------------------------------------------------


def test_exchanger_distance_to_uniform_line():
    params = HeatExchangerParams()
    eq = heat_exchanger_equilibria(params)
    d = distance_to_equilibria(eq, np.array([1.0, 0.0]))
    assert d == pytest.approx(1.0 / np.sqrt(2.0), rel=1e-12)
    res = distance_to_equilibria(eq, np.array([1.0, 0.0]), details=True)
    assert res.point == pytest.approx([0.5, 0.5], abs=1e-12)
    assert res.converged and not res.used_fallback


def test_affine_projection_is_exact_and_idempotent():
    line = EquilibriumSet.affine(np.zeros(2), np.array([[1.0], [1.0]]) / np.sqrt(2.0))
    res = line.project(np.array([1.0, 0.0]))
    assert res.point == pytest.approx([0.5, 0.5], abs=1e-14)
    res2 = line.project(res.point)
    assert res2.distance <= 1e-14


def test_implicit_projection_agrees_with_affine_geometry(heat_exchanger_system):
    # building the set from the model goes through the nonlinear projector,
    # which must land on the same uniform line
    model, params, _ = heat_exchanger_system
    eq_implicit = EquilibriumSet.from_model(model)
    eq_affine = heat_exchanger_equilibria(params)
    rng = np.random.default_rng(17)
    for x in draw_states(SAMPLE_BOXES["heat-exchanger"], 15, rng).T:
        d_imp = distance_to_equilibria(eq_implicit, x)
        d_aff = distance_to_equilibria(eq_affine, x)
        assert d_imp == pytest.approx(d_aff, rel=1e-8, abs=1e-10)


def test_piston_projection_zeroes_momentum(gas_piston_system):
    model, params, eq = gas_piston_system
    x = gas_piston_state(params, 0.3, 90.0, v=1.2)
    res = distance_to_equilibria(eq, x, details=True)
    assert res.distance == pytest.approx(1.2 * params.m, rel=1e-12)
    assert res.point[2] == pytest.approx(0.0, abs=1e-12)
    assert res.point[:2] == pytest.approx(x[:2], abs=1e-12)


# ---------------------------------------------------------------------------
# steady-state costs
# ---------------------------------------------------------------------------


def test_two_input_exchanger_steady_cost_both_routes(two_input_exchanger):
    model = two_input_exchanger
    x_bar = np.log(np.array([300.0, 280.0]))
    gamma_b = 2.0 * 20.0 / (300.0 * 280.0)
    u_bar = np.array([gamma_b * 280.0, -gamma_b * 300.0])
    assert np.max(np.abs(rhs(model, x_bar, u_bar))) < 1e-14

    direct, closed = steady_state_cost(model, x_bar, u_bar, CostWeights(0.0, 3.0, 5.0))
    assert direct == pytest.approx(1.0 / 7.0, rel=1e-12)
    assert closed == pytest.approx(1.0 / 7.0, rel=1e-12)
    assert direct == pytest.approx(closed, rel=1e-9)


def test_network_steady_cost_both_routes(heat_network_system):
    model, params, _ = heat_network_system
    x_bar = heat_network_coenergy_inverse(params, np.array([5.0, 4.0, 3.0, 2.5, 2.5]))
    u_bar = np.array([0.2, -0.2, -0.2])
    assert np.max(np.abs(rhs(model, x_bar, u_bar))) < 1e-14
    assert entropy_production(model, x_bar) == pytest.approx(0.2, rel=1e-12)

    direct, closed = steady_state_cost(model, x_bar, u_bar, CostWeights(0.0, 1.5, 2.0))
    assert direct == pytest.approx(0.6, rel=1e-12)
    assert closed == pytest.approx(0.6, rel=1e-12)


def test_dissipation_free_points_cost_nothing(heat_exchanger_system):
    model, params, _ = heat_exchanger_system
    for T in (1.0, 25.0, 320.0):
        x = heat_exchanger_state(params, T, T)
        direct, closed = steady_state_cost(
            model, x, np.zeros(1), CostWeights(1.0, 2.0, 3.0)
        )
        assert direct == 0.0
        assert closed == 0.0


def test_steady_state_cost_rejects_moving_pairs(heat_exchanger_system):
    model, params, _ = heat_exchanger_system
    x = heat_exchanger_state(params, 300.0, 280.0)
    with pytest.raises(NotSteadyError):
        steady_state_cost(model, x, np.zeros(1), CostWeights(0.0, 1.0, 1.0))


# ---------------------------------------------------------------------------
# optimal steady pairs
# ---------------------------------------------------------------------------


def test_optimal_steady_pairs_are_certified_and_nonnegative(all_systems):
    starts = {
        "heat-exchanger": lambda p: heat_exchanger_state(p, 3.0, 2.0),
        "gas-piston": lambda p: gas_piston_state(p, 0.3, 90.0),
        "heat-network": lambda p: heat_network_coenergy_inverse(
            p, np.array([5.0, 4.0, 3.0, 2.5, 2.5])
        ),
    }
    bounds = {
        "heat-exchanger": ControlBounds(np.array([-5.0]), np.array([5.0])),
        "gas-piston": ControlBounds(np.array([-2.0]), np.array([2.0])),
        "heat-network": ControlBounds(np.full(3, -5.0), np.full(3, 5.0)),
    }
    for name, (model, params, _) in all_systems.items():
        ss = find_optimal_steady_state(
            model, CostWeights(0.0, 1.0, 2.0), bounds[name],
            x_init=starts[name](params), rng=7,
        )
        assert ss.certified
        assert ss.residual_norm <= 1e-9
        assert ss.stage_cost >= -1e-10
        # dissipation-free points are reachable, so the optimum is free
        assert ss.stage_cost <= 1e-8
        assert ss.notes["solver"]["converged"]


def test_optimal_steady_pair_lands_on_uniform_temperatures(heat_network_system):
    # every entropy-priced optimum of the network is a uniform-temperature
    # state with idle inputs; the searcher may pick any point on that line
    model, params, _ = heat_network_system
    x_init = heat_network_coenergy_inverse(params, np.full(5, 30.0))
    ss = find_optimal_steady_state(
        model, CostWeights(0.0, 1.0, 1.0),
        ControlBounds(np.full(3, -5.0), np.full(3, 5.0)),
        x_init=x_init, rng=3,
    )
    assert ss.certified
    assert np.max(ss.state) - np.min(ss.state) < 1e-6
    assert np.max(np.abs(ss.control)) < 1e-6


# ---------------------------------------------------------------------------
# subspace distance equivalence
# ---------------------------------------------------------------------------


def test_coordinate_axes_distance_bounds():
    axes = [np.array([[1.0], [0.0]]), np.array([[0.0], [1.0]])]
    rep = subspace_distance_equivalence_check(axes, n_samples=500, rng=1)
    assert not rep.degenerate
    assert rep.intersection_dim == 0
    assert rep.c_low >= 1.0 - 1e-9
    assert rep.c_high <= np.sqrt(2.0) + 1e-9
    assert rep.n_used == 500 and rep.n_zero == 0


def test_identical_subspaces_double_the_distance_sum():
    U = np.array([[1.0], [0.0]])
    rep = subspace_distance_equivalence_check([U, U], n_samples=100, rng=1)
    assert rep.c_low == pytest.approx(2.0, rel=1e-12)
    assert rep.c_high == pytest.approx(2.0, rel=1e-12)
    assert rep.intersection_dim == 1


def test_single_subspace_is_trivially_equivalent():
    U = np.array([[1.0], [0.0]])
    rep = subspace_distance_equivalence_check([U], n_samples=100, rng=1)
    assert rep.c_low == pytest.approx(1.0, rel=1e-12)
    assert rep.c_high == pytest.approx(1.0, rel=1e-12)


def test_whole_space_intersection_is_degenerate():
    rep = subspace_distance_equivalence_check([np.eye(2), np.eye(2)], n_samples=50, rng=1)
    assert rep.degenerate
    assert rep.n_used == 0 and rep.n_zero == 50
    assert rep.intersection_dim == 2


# ---------------------------------------------------------------------------
# distance-to-dissipation bound and emptiness probe
# ---------------------------------------------------------------------------


def test_fitted_distance_constant_is_finite_and_stable(heat_exchanger_system):
    model, params, eq = heat_exchanger_system
    box = SAMPLE_BOXES["heat-exchanger"]
    c, n_used = fit_distance_constant(model, eq, box, n_samples=200, rng=3)
    assert np.isfinite(c) and c > 0.0
    assert n_used == 200
    c2, _ = fit_distance_constant(model, eq, box, n_samples=400, rng=4)
    assert c2 == pytest.approx(c, rel=0.2)


def test_likely_empty_flags_unsatisfiable_bracket_conditions():
    from riphs import RIPHSModel

    # a linear store whose thermodynamic driving force never vanishes: the
    # dissipation-free condition has no solutions at all
    model = RIPHSModel(
        state_dim=2,
        input_dim=0,
        hamiltonian=lambda x: float(x[0] + 2.0 * x[1]),
        hamiltonian_gradient=lambda x: np.array([1.0, 2.0]),
        entropy_vector=np.array([1.0, 0.0]),
        irr_structures=(np.array([[0.0, -1.0], [1.0, 0.0]]),),
        modulations=(lambda x, hx: 1.0,),
        name="always-driven",
    )
    box = Box(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    assert likely_empty(EquilibriumSet.from_model(model), box, rng=2)
    # affine sets always contain points, wherever the probe box sits
    through = EquilibriumSet.affine(
        np.zeros(2), np.array([[1.0], [1.0]]) / np.sqrt(2.0)
    )
    assert not likely_empty(through, box, rng=2)
