"""Bundled system factories: registry, coenergy maps, equilibria, thermostat."""

from __future__ import annotations

import dataclasses
import pathlib

import numpy as np
import pytest

from riphs import ModelError, distance_to_equilibria, entropy_production, rhs
from riphs.systems import (
    BUILTIN_SYSTEMS,
    GasPistonParams,
    HeatExchangerParams,
    NetworkParams,
    gas_piston,
    gas_piston_coenergy_inverse,
    gas_piston_equilibria,
    gas_piston_reference_state,
    gas_piston_state,
    heat_exchanger,
    heat_exchanger_coenergy_inverse,
    heat_exchanger_equilibria,
    heat_exchanger_state,
    heat_network,
    heat_network_coenergy_inverse,
    heat_network_equilibria,
    make_system,
    thermostat_control,
    thermostat_temperature,
)

# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------


def test_registry_lists_exactly_three_systems():
    assert sorted(BUILTIN_SYSTEMS) == ["gas_piston", "heat_exchanger", "heat_network"]
    for key, spec in BUILTIN_SYSTEMS.items():
        assert spec.name == key
        assert "n=" in spec.description and "m=" in spec.description


def test_make_system_unknown_name_raises():
    with pytest.raises(KeyError):
        make_system("carnot_engine")


def test_make_system_applies_parameter_overrides():
    model, params, _ = make_system("heat_exchanger", params={"lam": 3.0})
    assert params.lam == 3.0
    assert model.metadata["params"] == dataclasses.asdict(params)
    assert model.name == "heat-exchanger"


def test_model_dimensions_and_names(all_systems):
    dims = {name: (m.state_dim, m.input_dim, m.n_irreversible)
            for name, (m, _p, _e) in all_systems.items()}
    assert dims == {
        "heat-exchanger": (2, 1, 1),
        "gas-piston": (3, 1, 1),
        "heat-network": (5, 3, 4),
    }


# ---------------------------------------------------------------------------
# coenergy maps and state helpers
# ---------------------------------------------------------------------------


def test_exchanger_coenergy_inverse_round_trips():
    params = HeatExchangerParams()
    model = heat_exchanger(params)
    rng = np.random.default_rng(5)
    for _ in range(20):
        T = rng.uniform(1.0, 400.0, 2)
        x = heat_exchanger_coenergy_inverse(params, T)
        assert model.gradient(x) == pytest.approx(T, rel=1e-12)
    assert heat_exchanger_coenergy_inverse(params, np.array([300.0, 280.0])) == pytest.approx(
        heat_exchanger_state(params, 300.0, 280.0), abs=1e-15
    )


def test_network_coenergy_inverse_round_trips():
    params = NetworkParams()
    model = heat_network(params)
    rng = np.random.default_rng(7)
    for _ in range(20):
        T = rng.uniform(1.0, 400.0, 5)
        x = heat_network_coenergy_inverse(params, T)
        assert model.gradient(x) == pytest.approx(T, rel=1e-12)


def test_piston_coenergy_inverse_round_trips():
    params = GasPistonParams()
    model = gas_piston(params)
    rng = np.random.default_rng(9)
    for _ in range(20):
        co = np.array([rng.uniform(100.0, 500.0), 0.0, rng.uniform(-0.5, 0.5)])
        x = gas_piston_coenergy_inverse(params, co)
        assert model.gradient(x) == pytest.approx(co, rel=1e-9, abs=1e-9)


def test_piston_state_helper_matches_requested_volume_pressure_velocity():
    params = GasPistonParams()
    model = gas_piston(params)
    x = gas_piston_state(params, 0.3, 90.0, v=0.2)
    assert x[1] == 0.3
    assert x[2] == pytest.approx(0.2 * params.m, rel=1e-14)
    grad = model.gradient(x)
    # ideal gas law at the constructed state: P V = N R T
    assert grad[0] * params.N_mol * params.R / 0.3 == pytest.approx(90.0, rel=1e-12)


def test_state_helpers_reject_unphysical_arguments():
    he_params = HeatExchangerParams()
    gp_params = GasPistonParams()
    with pytest.raises(ModelError):
        heat_exchanger_state(he_params, -5.0, 280.0)
    with pytest.raises(ModelError):
        gas_piston_state(gp_params, -0.1, gp_params.P0)
    with pytest.raises(ModelError):
        gas_piston_state(gp_params, 0.2, -1.0)


def test_piston_reference_state_is_stationary_with_reference_temperature():
    params = GasPistonParams()
    model = gas_piston(params)
    x_ref = gas_piston_reference_state(params)
    assert model.gradient(x_ref) == pytest.approx([params.T0, 0.0, 0.0], rel=1e-12, abs=1e-9)
    assert x_ref[1] == pytest.approx(
        params.N_mol * params.R * params.T0 / params.P0, rel=1e-12
    )


def test_piston_mass_balances_reference_pressure():
    params = GasPistonParams()
    # the default mass is chosen so the piston weight per unit area equals
    # the reference gas pressure, making the reference state stationary
    assert params.m == pytest.approx(params.P0 * params.A / params.g_grav, rel=1e-15)
    assert params.m == pytest.approx(5.164373088685015, rel=1e-15)


# ---------------------------------------------------------------------------
# equilibria
# ---------------------------------------------------------------------------


def test_exchanger_equilibria_are_uniform_temperature_states():
    params = HeatExchangerParams()
    model = heat_exchanger(params)
    eq = heat_exchanger_equilibria(params)
    for T in (1.0, 25.0, 320.0):
        x = heat_exchanger_state(params, T, T)
        assert distance_to_equilibria(eq, x) <= 1e-12
        assert entropy_production(model, x) == 0.0
    x_off = heat_exchanger_state(params, 300.0, 280.0)
    assert distance_to_equilibria(eq, x_off) > 1e-3


def test_network_equilibria_are_uniform_temperature_states():
    params = NetworkParams()
    model = heat_network(params)
    eq = heat_network_equilibria(params)
    x = heat_network_coenergy_inverse(params, np.full(5, 42.0))
    assert distance_to_equilibria(eq, x) <= 1e-12
    assert np.max(np.abs(rhs(model, x, np.zeros(3)))) < 1e-12


def test_piston_equilibria_measure_momentum():
    params = GasPistonParams()
    eq = gas_piston_equilibria(params)
    x = gas_piston_state(params, 0.3, 90.0, v=1.2)
    assert distance_to_equilibria(eq, x) == pytest.approx(1.2 * params.m, rel=1e-12)
    x_rest = gas_piston_state(params, 0.3, 90.0)
    assert distance_to_equilibria(eq, x_rest) <= 1e-12


def test_frictionless_piston_has_no_irreversible_part():
    params = GasPistonParams(kappa=0.0)
    model = gas_piston(params)
    assert model.n_irreversible == 0
    x = gas_piston_state(params, 0.3, 90.0, v=1.2)
    assert entropy_production(model, x) == 0.0
    # without friction every state is dissipation-free
    assert distance_to_equilibria(gas_piston_equilibria(params), x) == 0.0


def test_negative_friction_rejected():
    with pytest.raises(ModelError):
        gas_piston(GasPistonParams(kappa=-1.0))


def test_network_conductances_scale_entropy_production():
    x = heat_network_coenergy_inverse(NetworkParams(), np.array([2.0, 3.0, 5.0, 7.0, 11.0]))
    base = entropy_production(heat_network(NetworkParams()), x)
    doubled = entropy_production(
        heat_network(NetworkParams(lam1=2.0, lam2=2.0, lam3=2.0, lam4=2.0)), x
    )
    assert doubled == pytest.approx(2.0 * base, rel=1e-12)
    assert base > 0.0


# ---------------------------------------------------------------------------
# thermostat helper
# ---------------------------------------------------------------------------


def test_thermostat_round_trip_and_fixed_point():
    params = HeatExchangerParams()
    assert thermostat_control(params, 273.0, 546.0) == pytest.approx(1.0, rel=1e-14)
    assert thermostat_control(params, 300.0, 300.0) == 0.0
    rng = np.random.default_rng(13)
    for _ in range(20):
        T1 = rng.uniform(10.0, 400.0)
        T_e = rng.uniform(10.0, 400.0)
        u = thermostat_control(params, T1, T_e)
        assert thermostat_temperature(params, T1, u) == pytest.approx(T_e, rel=1e-14)
    # hotter environment pushes entropy in
    assert thermostat_control(params, 300.0, 350.0) > 0.0
    assert thermostat_control(params, 300.0, 250.0) < 0.0


# ---------------------------------------------------------------------------
# bundled experiment configs
# ---------------------------------------------------------------------------


def test_bundled_experiment_configs_match_top_level_copies():
    import riphs

    pkg_dir = pathlib.Path(riphs.__file__).parent / "experiments"
    top_dir = pathlib.Path(__file__).resolve().parents[1] / "experiments"
    pkg_files = sorted(f.name for f in pkg_dir.glob("*.json"))
    top_files = sorted(f.name for f in top_dir.glob("*.json"))
    assert pkg_files == top_files and len(pkg_files) == 3
    for name in pkg_files:
        assert (pkg_dir / name).read_bytes() == (top_dir / name).read_bytes()
