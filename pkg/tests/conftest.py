"""Shared fixtures: bundled systems and in-domain sampling boxes."""

from __future__ import annotations

import numpy as np
import pytest

from riphs import Box
from riphs.systems import make_system

# Boxes used to draw random in-domain states for property checks.  The
# gas piston box keeps the volume coordinate well away from zero so that
# every sample lies strictly inside the model domain.
SAMPLE_BOXES = {
    "heat-exchanger": Box(np.array([-2.0, -2.0]), np.array([2.0, 2.0])),
    "gas-piston": Box(np.array([-0.2, 0.02, -3.0]), np.array([0.4, 0.95, 3.0])),
    "heat-network": Box(np.full(5, -2.0), np.full(5, 2.0)),
}


def draw_states(box: Box, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` states uniformly from ``box``, one per column."""
    lo, hi = box.lower, box.upper
    return (lo[:, None] + (hi - lo)[:, None] * rng.random((lo.size, n)))


def make_two_input_exchanger(lam: float = 2.0):
    """Two thermal compartments with independent entropy-flow inputs.

    Hand-built (not via the factory) so tests exercise the raw model
    constructor: H = exp(x1) + exp(x2), S = x1 + x2, Fourier coupling
    with conductance ``lam``.
    """
    from riphs import RIPHSModel

    def ham(x):
        return float(np.exp(x[0]) + np.exp(x[1]))

    def grad(x):
        return np.exp(x)

    def gamma(x, co):
        return lam / (co[0] * co[1])

    return RIPHSModel(
        state_dim=2,
        input_dim=2,
        hamiltonian=ham,
        hamiltonian_gradient=grad,
        entropy_vector=np.array([1.0, 1.0]),
        irr_structures=(np.array([[0.0, -1.0], [1.0, 0.0]]),),
        modulations=(gamma,),
        input_map=np.eye(2),
        name="two-input-exchanger",
    )


@pytest.fixture(scope="session")
def two_input_exchanger():
    return make_two_input_exchanger()


@pytest.fixture(scope="session")
def heat_exchanger_system():
    return make_system("heat_exchanger")


@pytest.fixture(scope="session")
def gas_piston_system():
    return make_system("gas_piston")


@pytest.fixture(scope="session")
def heat_network_system():
    return make_system("heat_network")


@pytest.fixture(scope="session")
def all_systems(heat_exchanger_system, gas_piston_system, heat_network_system):
    return {
        "heat-exchanger": heat_exchanger_system,
        "gas-piston": gas_piston_system,
        "heat-network": heat_network_system,
    }
