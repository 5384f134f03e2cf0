"""Built-in example systems: heat exchanger, gas piston, heat network.

All three expose exact affine descriptions of their bracket-zero sets and
closed-form inverses of the co-energy map, and evaluate on state batches
(columns) for the transcription layer's trajectory-level derivatives.
"""

from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np

from .equilibria import EquilibriumSet
from .model import Box, ModelError, RIPHSModel

__all__ = [
    "HeatExchangerParams",
    "GasPistonParams",
    "NetworkParams",
    "heat_exchanger",
    "heat_exchanger_equilibria",
    "heat_exchanger_state",
    "heat_exchanger_coenergy_inverse",
    "thermostat_control",
    "thermostat_temperature",
    "gas_piston",
    "gas_piston_equilibria",
    "gas_piston_state",
    "gas_piston_reference_state",
    "gas_piston_coenergy_inverse",
    "heat_network",
    "heat_network_equilibria",
    "heat_network_coenergy_inverse",
    "SystemSpec",
    "BUILTIN_SYSTEMS",
    "make_system",
]


def _bcast(coeffs: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Reshape a per-coordinate coefficient vector against (n,) or (n, B)."""
    return coeffs.reshape(coeffs.shape + (1,) * (X.ndim - 1))


# ---------------------------------------------------------------------------
# heat exchanger: two lumped thermal compartments, Fourier coupling,
# entropy flow actuation on the first compartment


@dataclasses.dataclass(frozen=True)
class HeatExchangerParams:
    """Heat capacities c1, c2, conductance lam, gauge references T_ref and
    S_ref, and the thermostat conductance lambda_e of the boundary port."""

    c1: float = 1.0
    c2: float = 1.0
    lam: float = 1.0
    T_ref: float = 1.0
    S_ref: float = 0.0
    lambda_e: float = 1.0

    def __post_init__(self):
        for field in ("c1", "c2", "lam", "T_ref", "lambda_e"):
            if not getattr(self, field) > 0:
                raise ModelError(f"HeatExchangerParams.{field} must be positive")


def _he_temperatures(p: HeatExchangerParams, X: np.ndarray) -> np.ndarray:
    c = np.array([p.c1, p.c2])
    return p.T_ref * np.exp((X - p.S_ref) / _bcast(c, X))


def heat_exchanger(params: Optional[HeatExchangerParams] = None) -> RIPHSModel:
    """Two compartments at temperatures T_i = T_ref exp((S_i - S_ref)/c_i),
    one irreversible interface with bracket T1 - T2 and modulation
    lam / (T1 T2), entropy flow input into compartment 1."""
    p = params or HeatExchangerParams()
    c = np.array([p.c1, p.c2])

    def ham(X):
        X = np.asarray(X, dtype=float)
        return np.sum(_bcast(c, X) * _he_temperatures(p, X), axis=0)

    def grad(X):
        return _he_temperatures(p, np.asarray(X, dtype=float))

    def hess(x):
        T = _he_temperatures(p, np.asarray(x, dtype=float))
        return np.diag(T / c)

    def gamma(X, HX):
        return p.lam / (HX[0] * HX[1])

    J1 = np.array([[0.0, -1.0], [1.0, 0.0]])
    G = np.array([[1.0], [0.0]])
    return RIPHSModel(
        state_dim=2, input_dim=1,
        hamiltonian=ham, hamiltonian_gradient=grad, hamiltonian_hessian=hess,
        entropy_vector=np.ones(2), irr_structures=[J1], modulations=[gamma],
        input_map=G, poisson_structure=None, vectorized=True,
        name="heat-exchanger",
        metadata={"params": dataclasses.asdict(p)},
    )


def heat_exchanger_equilibria(params: Optional[HeatExchangerParams] = None
                              ) -> EquilibriumSet:
    """Exact description of T: the line S_ref * (1,1) + span{(c1, c2)}."""
    p = params or HeatExchangerParams()
    v1 = np.array([[0.0, -1.0], [1.0, 0.0]]) @ np.ones(2)
    return EquilibriumSet.affine(offset=p.S_ref * np.ones(2),
                                 basis=np.array([[p.c1], [p.c2]]),
                                 codim_vectors=v1.reshape(2, 1))


def heat_exchanger_state(params: HeatExchangerParams, T1: float, T2: float
                         ) -> np.ndarray:
    """State with prescribed compartment temperatures."""
    c = np.array([params.c1, params.c2])
    T = np.array([T1, T2], dtype=float)
    if np.any(T <= 0):
        raise ModelError("temperatures must be positive")
    return params.S_ref + c * np.log(T / params.T_ref)


def heat_exchanger_coenergy_inverse(params: HeatExchangerParams, y) -> np.ndarray:
    """Invert the co-energy map (T1, T2) -> x."""
    y = np.asarray(y, dtype=float)
    return heat_exchanger_state(params, y[0], y[1])


def thermostat_control(params: HeatExchangerParams, T1: float, T_e: float) -> float:
    """Entropy flow delivered by a thermostat at external temperature T_e
    through a boundary conductance lambda_e: u = lambda_e (T_e - T1) / T1."""
    return params.lambda_e * (T_e - T1) / T1


def thermostat_temperature(params: HeatExchangerParams, T1: float, u: float) -> float:
    """External temperature realizing the entropy flow u at compartment
    temperature T1 (inverse of thermostat_control)."""
    return T1 * (1.0 + u / params.lambda_e)


# ---------------------------------------------------------------------------
# gas piston: ideal gas column under a weighted piston with friction


@dataclasses.dataclass(frozen=True)
class GasPistonParams:
    """Mole count N_mol, gas constant R, gauge state (T0, P0, s0), piston
    area A, friction coefficient kappa >= 0, gravity g_grav, chamber volume
    limit V_max, piston mass m (defaults to A P0 / g_grav, which makes the
    gauge state a mechanical equilibrium)."""

    N_mol: float = 0.01
    R: float = 8.314
    T0: float = 273.0
    P0: float = 101.325
    s0: float = 0.11
    A: float = 0.5
    kappa: float = 10.0
    g_grav: float = 9.81
    V_max: float = 1.0
    m: Optional[float] = None

    def __post_init__(self):
        if self.m is None:
            object.__setattr__(self, "m", self.A * self.P0 / self.g_grav)
        for field in ("N_mol", "R", "T0", "P0", "A", "g_grav", "V_max", "m"):
            if not getattr(self, field) > 0:
                raise ModelError(f"GasPistonParams.{field} must be positive")
        if self.kappa < 0:
            raise ModelError("GasPistonParams.kappa must be nonnegative")


def _gp_temperature(p: GasPistonParams, S, V):
    rn = p.R * p.N_mol
    beta = (S - p.N_mol * p.s0 + rn * np.log(rn * p.T0)
            - rn * np.log(V * p.P0)) / (1.5 * rn)
    return p.T0 * np.exp(beta)


def gas_piston(params: Optional[GasPistonParams] = None) -> RIPHSModel:
    """State (S, V, p): gas entropy, chamber volume, piston momentum.

    Total energy is the ideal-gas internal energy plus piston kinetic and
    potential terms; the reversible structure exchanges volume and
    momentum, the single irreversible interface has bracket v = p / m
    (piston velocity) and modulation kappa / T.  kappa = 0 builds a purely
    reversible model with no irreversible interface at all.  Input is
    entropy flow into the gas.
    """
    p = params or GasPistonParams()
    rn = p.R * p.N_mol
    weight = p.m * p.g_grav / p.A

    def ham(X):
        X = np.asarray(X, dtype=float)
        T = _gp_temperature(p, X[0], X[1])
        return 1.5 * rn * T + X[2] ** 2 / (2.0 * p.m) + weight * X[1]

    def grad(X):
        X = np.asarray(X, dtype=float)
        T = _gp_temperature(p, X[0], X[1])
        P = rn * T / X[1]
        return np.stack([T, -P + weight, X[2] / p.m])

    def hess(x):
        x = np.asarray(x, dtype=float)
        T = _gp_temperature(p, x[0], x[1])
        P = rn * T / x[1]
        dTdS = T / (1.5 * rn)
        cross = -(2.0 / 3.0) * T / x[1]
        return np.array([
            [dTdS, cross, 0.0],
            [cross, (5.0 / 3.0) * P / x[1], 0.0],
            [0.0, 0.0, 1.0 / p.m],
        ])

    J0 = np.array([[0.0, 0.0, 0.0],
                   [0.0, 0.0, p.A],
                   [0.0, -p.A, 0.0]])
    J1 = np.array([[0.0, 0.0, 1.0],
                   [0.0, 0.0, 0.0],
                   [-1.0, 0.0, 0.0]])
    G = np.array([[1.0], [0.0], [0.0]])
    domain = Box(np.array([-np.inf, 0.0, -np.inf]),
                 np.array([np.inf, p.V_max, np.inf]))

    if p.kappa > 0:
        def gamma(X, HX):
            return p.kappa / HX[0]
        irr, mods = [J1], [gamma]
    else:
        irr, mods = [], []

    return RIPHSModel(
        state_dim=3, input_dim=1,
        hamiltonian=ham, hamiltonian_gradient=grad, hamiltonian_hessian=hess,
        entropy_vector=np.array([1.0, 0.0, 0.0]),
        irr_structures=irr, modulations=mods,
        input_map=G, poisson_structure=J0, state_domain=domain,
        vectorized=True, name="gas-piston",
        metadata={"params": dataclasses.asdict(p)},
    )


def gas_piston_equilibria(params: Optional[GasPistonParams] = None
                          ) -> EquilibriumSet:
    """Exact description of T: the plane {p = 0} (piston at rest).

    With kappa = 0 there is no irreversible interface, every bracket
    condition is vacuous, and T is the whole state space.
    """
    p = params or GasPistonParams()
    if p.kappa == 0:
        return EquilibriumSet.affine(offset=np.zeros(3), basis=np.eye(3),
                                     codim_vectors=np.zeros((3, 0)))
    J1 = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
    v1 = J1 @ np.array([1.0, 0.0, 0.0])
    return EquilibriumSet.affine(offset=np.zeros(3),
                                 basis=np.array([[1.0, 0.0],
                                                 [0.0, 1.0],
                                                 [0.0, 0.0]]),
                                 codim_vectors=v1.reshape(3, 1))


def gas_piston_state(params: GasPistonParams, V: float, P: float,
                     v: float = 0.0) -> np.ndarray:
    """State with prescribed volume, pressure, and piston velocity."""
    p = params
    rn = p.R * p.N_mol
    if V <= 0 or V >= p.V_max:
        raise ModelError("volume outside the chamber")
    if P <= 0:
        raise ModelError("pressure must be positive")
    S = (p.N_mol * p.s0 + 1.5 * rn * np.log(P * V / (rn * p.T0))
         + rn * np.log(V * p.P0 / (rn * p.T0)))
    return np.array([S, V, p.m * v])


def gas_piston_reference_state(params: Optional[GasPistonParams] = None
                               ) -> np.ndarray:
    """The gauge state: T = T0, P = P0, piston at rest."""
    p = params or GasPistonParams()
    V0 = p.R * p.N_mol * p.T0 / p.P0
    return gas_piston_state(p, V0, p.P0, 0.0)


def gas_piston_coenergy_inverse(params: GasPistonParams, y) -> np.ndarray:
    """Invert the co-energy map (T, -P + m g/A, v) -> x."""
    p = params
    y = np.asarray(y, dtype=float)
    T = y[0]
    P = p.m * p.g_grav / p.A - y[1]
    if T <= 0 or P <= 0:
        raise ModelError("co-energy values outside the model range")
    V = p.R * p.N_mol * T / P
    return gas_piston_state(p, V, P, y[2])


# ---------------------------------------------------------------------------
# heat network: five compartments, four Fourier couplings, three actuated


@dataclasses.dataclass(frozen=True)
class NetworkParams:
    """Conductances of the couplings 1-2, 2-3, 3-4, 3-5.  lam4 = None means
    "reuse lam3" for the 3-5 edge."""

    lam1: float = 1.0
    lam2: float = 1.0
    lam3: float = 1.0
    lam4: Optional[float] = None

    def __post_init__(self):
        if self.lam4 is None:
            object.__setattr__(self, "lam4", self.lam3)
        for field in ("lam1", "lam2", "lam3", "lam4"):
            if not getattr(self, field) > 0:
                raise ModelError(f"NetworkParams.{field} must be positive")


def _network_structures():
    pairs = [(0, 1), (1, 2), (2, 3), (2, 4)]
    mats = []
    for a, b in pairs:
        J = np.zeros((5, 5))
        J[a, b] = -1.0
        J[b, a] = 1.0
        mats.append(J)
    return pairs, mats


def heat_network(params: Optional[NetworkParams] = None) -> RIPHSModel:
    """Five thermal compartments with T_i = exp(S_i), couplings along the
    chain 1-2-3 and the fork 3-4, 3-5, entropy flow inputs into
    compartments 1, 4, 5."""
    p = params or NetworkParams()
    pairs, mats = _network_structures()
    lams = [p.lam1, p.lam2, p.lam3, p.lam4]

    def ham(X):
        return np.sum(np.exp(np.asarray(X, dtype=float)), axis=0)

    def grad(X):
        return np.exp(np.asarray(X, dtype=float))

    def hess(x):
        return np.diag(np.exp(np.asarray(x, dtype=float)))

    def make_gamma(lam, a, b):
        def gamma(X, HX):
            return lam / (HX[a] * HX[b])
        return gamma

    mods = [make_gamma(lam, a, b) for lam, (a, b) in zip(lams, pairs)]
    G = np.zeros((5, 3))
    G[0, 0] = 1.0
    G[3, 1] = 1.0
    G[4, 2] = 1.0
    return RIPHSModel(
        state_dim=5, input_dim=3,
        hamiltonian=ham, hamiltonian_gradient=grad, hamiltonian_hessian=hess,
        entropy_vector=np.ones(5), irr_structures=mats, modulations=mods,
        input_map=G, poisson_structure=None, vectorized=True,
        name="heat-network",
        metadata={"params": dataclasses.asdict(p)},
    )


def heat_network_equilibria(params: Optional[NetworkParams] = None
                            ) -> EquilibriumSet:
    """Exact description of T: the uniform-entropy line span{(1,..,1)}."""
    _, mats = _network_structures()
    codim = np.column_stack([J @ np.ones(5) for J in mats])
    return EquilibriumSet.affine(offset=np.zeros(5),
                                 basis=np.ones((5, 1)),
                                 codim_vectors=codim)


def heat_network_coenergy_inverse(params: NetworkParams, y) -> np.ndarray:
    """Invert the co-energy map T -> x, i.e. S_i = log T_i."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ModelError("temperatures must be positive")
    return np.log(y)


# ---------------------------------------------------------------------------
# registry


@dataclasses.dataclass(frozen=True)
class SystemSpec:
    """Registry row: how to build a system and its companions."""

    name: str
    factory: callable
    params_cls: type
    equilibria: callable
    coenergy_inverse: callable
    control_lower: tuple
    control_upper: tuple
    description: str

    def default_params(self):
        return self.params_cls()


BUILTIN_SYSTEMS = {
    "heat_exchanger": SystemSpec(
        name="heat_exchanger",
        factory=heat_exchanger,
        params_cls=HeatExchangerParams,
        equilibria=heat_exchanger_equilibria,
        coenergy_inverse=heat_exchanger_coenergy_inverse,
        control_lower=(-5.0,), control_upper=(5.0,),
        description=("two thermal compartments, Fourier coupling, entropy "
                     "flow input on compartment 1; n=2, m=1, one "
                     "irreversible interface"),
    ),
    "gas_piston": SystemSpec(
        name="gas_piston",
        factory=gas_piston,
        params_cls=GasPistonParams,
        equilibria=gas_piston_equilibria,
        coenergy_inverse=gas_piston_coenergy_inverse,
        control_lower=(-2.0,), control_upper=(2.0,),
        description=("ideal gas under a weighted piston with friction, "
                     "entropy flow input into the gas; n=3, m=1, one "
                     "irreversible interface (none when kappa=0)"),
    ),
    "heat_network": SystemSpec(
        name="heat_network",
        factory=heat_network,
        params_cls=NetworkParams,
        equilibria=heat_network_equilibria,
        coenergy_inverse=heat_network_coenergy_inverse,
        control_lower=(-5.0, -5.0, -5.0), control_upper=(5.0, 5.0, 5.0),
        description=("five thermal compartments coupled 1-2-3 with fork "
                     "3-4 and 3-5, entropy flow inputs on 1, 4, 5; n=5, "
                     "m=3, four irreversible interfaces"),
    ),
}


def make_system(name: str, params: Optional[dict] = None):
    """Build a registered system.  Returns (model, params, equilibria)."""
    if name not in BUILTIN_SYSTEMS:
        raise KeyError(f"unknown system {name!r}; known: "
                       f"{sorted(BUILTIN_SYSTEMS)}")
    spec = BUILTIN_SYSTEMS[name]
    p = spec.params_cls(**(params or {}))
    return spec.factory(p), p, spec.equilibria(p)
