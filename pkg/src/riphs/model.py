"""Core model class and balance laws for coupled reversible-irreversible
port-Hamiltonian systems.

A system on a state domain X in R^n couples one reversible Poisson part with
N irreversible interfaces:

    xdot = ( J0(x) + sum_k gamma_k(x, Hx) * b_k(x) * Jk ) Hx(x) + g(x, Hx) u

where Hx is the gradient of the Hamiltonian H, the entropy S(x) = e . x is
linear in the state and a Casimir of J0 (J0 e = 0), each Jk is a constant
skew-symmetric structure matrix, and

    b_k(x) = e . (Jk Hx(x))

is the entropy/energy bracket driving interface k.  The modulations gamma_k
must be positive on X.  The input enters linearly through g; there is no
affine drift slot on purpose, the model class is bilinear in (Hx, u).

Conjugate outputs:

    y_H = g(x, Hx)^T Hx(x)      energy pairing,   dH/dt = y_H . u
    y_S = g(x, Hx)^T e          entropy pairing,  dS/dt = sigma(x) + y_S . u

with entropy production sigma(x) = sum_k gamma_k b_k^2 >= 0.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, Optional

import numpy as np

__all__ = [
    "Box",
    "PredicateDomain",
    "RIPHSModel",
    "TrajectorySolution",
    "ModelError",
    "DomainError",
    "poisson_bracket",
    "brackets",
    "entropy_production",
    "rhs",
    "rhs_batch",
    "outputs",
    "balance_residuals",
    "transform_model",
]

# structural identities (skew symmetry, Casimir) are checked to this
# relative tolerance
STRUCTURE_RTOL = 1e-12


class ModelError(ValueError):
    """Model data is inconsistent or an evaluation produced garbage."""


class DomainError(ValueError):
    """A state left the declared state domain."""


def _as_vector(v, n, what):
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise ModelError(f"{what}: expected shape ({n},), got {v.shape}")
    return v


# ---------------------------------------------------------------------------
# state domains


@dataclasses.dataclass(frozen=True)
class Box:
    """Axis-aligned open box, the default state domain.

    Membership is strict with a small safety margin: coordinate i must
    satisfy lower_i + m_i < x_i < upper_i - m_i where m_i scales the
    configured margin by max(1, |bound|).  Infinite bounds impose nothing.
    """

    lower: np.ndarray
    upper: np.ndarray
    margin: float = 1e-9

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ModelError("Box bounds must be 1-d arrays of equal length")
        if not np.all(lo < hi):
            raise ModelError("Box requires lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unbounded(cls, n: int) -> "Box":
        return cls(np.full(n, -np.inf), np.full(n, np.inf))

    @property
    def dim(self) -> int:
        return self.lower.size

    def _margins(self):
        mlo = np.where(np.isfinite(self.lower),
                       self.margin * np.maximum(1.0, np.abs(self.lower)), 0.0)
        mhi = np.where(np.isfinite(self.upper),
                       self.margin * np.maximum(1.0, np.abs(self.upper)), 0.0)
        return mlo, mhi

    def contains(self, x: np.ndarray) -> bool:
        x = np.asarray(x, dtype=float)
        mlo, mhi = self._margins()
        return bool(np.all(x > self.lower + mlo) and np.all(x < self.upper - mhi))

    def contains_batch(self, X: np.ndarray) -> np.ndarray:
        """Columnwise membership for X of shape (n, B)."""
        mlo, mhi = self._margins()
        lo = (self.lower + mlo)[:, None]
        hi = (self.upper - mhi)[:, None]
        return np.all((X > lo) & (X < hi), axis=0)


@dataclasses.dataclass(frozen=True)
class PredicateDomain:
    """State domain given by an arbitrary membership predicate.

    Used for transformed models where the image of a box is no longer a box.
    """

    predicate: Callable[[np.ndarray], bool]

    def contains(self, x: np.ndarray) -> bool:
        return bool(self.predicate(np.asarray(x, dtype=float)))

    def contains_batch(self, X: np.ndarray) -> np.ndarray:
        return np.array([self.contains(X[:, j]) for j in range(X.shape[1])])


# ---------------------------------------------------------------------------
# model


class RIPHSModel:
    """Container for one reversible-irreversible port-Hamiltonian system.

    Parameters
    ----------
    state_dim, input_dim : int
        Dimensions n and m.
    hamiltonian : callable
        x -> H(x).  With ``vectorized=True`` it must also accept (n, B)
        batches and return (B,).
    hamiltonian_gradient : callable
        x -> Hx(x), shape (n,).  Batched to (n, B) when vectorized.
    entropy_vector : array
        e in R^n; the entropy is S(x) = e . x.
    irr_structures : sequence of (n, n) arrays
        Constant skew-symmetric structure matrices J1..JN, one per
        irreversible interface.  Skew symmetry is checked once here.
    modulations : sequence of callables
        gamma_k(x, Hx) -> positive scalar.  Batched signature
        (n, B), (n, B) -> (B,) when vectorized.
    input_map : array or callable or None
        Constant (n, m) matrix, or g(x, Hx) -> (n, m).  None means the zero
        map (a closed system).
    poisson_structure : array or callable or None
        Constant (n, n) J0, or J0(x), or None for the zero matrix.  Skew
        symmetry and the Casimir property J0 e = 0 are checked once for
        constant matrices and at every evaluation for callables.
    hamiltonian_hessian : callable, optional
        x -> (n, n).  When absent a central finite difference of the
        gradient with step h = max(1e-6, 1e-8 ||x||) stands in.
    state_domain : Box or PredicateDomain, optional
        Defaults to all of R^n.
    vectorized : bool
        Evaluation callables accept (n, B) batches.  Built-in systems set
        this; it is the fast path for trajectory-level Jacobians.
    """

    def __init__(self, state_dim, input_dim, hamiltonian, hamiltonian_gradient,
                 entropy_vector, irr_structures=(), modulations=(),
                 input_map=None, poisson_structure=None,
                 hamiltonian_hessian=None, state_domain=None,
                 vectorized=False, name="riphs-model", metadata=None):
        n = int(state_dim)
        m = int(input_dim)
        if n < 1 or m < 0:
            raise ModelError("state_dim must be >= 1 and input_dim >= 0")
        self.state_dim = n
        self.input_dim = m
        self.hamiltonian = hamiltonian
        self.hamiltonian_gradient = hamiltonian_gradient
        self.hamiltonian_hessian = hamiltonian_hessian
        self.entropy_vector = _as_vector(entropy_vector, n, "entropy_vector")

        structures = [np.asarray(J, dtype=float) for J in irr_structures]
        mods = list(modulations)
        if len(structures) != len(mods):
            raise ModelError("need one modulation per irreversible structure")
        for k, J in enumerate(structures):
            if J.shape != (n, n):
                raise ModelError(f"irr_structures[{k}] has shape {J.shape}")
            _check_skew(J, f"irr_structures[{k}]")
        self.irr_structures = structures
        self.modulations = mods

        if input_map is None:
            input_map = np.zeros((n, m))
        if not callable(input_map):
            input_map = np.asarray(input_map, dtype=float)
            if input_map.shape != (n, m):
                raise ModelError(f"input_map has shape {input_map.shape}, "
                                 f"expected ({n}, {m})")
        self.input_map = input_map

        if poisson_structure is not None and not callable(poisson_structure):
            poisson_structure = np.asarray(poisson_structure, dtype=float)
            if poisson_structure.shape != (n, n):
                raise ModelError("poisson_structure has wrong shape")
            _check_skew(poisson_structure, "poisson_structure")
            _check_casimir(poisson_structure, self.entropy_vector)
        self.poisson_structure = poisson_structure

        if state_domain is None:
            state_domain = Box.unbounded(n)
        self.state_domain = state_domain
        self.vectorized = bool(vectorized)
        self.name = str(name)
        self.metadata = dict(metadata) if metadata else {}

    # -- basic quantities ---------------------------------------------------

    @property
    def n_irreversible(self) -> int:
        return len(self.irr_structures)

    def entropy(self, x) -> float:
        return float(self.entropy_vector @ np.asarray(x, dtype=float))

    def hamiltonian_at(self, x) -> float:
        return float(self.hamiltonian(np.asarray(x, dtype=float)))

    def gradient(self, x) -> np.ndarray:
        g = np.asarray(self.hamiltonian_gradient(np.asarray(x, dtype=float)),
                       dtype=float)
        return g.reshape(self.state_dim)

    def gradient_batch(self, X: np.ndarray) -> np.ndarray:
        """Gradient columns for a state batch X of shape (n, B)."""
        if self.vectorized:
            return np.asarray(self.hamiltonian_gradient(X), dtype=float)
        return np.stack([self.gradient(X[:, j]) for j in range(X.shape[1])],
                        axis=1)

    def hamiltonian_batch(self, X: np.ndarray) -> np.ndarray:
        if self.vectorized:
            return np.asarray(self.hamiltonian(X), dtype=float)
        return np.array([self.hamiltonian_at(X[:, j]) for j in range(X.shape[1])])

    def hessian(self, x) -> np.ndarray:
        """Hamiltonian Hessian, analytic when supplied, else central FD."""
        x = np.asarray(x, dtype=float)
        if self.hamiltonian_hessian is not None:
            return np.asarray(self.hamiltonian_hessian(x), dtype=float)
        n = self.state_dim
        h = max(1e-6, 1e-8 * float(np.linalg.norm(x)))
        H = np.empty((n, n))
        for j in range(n):
            step = np.zeros(n)
            step[j] = h
            H[:, j] = (self.gradient(x + step) - self.gradient(x - step)) / (2 * h)
        return 0.5 * (H + H.T)

    def poisson(self, x) -> np.ndarray:
        """J0 at x, with structural checks for state-dependent matrices."""
        J0 = self.poisson_structure
        if J0 is None:
            return np.zeros((self.state_dim, self.state_dim))
        if callable(J0):
            J = np.asarray(J0(np.asarray(x, dtype=float)), dtype=float)
            _check_skew(J, "poisson_structure(x)")
            _check_casimir(J, self.entropy_vector)
            return J
        return J0

    def input_matrix(self, x, Hx=None) -> np.ndarray:
        if not callable(self.input_map):
            return self.input_map
        if Hx is None:
            Hx = self.gradient(x)
        G = np.asarray(self.input_map(np.asarray(x, dtype=float), Hx),
                       dtype=float)
        if G.shape != (self.state_dim, self.input_dim):
            raise ModelError("input_map returned wrong shape")
        return G

    def modulation_values(self, x, Hx) -> np.ndarray:
        vals = np.array([float(gam(x, Hx)) for gam in self.modulations])
        _check_modulations(vals, self.name)
        return vals

    def modulation_values_batch(self, X, HX) -> np.ndarray:
        """Modulations on a batch, shape (N, B)."""
        if self.n_irreversible == 0:
            return np.zeros((0, X.shape[1]))
        if self.vectorized:
            vals = np.stack([np.asarray(gam(X, HX), dtype=float)
                             for gam in self.modulations])
        else:
            vals = np.stack([
                np.array([float(gam(X[:, j], HX[:, j])) for j in range(X.shape[1])])
                for gam in self.modulations])
        _check_modulations(vals, self.name)
        return vals

    def in_domain(self, x) -> bool:
        return self.state_domain.contains(np.asarray(x, dtype=float))

    def require_in_domain(self, x):
        if not self.in_domain(x):
            raise DomainError(f"{self.name}: state {np.asarray(x)} outside "
                              "the declared state domain")

    def __repr__(self):
        return (f"RIPHSModel(name={self.name!r}, n={self.state_dim}, "
                f"m={self.input_dim}, N={self.n_irreversible})")


def _check_skew(J: np.ndarray, what: str):
    scale = max(1.0, float(np.max(np.abs(J))) if J.size else 0.0)
    if float(np.max(np.abs(J + J.T))) > STRUCTURE_RTOL * scale:
        raise ModelError(f"{what} is not skew-symmetric")


def _check_casimir(J0: np.ndarray, e: np.ndarray):
    lhs = float(np.max(np.abs(J0 @ e)))
    scale = float(np.max(np.abs(J0))) * max(1.0, float(np.max(np.abs(e))))
    if lhs > STRUCTURE_RTOL * max(1.0, scale):
        raise ModelError("entropy_vector is not a Casimir of the Poisson "
                         f"structure (|J0 e| = {lhs:.3e})")


def _check_modulations(vals: np.ndarray, name: str):
    if not np.all(np.isfinite(vals)):
        raise ModelError(f"{name}: modulation evaluated non-finite")
    if vals.size and float(np.min(vals)) <= 0.0:
        raise ModelError(f"{name}: modulation must stay positive on the "
                         f"domain (min value {float(np.min(vals)):.3e})")


# ---------------------------------------------------------------------------
# pointwise operations


def poisson_bracket(model: RIPHSModel, k: int, x, co_gradient=None) -> float:
    """Bracket b_k(x) = e . (Jk Hx(x)) driving irreversible interface k.

    k is a 0-based interface index.  The optional co_gradient short-circuits
    the gradient evaluation when the caller already has Hx.
    """
    if not 0 <= k < model.n_irreversible:
        raise ValueError(f"interface index {k} out of range "
                         f"[0, {model.n_irreversible})")
    x = np.asarray(x, dtype=float)
    model.require_in_domain(x)
    Hx = model.gradient(x) if co_gradient is None else np.asarray(co_gradient)
    return float(model.entropy_vector @ (model.irr_structures[k] @ Hx))


def brackets(model: RIPHSModel, x, co_gradient=None) -> np.ndarray:
    """All interface brackets at x, shape (N,)."""
    x = np.asarray(x, dtype=float)
    model.require_in_domain(x)
    Hx = model.gradient(x) if co_gradient is None else np.asarray(co_gradient)
    e = model.entropy_vector
    return np.array([float(e @ (J @ Hx)) for J in model.irr_structures])


def entropy_production(model: RIPHSModel, x, co_gradient=None) -> float:
    """sigma(x) = sum_k gamma_k(x, Hx) b_k(x)^2, nonnegative on the domain."""
    x = np.asarray(x, dtype=float)
    Hx = model.gradient(x) if co_gradient is None else np.asarray(co_gradient)
    if model.n_irreversible == 0:
        return 0.0
    b = brackets(model, x, Hx)
    gam = model.modulation_values(x, Hx)
    return float(np.sum(gam * b * b))


def rhs(model: RIPHSModel, x, u) -> np.ndarray:
    """Vector field of the state equation at (x, u)."""
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (model.input_dim,):
        raise ModelError(f"u: expected shape ({model.input_dim},), got {u.shape}")
    model.require_in_domain(x)
    Hx = model.gradient(x)
    f = model.poisson(x) @ Hx
    e = model.entropy_vector
    for J, gam in zip(model.irr_structures, model.modulations):
        JHx = J @ Hx
        b = float(e @ JHx)
        val = float(gam(x, Hx))
        _check_modulations(np.array([val]), model.name)
        f = f + val * b * JHx
    if model.input_dim:
        f = f + model.input_matrix(x, Hx) @ u
    if not np.all(np.isfinite(f)):
        raise ModelError(f"{model.name}: rhs evaluated non-finite at x={x}")
    return f


def rhs_batch(model: RIPHSModel, X: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Vector field on a batch of columns.

    X has shape (n, B), U shape (m, B); returns (n, B).  Falls back to a
    column loop for models without vectorized callables.  Domain membership
    is enforced for the whole batch.
    """
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    B = X.shape[1]
    ok = model.state_domain.contains_batch(X)
    if not np.all(ok):
        j = int(np.argmin(ok))
        raise DomainError(f"{model.name}: batch column {j} outside the "
                          f"state domain (x = {X[:, j]})")
    if not model.vectorized:
        return np.stack([rhs(model, X[:, j], U[:, j]) for j in range(B)],
                        axis=1)

    HX = model.gradient_batch(X)
    J0 = model.poisson_structure
    if J0 is None:
        F = np.zeros_like(X)
    elif callable(J0):
        F = np.stack([model.poisson(X[:, j]) @ HX[:, j] for j in range(B)],
                     axis=1)
    else:
        F = J0 @ HX
    e = model.entropy_vector
    if model.n_irreversible:
        gam = model.modulation_values_batch(X, HX)
        for k, J in enumerate(model.irr_structures):
            JHX = J @ HX
            bk = e @ JHX
            F = F + (gam[k] * bk) * JHX
    if model.input_dim:
        G = model.input_map
        if callable(G):
            F = F + np.stack([model.input_matrix(X[:, j], HX[:, j]) @ U[:, j]
                              for j in range(B)], axis=1)
        else:
            F = F + G @ U
    if not np.all(np.isfinite(F)):
        raise ModelError(f"{model.name}: batched rhs evaluated non-finite")
    return F


def outputs(model: RIPHSModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Conjugate output pair (y_H, y_S) at x.

    y_H = g^T Hx is the energy-conjugate output, y_S = g^T e the
    entropy-conjugate one; both have shape (m,).
    """
    x = np.asarray(x, dtype=float)
    model.require_in_domain(x)
    Hx = model.gradient(x)
    G = model.input_matrix(x, Hx)
    return G.T @ Hx, G.T @ model.entropy_vector


def outputs_batch(model: RIPHSModel, X: np.ndarray):
    """(y_H, y_S) columns over a state batch, shapes (m, B)."""
    HX = model.gradient_batch(X)
    G = model.input_map
    if callable(G):
        cols = [model.input_matrix(X[:, j], HX[:, j]) for j in range(X.shape[1])]
        YH = np.stack([g.T @ HX[:, j] for j, g in enumerate(cols)], axis=1)
        YS = np.stack([g.T @ model.entropy_vector for g in cols], axis=1)
        return YH, YS
    YH = G.T @ HX
    YS = np.repeat((G.T @ model.entropy_vector)[:, None], X.shape[1], axis=1)
    return YH, YS


def entropy_production_batch(model: RIPHSModel, X: np.ndarray) -> np.ndarray:
    """sigma over a state batch, shape (B,)."""
    if model.n_irreversible == 0:
        return np.zeros(X.shape[1])
    HX = model.gradient_batch(X)
    gam = model.modulation_values_batch(X, HX)
    e = model.entropy_vector
    sig = np.zeros(X.shape[1])
    for k, J in enumerate(model.irr_structures):
        bk = e @ (J @ HX)
        sig += gam[k] * bk * bk
    return sig


# ---------------------------------------------------------------------------
# trajectories


@dataclasses.dataclass
class TrajectorySolution:
    """A discrete state/control trajectory with conjugate output samples.

    states holds K+1 rows, controls K rows (piecewise constant on the
    intervals of time_grid).  outputs_energy / outputs_entropy / the
    entropy_production samples are nodal values.
    """

    time_grid: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    outputs_energy: np.ndarray
    outputs_entropy: np.ndarray
    entropy_production: np.ndarray
    solver_metadata: dict = dataclasses.field(default_factory=dict)

    @classmethod
    def from_states(cls, model: RIPHSModel, time_grid, states, controls,
                    solver_metadata=None) -> "TrajectorySolution":
        time_grid = np.asarray(time_grid, dtype=float)
        states = np.asarray(states, dtype=float)
        controls = np.asarray(controls, dtype=float)
        if controls.ndim == 1:
            controls = controls.reshape(-1, max(model.input_dim, 1))
        YH, YS = outputs_batch(model, states.T)
        sig = entropy_production_batch(model, states.T)
        sol = cls(time_grid=time_grid, states=states, controls=controls,
                  outputs_energy=YH.T, outputs_entropy=YS.T,
                  entropy_production=sig,
                  solver_metadata=dict(solver_metadata or {}))
        sol.validate(model)
        return sol

    def validate(self, model: Optional[RIPHSModel] = None):
        K = self.controls.shape[0]
        if self.time_grid.shape != (K + 1,):
            raise ValueError("time grid / control length mismatch")
        if self.states.shape[0] != K + 1:
            raise ValueError("states / time grid length mismatch")
        if np.any(np.diff(self.time_grid) <= 0):
            raise ValueError("time grid must be strictly increasing")
        if float(np.min(self.entropy_production)) < -1e-12:
            raise ValueError("negative entropy production sample")
        if model is not None:
            ok = model.state_domain.contains_batch(self.states.T)
            if not np.all(ok):
                raise DomainError("trajectory leaves the state domain at "
                                  f"node {int(np.argmin(ok))}")

    @property
    def n_steps(self) -> int:
        return self.controls.shape[0]

    def midpoint_states(self) -> np.ndarray:
        return 0.5 * (self.states[:-1] + self.states[1:])

    def step_sizes(self) -> np.ndarray:
        return np.diff(self.time_grid)


def balance_residuals(model: RIPHSModel, traj: TrajectorySolution):
    """Discrete energy and entropy balance defects of a trajectory.

    Flows are sampled at interval midpoints, matching the implicit midpoint
    discretization:

        energy residual  |H(x_K) - H(x_0) - sum_i y_H(mid_i) . u_i dt_i|
        entropy residual |S(x_K) - S(x_0) - sum_i (sigma(mid_i)
                                                   + y_S(mid_i) . u_i) dt_i|
    """
    traj.validate()
    M = traj.midpoint_states().T
    dt = traj.step_sizes()
    YH, YS = outputs_batch(model, M)
    sig = entropy_production_batch(model, M)
    U = traj.controls.T
    supply_H = float(np.sum(np.sum(YH * U, axis=0) * dt))
    supply_S = float(np.sum((sig + np.sum(YS * U, axis=0)) * dt))
    dH = model.hamiltonian_at(traj.states[-1]) - model.hamiltonian_at(traj.states[0])
    dS = model.entropy(traj.states[-1]) - model.entropy(traj.states[0])
    return abs(dH - supply_H), abs(dS - supply_S)


# ---------------------------------------------------------------------------
# coordinate transforms


def transform_model(model: RIPHSModel, V: np.ndarray) -> RIPHSModel:
    """Push the model through the linear coordinate change z = V x.

    The returned model generates exactly the transformed trajectories:
    structure matrices map as V J V^T, the entropy vector as V^{-T} e, the
    Hamiltonian by composition with V^{-1}, modulations and input map by
    pullback of their arguments.  V must be invertible; its condition
    number is recorded in the result's metadata.
    """
    V = np.asarray(V, dtype=float)
    n = model.state_dim
    if V.shape != (n, n):
        raise ModelError(f"transform matrix has shape {V.shape}, expected "
                         f"({n}, {n})")
    cond = float(np.linalg.cond(V))
    if not np.isfinite(cond):
        raise ModelError("transform matrix is singular")
    Vinv = np.linalg.inv(V)
    VinvT = Vinv.T

    grad = model.hamiltonian_gradient
    ham = model.hamiltonian

    def ham_t(Z):
        return ham(Vinv @ Z)

    def grad_t(Z):
        return VinvT @ np.asarray(grad(Vinv @ Z), dtype=float)

    hess_t = None
    if model.hamiltonian_hessian is not None:
        hess = model.hamiltonian_hessian

        def hess_t(Z):
            return VinvT @ np.asarray(hess(Vinv @ Z), dtype=float) @ Vinv

    J0 = model.poisson_structure
    if J0 is None:
        J0_t = None
    elif callable(J0):
        def J0_t(Z):
            return V @ np.asarray(J0(Vinv @ Z), dtype=float) @ V.T
    else:
        J0_t = V @ J0 @ V.T

    irr_t = [V @ J @ V.T for J in model.irr_structures]
    e_t = VinvT @ model.entropy_vector

    def _wrap_modulation(gam):
        def gam_t(Z, HZ):
            return gam(Vinv @ Z, V.T @ HZ)
        return gam_t

    mods_t = [_wrap_modulation(g) for g in model.modulations]

    G = model.input_map
    if callable(G):
        def G_t(Z, HZ):
            return V @ np.asarray(G(Vinv @ Z, V.T @ HZ), dtype=float)
    else:
        G_t = V @ G

    dom = model.state_domain
    domain_t = PredicateDomain(lambda Z: dom.contains(Vinv @ Z))

    return RIPHSModel(
        state_dim=n, input_dim=model.input_dim,
        hamiltonian=ham_t, hamiltonian_gradient=grad_t,
        hamiltonian_hessian=hess_t,
        entropy_vector=e_t, irr_structures=irr_t, modulations=mods_t,
        input_map=G_t, poisson_structure=J0_t, state_domain=domain_t,
        vectorized=model.vectorized, name=model.name + "+linmap",
        metadata={**model.metadata, "transform_condition": cond},
    )
