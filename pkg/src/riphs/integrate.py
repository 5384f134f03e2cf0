"""Implicit midpoint time stepping.

The scheme is symmetric and second order, conserves quadratic invariants
exactly, and reproduces the discrete energy/entropy balances with midpoint
flow sampling (the entropy balance is exact up to Newton tolerance because
the entropy is linear in the state).  Controls are zero-order hold on the
uniform grid of a HorizonSpec.
"""

from __future__ import annotations

import dataclasses
import time
from typing import Optional

import numpy as np

from .model import DomainError, RIPHSModel, TrajectorySolution, rhs

__all__ = [
    "HorizonSpec",
    "StepStats",
    "IntegrationError",
    "step_implicit_midpoint",
    "simulate",
]

NEWTON_TOL = 1e-12        # residual <= NEWTON_TOL * (1 + |x_i|)
NEWTON_MAX_ITER = 25
NEWTON_MAX_HALVINGS = 8
MAX_BISECTIONS = 4        # recursive dt bisection depth on Newton failure
FD_STEP = 1e-7            # forward-difference step scale for the Newton Jacobian


class IntegrationError(RuntimeError):
    """A step failed even after dt bisection."""


@dataclasses.dataclass(frozen=True)
class HorizonSpec:
    """Uniform time grid on [0, t_f] with K = round(t_f / dt) steps.

    A t_f that is not a multiple of dt is snapped to the grid; the stored
    t_f is always K * dt.
    """

    t_f: float
    dt: float

    def __post_init__(self):
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ValueError("dt must be positive and finite")
        if not (self.t_f > 0 and np.isfinite(self.t_f)):
            raise ValueError("t_f must be positive and finite")
        K = max(1, int(round(self.t_f / self.dt)))
        object.__setattr__(self, "t_f", K * self.dt)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_f / self.dt))

    def grid(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


@dataclasses.dataclass
class StepStats:
    newton_iterations: int = 0
    bisections: int = 0
    residual: float = 0.0


def _newton_jacobian(model, mid, u, dt):
    """Jacobian of the step residual, I - dt/2 * df/dx at the midpoint."""
    n = model.state_dim
    f0 = rhs(model, mid, u)
    A = np.empty((n, n))
    for j in range(n):
        h = FD_STEP * (1.0 + abs(mid[j]))
        xp = mid.copy()
        xp[j] += h
        A[:, j] = (rhs(model, xp, u) - f0) / h
    return np.eye(n) - 0.5 * dt * A, f0


def step_implicit_midpoint(model: RIPHSModel, x, u, dt, stats: Optional[StepStats] = None,
                           _depth=0):
    """One implicit midpoint step x -> x + dt f((x + x')/2, u).

    Damped Newton on the step residual; a step whose Newton fails (or
    whose iterates leave the state domain without rescue) is retried as two
    half steps, up to MAX_BISECTIONS levels deep.  Returns the new state;
    per-step counters accumulate into stats when given.
    """
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if stats is None:
        stats = StepStats()
    tol = NEWTON_TOL * (1.0 + float(np.linalg.norm(x)))

    def residual(y):
        mid = 0.5 * (x + y)
        return y - x - dt * rhs(model, mid, u)

    try:
        y = x + dt * rhs(model, x, u)   # explicit Euler predictor
        if not model.in_domain(y):
            raise DomainError("predictor left the domain")
        r = residual(y)
    except DomainError:
        return _bisect(model, x, u, dt, stats, _depth)

    rn = float(np.linalg.norm(r))
    for _ in range(NEWTON_MAX_ITER):
        if rn <= tol:
            stats.residual = max(stats.residual, rn)
            return y
        try:
            J, _ = _newton_jacobian(model, 0.5 * (x + y), u, dt)
            delta = np.linalg.solve(J, r)
        except (np.linalg.LinAlgError, DomainError):
            return _bisect(model, x, u, dt, stats, _depth)
        alpha = 1.0
        improved = False
        for _ in range(NEWTON_MAX_HALVINGS):
            y_try = y - alpha * delta
            try:
                if model.in_domain(y_try) and model.in_domain(0.5 * (x + y_try)):
                    r_try = residual(y_try)
                    rn_try = float(np.linalg.norm(r_try))
                    if rn_try < rn:
                        y, r, rn = y_try, r_try, rn_try
                        improved = True
                        break
            except DomainError:
                pass
            alpha *= 0.5
        stats.newton_iterations += 1
        if not improved:
            return _bisect(model, x, u, dt, stats, _depth)
    if rn <= tol:
        stats.residual = max(stats.residual, rn)
        return y
    return _bisect(model, x, u, dt, stats, _depth)


def _bisect(model, x, u, dt, stats, depth):
    if depth >= MAX_BISECTIONS:
        raise IntegrationError(
            f"implicit midpoint step failed at dt={dt:.3e} after "
            f"{MAX_BISECTIONS} bisection levels")
    stats.bisections += 1
    xm = step_implicit_midpoint(model, x, u, 0.5 * dt, stats, depth + 1)
    return step_implicit_midpoint(model, xm, u, 0.5 * dt, stats, depth + 1)


def simulate(model: RIPHSModel, x0, controls, horizon: HorizonSpec
             ) -> TrajectorySolution:
    """Integrate under a piecewise-constant control sequence.

    controls has shape (K, m) matching horizon.n_steps.  The returned
    trajectory carries nodal conjugate outputs and entropy production plus
    integrator statistics in solver_metadata.
    """
    x0 = np.asarray(x0, dtype=float)
    controls = np.asarray(controls, dtype=float)
    if controls.ndim == 1:
        controls = controls.reshape(-1, 1)
    K = horizon.n_steps
    if controls.shape != (K, model.input_dim):
        raise ValueError(f"controls must have shape ({K}, {model.input_dim}), "
                         f"got {controls.shape}")
    model.require_in_domain(x0)

    t0 = time.perf_counter()
    stats = StepStats()
    states = np.empty((K + 1, model.state_dim))
    states[0] = x0
    for i in range(K):
        try:
            states[i + 1] = step_implicit_midpoint(
                model, states[i], controls[i], horizon.dt, stats)
        except IntegrationError as err:
            raise IntegrationError(f"step {i} (t = {i * horizon.dt:.6g}): {err}") \
                from err
    wall = time.perf_counter() - t0

    meta = {
        "scheme": "implicit-midpoint",
        "dt": horizon.dt,
        "newton_iterations": stats.newton_iterations,
        "max_newton_residual": stats.residual,
        "bisections": stats.bisections,
        "wall_time": wall,
    }
    return TrajectorySolution.from_states(model, horizon.grid(), states,
                                          controls, solver_metadata=meta)
