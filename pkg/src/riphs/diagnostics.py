"""Turnpike diagnostics for finite-horizon solutions.

The qualitative claim being quantified: optimal trajectories of the
supply-rate problems spend most of the horizon near the set of
force-balanced steady states (or near its intersection with an output
target), with transients confined to the ends.  The integral of the
squared distance to that set stays bounded as the horizon grows, so
consecutive-horizon ratios hover near one.

Nothing here solves anything; these are measurements on trajectories
produced elsewhere.
"""

from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import numpy as np

from .equilibria import EquilibriumSet
from .integrate import HorizonSpec
from .model import RIPHSModel, TrajectorySolution, entropy_production_batch
from .ocp import OCPSpec, OutputSpec, solve_ocp

__all__ = [
    "TurnpikeReport",
    "turnpike_metrics",
    "output_set_distances",
    "target_intersection_empty",
    "SweepEntry",
    "SweepResult",
    "horizon_sweep",
]


@dataclasses.dataclass
class TurnpikeReport:
    """Distance-to-steady-set statistics for one trajectory."""

    time_grid: np.ndarray
    distances: np.ndarray                 # node-wise distance to the steady set
    integral_sq_distance: float           # left-rule integral of distance^2
    epsilon: float
    fraction_near: float                  # fraction of nodes with dist <= eps
    central_window: tuple                 # (t_lo, t_hi) of the central band
    central_max_distance: float
    central_mean_distance: float
    central_max_velocity_inf: float       # max |dx/dt|_inf inside the band
    entropy_production_integral: float
    output_distances: Optional[np.ndarray] = None
    integral_sq_output_distance: Optional[float] = None
    target_intersection_empty: Optional[bool] = None

    def summary(self) -> str:
        lines = [
            f"nodes within {self.epsilon:g} of steady set: "
            f"{100 * self.fraction_near:.1f}%",
            f"integral of squared distance: {self.integral_sq_distance:.6g}",
            f"central band {self.central_window[0]:.3g}..{self.central_window[1]:.3g}: "
            f"max dist {self.central_max_distance:.3g}, "
            f"max |dx/dt| {self.central_max_velocity_inf:.3g}",
            f"entropy produced: {self.entropy_production_integral:.6g}",
        ]
        if self.output_distances is not None:
            lines.append("integral of squared output distance: "
                         f"{self.integral_sq_output_distance:.6g}")
        if self.target_intersection_empty is not None:
            lines.append("steady set meets output target: "
                         f"{not self.target_intersection_empty}")
        return "\n".join(lines)


def output_set_distances(output: OutputSpec, states: np.ndarray) -> np.ndarray:
    """Euclidean distance from each state (rows) to {x : C x = y_ref}."""
    X = np.asarray(states, dtype=float)
    C = output.C
    E = X @ C.T - output.y_ref            # (N, p)
    W = np.linalg.solve(C @ C.T, E.T)     # (p, N)
    return np.linalg.norm(C.T @ W, axis=0)


def target_intersection_empty(eq_set: EquilibriumSet, output: OutputSpec,
                              tol: float = 1e-8) -> Optional[bool]:
    """Whether the steady set misses the output target entirely.

    Only decidable in closed form for affine steady sets; returns None
    otherwise.
    """
    if eq_set.kind != "affine":
        return None
    M = output.C @ eq_set.basis
    r0 = output.C @ eq_set.offset - output.y_ref
    t, *_ = np.linalg.lstsq(M, -r0, rcond=None)
    res = float(np.linalg.norm(M @ t + r0))
    return res > tol * (1.0 + float(np.linalg.norm(output.y_ref)))


def turnpike_metrics(model: RIPHSModel, traj: TrajectorySolution,
                     eq_set: EquilibriumSet, output: Optional[OutputSpec] = None,
                     epsilon: float = 0.1,
                     central_fraction: float = 0.6) -> TurnpikeReport:
    grid = traj.time_grid
    X = traj.states
    steps = traj.step_sizes()
    dist = eq_set.distance_batch(X.T)

    integral_sq = float(np.sum(dist[:-1] ** 2 * steps))
    fraction_near = float(np.mean(dist <= epsilon))

    span = grid[-1] - grid[0]
    t_lo = grid[0] + 0.5 * (1.0 - central_fraction) * span
    t_hi = grid[-1] - 0.5 * (1.0 - central_fraction) * span
    node_mask = (grid >= t_lo) & (grid <= t_hi)
    if not np.any(node_mask):
        node_mask = np.ones_like(grid, dtype=bool)
    central_max = float(np.max(dist[node_mask]))
    central_mean = float(np.mean(dist[node_mask]))

    vel = (X[1:] - X[:-1]) / steps[:, None]
    t_mid = 0.5 * (grid[:-1] + grid[1:])
    vel_mask = (t_mid >= t_lo) & (t_mid <= t_hi)
    if not np.any(vel_mask):
        vel_mask = np.ones_like(t_mid, dtype=bool)
    central_vel = float(np.max(np.abs(vel[vel_mask])))

    sigma_mid = entropy_production_batch(model, traj.midpoint_states().T)
    sigma_integral = float(np.sum(sigma_mid * steps))

    out_dist = None
    out_integral = None
    empty = None
    if output is not None:
        out_dist = output_set_distances(output, X)
        out_integral = float(np.sum(out_dist[:-1] ** 2 * steps))
        empty = target_intersection_empty(eq_set, output)

    return TurnpikeReport(
        time_grid=grid, distances=dist, integral_sq_distance=integral_sq,
        epsilon=epsilon, fraction_near=fraction_near,
        central_window=(float(t_lo), float(t_hi)),
        central_max_distance=central_max, central_mean_distance=central_mean,
        central_max_velocity_inf=central_vel,
        entropy_production_integral=sigma_integral,
        output_distances=out_dist, integral_sq_output_distance=out_integral,
        target_intersection_empty=empty)


@dataclasses.dataclass
class SweepEntry:
    t_f: float
    solution: TrajectorySolution
    report: Optional[TurnpikeReport]
    converged: bool


@dataclasses.dataclass
class SweepResult:
    entries: list

    @property
    def horizons(self) -> np.ndarray:
        return np.array([e.t_f for e in self.entries])

    @property
    def integral_sq_distances(self) -> np.ndarray:
        return np.array([e.report.integral_sq_distance if e.report else np.nan
                         for e in self.entries])

    @property
    def integral_ratios(self) -> np.ndarray:
        """Consecutive ratios of the squared-distance integrals; values near
        one mean the extra horizon time is spent on the steady set."""
        v = self.integral_sq_distances
        with np.errstate(divide="ignore", invalid="ignore"):
            return v[1:] / v[:-1]

    @property
    def all_converged(self) -> bool:
        return all(e.converged for e in self.entries)


def _resolve_threads(n_threads: Optional[int]) -> int:
    if n_threads is not None:
        return max(1, int(n_threads))
    return max(1, int(os.environ.get("RIPHS_THREADS", "1")))


def horizon_sweep(base_spec: OCPSpec, horizons: Sequence[float],
                  eq_set: Optional[EquilibriumSet] = None,
                  warm_start: bool = True, epsilon: float = 0.1,
                  n_threads: Optional[int] = None) -> SweepResult:
    """Solve the same problem over a family of growing horizons.

    Serial mode warm-starts each horizon from the previous solution by
    plateau insertion.  With warm_start=False the horizons are independent
    and can run on a thread pool (RIPHS_THREADS, or the n_threads argument).
    """
    horizons = [float(t) for t in horizons]
    if any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise ValueError("horizons must be strictly increasing")
    dt = base_spec.horizon.dt
    specs = [dataclasses.replace(base_spec, horizon=HorizonSpec(t_f, dt))
             for t_f in horizons]

    if warm_start:
        solutions = []
        prev = None
        for spec in specs:
            sol = solve_ocp(spec, initial_guess=prev)
            solutions.append(sol)
            prev = sol
    else:
        workers = _resolve_threads(n_threads)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                solutions = list(pool.map(solve_ocp, specs))
        else:
            solutions = [solve_ocp(spec) for spec in specs]

    entries = []
    for spec, sol in zip(specs, solutions):
        report = None
        if eq_set is not None:
            report = turnpike_metrics(spec.model, sol, eq_set,
                                      output=spec.output, epsilon=epsilon)
        entries.append(SweepEntry(
            t_f=spec.horizon.t_f, solution=sol, report=report,
            converged=bool(sol.solver_metadata["solver"]["converged"])))
    return SweepResult(entries=entries)
