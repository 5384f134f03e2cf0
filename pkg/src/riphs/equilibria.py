"""Equilibrium manifolds, steady states, and distance computations.

The uncontrolled irreversible dynamics stop exactly where every interface
bracket vanishes.  That set

    T = { x in X : b_k(x) = e . (Jk Hx(x)) = 0 for all k }

is a manifold of dimension n - rank[v_1 .. v_N] with v_k = Jk e whenever the
stacked matrix [Hxx(x); Hx(x)^T] has full column rank (the brackets can be
rewritten as b_k = -v_k . Hx, so T is the preimage of a subspace
intersection under the co-energy map).  Built-in systems attach exact affine
descriptions of T; generic models get the implicit description with a
damped Gauss-Newton projection.
"""

from __future__ import annotations

import dataclasses
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import null_space

from .model import (Box, DomainError, ModelError, RIPHSModel,
                    entropy_production, outputs, rhs)

__all__ = [
    "EquilibriumSet",
    "ManifoldReport",
    "ProjectionResult",
    "SteadyState",
    "NotSteadyError",
    "manifold_dimension",
    "distance_to_equilibria",
    "steady_state_cost",
    "find_optimal_steady_state",
    "subspace_distance_equivalence_check",
    "SubspaceDistanceReport",
    "fit_distance_constant",
    "likely_empty",
]

RANK_RTOL = 1e-10          # singular values below RANK_RTOL * s_max count as zero
STEADY_ATOL = 1e-9         # |f(x, u)| <= STEADY_ATOL * (1 + |x|) certifies steadiness


class NotSteadyError(ValueError):
    """The point handed to a steady-state routine does not hold still."""


def _orth(Bmat: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the column span, rank-filtered."""
    Bmat = np.asarray(Bmat, dtype=float)
    if Bmat.size == 0 or Bmat.shape[1] == 0:
        return np.zeros((Bmat.shape[0], 0))
    u, s, _ = np.linalg.svd(Bmat, full_matrices=False)
    r = int(np.sum(s > RANK_RTOL * (s[0] if s.size else 1.0)))
    return u[:, :r]


@dataclasses.dataclass
class ProjectionResult:
    point: np.ndarray
    distance: float
    converged: bool
    used_fallback: bool
    iterations: int
    residual_norm: float


@dataclasses.dataclass
class ManifoldReport:
    rank: int
    dimension: int
    regular: bool
    samples_checked: int
    min_rank_margin: float


class EquilibriumSet:
    """The bracket-zero set T of a model, affine or implicit flavor.

    Affine sets store an offset and an orthonormal tangent basis and give
    exact projections.  Implicit sets keep a model reference and the
    orthonormal basis of span{v_k}; distances come from a damped
    Gauss-Newton projection of the residual map x -> basis^T Hx(x), with a
    flagged sqrt(sigma) surrogate as last resort.
    """

    def __init__(self, kind, rank, dimension, codim_vectors, offset=None,
                 basis=None, model=None, force_basis=None,
                 fallback_scale=1.0):
        if kind not in ("affine", "implicit"):
            raise ValueError(f"unknown equilibrium set kind {kind!r}")
        self.kind = kind
        self.rank = int(rank)
        self.dimension = int(dimension)
        self.codim_vectors = np.asarray(codim_vectors, dtype=float)
        self.offset = None if offset is None else np.asarray(offset, dtype=float)
        self.basis = None if basis is None else np.asarray(basis, dtype=float)
        self.model = model
        self.force_basis = (None if force_basis is None
                            else np.asarray(force_basis, dtype=float))
        self.fallback_scale = float(fallback_scale)

    # -- constructors -------------------------------------------------------

    @classmethod
    def affine(cls, offset, basis, codim_vectors=None) -> "EquilibriumSet":
        offset = np.asarray(offset, dtype=float)
        Q = _orth(np.atleast_2d(np.asarray(basis, dtype=float)).reshape(offset.size, -1))
        n = offset.size
        if codim_vectors is None:
            codim_vectors = np.zeros((n, 0))
        return cls("affine", rank=n - Q.shape[1], dimension=Q.shape[1],
                   codim_vectors=codim_vectors, offset=offset, basis=Q)

    @classmethod
    def from_model(cls, model: RIPHSModel, fallback_scale=1.0) -> "EquilibriumSet":
        VK = np.column_stack([J @ model.entropy_vector
                              for J in model.irr_structures]) \
            if model.n_irreversible else np.zeros((model.state_dim, 0))
        Q = _orth(VK)
        r = Q.shape[1]
        return cls("implicit", rank=r, dimension=model.state_dim - r,
                   codim_vectors=VK, model=model, force_basis=Q,
                   fallback_scale=fallback_scale)

    # -- geometry -----------------------------------------------------------

    def residual(self, x) -> np.ndarray:
        """Signed force residual basis^T Hx(x); zero exactly on T."""
        if self.kind != "implicit":
            raise ValueError("residual map is defined for implicit sets")
        Hx = self.model.gradient(np.asarray(x, dtype=float))
        return self.force_basis.T @ Hx

    def project(self, x, max_iter=50, residual_tol=1e-10, step_tol=1e-12
                ) -> ProjectionResult:
        x = np.asarray(x, dtype=float)
        if self.kind == "affine":
            d = x - self.offset
            point = self.offset + self.basis @ (self.basis.T @ d)
            return ProjectionResult(point=point,
                                    distance=float(np.linalg.norm(x - point)),
                                    converged=True, used_fallback=False,
                                    iterations=0, residual_norm=0.0)
        return self._project_gauss_newton(x, max_iter, residual_tol, step_tol)

    def _project_gauss_newton(self, xi, max_iter, residual_tol, step_tol):
        model = self.model
        Vr = self.force_basis
        y = xi.copy()
        scale = 1.0 + float(np.linalg.norm(model.gradient(xi)))
        r = Vr.T @ model.gradient(y)
        rn = float(np.linalg.norm(r))
        it = 0
        for it in range(1, max_iter + 1):
            if rn <= residual_tol * scale:
                break
            R = Vr.T @ model.hessian(y)
            d = y - xi
            try:
                nu = np.linalg.solve(R @ R.T, R @ d - r)
            except np.linalg.LinAlgError:
                break
            target = xi + R.T @ nu
            step = target - y
            if float(np.linalg.norm(step)) <= step_tol * (1.0 + np.linalg.norm(y)):
                y_new, r_new, rn_new = y, r, rn
                break
            alpha = 1.0
            improved = False
            for _ in range(30):
                y_try = y + alpha * step
                if model.in_domain(y_try):
                    r_try = Vr.T @ model.gradient(y_try)
                    rn_try = float(np.linalg.norm(r_try))
                    if rn_try < rn:
                        y, r, rn = y_try, r_try, rn_try
                        improved = True
                        break
                alpha *= 0.5
            if not improved:
                break
        converged = rn <= residual_tol * scale
        if converged:
            return ProjectionResult(point=y,
                                    distance=float(np.linalg.norm(xi - y)),
                                    converged=True, used_fallback=False,
                                    iterations=it, residual_norm=rn)
        # surrogate: sigma vanishes quadratically on T, so sqrt(sigma)
        # scaled by a calibration constant stands in for the distance
        sur = self.fallback_scale * float(np.sqrt(max(entropy_production(model, xi), 0.0)))
        return ProjectionResult(point=y, distance=sur, converged=False,
                                used_fallback=True, iterations=it,
                                residual_norm=rn)

    def distance(self, x) -> float:
        return self.project(x).distance

    def distance_batch(self, X: np.ndarray) -> np.ndarray:
        """Distances for columns of X, exact and vectorized for affine sets."""
        X = np.asarray(X, dtype=float)
        if self.kind == "affine":
            D = X - self.offset[:, None]
            P = self.basis @ (self.basis.T @ D)
            return np.linalg.norm(D - P, axis=0)
        return np.array([self.distance(X[:, j]) for j in range(X.shape[1])])

    def contains(self, x, tol=1e-8) -> bool:
        x = np.asarray(x, dtype=float)
        return self.distance(x) <= tol * (1.0 + float(np.linalg.norm(x)))


def distance_to_equilibria(eq_set: EquilibriumSet, x, details=False):
    """Distance from x to the equilibrium set.

    With details=True returns the full ProjectionResult (projection point,
    convergence and fallback flags); otherwise just the number.
    """
    res = eq_set.project(np.asarray(x, dtype=float))
    return res if details else res.distance


def manifold_dimension(model: RIPHSModel, n_samples=25, rng=None,
                       sample_box: Optional[Box] = None) -> ManifoldReport:
    """Rank of [v_1 .. v_N] and the manifold dimension n - rank.

    Also samples the regularity condition behind the dimension formula:
    rank [Hxx(x); Hx(x)^T] = n at points drawn from sample_box (by default
    the state domain clipped to [-2, 2] per coordinate).
    """
    n = model.state_dim
    VK = np.column_stack([J @ model.entropy_vector
                          for J in model.irr_structures]) \
        if model.n_irreversible else np.zeros((n, 0))
    if VK.shape[1]:
        s = np.linalg.svd(VK, compute_uv=False)
        rank = int(np.sum(s > RANK_RTOL * s[0]))
    else:
        rank = 0

    rng = np.random.default_rng(rng)
    if sample_box is None:
        lo = np.maximum(model.state_domain.lower
                        if isinstance(model.state_domain, Box)
                        else np.full(n, -np.inf), -2.0)
        hi = np.minimum(model.state_domain.upper
                        if isinstance(model.state_domain, Box)
                        else np.full(n, np.inf), 2.0)
        width = hi - lo
        lo = lo + 1e-3 * width
        hi = hi - 1e-3 * width
        sample_box = Box(lo, hi)
    regular = True
    margin = np.inf
    checked = 0
    for _ in range(int(n_samples)):
        x = rng.uniform(sample_box.lower, sample_box.upper)
        if not model.in_domain(x):
            continue
        M = np.vstack([model.hessian(x), model.gradient(x)[None, :]])
        sv = np.linalg.svd(M, compute_uv=False)
        ratio = float(sv[-1] / sv[0]) if sv[0] > 0 else 0.0
        margin = min(margin, ratio)
        if ratio <= RANK_RTOL:
            regular = False
        checked += 1
    return ManifoldReport(rank=rank, dimension=n - rank, regular=regular,
                          samples_checked=checked,
                          min_rank_margin=float(margin))


# ---------------------------------------------------------------------------
# steady states


@dataclasses.dataclass
class SteadyState:
    """A certified steady operating point (x, u) with its stage cost."""

    state: np.ndarray
    control: np.ndarray
    stage_cost: float
    residual_norm: float
    certified: bool
    notes: dict = dataclasses.field(default_factory=dict)


def _supply_cost(model, weights, x, u):
    yH, yS = outputs(model, x)
    q = weights.alpha1 * yH - weights.alpha2 * weights.T0 * yS
    return float(q @ np.asarray(u, dtype=float))


def steady_state_cost(model: RIPHSModel, x_bar, u_bar, weights,
                      steady_tol=STEADY_ATOL, identity_rtol=1e-9):
    """Stage cost of a steady pair, evaluated two independent ways.

    Returns (direct, closed_form) where direct pairs the conjugate outputs
    with the control and closed_form is alpha2 * T0 * sigma(x_bar).  The two
    agree identically at steady states; disagreement beyond identity_rtol
    (relative) raises, as does a pair that does not actually hold still.
    """
    x_bar = np.asarray(x_bar, dtype=float)
    u_bar = np.atleast_1d(np.asarray(u_bar, dtype=float))
    f = rhs(model, x_bar, u_bar)
    res = float(np.linalg.norm(f))
    if res > steady_tol * (1.0 + float(np.linalg.norm(x_bar))):
        raise NotSteadyError(
            f"(x, u) is not a steady state: |f| = {res:.3e}")
    direct = _supply_cost(model, weights, x_bar, u_bar)
    closed = weights.alpha2 * weights.T0 * entropy_production(model, x_bar)
    if abs(direct - closed) > identity_rtol * max(1.0, abs(direct), abs(closed)):
        raise ModelError(
            "steady-state cost identity violated: "
            f"direct={direct!r}, closed_form={closed!r}")
    return direct, closed


def _polish_steady(model, x, u, lb, ub, max_iter=10):
    """Newton least-squares refinement of f(x, u) = 0 from a near-steady
    pair.  The trajectory solver stops at its own feasibility tolerance
    (about 1e-8); certification asks for more, so the last stretch is a
    plain root polish with a finite-difference Jacobian and minimum-norm
    steps, accepted only while the residual keeps dropping."""
    n, m = model.state_dim, model.input_dim
    z = np.concatenate([np.asarray(x, dtype=float),
                        np.atleast_1d(np.asarray(u, dtype=float))])
    for _ in range(max_iter):
        f = rhs(model, z[:n], z[n:])
        if float(np.linalg.norm(f)) <= 1e-12 * (1.0 + float(np.linalg.norm(z[:n]))):
            break
        J = np.empty((n, n + m))
        for j in range(n + m):
            h = 1e-7 * (1.0 + abs(z[j]))
            zp = z.copy(); zp[j] += h
            zm = z.copy(); zm[j] -= h
            J[:, j] = (rhs(model, zp[:n], zp[n:])
                       - rhs(model, zm[:n], zm[n:])) / (2.0 * h)
        step, *_ = np.linalg.lstsq(J, -f, rcond=None)
        zn = np.clip(z + step, lb, ub)
        if not np.all(np.isfinite(zn)):
            break
        fn = rhs(model, zn[:n], zn[n:])
        if float(np.linalg.norm(fn)) < float(np.linalg.norm(f)):
            z = zn
        else:
            break
    return z[:n], z[n:]


def find_optimal_steady_state(model: RIPHSModel, weights, bounds,
                              x_init=None, search_box: Optional[Box] = None,
                              n_starts=4, rng=None) -> SteadyState:
    """Minimize the steady-state stage cost over pairs (x, u) with f = 0.

    bounds is the control box; the state ranges over search_box intersected
    with the model domain (search_box defaults to the domain clipped to
    [-2, 2] per coordinate, so pass one for models living elsewhere).
    Multi-start unless x_init pins the initial state.  The result carries
    the feasibility residual and a certification flag (residual small,
    cost identity holds, cost above the -1e-10 floor).
    """
    from .ocp import GenericNLP, SolverOptions, solve_nlp  # deferred: ocp pulls more deps

    n, m = model.state_dim, model.input_dim
    rng = np.random.default_rng(rng)
    dom = model.state_domain
    if search_box is None:
        lo = np.maximum(dom.lower if isinstance(dom, Box) else np.full(n, -np.inf), -2.0)
        hi = np.minimum(dom.upper if isinstance(dom, Box) else np.full(n, np.inf), 2.0)
        width = hi - lo
        search_box = Box(lo + 1e-3 * width, hi - 1e-3 * width)

    lb = np.concatenate([search_box.lower, np.asarray(bounds.lower, dtype=float)])
    ub = np.concatenate([search_box.upper, np.asarray(bounds.upper, dtype=float)])

    def objective(z):
        return _supply_cost(model, weights, z[:n], z[n:])

    def constraints(z):
        return rhs(model, z[:n], z[n:])

    # equilibrate: variable sizes from the boxes, row sizes from the median
    # drift magnitude over the search box (rows of f can differ by orders
    # of magnitude between, say, an entropy and a momentum equation)
    mid = 0.5 * (search_box.lower + search_box.upper)
    x_size = np.maximum(0.25 * (search_box.upper - search_box.lower),
                        0.1 * (1.0 + np.abs(mid)))
    u_size = np.maximum(np.abs(np.asarray(bounds.lower, dtype=float)),
                        np.abs(np.asarray(bounds.upper, dtype=float)))
    u_size = np.maximum(np.atleast_1d(u_size), 1e-6)
    samples = []
    for z_s in rng.uniform(lb, ub, size=(32, n + m)):
        try:
            samples.append(np.abs(rhs(model, z_s[:n], z_s[n:])))
        except (DomainError, ModelError):
            continue
    if samples:
        med = np.median(np.asarray(samples), axis=0)
        row_scale = np.maximum(med, max(1e-2 * float(np.max(med)), 1e-9))
    else:
        row_scale = np.ones(n)

    problem = GenericNLP(n_var=n + m, n_con=n, objective=objective,
                         constraints=constraints, lower=lb, upper=ub,
                         var_scale=np.concatenate([x_size, u_size]),
                         row_scale=row_scale)

    if x_init is not None:
        starts = [np.concatenate([np.asarray(x_init, dtype=float), np.zeros(m)])]
    else:
        starts = []
        for _ in range(int(n_starts)):
            x0 = rng.uniform(search_box.lower, search_box.upper)
            starts.append(np.concatenate([x0, np.zeros(m)]))

    candidates = []
    for z0 in starts:
        try:
            sol = solve_nlp(problem, z0,
                            SolverOptions(max_outer=20, max_inner=500))
            x_bar, u_bar = _polish_steady(model, sol.z[:n], sol.z[n:], lb, ub)
        except (DomainError, ModelError):
            continue
        res = float(np.linalg.norm(rhs(model, x_bar, u_bar)))
        candidates.append((objective(np.concatenate([x_bar, u_bar])), res,
                           x_bar, u_bar, sol.status))

    if not candidates:
        raise RuntimeError("steady-state search failed from every start")

    def is_steady(cand):
        return cand[1] <= STEADY_ATOL * (1.0 + float(np.linalg.norm(cand[2])))

    steady = [c for c in candidates if is_steady(c)]
    if steady:
        cost, res, x_bar, u_bar, status = min(steady, key=lambda c: c[0])
    else:
        cost, res, x_bar, u_bar, status = min(candidates, key=lambda c: c[1])
    certified = res <= STEADY_ATOL * (1.0 + float(np.linalg.norm(x_bar)))
    identity_ok = False
    if certified:
        try:
            direct, closed = steady_state_cost(model, x_bar, u_bar, weights)
            identity_ok = True
            cost = direct
        except (NotSteadyError, ModelError):
            identity_ok = False
    certified = certified and identity_ok and cost >= -1e-10
    return SteadyState(state=x_bar, control=u_bar, stage_cost=float(cost),
                       residual_norm=res, certified=bool(certified),
                       notes={"solver": status})


# ---------------------------------------------------------------------------
# subspace distance equivalence (finite families of linear subspaces)


@dataclasses.dataclass
class SubspaceDistanceReport:
    c_low: float
    c_high: float
    n_used: int
    n_zero: int
    degenerate: bool
    intersection_dim: int


def subspace_distance_equivalence_check(subspaces: Sequence[np.ndarray],
                                        n_samples=1000, rng=None,
                                        sample_scale=1.0
                                        ) -> SubspaceDistanceReport:
    """Empirical two-sided comparison of dist(x, intersection) with the sum
    of the individual distances sum_k dist(x, V_k).

    Each subspace is given by a basis matrix (n, d_k); distances use exact
    orthogonal projections.  Reports c_low = min RHS/LHS and
    c_high = max RHS/LHS over random samples with LHS > 0.  Samples inside
    the intersection have both sides zero and are counted in n_zero; if
    every sample is like that (all subspaces the whole space) the report is
    flagged degenerate with NaN constants.
    """
    mats = [np.atleast_2d(np.asarray(Vb, dtype=float)) for Vb in subspaces]
    if not mats:
        raise ValueError("need at least one subspace")
    n = mats[0].shape[0]
    Qs = [_orth(Vb.reshape(n, -1)) for Vb in mats]

    # intersection = null space of the stacked orthogonal-complement projectors
    A = np.vstack([np.eye(n) - Q @ Q.T for Q in Qs])
    Qint = null_space(A, rcond=1e-12)

    rng = np.random.default_rng(rng)
    X = sample_scale * rng.standard_normal((n, int(n_samples)))

    Dint = X - Qint @ (Qint.T @ X) if Qint.size else X
    lhs = np.linalg.norm(Dint, axis=0)
    rhs_sum = np.zeros(X.shape[1])
    for Q in Qs:
        D = X - Q @ (Q.T @ X) if Q.size else X
        rhs_sum += np.linalg.norm(D, axis=0)

    mask = lhs > 1e-12 * np.linalg.norm(X, axis=0)
    n_used = int(np.sum(mask))
    n_zero = int(X.shape[1] - n_used)
    if n_used == 0:
        return SubspaceDistanceReport(c_low=np.nan, c_high=np.nan, n_used=0,
                                      n_zero=n_zero, degenerate=True,
                                      intersection_dim=Qint.shape[1])
    ratios = rhs_sum[mask] / lhs[mask]
    return SubspaceDistanceReport(c_low=float(np.min(ratios)),
                                  c_high=float(np.max(ratios)),
                                  n_used=n_used, n_zero=n_zero,
                                  degenerate=False,
                                  intersection_dim=Qint.shape[1])


def fit_distance_constant(model: RIPHSModel, eq_set: EquilibriumSet,
                          box: Box, n_samples=2000, rng=None):
    """Fit c with dist(x, T)^2 <= c * sigma(x) on a compact box.

    Returns (c, n_used).  The quadratic vanishing of sigma on T makes the
    ratio bounded on compacts; the fitted constant is the sample maximum of
    dist^2 / sigma over points where sigma is not at rounding level.
    """
    rng = np.random.default_rng(rng)
    X = rng.uniform(box.lower[:, None], box.upper[:, None],
                    size=(model.state_dim, int(n_samples)))
    ok = model.state_domain.contains_batch(X)
    X = X[:, ok]
    from .model import entropy_production_batch
    sig = entropy_production_batch(model, X)
    d2 = eq_set.distance_batch(X) ** 2
    floor = 1e-12 * float(np.max(sig)) if sig.size and np.max(sig) > 0 else 0.0
    mask = sig > floor
    if not np.any(mask):
        return np.inf, 0
    c = float(np.max(d2[mask] / sig[mask]))
    return c, int(np.sum(mask))


def likely_empty(eq_set: EquilibriumSet, box: Box, n_starts=64, rng=None) -> bool:
    """Heuristic emptiness check: project from scattered starts.

    Affine sets are never empty.  An implicit set is reported likely empty
    when no start converges to a point of the set inside the box.
    """
    if eq_set.kind == "affine":
        return False
    rng = np.random.default_rng(rng)
    for _ in range(int(n_starts)):
        x0 = rng.uniform(box.lower, box.upper)
        if eq_set.model is not None and not eq_set.model.in_domain(x0):
            continue
        res = eq_set.project(x0)
        if res.converged:
            return False
    return True
