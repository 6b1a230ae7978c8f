"""Solver for the minimal-cost coupling of a vector-valued measure.

The problem is posed on the edges of a graph over the point cloud: find one
R^m flow vector per edge minimizing ``sum_e d_e ||flow_e||`` subject to the
signed edge-incidence constraint ``net(flow) = mu``.  Its dual is the
maximization of ``sum_i <u_i, mu_i>`` over potentials u that are 1-Lipschitz
across the edges.  With the complete graph (the default) the edge constraint
set equals the global 1-Lipschitz condition, so primal and dual optimal
values both equal the transport norm of the measure.

The reference scheme is ADMM on the splitting

    minimize  sum_e d_e ||x_e||  +  indicator(net(z) = mu),   x = z,

whose x-update is a per-edge soft threshold of the flow norm and whose
z-update is a projection onto the incidence constraint (one graph-Laplacian
solve).  The dual potential is recovered by rescaling the multipliers of
that projection.  Iterations use over-relaxation and residual balancing.
The instance is normalized internally (unit mass scale, unit diameter), so
reported values are exactly equivariant under scaling of weights or points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.sparse

from .core import (
    Instance,
    PotentialField,
    VecotError,
    VectorCoupling,
    WrongDimension,
)

__all__ = [
    "SolverParams",
    "SolveReport",
    "NumericalBreakdown",
    "solve",
    "kr_norm",
    "line_oracle",
    "line_optimal_potential",
]

_OVER_RELAXATION = 1.7
_BALANCE_EVERY = 20      # residual-balancing cadence, iterations
_CHECK_EVERY = 25        # gap-check cadence, iterations
_BALANCE_RATIO = 10.0    # rebalance rho when residual ratio exceeds this
_BALANCE_FACTOR = 2.0
_RHO_MIN, _RHO_MAX = 1e-12, 1e12
_GAP_FLOOR_HAT = 1e-12  # absolute gap floor, in mass * diameter units


class NumericalBreakdown(VecotError):
    """Penalty adaptation diverged."""


@dataclass(frozen=True)
class SolverParams:
    """Tunable parameters of the coupling solver.

    ``edge_policy`` is ``"complete"`` or ``"knn:<k>"``.  The k-nearest
    neighbor restriction solves the problem on a subgraph; when the
    subgraph misses edges of an optimal coupling the restricted value is
    an upper bound on the unrestricted optimum, and no optimality
    guarantee is made.  ``seed`` is reserved for randomized
    initialization strategies; the reference scheme starts from zero and
    never draws from it.
    """

    max_iters: int = 20000
    penalty: float = 1.0
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    tol_gap: float = 1e-6
    edge_policy: str = "complete"
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.penalty <= 0:
            raise ValueError("penalty must be positive")
        for name in ("tol_primal", "tol_dual", "tol_gap"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        _parse_edge_policy(self.edge_policy)


@dataclass(frozen=True)
class SolveReport:
    """Outcome of a solve.

    ``primal_value`` is the cost of the returned coupling, ``dual_value``
    the pairing of the returned potential with the measure, and ``gap``
    their difference (nonnegative up to roundoff).  Residuals are reported
    in original units: ``primal_residual`` is the Frobenius norm of
    ``net(coupling) - mu`` and ``dual_residual`` the final ADMM dual
    residual.  ``status`` is Converged, IterLimit or Infeasible.
    """

    primal_value: float
    dual_value: float
    gap: float
    iterations: int
    primal_residual: float
    dual_residual: float
    status: str
    notes: str = ""


def _parse_edge_policy(policy: str) -> tuple[str, int]:
    if policy == "complete":
        return "complete", 0
    if policy.startswith("knn:"):
        try:
            k = int(policy[4:])
        except ValueError:
            raise ValueError(f"bad edge policy {policy!r}") from None
        if k < 1:
            raise ValueError("knn neighbor count must be >= 1")
        return "knn", k
    raise ValueError(f"bad edge policy {policy!r}; expected 'complete' or 'knn:<k>'")


def _edge_list(instance: Instance, policy: str) -> np.ndarray:
    kind, k = _parse_edge_policy(policy)
    n = instance.size
    if kind == "complete" or k >= n - 1:
        iu, ju = np.triu_indices(n, k=1)
        return np.column_stack([iu, ju]).astype(np.int64)
    order = np.argsort(instance.distances, axis=1, kind="stable")
    neigh = order[:, 1 : k + 1]  # skip self at distance 0
    src = np.repeat(np.arange(n), k)
    pairs = np.sort(np.column_stack([src, neigh.ravel()]), axis=1)
    pairs = np.unique(pairs, axis=0)
    return pairs.astype(np.int64)


def _prune_metric_redundant(pairs: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """Drop edges that are exactly replaceable by a two-hop chain.

    An edge (i, j) with d(i,k) + d(k,j) <= d(i,j) (up to 1e-12 relative,
    k distinct from both endpoints) can be rerouted through k at equal
    cost, so removing it changes neither the optimal value nor dual
    saturation.  Collinear configurations, where the complete graph is
    maximally degenerate, collapse to near-minimal edge sets.  Falls back
    to the input edge set in the (theoretically impossible) event the
    pruned graph is disconnected.
    """
    n = dist.shape[0]
    e_count = pairs.shape[0]
    keep = np.ones(e_count, dtype=bool)
    chunk = max(1, 2_000_000 // max(n, 1))
    for lo in range(0, e_count, chunk):
        hi = min(lo + chunk, e_count)
        i = pairs[lo:hi, 0]
        j = pairs[lo:hi, 1]
        chain = dist[i, :] + dist[j, :]
        rows = np.arange(hi - lo)
        chain[rows, i] = np.inf
        chain[rows, j] = np.inf
        keep[lo:hi] = chain.min(axis=1) > dist[i, j] * (1.0 + 1e-12)
    pruned = pairs[keep]
    if pruned.shape[0] < e_count:
        labels = _components(n, pruned)
        if labels.max() > 0:
            return pairs
    return pruned


def _components(n: int, pairs: np.ndarray) -> np.ndarray:
    """Connected-component label per node, labels ordered by smallest member."""
    adj = [[] for _ in range(n)]
    for i, j in pairs:
        adj[i].append(j)
        adj[j].append(i)
    label = np.full(n, -1, dtype=np.int64)
    current = 0
    for start in range(n):
        if label[start] >= 0:
            continue
        stack = [start]
        label[start] = current
        while stack:
            v = stack.pop()
            for t in adj[v]:
                if label[t] < 0:
                    label[t] = current
                    stack.append(t)
        current += 1
    return label


class _LaplacianSolver:
    """Solves L y = r on the edge graph with componentwise zero-mean y.

    The complete graph admits the closed form y = r / N after removing the
    mean.  General graphs factor L plus a rank-one term per component once.
    """

    def __init__(self, n: int, pairs: np.ndarray, complete: bool, incidence):
        self.n = n
        self.complete = complete
        if complete:
            return
        lap = (incidence @ incidence.T).toarray()
        labels = _components(n, pairs)
        self.labels = labels
        self.masks = [labels == c for c in range(labels.max() + 1)]
        for mask in self.masks:
            v = mask.astype(float)
            lap += np.outer(v, v) / v.sum()
        self.factor = scipy.linalg.cho_factor(lap)

    def __call__(self, rhs: np.ndarray) -> np.ndarray:
        if self.complete:
            y = rhs - rhs.mean(axis=0, keepdims=True)
            y /= self.n
            return y
        y = scipy.linalg.cho_solve(self.factor, rhs)
        for mask in self.masks:
            y[mask] -= y[mask].mean(axis=0, keepdims=True)
        return y


def _shrink(v: np.ndarray, thresh: np.ndarray) -> np.ndarray:
    """Per-row soft threshold of the Euclidean norm."""
    norms = np.linalg.norm(v, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(norms > thresh, 1.0 - thresh / np.where(norms > 0, norms, 1.0), 0.0)
    return v * factor[:, None]


_REPAIR_SWEEPS = 200


def _feasible_potential(u_raw: np.ndarray, distances: np.ndarray) -> np.ndarray:
    """Project a raw multiplier potential into the 1-Lipschitz set.

    Violations of the recovered multipliers concentrate on short edges
    (near-duplicate points), where a tiny absolute error is a large
    relative one; a global rescale would then sacrifice the pairing.
    Instead the worst violated pair is repaired by a symmetric shift of
    its two values (cyclic projection), which moves the potential by the
    absolute excess only.  A final rescale covers whatever the sweep
    limit leaves over, and the base value is pinned to zero.
    """
    u = u_raw - u_raw[0]
    n = u.shape[0]
    if n < 2:
        return u
    diff = u[:, None, :] - u[None, :, :]
    num = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    safe_d = np.where(distances > 0, distances, 1.0)
    np.fill_diagonal(safe_d, 1.0)
    for _ in range(_REPAIR_SWEEPS):
        ratio = num / safe_d
        i, j = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
        if ratio[i, j] <= 1.0:
            break
        du = u[i] - u[j]
        nrm = num[i, j]
        # aim slightly inside the constraint so the pair is settled for good
        shift = (0.5 * (nrm - distances[i, j] * (1.0 - 1e-12)) / nrm) * du
        u[i] -= shift
        u[j] += shift
        for k in (i, j):
            dk = u[k] - u
            num[k, :] = num[:, k] = np.sqrt(np.einsum("ij,ij->i", dk, dk))
            num[k, k] = 0.0
    ratio = num / safe_d
    lip = float(ratio.max())
    if lip > 1.0:
        u = u * ((1.0 - 1e-15) / lip)
    return u - u[0]


def _scalar_simplex_engine(w_hat, d_edge, pairs, incidence, n):
    """Exact engine for scalar weights: the problem is a plain LP.

    Splitting each signed flow into its positive and negative part turns
    ``min sum d |x_e|, net(x) = mu`` into a linear program that a simplex
    solver finishes at a vertex, with the dual potential delivered by the
    equality multipliers.  First-order splitting stalls on exactly these
    instances (degenerate optimal faces), so the scalar case bypasses it.
    Returns ``(flows, u_raw, iterations)`` or None if the LP solver
    declined the problem.
    """
    e_count = pairs.shape[0]
    cost_vec = np.concatenate([d_edge, d_edge])
    a_eq = scipy.sparse.hstack([incidence, -incidence]).tocsc()
    res = scipy.optimize.linprog(
        cost_vec,
        A_eq=a_eq,
        b_eq=w_hat[:, 0],
        bounds=(0, None),
        method="highs",
    )
    if not res.success:
        return None
    flows = (res.x[:e_count] - res.x[e_count:])[:, None]
    u_raw = np.asarray(res.eqlin.marginals, dtype=float)[:, None]
    # Orient the multipliers so the pairing is the optimal value.
    if float(np.einsum("ij,ij->", u_raw, w_hat)) < 0.0:
        u_raw = -u_raw
    return flows, u_raw, int(res.nit)


def solve(instance: Instance, params: SolverParams | None = None):
    """Compute a minimal coupling and a matching dual potential.

    Returns
    -------
    (coupling, potential, report)
        ``coupling`` satisfies ``net(coupling) = mu`` up to
        ``tol_primal * (1 + mass scale)``; ``potential`` has Lipschitz
        constant at most 1 (up to roundoff) and value zero at point 0.
        On ``status == "Converged"`` the duality gap is at most
        ``tol_gap * |primal_value|`` plus a floor of 1e-12 times the
        mass scale times the diameter.

    Identical instances and parameters produce bit-identical results.
    """
    if params is None:
        params = SolverParams()
    n, m = instance.size, instance.target_dim
    weights = instance.measure.weights
    mass_scale = instance.measure.mass_scale

    if mass_scale == 0.0 or n == 1:
        coupling = VectorCoupling(np.zeros((0, 2), dtype=np.int64), np.zeros((0, m)))
        potential = PotentialField(instance.cloud, np.zeros((n, m)))
        report = SolveReport(0.0, 0.0, 0.0, 0, 0.0, 0.0, "Converged", "zero measure")
        return coupling, potential, report

    pairs = _edge_list(instance, params.edge_policy)
    kind, _ = _parse_edge_policy(params.edge_policy)
    if kind == "complete" and n > 2:
        pairs = _prune_metric_redundant(pairs, instance.distances)
    complete = pairs.shape[0] == n * (n - 1) // 2

    # Normalized problem: unit mass scale and unit diameter.  Scaling back at
    # the end keeps kr_norm exactly homogeneous in the weights and the points.
    dist_scale = float(instance.distances.max())
    w_hat = weights / mass_scale
    d_edge = instance.distances[pairs[:, 0], pairs[:, 1]] / dist_scale

    e_count = pairs.shape[0]
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([np.arange(e_count), np.arange(e_count)])
    vals = np.concatenate([np.ones(e_count), -np.ones(e_count)])
    incidence = scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(n, e_count))
    incidence_t = incidence.T.tocsr()

    if not complete:
        labels = _components(n, pairs)
        for c in range(labels.max() + 1):
            block = w_hat[labels == c].sum(axis=0)
            if float(np.abs(block).max()) > params.tol_primal:
                coupling = VectorCoupling(np.zeros((0, 2), dtype=np.int64), np.zeros((0, m)))
                potential = PotentialField(instance.cloud, np.zeros((n, m)))
                report = SolveReport(
                    0.0, 0.0, 0.0, 0, float(np.linalg.norm(weights.sum(axis=0))), 0.0,
                    "Infeasible",
                    f"edge subgraph component {c} carries nonzero mass",
                )
                return coupling, potential, report

    value_scale = mass_scale * dist_scale
    # Stopping threshold in normalized units.  Both terms are invariant
    # under rescaling of the weights or the points, so kr_norm stays
    # exactly homogeneous; the absolute floor only matters when the
    # optimum is negligible against mass * diameter.
    gap_floor = _GAP_FLOOR_HAT
    dist_hat = instance.distances / dist_scale

    def slackness_ok(flows_hat: np.ndarray, pot_hat: np.ndarray) -> bool:
        # Require every flow-carrying edge to be aligned with the potential
        # difference, so a converged solve certifies at any tol >= tol_gap.
        # Alignment never exceeds saturation, so it implies saturation too.
        norms = np.linalg.norm(flows_hat, axis=1)
        carrying = norms > params.tol_gap * norms.sum()
        if not carrying.any():
            return True
        du = pot_hat[pairs[carrying, 0]] - pot_hat[pairs[carrying, 1]]
        align = np.einsum("ij,ij->i", du, flows_hat[carrying])
        bound = (1.0 - params.tol_gap) * d_edge[carrying] * norms[carrying]
        return bool(np.all(align >= bound))

    status = "IterLimit"
    it = 0
    s_dual = 0.0
    z = None
    u_hat = np.zeros((n, m))

    if m == 1:
        lp = _scalar_simplex_engine(w_hat, d_edge, pairs, incidence, n)
        if lp is not None:
            z_lp, u_raw, it = lp
            u_hat = _feasible_potential(u_raw, dist_hat)
            primal_hat = float(np.dot(d_edge, np.linalg.norm(z_lp, axis=1)))
            dual_hat = float(np.einsum("ij,ij->", u_hat, w_hat))
            if primal_hat - dual_hat <= gap_floor + params.tol_gap * abs(
                primal_hat
            ) and slackness_ok(z_lp, u_hat):
                status = "Converged"
                z = z_lp

    if z is None:
        lap_solve = _LaplacianSolver(n, pairs, complete, incidence)
        rho = params.penalty
        alpha = _OVER_RELAXATION
        x = np.zeros((e_count, m))
        z = np.zeros((e_count, m))
        dual_scaled = np.zeros((e_count, m))
        y = np.zeros((n, m))
        r_primal = s_dual = math.inf

        for it in range(1, params.max_iters + 1):
            x = _shrink(z - dual_scaled, d_edge / rho)
            x_relaxed = alpha * x + (1.0 - alpha) * z
            v = x_relaxed + dual_scaled
            y = lap_solve(incidence @ v - w_hat)
            z_new = v - incidence_t @ y
            s_dual = rho * float(np.linalg.norm(z_new - z))
            z = z_new
            dual_scaled = v - z  # equals incidence^T y
            r_primal = float(np.linalg.norm(x - z))

            # The z iterate satisfies net(z) = mu exactly (projection), so
            # the duality gap against a repaired 1-Lipschitz potential is a
            # valid optimality certificate at any iteration; it is the
            # stopping rule.
            if it % _CHECK_EVERY == 0 or it == params.max_iters:
                u_hat = _feasible_potential(-rho * y, dist_hat)
                primal_hat = float(np.dot(d_edge, np.linalg.norm(z, axis=1)))
                dual_hat = float(np.einsum("ij,ij->", u_hat, w_hat))
                if primal_hat - dual_hat <= gap_floor + params.tol_gap * abs(
                    primal_hat
                ) and slackness_ok(z, u_hat):
                    status = "Converged"
                    break
            if it % _BALANCE_EVERY == 0 and status != "Converged":
                if r_primal > _BALANCE_RATIO * s_dual:
                    rho *= _BALANCE_FACTOR
                    dual_scaled /= _BALANCE_FACTOR
                elif s_dual > _BALANCE_RATIO * r_primal:
                    rho /= _BALANCE_FACTOR
                    dual_scaled *= _BALANCE_FACTOR
                if not _RHO_MIN <= rho <= _RHO_MAX:
                    raise NumericalBreakdown(f"penalty diverged to {rho:g}")

        if status != "Converged":
            u_hat = _feasible_potential(-rho * y, dist_hat)

    flows = z * mass_scale
    coupling = VectorCoupling(pairs, flows)
    potential = PotentialField(instance.cloud, u_hat * dist_scale)

    primal_value = float(np.dot(d_edge, np.linalg.norm(z, axis=1))) * value_scale
    dual_value = float(np.einsum("ij,ij->", u_hat, w_hat)) * value_scale
    net = np.zeros((n, m))
    np.add.at(net, pairs[:, 0], flows)
    np.add.at(net, pairs[:, 1], -flows)
    feas = float(np.linalg.norm(net - weights))

    notes = ""
    if kind == "knn":
        notes = "edge subgraph restriction: value is an upper bound on the complete-graph optimum"
    report = SolveReport(
        primal_value=primal_value,
        dual_value=dual_value,
        gap=primal_value - dual_value,
        iterations=it,
        primal_residual=feas,
        dual_residual=s_dual * value_scale,
        status=status,
        notes=notes,
    )
    return coupling, potential, report


def kr_norm(instance: Instance, params: SolverParams | None = None) -> float:
    """Transport norm of the measure: optimal value of the coupling problem."""
    _, _, report = solve(instance, params)
    return report.primal_value


def line_oracle(instance: Instance) -> float:
    """Exact transport norm for scalar measures on the real line.

    Sorting the points and accumulating signed mass reduces the problem to
    ``sum_k |F_k| * (x_{k+1} - x_k)`` over consecutive gaps, where ``F_k``
    is the cumulative mass left of the gap.

    Raises
    ------
    WrongDimension
        Unless both the ambient and the target dimension equal 1.
    """
    if instance.ambient_dim != 1 or instance.target_dim != 1:
        raise WrongDimension(
            f"line oracle needs n = m = 1, got n = {instance.ambient_dim}, "
            f"m = {instance.target_dim}"
        )
    xs = instance.cloud.points[:, 0]
    order = np.argsort(xs, kind="stable")
    xs = xs[order]
    cum = np.cumsum(instance.measure.weights[order, 0])[:-1]
    gaps = np.diff(xs)
    return float(np.dot(np.abs(cum), gaps))


def line_optimal_potential(instance: Instance) -> PotentialField:
    """An exactly optimal potential for a scalar measure on the line.

    The slope on each gap between consecutive points is minus the sign of
    the cumulative mass (+1 on gaps with zero cumulative mass, where any
    admissible slope is optimal), so the pairing equals the oracle value.
    """
    if instance.ambient_dim != 1 or instance.target_dim != 1:
        raise WrongDimension("line potential needs n = m = 1")
    xs = instance.cloud.points[:, 0]
    order = np.argsort(xs, kind="stable")
    cum = np.cumsum(instance.measure.weights[order, 0])[:-1]
    slopes = np.where(cum > 0, -1.0, 1.0)
    gaps = np.diff(xs[order])
    vals_sorted = np.concatenate([[0.0], np.cumsum(slopes * gaps)])
    values = np.empty_like(vals_sorted)
    values[order] = vals_sorted
    values -= values[0]
    return PotentialField(instance.cloud, values[:, None])
