"""Geometric queries on exact confidence regions.

Everything here reduces to optimization or counting over the region
{p : excess(p) <= 0} described by a ConfidenceRegionSpec:

* anchor points — per-coordinate extremes, whose ranges sum to phi_A;
* grid volume — midpoint counting of feasible cells, the D measure;
* farthest pair — maximal squared diameter, the E measure;
* ellipsoid scalings — the smallest/largest scalings k_out/k_in of the
  linearized ellipsoid that sandwich the exact region;
* boundary tracing — 2-D level-set polylines for plots and oracles.

Two workhorse strategies appear throughout.  A *ray fan* shoots rays from
p_hat and bisects each to the boundary; it is fully batched (one vector of
radii per iteration), deterministic, and doubles as a cheap global scan
that both warm-starts and cross-checks the SQP solves.  Every
optimization-based result is then verified against an independent dense
evaluation (feasible grid or dense boundary) before it is accepted — the
two routes are kept separate on purpose.

Rays that reach the parameter search box while still inside the region
signal an unbounded region (RegionUnboundedError); anchor solutions that
land on the box raise the same way, since the box is an implementation
bound, not part of the region definition.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import nlp
from .errors import ConfigError, RegionUnboundedError, SolverFailure, VerificationFailure
from .estimation import ConfidenceRegionSpec

__all__ = [
    "GeometrySettings",
    "AnchorSet",
    "GridVolume",
    "FarthestPair",
    "EllipsoidScalings",
    "ray_fan_boundary",
    "anchor_points",
    "anchor_ranges_fast",
    "bounding_orthotope",
    "grid_volume",
    "farthest_pair",
    "farthest_pair_fast",
    "ellipsoid_scalings",
    "ellipsoid_scalings_fast",
    "boundary_trace",
]

@dataclass(frozen=True)
class GeometrySettings:
    """Knobs for the lower-level solves; defaults match the test setup."""

    n_starts: int = 32
    seed: int = 0
    n_rays: int = 96
    verify_rays: int = 512
    grid_resolution: int = 400
    grid_gap_abs: float = 1e-3
    grid_gap_rel: float = 1e-4
    kkt_tol: float = 1e-8
    max_iter: int = 200
    cell_budget: int = 50_000_000
    verify: bool = True

    def tolerances(self) -> dict:
        return {"kkt_tol": self.kkt_tol, "max_iter": self.max_iter}


@dataclass(frozen=True)
class AnchorSet:
    """Coordinate extremes of the region: ordered (min p1, max p1, min p2, ...)."""

    anchors: np.ndarray  # (2*n_p, n_p)
    ranges: np.ndarray  # (n_p, 2) -> (p_j^L, p_j^U)
    phi_A: float
    solutions: tuple = field(default=(), repr=False, compare=False)


@dataclass(frozen=True)
class GridVolume:
    epsilon: float
    count: int
    phi_D_hat: float
    box: np.ndarray


@dataclass(frozen=True)
class FarthestPair:
    phi1: np.ndarray
    phi2: np.ndarray
    phi_E: float  # squared distance
    solution: Optional[nlp.NlpSolution] = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class EllipsoidScalings:
    k_out: float
    k_in: float
    p_out: np.ndarray
    p_in: np.ndarray
    sol_out: Optional[nlp.NlpSolution] = field(default=None, repr=False, compare=False)
    sol_in: Optional[nlp.NlpSolution] = field(default=None, repr=False, compare=False)


# ---------------------------------------------------------------------------
# ray fan


def _box_exit_param(center: np.ndarray, dirs: np.ndarray, box: np.ndarray) -> np.ndarray:
    """Per-ray parameter t at which center + t*dir leaves the box (t > 0)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = (box[None, :, 1] - center[None, :]) / dirs
        t_lo = (box[None, :, 0] - center[None, :]) / dirs
    t = np.where(dirs > 0, t_hi, np.where(dirs < 0, t_lo, np.inf))
    return t.min(axis=1)


def _rays_to_boundary(crspec: ConfidenceRegionSpec, center: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Boundary points along unit rays from an interior center (any n_p).

    Each ray is expanded geometrically until the excess turns positive, then
    bisected; radii are processed as one batch, so the cost is ~60 batched
    excess evaluations regardless of the ray count.  A ray that reaches the
    search box while still inside the region raises RegionUnboundedError.
    """
    box = crspec.search_box
    n_rays = dirs.shape[0]
    t_exit = _box_exit_param(center, dirs, box)

    scale = float((box[:, 1] - box[:, 0]).min())
    r_lo = np.zeros(n_rays)
    r_hi = np.full(n_rays, np.nan)
    r = np.full(n_rays, 1e-4 * scale)
    pending = np.ones(n_rays, bool)
    for _ in range(200):
        probe = np.minimum(r, t_exit)
        pts = center[None, :] + probe[pending][:, None] * dirs[pending]
        e = crspec.excess_batch(pts)
        outside = e > 0.0
        idx = np.where(pending)[0]
        out_idx = idx[outside]
        r_hi[out_idx] = probe[out_idx]
        pending[out_idx] = False
        in_idx = idx[~outside]
        hit_box = in_idx[probe[in_idx] >= t_exit[in_idx] * (1.0 - 1e-12)]
        if hit_box.size:
            raise RegionUnboundedError(
                "confidence region reaches the parameter search box; "
                f"first escaping ray direction {dirs[hit_box[0]]}",
                direction=dirs[hit_box[0]],
            )
        r_lo[in_idx] = probe[in_idx]
        if not pending.any():
            break
        r[pending] *= 2.0
    else:
        raise SolverFailure("ray expansion failed to exit the region")

    for _ in range(60):
        mid = 0.5 * (r_lo + r_hi)
        pts = center[None, :] + mid[:, None] * dirs
        inside = crspec.excess_batch(pts) <= 0.0
        r_lo = np.where(inside, mid, r_lo)
        r_hi = np.where(inside, r_hi, mid)
    return center[None, :] + (0.5 * (r_lo + r_hi))[:, None] * dirs


def ray_fan_boundary(crspec: ConfidenceRegionSpec, n_rays: int = 96, center=None) -> np.ndarray:
    """Boundary points along n_rays equiangular rays from the center (n_p = 2)."""
    if crspec.n_p != 2:
        raise ConfigError("ray_fan_boundary requires n_p = 2")
    center = crspec.p_hat if center is None else np.asarray(center, float).reshape(-1)
    theta = 2.0 * np.pi * np.arange(n_rays) / n_rays
    dirs = np.column_stack([np.cos(theta), np.sin(theta)])
    return _rays_to_boundary(crspec, center, dirs)


def _boundary_starts(crspec: ConfidenceRegionSpec, n: int, seed: int) -> np.ndarray:
    """Deterministic start points *on the region boundary* for the NLP solves.

    Cold starts drawn uniformly over the search box sit far from the (tiny)
    region, where the linearized membership constraint is useless and SQP
    crawls; projecting each draw radially onto the boundary makes every
    start well-conditioned.  Directions come from seeded Halton points, so
    the set is reproducible and works for any n_p.
    """
    pts = nlp._halton_starts(crspec.search_box, n, seed)
    dirs = pts - crspec.p_hat[None, :]
    norm = np.linalg.norm(dirs, axis=1)
    tiny = norm <= 1e-12
    if tiny.any():  # a draw landed on p_hat: aim along a coordinate axis
        dirs[tiny] = np.eye(crspec.n_p)[np.arange(tiny.sum()) % crspec.n_p]
        norm[tiny] = 1.0
    return _rays_to_boundary(crspec, crspec.p_hat, dirs / norm[:, None])


# ---------------------------------------------------------------------------
# anchors / orthotope


def _membership_mask(crspec: ConfidenceRegionSpec, X: np.ndarray) -> np.ndarray:
    return crspec.excess_batch(X) <= 0.0


def _coordinate_problem(crspec: ConfidenceRegionSpec, j: int, sense: str) -> nlp.NlpProblem:
    grad = np.zeros(crspec.n_p)
    grad[j] = 1.0

    def batch_eval(X):
        return X[:, j], _membership_mask(crspec, X)

    return nlp.NlpProblem(
        n=crspec.n_p,
        objective=lambda p: float(p[j]),
        gradient=lambda p: grad,
        ineq=lambda p: np.array([crspec.excess(p)]),
        ineq_jac=lambda p: crspec.excess_gradient(p)[None, :],
        lower=crspec.search_box[:, 0],
        upper=crspec.search_box[:, 1],
        sense=sense,
        batch_eval=batch_eval,
    )


def _verified_extreme(problem: nlp.NlpProblem, crspec, warm, settings: GeometrySettings, label: str, starts=None):
    """Boundary-start multistart + mandatory grid verification for one extreme problem."""
    if starts is None:
        starts = _boundary_starts(crspec, settings.n_starts, settings.seed)
    run = ([np.asarray(warm, float)] if warm is not None else []) + list(starts)
    tols = settings.tolerances()
    best = None
    for s0 in run:
        sol = nlp.solve_local(problem, s0, tols)
        if not sol.converged:
            continue
        if best is None or (sol.value < best.value if problem.sense == "min" else sol.value > best.value):
            best = sol
    if best is None:
        raise SolverFailure(f"{label}: no multistart converged")
    if not settings.verify:
        return best, None
    cert = nlp.verify_global_on_grid(problem, crspec.search_box, settings.grid_resolution)
    gap_tol = max(settings.grid_gap_abs, settings.grid_gap_rel * abs(best.value))
    gap = nlp.grid_gap(problem.sense, cert, best.value)
    if gap > gap_tol:
        # the grid found a better basin: restart from its witness
        retry = nlp.solve_local(problem, cert["witness"], settings.tolerances())
        if retry.converged:
            better = retry.value < best.value if problem.sense == "min" else retry.value > best.value
            if better:
                best = retry
        gap = nlp.grid_gap(problem.sense, cert, best.value)
        if gap > gap_tol:
            raise VerificationFailure(
                f"{label}: grid verification gap {gap:.3e} exceeds {gap_tol:.3e} "
                f"(grid best {cert['best_value']:.6g} vs solver {best.value:.6g})"
            )
    cert["gap"] = gap
    return best, cert


def anchor_points(
    crspec: ConfidenceRegionSpec,
    settings: Optional[GeometrySettings] = None,
    warm_anchors=None,
) -> AnchorSet:
    """Per-coordinate extremes of the region, each solved and grid-verified.

    Anchors landing on the search box (within 1e-6 of the box extent) raise
    RegionUnboundedError: the box is supposed to strictly contain the region.
    ``warm_anchors`` (2*n_p, n_p) — e.g. the anchors at a nearby design —
    are prepended to the start list of the matching extreme.
    """
    settings = settings or GeometrySettings()
    box = crspec.search_box
    warm = None
    warm_pts = None
    if crspec.n_p == 2:
        warm_pts = ray_fan_boundary(crspec, settings.n_rays)
        starts = warm_pts[:: max(1, warm_pts.shape[0] // settings.n_starts)]
    else:
        starts = _boundary_starts(crspec, settings.n_starts, settings.seed)

    solutions = []
    anchors = np.empty((2 * crspec.n_p, crspec.n_p))
    ranges = np.empty((crspec.n_p, 2))
    for j in range(crspec.n_p):
        for k, sense in enumerate(("min", "max")):
            problem = _coordinate_problem(crspec, j, sense)
            if warm_pts is not None:
                warm = warm_pts[np.argmin(warm_pts[:, j])] if sense == "min" else warm_pts[np.argmax(warm_pts[:, j])]
            run_starts = starts
            if warm_anchors is not None:
                run_starts = np.vstack([np.asarray(warm_anchors, float)[2 * j + k][None, :], starts])
            sol, _cert = _verified_extreme(problem, crspec, warm, settings, f"anchor {sense} p{j + 1}", starts=run_starts)
            extent = box[j, 1] - box[j, 0]
            if sense == "min" and sol.x[j] - box[j, 0] <= 1e-6 * extent:
                raise RegionUnboundedError(f"anchor min p{j + 1} touches the search box; enlarge it")
            if sense == "max" and box[j, 1] - sol.x[j] <= 1e-6 * extent:
                raise RegionUnboundedError(f"anchor max p{j + 1} touches the search box; enlarge it")
            anchors[2 * j + k] = sol.x
            ranges[j, k] = sol.value
            solutions.append(sol)
    phi_A = float((ranges[:, 1] - ranges[:, 0]).sum())
    return AnchorSet(anchors=anchors, ranges=ranges, phi_A=phi_A, solutions=tuple(solutions))


def anchor_ranges_fast(crspec: ConfidenceRegionSpec, n_rays: int = 256) -> AnchorSet:
    """Ray-fan-only anchor estimate (no NLP, no grid): the Monte Carlo path."""
    pts = ray_fan_boundary(crspec, n_rays)
    ranges = np.column_stack([pts.min(axis=0), pts.max(axis=0)])
    anchors = np.empty((2 * crspec.n_p, crspec.n_p))
    for j in range(crspec.n_p):
        anchors[2 * j + 0] = pts[np.argmin(pts[:, j])]
        anchors[2 * j + 1] = pts[np.argmax(pts[:, j])]
    phi_A = float((ranges[:, 1] - ranges[:, 0]).sum())
    return AnchorSet(anchors=anchors, ranges=ranges, phi_A=phi_A)


def bounding_orthotope(anchors: AnchorSet) -> np.ndarray:
    """Axis-aligned box [p_j^L, p_j^U] spanned by the anchor ranges, shape (n_p, 2)."""
    return anchors.ranges.copy()


# ---------------------------------------------------------------------------
# grid volume


def grid_volume(crspec: ConfidenceRegionSpec, box, epsilon: float, cell_budget: int = 50_000_000) -> GridVolume:
    """Midpoint-rule volume: count cells of size epsilon whose centers are members.

    The grid is anchored at the orthotope corner with cell centers at
    lo + (k + 1/2) * epsilon; the number of cells per axis is
    ceil(extent / epsilon), so the cell union covers the orthotope (the last
    cell may overhang).  phi_D_hat = count * epsilon^n_p.
    """
    if epsilon <= 0.0:
        raise ConfigError("epsilon must be > 0")
    box = np.asarray(box, float).reshape(crspec.n_p, 2)
    extents = box[:, 1] - box[:, 0]
    m = np.maximum(1, np.ceil(extents / epsilon - 1e-12).astype(int))
    total = int(np.prod(m.astype(float)))
    if total > cell_budget:
        raise ConfigError(
            f"grid of {total} cells exceeds the budget {cell_budget}; increase epsilon"
        )
    axes = [box[j, 0] + (np.arange(m[j]) + 0.5) * epsilon for j in range(crspec.n_p)]
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.stack([a.reshape(-1) for a in mesh], axis=1)
    count = 0
    chunk = 1 << 20
    for start in range(0, X.shape[0], chunk):
        count += int(_membership_mask(crspec, X[start : start + chunk]).sum())
    if count < 1:
        raise SolverFailure("gridded region is empty — epsilon too coarse for this region")
    phi = count * float(epsilon) ** crspec.n_p
    return GridVolume(epsilon=float(epsilon), count=count, phi_D_hat=phi, box=box)


# ---------------------------------------------------------------------------
# farthest pair


def _pair_problem(crspec: ConfidenceRegionSpec) -> nlp.NlpProblem:
    n = crspec.n_p

    def objective(z):
        d = z[:n] - z[n:]
        return float(d @ d)

    def gradient(z):
        d = z[:n] - z[n:]
        return np.concatenate([2.0 * d, -2.0 * d])

    def ineq(z):
        return np.array([crspec.excess(z[:n]), crspec.excess(z[n:])])

    def ineq_jac(z):
        J = np.zeros((2, 2 * n))
        J[0, :n] = crspec.excess_gradient(z[:n])
        J[1, n:] = crspec.excess_gradient(z[n:])
        return J

    lo = np.concatenate([crspec.search_box[:, 0]] * 2)
    hi = np.concatenate([crspec.search_box[:, 1]] * 2)
    return nlp.NlpProblem(
        n=2 * n,
        objective=objective,
        gradient=gradient,
        ineq=ineq,
        ineq_jac=ineq_jac,
        lower=lo,
        upper=hi,
        sense="max",
    )


def _top_boundary_pairs(pts: np.ndarray, k: int) -> list:
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    flat = np.argsort(d2, axis=None)[::-1]
    pairs = []
    seen = set()
    for f in flat:
        i, j = divmod(int(f), pts.shape[0])
        if i == j:
            continue
        key = (min(i, j), max(i, j))
        if key in seen:
            continue
        seen.add(key)
        pairs.append((i, j))
        if len(pairs) >= k:
            break
    return pairs


def farthest_pair(
    crspec: ConfidenceRegionSpec,
    settings: Optional[GeometrySettings] = None,
    warm_pairs=None,
) -> FarthestPair:
    """Globally farthest member pair; phi_E is the squared distance.

    Warm starts come from the ray-fan boundary and from anchor pairs
    (points on the orthotope facets); the result is checked against the
    densely sampled boundary, which for a connected planar region is where
    the diameter is attained.  ``warm_pairs`` is an optional list of
    stacked (2*n_p,) endpoints to prepend (pairs from a nearby design).
    """
    settings = settings or GeometrySettings()
    problem = _pair_problem(crspec)
    pts = ray_fan_boundary(crspec, settings.n_rays)
    starts = [np.asarray(w, float).reshape(-1) for w in (warm_pairs or [])]
    starts += [np.concatenate([pts[i], pts[j]]) for i, j in _top_boundary_pairs(pts, 3)]
    anch = anchor_ranges_fast(crspec, settings.n_rays)
    for j in range(crspec.n_p):
        starts.append(np.concatenate([anch.anchors[2 * j], anch.anchors[2 * j + 1]]))
    # pseudo-random boundary pairs: each start paired with its farthest peer
    bs = _boundary_starts(crspec, max(4, settings.n_starts // 4), settings.seed)
    peer = np.argmax(((bs[:, None, :] - bs[None, :, :]) ** 2).sum(axis=2), axis=1)
    starts.extend(np.concatenate([bs[i], bs[peer[i]]]) for i in range(bs.shape[0]))

    pool = []
    for s in starts:
        sol = nlp.solve_local(problem, s, settings.tolerances())
        if sol.converged:
            pool.append(sol)
    if not pool:
        raise SolverFailure("farthest pair: no start converged")
    best = max(pool, key=lambda s: s.value)

    if settings.verify:
        dense = ray_fan_boundary(crspec, settings.verify_rays)
        d2 = ((dense[:, None, :] - dense[None, :, :]) ** 2).sum(axis=2)
        ij = np.unravel_index(np.argmax(d2), d2.shape)
        dense_best = float(d2[ij])
        tol = max(settings.grid_gap_abs, settings.grid_gap_rel * abs(best.value))
        if dense_best > best.value + tol:
            retry = nlp.solve_local(
                problem, np.concatenate([dense[ij[0]], dense[ij[1]]]), settings.tolerances()
            )
            if retry.converged and retry.value > best.value:
                best = retry
            if dense_best > best.value + tol:
                raise VerificationFailure(
                    f"farthest pair: dense boundary distance {dense_best:.6g} exceeds solver value {best.value:.6g}"
                )

    n = crspec.n_p
    box = crspec.search_box
    extent = box[:, 1] - box[:, 0]
    for endpoint in (best.x[:n], best.x[n:]):
        if np.any(endpoint - box[:, 0] <= 1e-6 * extent) or np.any(box[:, 1] - endpoint <= 1e-6 * extent):
            raise RegionUnboundedError("farthest-pair endpoint touches the search box; enlarge it")
    return FarthestPair(phi1=best.x[:n].copy(), phi2=best.x[n:].copy(), phi_E=float(best.value), solution=best)


def farthest_pair_fast(crspec: ConfidenceRegionSpec, n_rays: int = 256) -> FarthestPair:
    """Dense-boundary diameter without NLP polish: the Monte Carlo path."""
    pts = ray_fan_boundary(crspec, n_rays)
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    i, j = np.unravel_index(np.argmax(d2), d2.shape)
    return FarthestPair(phi1=pts[i].copy(), phi2=pts[j].copy(), phi_E=float(d2[i, j]))


# ---------------------------------------------------------------------------
# ellipsoid scalings


def _quadratic_form(M: np.ndarray, p_hat: np.ndarray):
    def q(p):
        d = np.asarray(p, float) - p_hat
        return float(d @ M @ d)

    def q_grad(p):
        d = np.asarray(p, float) - p_hat
        return 2.0 * (M @ d)

    def q_batch(X):
        D = X - p_hat[None, :]
        return np.einsum("mi,ij,mj->m", D, M, D)

    return q, q_grad, q_batch


def ellipsoid_scalings(
    crspec: ConfidenceRegionSpec,
    fim,
    settings: Optional[GeometrySettings] = None,
    warm=None,
) -> EllipsoidScalings:
    """Scalings of the ellipsoid q(p) = (p - p_hat)' M (p - p_hat) that sandwich the region.

    k_out = max q over the region (outer ellipsoid through the most extreme
    member); k_in = min q over the region *boundary* (inner ellipsoid through
    the closest boundary point).  For a linear model q equals the excess
    shifted by the threshold, so k_out = k_in = threshold exactly.
    ``warm`` is an optional (p_out, p_in) pair from a nearby design.
    """
    settings = settings or GeometrySettings()
    M = np.asarray(getattr(fim, "matrix", fim), float)
    q, q_grad, q_batch = _quadratic_form(M, crspec.p_hat)
    boundary = ray_fan_boundary(crspec, settings.n_rays)
    q_bnd = q_batch(boundary)

    # outer: maximize q over the region
    def batch_eval(X):
        return q_batch(X), _membership_mask(crspec, X)

    prob_out = nlp.NlpProblem(
        n=crspec.n_p,
        objective=q,
        gradient=q_grad,
        ineq=lambda p: np.array([crspec.excess(p)]),
        ineq_jac=lambda p: crspec.excess_gradient(p)[None, :],
        lower=crspec.search_box[:, 0],
        upper=crspec.search_box[:, 1],
        sense="max",
        batch_eval=batch_eval,
    )
    warm_out = boundary[int(np.argmax(q_bnd))]
    out_starts = boundary[:: max(1, boundary.shape[0] // settings.n_starts)]
    if warm is not None:
        out_starts = np.vstack([np.asarray(warm[0], float)[None, :], out_starts])
    sol_out, _ = _verified_extreme(prob_out, crspec, warm_out, settings, "ellipsoid outer scaling", starts=out_starts)

    # inner: minimize q on the boundary (equality-constrained)
    prob_in = nlp.NlpProblem(
        n=crspec.n_p,
        objective=q,
        gradient=q_grad,
        eq=lambda p: np.array([crspec.excess(p)]),
        eq_jac=lambda p: crspec.excess_gradient(p)[None, :],
        lower=crspec.search_box[:, 0],
        upper=crspec.search_box[:, 1],
        sense="min",
    )
    order = np.argsort(q_bnd)
    in_starts = [boundary[idx] for idx in order[:4]]
    if warm is not None:
        in_starts.insert(0, np.asarray(warm[1], float))
    pool = []
    for s0 in in_starts:
        sol = nlp.solve_local(prob_in, s0, settings.tolerances())
        if sol.converged:
            pool.append(sol)
    if not pool:
        raise SolverFailure("ellipsoid inner scaling: no boundary start converged")
    sol_in = min(pool, key=lambda s: s.value)

    if settings.verify:
        dense = ray_fan_boundary(crspec, settings.verify_rays)
        qd = q_batch(dense)
        tol = max(settings.grid_gap_abs, settings.grid_gap_rel * abs(sol_in.value))
        dense_min = float(qd.min())
        if dense_min < sol_in.value - tol:
            retry = nlp.solve_local(prob_in, dense[int(np.argmin(qd))], settings.tolerances())
            if retry.converged and retry.value < sol_in.value:
                sol_in = retry
            if dense_min < sol_in.value - tol:
                raise VerificationFailure(
                    f"ellipsoid inner scaling: dense boundary q {dense_min:.6g} "
                    f"undershoots solver value {sol_in.value:.6g}"
                )

    k_out, k_in = float(sol_out.value), float(sol_in.value)
    if k_in > k_out * (1.0 + 1e-9):
        raise VerificationFailure(f"inner scaling {k_in:.6g} exceeds outer {k_out:.6g}")
    return EllipsoidScalings(
        k_out=k_out, k_in=min(k_in, k_out), p_out=sol_out.x.copy(), p_in=sol_in.x.copy(),
        sol_out=sol_out, sol_in=sol_in,
    )


def ellipsoid_scalings_fast(crspec: ConfidenceRegionSpec, fim, n_rays: int = 256) -> EllipsoidScalings:
    """Ray-fan-only k_out/k_in (boundary extremes of q): the Monte Carlo path."""
    M = np.asarray(getattr(fim, "matrix", fim), float)
    _q, _qg, q_batch = _quadratic_form(M, crspec.p_hat)
    pts = ray_fan_boundary(crspec, n_rays)
    qv = q_batch(pts)
    i_out, i_in = int(np.argmax(qv)), int(np.argmin(qv))
    return EllipsoidScalings(
        k_out=float(qv[i_out]), k_in=float(qv[i_in]), p_out=pts[i_out].copy(), p_in=pts[i_in].copy()
    )


# ---------------------------------------------------------------------------
# boundary tracing (marching squares, n_p = 2)


def _bisect_edges(crspec: ConfidenceRegionSpec, A: np.ndarray, B: np.ndarray, iters: int = 52) -> np.ndarray:
    """Boundary points on segments A->B where excess changes sign (A inside)."""
    t_lo = np.zeros(A.shape[0])
    t_hi = np.ones(A.shape[0])
    for _ in range(iters):
        t = 0.5 * (t_lo + t_hi)
        pts = A + t[:, None] * (B - A)
        inside = crspec.excess_batch(pts) <= 0.0
        t_lo = np.where(inside, t, t_lo)
        t_hi = np.where(inside, t_hi, t)
    t = 0.5 * (t_lo + t_hi)
    return A + t[:, None] * (B - A)


def boundary_trace(crspec: ConfidenceRegionSpec, box, resolution: int = 256) -> list:
    """Closed polylines of the zero level set of excess over the box (n_p = 2).

    Marching squares on a node grid; every crossing is refined by bisection
    along its grid edge, so vertices satisfy |excess| <= ~1e-9 * scale, far
    inside any plotting tolerance.  Returns a list of (k, 2) arrays; closed
    loops repeat their first vertex at the end.
    """
    if crspec.n_p != 2:
        raise ConfigError("boundary_trace requires n_p = 2")
    box = np.asarray(box, float).reshape(2, 2)
    xs = np.linspace(box[0, 0], box[0, 1], resolution)
    ys = np.linspace(box[1, 0], box[1, 1], resolution)
    XX, YY = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack([XX.reshape(-1), YY.reshape(-1)])
    inside = (crspec.excess_batch(nodes) <= 0.0).reshape(resolution, resolution)

    # collect sign-changing grid edges; key them by (node_index, axis)
    edge_pts = {}
    A_list, B_list, keys = [], [], []

    def queue_edge(i0, j0, i1, j1):
        a_in = inside[i0, j0]
        b_in = inside[i1, j1]
        if a_in == b_in:
            return
        a = np.array([xs[i0], ys[j0]])
        b = np.array([xs[i1], ys[j1]])
        if not a_in:  # keep A inside for the bisection
            a, b = b, a
        key = (i0, j0, i1, j1)
        A_list.append(a)
        B_list.append(b)
        keys.append(key)

    for i in range(resolution - 1):
        for j in range(resolution):
            queue_edge(i, j, i + 1, j)
    for i in range(resolution):
        for j in range(resolution - 1):
            queue_edge(i, j, i, j + 1)
    if not keys:
        return []
    pts = _bisect_edges(crspec, np.asarray(A_list), np.asarray(B_list))
    edge_pts = {k: pts[idx] for idx, k in enumerate(keys)}

    # per-cell segments joining the crossing edges (marching squares cases)
    segments = []
    for i in range(resolution - 1):
        for j in range(resolution - 1):
            corners = [inside[i, j], inside[i + 1, j], inside[i + 1, j + 1], inside[i, j + 1]]
            code = sum(1 << k for k, c in enumerate(corners) if c)
            if code in (0, 15):
                continue
            bottom = (i, j, i + 1, j)
            right = (i + 1, j, i + 1, j + 1)
            top = (i, j + 1, i + 1, j + 1)
            left = (i, j, i, j + 1)
            crossing = [e for e in (bottom, right, top, left) if e in edge_pts]
            if len(crossing) == 2:
                segments.append((crossing[0], crossing[1]))
            elif len(crossing) == 4:
                # saddle: disambiguate with the cell-center sign
                cx = 0.5 * (xs[i] + xs[i + 1])
                cy = 0.5 * (ys[j] + ys[j + 1])
                center_in = crspec.excess(np.array([cx, cy])) <= 0.0
                # corners: 0=(i,j) 1=(i+1,j) 2=(i+1,j+1) 3=(i,j+1)
                if corners[0] == center_in:
                    segments.append((bottom, left))
                    segments.append((right, top))
                else:
                    segments.append((bottom, right))
                    segments.append((left, top))

    # stitch segments into polylines by shared edge keys
    adjacency = {}
    for a, b in segments:
        adjacency.setdefault(a, []).append(b)
        adjacency.setdefault(b, []).append(a)
    unused = {tuple(sorted((a, b))) for a, b in segments}
    polylines = []
    while unused:
        seg = next(iter(sorted(unused)))
        unused.discard(seg)
        chain = [seg[0], seg[1]]
        # extend forward then backward
        for _direction in (1, 0):
            while True:
                tail = chain[-1]
                nxt = None
                for cand in adjacency.get(tail, []):
                    key = tuple(sorted((tail, cand)))
                    if key in unused:
                        nxt = cand
                        unused.discard(key)
                        break
                if nxt is None:
                    break
                chain.append(nxt)
            chain.reverse()
        poly = np.array([edge_pts[e] for e in chain])
        if len(chain) >= 3 and chain[0] in adjacency.get(chain[-1], []):
            poly = np.vstack([poly, poly[:1]])
        polylines.append(poly)
    polylines.sort(key=lambda p: -p.shape[0])
    return polylines
