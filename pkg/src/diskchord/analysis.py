"""Global metric analysis: distances, diameter, area, boundary behaviour.

Distances come from Dijkstra on an 8-connected grid graph with metric edge
lengths, refined by polyline relaxation; this recovers smooth accuracy while
staying robust for arbitrary sampled metrics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra as cs_dijkstra

from .errors import DomainError
from .geodesics import polyline_length, relax_polyline, shoot_batch, _rk4_step
from .metrics import MetricDisk


@dataclass
class GlobalInvariants:
    d: float
    P: float
    A: float
    inj_lower: float
    diameter_pair: tuple
    sample_density: int

    def as_dict(self):
        return {"d": self.d, "P": self.P, "A": self.A, "inj_lower": self.inj_lower}


class DiskGraph:
    """8-connected grid graph over the disk plus an exact boundary ring."""

    def __init__(self, m: MetricDisk, resolution=129, ring=512):
        self.m = m
        R = m.domain_radius
        ax = np.linspace(-R, R, resolution)
        U, V = np.meshgrid(ax, ax, indexing="ij")
        pts = np.stack([U.ravel(), V.ravel()], axis=-1)
        inside = np.hypot(pts[:, 0], pts[:, 1]) <= R
        self.resolution = resolution
        idx_of = -np.ones(resolution * resolution, dtype=int)
        idx_of[inside] = np.arange(inside.sum())
        grid_pts = pts[inside]
        thetas = np.linspace(0.0, 2 * np.pi, ring, endpoint=False)
        ring_pts = m.boundary_point(thetas)
        self.points = np.concatenate([grid_pts, ring_pts], axis=0)
        self.n_grid = len(grid_pts)
        self.n_ring = ring
        self.ring_thetas = thetas

        rows, cols = [], []
        n = resolution
        ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        flat = (ii * n + jj).ravel()
        for di, dj in [(0, 1), (1, 0), (1, 1), (1, -1)]:
            oi, oj = ii + di, jj + dj
            ok = (oi >= 0) & (oi < n) & (oj >= 0) & (oj < n)
            a = flat[ok.ravel()]
            b = (oi * n + oj).ravel()[ok.ravel()]
            keep = inside[a] & inside[b]
            rows.append(idx_of[a[keep]])
            cols.append(idx_of[b[keep]])
        # ring nodes attach to nearby grid nodes and to ring neighbours
        cell = 2 * R / (resolution - 1)
        ring_idx = self.n_grid + np.arange(ring)
        gi = np.clip(((ring_pts[:, 0] + R) / cell).astype(int), 0, n - 1)
        gj = np.clip(((ring_pts[:, 1] + R) / cell).astype(int), 0, n - 1)
        for di in (-1, 0, 1, 2):
            for dj in (-1, 0, 1, 2):
                a = np.clip(gi + di, 0, n - 1)
                b = np.clip(gj + dj, 0, n - 1)
                tgt = a * n + b
                keep = inside[tgt]
                rows.append(ring_idx[keep])
                cols.append(idx_of[tgt[keep]])
        rows.append(ring_idx)
        cols.append(self.n_grid + (np.arange(ring) + 1) % ring)
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        pa, pb = self.points[rows], self.points[cols]
        d = pb - pa
        midp = 0.5 * (pa + pb)
        w = np.sqrt(np.maximum(m.inner(midp, d, d), 1e-300))
        nn = len(self.points)
        adj = sparse.coo_matrix((w, (rows, cols)), shape=(nn, nn))
        adj = adj.maximum(adj.T)
        self.adj = adj.tocsr()

    def nearest(self, p) -> int:
        p = np.asarray(p, dtype=float)
        d2 = np.sum((self.points - p) ** 2, axis=1)
        return int(np.argmin(d2))

    def dijkstra(self, sources, return_predecessors=False):
        return cs_dijkstra(self.adj, directed=False, indices=sources,
                           return_predecessors=return_predecessors)

    def extract_path(self, pred, target) -> np.ndarray:
        out = [target]
        while pred[out[-1]] >= 0:
            out.append(int(pred[out[-1]]))
        return self.points[out[::-1]]


def graph_for(m: MetricDisk, resolution=129) -> DiskGraph:
    cache = getattr(m, "_graph_cache", None)
    if cache is None:
        cache = {}
        m._graph_cache = cache
    key = resolution
    if key not in cache:
        cache[key] = DiskGraph(m, resolution=resolution)
    return cache[key]


def distance(m: MetricDisk, p, q, resolution=129, refine=True) -> float:
    """Metric distance, symmetric by construction (canonical ordering)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    for pt in (p, q):
        if np.hypot(*pt) > m.domain_radius + 1e-9:
            raise DomainError(f"point {pt} outside the disk")
    if tuple(q) < tuple(p):
        p, q = q, p
    if np.allclose(p, q, atol=1e-15):
        return 0.0
    g = graph_for(m, resolution)
    si, ti = g.nearest(p), g.nearest(q)
    if si == ti:
        return polyline_length(m, relax_polyline(m, np.linspace(p, q, 8)))
    dist, pred = g.dijkstra([si], return_predecessors=True)
    path = g.extract_path(pred[0], ti)
    path = np.concatenate([[p], path, [q]], axis=0)
    if not refine:
        return polyline_length(m, path)
    spacing = 2.5 * 2 * m.domain_radius / (g.resolution - 1)
    from .geodesics import resample_polyline
    path = resample_polyline(m, path, spacing=spacing)
    path = relax_polyline(m, path, iters=120)
    return polyline_length(m, path)


def boundary_length(m: MetricDisk, samples=2048) -> float:
    thetas = np.linspace(0.0, 2 * np.pi, samples + 1)
    vel = m.boundary_velocity(thetas)
    speed = m.norm(m.boundary_point(thetas), vel)
    return float(np.trapz(speed, thetas))


def boundary_arclength_table(m: MetricDisk, samples=2048):
    """(thetas, cumulative arclength, total P), for theta <-> arclength maps."""
    thetas = np.linspace(0.0, 2 * np.pi, samples + 1)
    vel = m.boundary_velocity(thetas)
    speed = m.norm(m.boundary_point(thetas), vel)
    s = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(thetas))])
    return thetas, s, float(s[-1])


def area(m: MetricDisk, n_r=96, n_theta=512) -> float:
    """Area by polar Gauss-Legendre x trapezoid quadrature of sqrt(det g)."""
    R = m.domain_radius
    x, wgt = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * R * (x + 1.0)
    wr = 0.5 * R * wgt
    thetas = np.linspace(0.0, 2 * np.pi, n_theta, endpoint=False)
    rr, tt = np.meshgrid(r, thetas, indexing="ij")
    pts = np.stack([rr * np.cos(tt), rr * np.sin(tt)], axis=-1)
    integ = m.sqrt_det(pts) * rr
    return float(np.sum(integ.mean(axis=1) * 2 * np.pi * wr))


def boundary_distance_field(m: MetricDisk, resolution=129):
    g = graph_for(m, resolution)
    sources = list(range(g.n_grid, g.n_grid + g.n_ring))
    dist = g.dijkstra(sources)
    return g, dist.min(axis=0)


def boundary_distance_estimate(m: MetricDisk, p, n_theta=128, subdiv=12):
    """Cheap upper estimate of d(p, boundary): best straight-chord length."""
    p = np.asarray(p, dtype=float)
    thetas = np.linspace(0.0, 2 * np.pi, n_theta, endpoint=False)
    ends = m.boundary_point(thetas)
    t = np.linspace(0.0, 1.0, subdiv + 1)
    pts = p[None, None, :] * (1 - t)[None, :, None] + ends[:, None, :] * t[None, :, None]
    d = np.diff(pts, axis=1)
    mid = 0.5 * (pts[:, :-1] + pts[:, 1:])
    seg = np.sqrt(np.maximum(m.inner(mid, d, d), 0.0))
    lengths = seg.sum(axis=1)
    j = int(np.argmin(lengths))
    return float(lengths[j]), float(thetas[j])


def farthest_point_from_boundary(m: MetricDisk, resolution=129):
    """Interior point maximizing distance to the boundary, with the distance.

    Grid argmax of the graph field refined by pattern search on a chord
    estimate (the field is non-smooth on the medial axis, so quadratic
    fitting is unreliable there).
    """
    g, field = boundary_distance_field(m, resolution)
    best = int(np.argmax(field[:g.n_grid]))
    p0 = g.points[best].copy()
    cell = 2 * m.domain_radius / (g.resolution - 1)
    step = cell
    val, _ = boundary_distance_estimate(m, p0)
    dirs = np.array([[1, 0], [-1, 0], [0, 1], [0, -1],
                     [1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float)
    dirs[4:] /= np.sqrt(2.0)
    for _ in range(18):
        improved = False
        for d in dirs:
            cand = p0 + step * d
            if np.hypot(*cand) >= m.domain_radius:
                continue
            v, _ = boundary_distance_estimate(m, cand)
            if v > val + 1e-14:
                p0, val = cand, v
                improved = True
        if not improved:
            step *= 0.5
            if step < 1e-7:
                break
    # sharpen the distance value itself with one relaxed path
    _, theta = boundary_distance_estimate(m, p0)
    t = np.linspace(0.0, 1.0, 16)[:, None]
    path = relax_polyline(m, p0 * (1 - t) + m.boundary_point(theta) * t, iters=60)
    dist_val = polyline_length(m, path)
    return p0, float(dist_val)


def _diameter(m: MetricDisk, resolution=129, n_sources=48, top_k=8):
    g = graph_for(m, resolution)
    ring_step = max(1, g.n_ring // max(8, n_sources * 3 // 4))
    ring_sources = list(range(g.n_grid, g.n_grid + g.n_ring, ring_step))
    rng = np.random.default_rng(0)
    interior = rng.choice(g.n_grid, size=min(n_sources // 4 + 1, g.n_grid), replace=False)
    sources = ring_sources + [int(i) for i in interior]
    dist = g.dijkstra(sources)
    flat = np.argmax(dist, axis=1)
    best = [(dist[i, flat[i]], sources[i], int(flat[i])) for i in range(len(sources))]
    best.sort(reverse=True)
    out = 0.0
    pair = (g.points[best[0][1]], g.points[best[0][2]])
    for val, si, ti in best[:top_k]:
        refined = distance(m, g.points[si], g.points[ti], resolution=resolution)
        if refined > out:
            out = refined
            pair = (g.points[si].copy(), g.points[ti].copy())
    return out, pair


def boundary_geodesic_curvature(m: MetricDisk, thetas) -> np.ndarray:
    """Geodesic curvature of the boundary circle w.r.t. the inward normal."""
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    R = m.domain_radius
    c = m.boundary_point(thetas)
    cp = m.boundary_velocity(thetas)
    cpp = -c  # second parameter derivative of the circle
    gam = m.christoffel(c)
    acc = cpp + np.einsum("...kij,...i,...j->...k", gam, cp, cp)
    nu = m.inward_normal(thetas)
    if nu.ndim == 1:
        nu = nu[None]
    speed2 = m.inner(c, cp, cp)
    return m.inner(c, acc, nu) / speed2


@dataclass
class ConvexityReport:
    convex: bool
    inconclusive: bool
    min_curvature: float
    argmin_theta: float
    samples: int

    def as_dict(self):
        return {"convex": self.convex, "inconclusive": self.inconclusive,
                "min_curvature": self.min_curvature,
                "argmin_theta": self.argmin_theta, "samples": self.samples}


def boundary_convexity_check(m: MetricDisk, samples=1024, tol=1e-6) -> ConvexityReport:
    """Sufficient certificate: nonnegative boundary geodesic curvature."""
    thetas = np.linspace(0.0, 2 * np.pi, samples, endpoint=False)
    kg = boundary_geodesic_curvature(m, thetas)
    i = int(np.argmin(kg))
    mn = float(kg[i])
    return ConvexityReport(convex=bool(mn >= -tol), inconclusive=bool(abs(mn) < tol),
                           min_curvature=mn, argmin_theta=float(thetas[i]),
                           samples=samples)


def focal_distance_to_boundary(m: MetricDisk, samples=64, cap=None, step=5e-3,
                               profile=False):
    """First zero of the boundary Jacobi field along inward normal geodesics.

    J'' + K J = 0 with J(0)=1, J'(0) = -kappa_g; integrated jointly with the
    geodesic.  Returns the minimum focal time over the sampled boundary, or
    with ``profile`` the per-sample (thetas, focal) arrays.
    """
    thetas = np.linspace(0.0, 2 * np.pi, samples, endpoint=False)
    x = m.boundary_point(thetas)
    v = m.inward_normal(thetas)
    kg = boundary_geodesic_curvature(m, thetas)
    J = np.ones(samples)
    Jp = -kg.copy()
    if cap is None:
        cap = 4.0 * m.domain_radius * float(np.sqrt(np.abs(m.tensor(np.zeros((1, 2)))).max()))
    t = 0.0
    focal = np.full(samples, np.inf)
    alive = np.ones(samples, dtype=bool)
    while t < cap and alive.any():
        K = m.gauss_curvature(x[alive])
        # RK4 on (J, J') with frozen K across the step (K varies slowly)
        J_a, Jp_a = J[alive], Jp[alive]
        k1 = (Jp_a, -K * J_a)
        k2 = (Jp_a + 0.5 * step * k1[1], -K * (J_a + 0.5 * step * k1[0]))
        k3 = (Jp_a + 0.5 * step * k2[1], -K * (J_a + 0.5 * step * k2[0]))
        k4 = (Jp_a + step * k3[1], -K * (J_a + step * k3[0]))
        Jn = J_a + (step / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        Jpn = Jp_a + (step / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        xn, vn = _rk4_step(m, x[alive], v[alive], step)
        crossed = Jn <= 0.0
        idx = np.flatnonzero(alive)
        if crossed.any():
            frac = J_a[crossed] / np.maximum(J_a[crossed] - Jn[crossed], 1e-300)
            focal[idx[crossed]] = t + step * frac
            alive[idx[crossed]] = False
        keep = idx[~crossed]
        J[keep], Jp[keep] = Jn[~crossed], Jpn[~crossed]
        x[keep], v[keep] = xn[~crossed], vn[~crossed]
        # stop trajectories that left the disk (normals can exit on thin domains)
        outside = np.hypot(x[keep, 0], x[keep, 1]) > m.domain_radius + 1e-9
        alive[keep[outside]] = False
        t += step
    focal = np.where(np.isfinite(focal), focal, cap)
    if profile:
        return thetas, focal
    return float(np.min(focal))


def sup_positive_curvature(m: MetricDisk, resolution=97) -> float:
    R = m.domain_radius
    ax = np.linspace(-R, R, resolution)
    U, V = np.meshgrid(ax, ax, indexing="ij")
    pts = np.stack([U, V], axis=-1)
    inside = np.hypot(U, V) <= R * (1 - 1e-9)
    K = m.gauss_curvature(pts[inside])
    return float(max(np.max(K), 0.0))


def inj_lower_estimate(m: MetricDisk) -> float:
    supK = sup_positive_curvature(m)
    conj = np.pi / np.sqrt(supK) if supK > 0 else np.inf
    focal = focal_distance_to_boundary(m)
    return 0.5 * float(min(conj, focal))


def global_invariants(m: MetricDisk, resolution=129) -> GlobalInvariants:
    d, pair = _diameter(m, resolution=resolution)
    P = boundary_length(m)
    A = area(m)
    inj = inj_lower_estimate(m)
    return GlobalInvariants(d=float(d), P=float(P), A=float(A), inj_lower=float(inj),
                            diameter_pair=(pair[0].tolist(), pair[1].tolist()),
                            sample_density=resolution)
