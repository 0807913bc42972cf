"""Berger fan, region subdivision, pair contraction, and radial sweepouts.

The fan consists of minimizing boundary-orthogonal geodesics from the point
farthest from the boundary whose initial directions cover every tangent
direction up to angle pi.  Regions between consecutive fan geodesics are
contracted with the free-boundary flow (with a perturbation retry at
positive-index chords); regions that refuse are routed through the disk
flow on their full boundary and a basepoint conversion.  The resulting
homotopies assemble into a circle-parameterized radial sweepout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .analysis import boundary_arclength_table
from .chords import ChordCandidate, make_candidate, morse_index
from .curves import (ARC, BASED, BOUNDARY, CLOSED, Chain, concat, frechet_distance,
                     length, polygon_contains, reverse, transverse_between,
                     transverse_self_intersections)
from .errors import CoverError, DiskchordError, FlowError
from .flow import BallCover, FlowTrace, run_flow, step_for
from .geodesics import (geodesic_ivp, polyline_length, relax_polyline,
                        resample_polyline, shoot_batch)
from .metrics import MetricDisk


# ---------------------------------------------------------------------------
# Berger fan


@dataclass
class BergerFan:
    p: np.ndarray
    directions: np.ndarray            # (k, 2) metric-unit initial velocities
    frame_angles: np.ndarray          # direction angles in an orthonormal frame
    geodesics: List[Chain]            # p -> boundary, minimizing + orthogonal
    arrival_thetas: np.ndarray
    dist_to_boundary: float
    covering_min: float               # min over samples of max_i <v, dir_i>
    immediate_chord: Optional[ChordCandidate] = None

    @property
    def size(self):
        return len(self.geodesics)


def _orthonormal_frame(m: MetricDisk, p):
    g = m.tensor(p[None])[0]
    e1 = np.array([1.0, 0.0])
    e1 = e1 / np.sqrt(e1 @ g @ e1)
    raw = np.array([0.0, 1.0])
    raw = raw - (raw @ g @ e1) * e1
    e2 = raw / np.sqrt(raw @ g @ raw)
    return e1, e2


def _covering_min(frame_angles, samples=512):
    v = np.linspace(0.0, 2 * np.pi, samples, endpoint=False)
    cos_diff = np.cos(v[:, None] - np.asarray(frame_angles)[None, :])
    return float(cos_diff.max(axis=1).min())


def berger_fan(m: MetricDisk, shots=1024, keep_tol=2e-3, spacing=0.04,
               covering_eps=1e-6, ortho_tol=1e-3) -> BergerFan:
    """Minimal covering set of minimizing orthogonal geodesics from the
    farthest-from-boundary point."""
    from .analysis import farthest_point_from_boundary

    p, db_graph = farthest_point_from_boundary(m)
    e1, e2 = _orthonormal_frame(m, p)
    alphas = np.linspace(0.0, 2 * np.pi, shots, endpoint=False)
    dirs = np.cos(alphas)[:, None] * e1 + np.sin(alphas)[:, None] * e2
    starts = np.repeat(p[None], shots, axis=0)
    _, _, lengths, hit = shoot_batch(m, starts, dirs, max_length=2.5 * db_graph + 1.0)
    lengths = np.where(hit, lengths, np.inf)
    db = float(lengths.min())
    rel = max(1.0, db)
    keep = lengths <= db + keep_tol * rel

    if keep.sum() >= 0.9 * shots:
        chosen = [0.0, np.pi]          # continuum of minimizing directions
    else:
        # cluster contiguous kept runs on the circle
        idx = np.flatnonzero(keep)
        gaps = np.flatnonzero(np.diff(idx) > 1)
        groups = np.split(idx, gaps + 1)
        if len(groups) > 1 and keep[0] and keep[-1]:
            groups[0] = np.concatenate([groups[-1], groups[0]])
            groups.pop()
        reps = []
        for grp in groups:
            vals = lengths[grp]
            reps.append(alphas[grp[int(np.argmin(vals))]])
        reps = sorted(r % (2 * np.pi) for r in reps)
        chosen = _select_covering(reps, covering_eps)
    chosen = [_refine_direction(m, p, e1, e2, a, db) for a in chosen]

    geodesics = []
    arrivals = []
    dirs_out = []
    for a in chosen:
        d = np.cos(a) * e1 + np.sin(a) * e2
        shot = geodesic_ivp(m, (p, d), arclength=2.5 * db + 1.0, step=2e-3)
        if not shot.hit_boundary:
            raise CoverError("fan candidate failed to reach the boundary")
        verts = resample_polyline(m, shot.points, spacing=spacing)
        verts[-1] *= m.domain_radius / np.hypot(*verts[-1])
        geodesics.append(Chain(verts, ARC))
        arrivals.append(shot.hit_theta)
        dirs_out.append(d)

    if len(chosen) == 2:
        return _snap_two_fan(m, p, geodesics, db, spacing, covering_eps)

    fr = np.array(chosen)
    cov = _covering_min(fr)
    fan = BergerFan(p=p, directions=np.array(dirs_out), frame_angles=fr,
                    geodesics=geodesics, arrival_thetas=np.array(arrivals),
                    dist_to_boundary=db, covering_min=cov)
    if cov < -covering_eps:
        raise CoverError(f"fan covering certificate failed: {cov:.2e}")
    return fan


def _snap_two_fan(m, p, geodesics, db, spacing, covering_eps):
    """Polish the near-antipodal pair onto an exact double-normal chord and
    re-anchor the hub at its arclength midpoint, making the two fan
    directions exactly opposite."""
    from .chords import polish_boundary_chord

    raw = np.concatenate([geodesics[0].vertices[::-1],
                          geodesics[1].vertices[1:]], axis=0)
    pts = polish_boundary_chord(m, raw, max_pts=96)
    chord = Chain(pts, BOUNDARY)
    # arclength midpoint
    d = np.diff(pts, axis=0)
    mid = 0.5 * (pts[:-1] + pts[1:])
    seg = np.sqrt(np.maximum(m.inner(mid, d, d), 0.0))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    half = 0.5 * cum[-1]
    j = int(np.searchsorted(cum, half))
    t = (half - cum[j - 1]) / max(cum[j] - cum[j - 1], 1e-300)
    p_new = pts[j - 1] * (1 - t) + pts[j] * t
    first = np.concatenate([pts[:j], p_new[None]], axis=0)
    second = np.concatenate([p_new[None], pts[j:]], axis=0)
    g1 = Chain(resample_polyline(m, first[::-1], spacing=spacing), ARC)
    g2 = Chain(resample_polyline(m, second, spacing=spacing), ARC)
    e1, e2 = _orthonormal_frame(m, p_new)
    tang = second[min(1, len(second) - 1)] - p_new
    g = m.tensor(p_new[None])[0]
    beta = np.arctan2(tang @ g @ e2, tang @ g @ e1)
    fr = np.array([beta + np.pi, beta])
    arr = np.array([np.arctan2(*g1.vertices[-1][::-1]),
                    np.arctan2(*g2.vertices[-1][::-1])])
    cov = _covering_min(fr)
    cand = make_candidate(m, chord, provenance="fan-2")
    fan = BergerFan(p=p_new, directions=np.stack([-tang, tang]) /
                    max(float(m.norm(p_new[None], tang[None])[0]), 1e-300),
                    frame_angles=fr, geodesics=[g1, g2], arrival_thetas=arr,
                    dist_to_boundary=db, covering_min=cov, immediate_chord=cand)
    if cov < -covering_eps:
        raise CoverError(f"two-fan covering certificate failed: {cov:.2e}")
    return fan


def _select_covering(reps, covering_eps):
    """Smallest subset of candidate angles with all circular gaps <= pi."""
    reps = list(reps)
    k = len(reps)
    if k == 0:
        raise CoverError("no minimizing directions found")
    # pairs first (must be antipodal within tolerance)
    best_pair = None
    for i in range(k):
        for j in range(i + 1, k):
            dev = abs(((reps[j] - reps[i]) % (2 * np.pi)) - np.pi)
            if dev < 0.05 and (best_pair is None or dev < best_pair[0]):
                best_pair = (dev, [reps[i], reps[j]])
    if best_pair is not None:
        return best_pair[1]
    best_triple = None
    for i in range(k):
        for j in range(i + 1, k):
            for l in range(j + 1, k):
                a = sorted([reps[i], reps[j], reps[l]])
                gaps = [a[1] - a[0], a[2] - a[1], 2 * np.pi - (a[2] - a[0])]
                mg = max(gaps)
                if mg <= np.pi and (best_triple is None or mg < best_triple[0]):
                    best_triple = (mg, a)
    if best_triple is not None:
        return best_triple[1]
    raise CoverError("no 2- or 3-element covering subset of fan directions")


def _refine_direction(m, p, e1, e2, alpha, db, iters=12):
    """Secant on the arrival-orthogonality defect over the shot angle."""

    def defect(a):
        d = np.cos(a) * e1 + np.sin(a) * e2
        s = geodesic_ivp(m, (p, d), arclength=2.5 * db + 1.0, step=4e-3)
        if not s.hit_boundary:
            return None
        return s.incidence - 0.5 * np.pi

    a0, a1 = alpha, alpha + 2e-3
    f0 = defect(a0)
    f1 = defect(a1)
    if f0 is None or f1 is None:
        return alpha
    for _ in range(iters):
        if abs(f1 - f0) < 1e-15:
            break
        a2 = a1 - f1 * (a1 - a0) / (f1 - f0)
        if abs(a2 - a1) > 0.3:
            break
        f2 = defect(a2)
        if f2 is None:
            break
        a0, f0, a1, f1 = a1, f1, a2, f2
        if abs(f1) < 1e-12:
            break
    return a1


# ---------------------------------------------------------------------------
# regions


@dataclass
class Region:
    index: int
    gamma_a: Chain                 # arrives at theta_a
    gamma_b: Chain                 # arrives at theta_b (CCW from theta_a)
    theta_a: float
    theta_b: float                 # theta_b > theta_a (unwrapped CCW)
    boundary_chain: Chain          # closed: -gamma_a * gamma_b * (arc b->a)
    polygon: np.ndarray
    area: float

    def eta_arc(self, m, t0, t1, spacing=0.02):
        """Boundary sub-arc polyline from angle t0 to t1 (signed span)."""
        n = max(2, int(np.ceil(abs(t1 - t0) * m.domain_radius / spacing)) + 1)
        th = np.linspace(t0, t1, n)
        return m.boundary_point(th)

    def contains(self, pts):
        return polygon_contains(self.polygon, pts)


def subdivide(m: MetricDisk, fan: BergerFan, area_tol=0.01) -> List[Region]:
    """Split the disk into fan regions; certifies the area partition."""
    from .analysis import area as metric_area

    k = fan.size
    if k < 2:
        raise DiskchordError("fan must have 2 or 3 geodesics")
    order = np.argsort(fan.arrival_thetas)
    thetas = fan.arrival_thetas[order]
    geos = [fan.geodesics[i] for i in order]
    regions = []
    total = 0.0
    A = metric_area(m)
    for i in range(k):
        j = (i + 1) % k
        ta = thetas[i]
        tb = thetas[j] if j > i else thetas[j] + 2 * np.pi
        ga, gb = geos[i], geos[j]
        arc = _arc_points(m, tb, ta, spacing=0.02)  # traversed b -> a (CW)
        bnd = np.concatenate([ga.vertices[::-1], gb.vertices[1:], arc[1:]], axis=0)
        if not np.allclose(bnd[0], bnd[-1], atol=1e-9):
            bnd = np.concatenate([bnd, bnd[:1]], axis=0)
        poly = bnd
        reg_area = _metric_polygon_area(m, poly)
        regions.append(Region(index=i, gamma_a=ga, gamma_b=gb, theta_a=float(ta),
                              theta_b=float(tb),
                              boundary_chain=Chain(bnd, CLOSED), polygon=poly,
                              area=reg_area))
        total += reg_area
    if abs(total - A) > area_tol * A:
        raise DiskchordError(f"region areas {total:.4f} do not partition A={A:.4f}")
    return regions


def _arc_points(m, t0, t1, spacing=0.02):
    n = max(2, int(np.ceil(abs(t1 - t0) * m.domain_radius / spacing)) + 1)
    return m.boundary_point(np.linspace(t0, t1, n))


def _metric_polygon_area(m, poly, resolution=129):
    R = m.domain_radius
    ax = np.linspace(-R, R, resolution)
    U, V = np.meshgrid(ax, ax, indexing="ij")
    pts = np.stack([U.ravel(), V.ravel()], axis=-1)
    inside = polygon_contains(poly, pts)
    cell = (2 * R / (resolution - 1)) ** 2
    dens = m.sqrt_det(pts[inside])
    return float(dens.sum() * cell)


# ---------------------------------------------------------------------------
# pair contraction


@dataclass
class PairOutcome:
    kind: str                        # "homotopy" | "chord" | "budget"
    homotopy: Optional[List[Chain]]  # monotone members, pair -> point
    chords: List[ChordCandidate]
    trace: FlowTrace
    collapse_theta: Optional[float] = None


def _chain_normals(m, verts):
    d = np.gradient(verts, axis=0)
    n = np.stack([-d[:, 1], d[:, 0]], axis=-1)
    nn = m.norm(verts, n)
    return n / np.maximum(nn, 1e-300)[:, None]


def _perturb_along_mode(m, region, cand: ChordCandidate, scale):
    """Displace a positive-index chord along its negative eigenmode; the
    candidate displaced deeper into the region is tried first."""
    idx, degen, lam, mode, nodes = morse_index(m, cand.chain, with_mode=True)
    if mode.sum() < 0:
        mode = -mode
    nrm = _chain_normals(m, nodes)
    out = []
    for sgn in (1.0, -1.0):
        verts = nodes + sgn * scale * mode[:, None] * nrm
        for i in (0, -1):
            r = np.hypot(*verts[i])
            if r > 0:
                verts[i] *= m.domain_radius / r
        keep = np.hypot(verts[:, 0], verts[:, 1]) <= m.domain_radius
        verts[~keep] *= (m.domain_radius - 1e-9) / np.hypot(
            verts[~keep][:, 0], verts[~keep][:, 1])[:, None]
        c = Chain(verts, BOUNDARY)
        frac = 1.0 if region is None else float(region.contains(verts[1:-1]).mean())
        out.append((frac, sgn, c))
    out.sort(key=lambda t: -t[0])
    return [(sgn, c) for frac, sgn, c in out if frac > 0.5]


def _in_sector(region: Region, theta) -> bool:
    t = region.theta_a + ((theta - region.theta_a) % (2 * np.pi))
    return t <= region.theta_b + 1e-6


def contract_pair(m: MetricDisk, cover: BallCover, region: Region,
                  two_d: float, budget=600, frechet_tol=0.02,
                  geo_tol=1e-3, ortho_tol=1e-3) -> PairOutcome:
    """Free-boundary flow on -gamma_a * gamma_b with the positive-index
    perturbation retry; certifies homotopy members against 2d.

    If the pair itself certifies as a chord (a 2-fan always does), the flow
    is skipped: stationarity is exact and only the perturbation branch can
    make progress.
    """
    pair = concat(reverse(region.gamma_a), region.gamma_b)
    pair.kind = BOUNDARY
    pair = _respaced(m, pair, cover.spacing)
    chords: List[ChordCandidate] = []
    cand0 = make_candidate(m, pair, provenance=f"pair-{region.index}")
    if cand0.certified(geo_tol, ortho_tol):
        from .flow import FlowStepRecord
        tr = FlowTrace(steps=[FlowStepRecord(0, cand0.length,
                                             cand0.self_intersections, pair)],
                       outcome="chord", chord=cand0, final=pair)
        cand = cand0
    else:
        tr = run_flow(m, cover, pair, budget=budget,
                      provenance=f"pair-{region.index}")
        if tr.outcome == "point":
            return _homotopy_outcome(m, tr, chords, two_d)
        if tr.outcome == "budget":
            return PairOutcome("budget", None, chords, tr)
        cand = tr.chord
    chords.append(cand)
    positive = (cand.morse_index or 0) > 0
    if not positive:
        return PairOutcome("chord", None, chords, tr)
    # perturbation branch: push along the negative mode and re-shorten
    for sgn, pert in _perturb_along_mode(m, region, cand, scale=cover.inj_lower / 10.0):
        if length(m, pert) > length(m, cand.chain) + 1e-9:
            continue
        tr2 = run_flow(m, cover, _respaced(m, pert, cover.spacing), budget=budget,
                       provenance=f"pair-{region.index}-perturbed")
        if tr2.outcome == "point":
            out = _homotopy_outcome(
                m, tr2, chords, two_d,
                members=tr.recorded_chains() + tr2.recorded_chains())
            if out.collapse_theta is not None and not _in_sector(
                    region, out.collapse_theta):
                continue   # escaped the region: wrong side, try the other
            return out
        if tr2.outcome == "chord":
            from .curves import frechet_distinct
            if frechet_distinct(m, tr2.chord.chain, cand.chain, frechet_tol):
                chords.append(tr2.chord)
            return PairOutcome("chord", None, chords, tr2)
    return PairOutcome("chord", None, chords, tr)


def _respaced(m, c: Chain, spacing) -> Chain:
    out = c.copy()
    out.vertices = resample_polyline(m, c.vertices, spacing=spacing)
    if c.kind == BOUNDARY:
        for i in (0, -1):
            v = out.vertices[i]
            r = np.hypot(*v)
            if r > 0:
                out.vertices[i] = v * (m.domain_radius / r)
    return out


def _homotopy_outcome(m, tr, chords, two_d, members=None):
    members = members if members is not None else tr.recorded_chains()
    lengths = [length(m, c) for c in members]
    if max(lengths) > two_d + 1e-6:
        raise DiskchordError(
            f"pair homotopy member exceeds 2d: {max(lengths):.4f} > {two_d:.4f}")
    final = members[-1]
    theta = None
    if final.is_point:
        v = final.vertices[0]
        theta = float(np.arctan2(v[1], v[0]))
    return PairOutcome("homotopy", members, chords, tr, collapse_theta=theta)


# ---------------------------------------------------------------------------
# closed geodesic branch (disk flow on the region boundary)


@dataclass
class BoundaryRoute:
    kind: str                          # "homotopy" | "closed_geodesic"
    free_homotopy: Optional[List[Chain]]
    closed_geodesic: Optional[ChordCandidate]
    connector: Optional[Chain]
    iterates: List[ChordCandidate]
    trace: FlowTrace


def closed_geodesic_branch(m: MetricDisk, cover: BallCover,
                           region: Optional[Region], ks=(2, 3),
                           invariants=None, budget=400,
                           iterate_budget=800) -> BoundaryRoute:
    """Disk flow on the region boundary; on a closed-geodesic stall, build
    the wrapped iterates and flow them to non-simple chords."""
    if region is None:
        th = np.linspace(0.0, 2 * np.pi, 256)
        bnd = Chain(m.boundary_point(th), CLOSED)
        eta_span = (0.0, 2 * np.pi)
    else:
        bnd = region.boundary_chain
        eta_span = (region.theta_a, region.theta_b)
    bnd = Chain(resample_polyline(m, bnd.vertices, spacing=cover.spacing), CLOSED)
    tr = run_flow(m, cover, bnd, budget=budget, provenance="boundary-contract")
    if tr.outcome == "point":
        return BoundaryRoute("homotopy", tr.recorded_chains(), None, None, [], tr)
    if tr.outcome != "chord":
        raise FlowError("boundary contraction exhausted its budget")
    rho = tr.chord
    d = invariants.d if invariants is not None else None
    P = invariants.P if invariants is not None else None
    xi = _connector_to_boundary_arc(m, cover, rho.chain, eta_span)
    iterates = []
    for k in ks:
        it = _wrap_iterate(m, xi, rho.chain, k)
        it = _respaced(m, it, cover.spacing)
        x0 = transverse_self_intersections(it)
        tr_k = run_flow(m, cover, it, budget=iterate_budget,
                        provenance=f"iterate-k{k}")
        cand = tr_k.chord
        if cand is None:
            cand = make_candidate(m, tr_k.final, provenance=f"iterate-k{k}")
            cand.meta["budget_exhausted"] = True
        cand.meta["k"] = k
        cand.meta["initial_intersections"] = x0
        if d is not None:
            bound = 4 * d + k * (2 * d + P)
            cand.meta["bound"] = bound
            cand.meta["bound_ok"] = bool(cand.length <= bound + 1e-6)
        iterates.append(cand)
    return BoundaryRoute("closed_geodesic", None, rho, xi, iterates, tr)


def _connector_to_boundary_arc(m, cover, rho: Chain, eta_span, samples=24):
    """Shortest relaxed connector from the boundary arc to the geodesic."""
    th = np.linspace(eta_span[0], eta_span[1], samples)
    bpts = m.boundary_point(th)
    best = None
    rverts = rho.vertices[:-1]
    for b in bpts:
        j = int(np.argmin(np.sum((rverts - b) ** 2, axis=1)))
        t = np.linspace(0.0, 1.0, 16)[:, None]
        init = b * (1 - t) + rverts[j] * t
        path = relax_polyline(m, init, iters=60)
        L = polyline_length(m, path)
        if best is None or L < best[0]:
            best = (L, path, j)
    L, path, j = best
    return Chain(resample_polyline(m, path, spacing=cover.spacing), ARC)


def _wrap_iterate(m, xi: Chain, rho: Chain, k: int) -> Chain:
    """xi * rho^k * -xi as a boundary-anchored chain."""
    j = int(np.argmin(np.sum((rho.vertices[:-1] - xi.vertices[-1]) ** 2, axis=1)))
    cyc = np.concatenate([rho.vertices[:-1][j:], rho.vertices[:-1][:j]], axis=0)
    loop = np.concatenate([cyc, cyc[:1]], axis=0)
    parts = [xi.vertices]
    start = xi.vertices[-1]
    if not np.allclose(loop[0], start, atol=1e-9):
        parts.append(np.array([start, loop[0]]))
    for _ in range(k):
        parts.append(loop[1:])
    if not np.allclose(loop[-1], xi.vertices[-1], atol=1e-9):
        parts.append(np.array([xi.vertices[-1]])[0:0])
    parts.append(xi.vertices[::-1][1:] if np.allclose(loop[-1], xi.vertices[-1], atol=1e-9)
                 else np.concatenate([[loop[-1]], xi.vertices[::-1]], axis=0)[1:])
    verts = np.concatenate([p for p in parts if len(p)], axis=0)
    return Chain(verts, BOUNDARY)


# ---------------------------------------------------------------------------
# basepoint conversion (free homotopy -> based monotone homotopy)


@dataclass
class BasedHomotopy:
    members: List[Chain]               # based loops, first = full boundary loop
    base: np.ndarray
    base_theta: Optional[float]
    max_length: float
    bound: float
    monotone_ok: bool
    degree_odd_fraction: float


def basepoint_convert(m: MetricDisk, members: List[Chain], q,
                      eps: float, gamma_prefix: Optional[Chain] = None,
                      degree_samples=60, seed=0) -> BasedHomotopy:
    """Convert a monotone free contraction into based loops at q.

    Members must be closed chains contracting to a point z; loops are
    sigma[q->x_t] * member_t * -sigma with x_t the last crossing of the
    shortest q->z path with each member.  ``gamma_prefix`` conjugates the
    loops to move the basepoint (adds at most twice its length).
    """
    q = np.asarray(q, dtype=float)
    closed = [c for c in members if c.kind == CLOSED or c.is_point]
    z = closed[-1].vertices[0]
    lmax = max(length(m, c) for c in closed)
    t = np.linspace(0.0, 1.0, 48)[:, None]
    sigma = relax_polyline(m, q * (1 - t) + z * t, iters=120)
    D = polyline_length(m, sigma)
    loops = []
    for c in closed:
        if c.is_point:
            break
        x_seg, x_t, x_pt = _last_crossing(sigma, c.vertices)
        if x_seg is None:
            # member no longer separates q from z; treat like the point tail
            break
        head = np.concatenate([sigma[:x_seg + 1], x_pt[None]], axis=0)
        cyc = _rebase_cycle(c.vertices, x_pt)
        verts = np.concatenate([head, cyc[1:], head[::-1][1:]], axis=0)
        loops.append(Chain(verts, BASED, base=q))
    # retract the remaining spike sigma * -sigma down to the basepoint
    n_sp = 8
    for k in range(n_sp, -1, -1):
        cut = max(1, int(round(len(sigma) * k / n_sp)))
        head = sigma[:cut]
        verts = np.concatenate([head, head[::-1][1:]], axis=0)
        loops.append(Chain(verts, BASED, base=q))
    if gamma_prefix is not None:
        pre = gamma_prefix.vertices
        out = []
        for c in loops:
            verts = np.concatenate([pre, c.vertices[1:], pre[::-1][1:]], axis=0)
            out.append(Chain(verts, BASED, base=pre[0]))
        loops = out
        base = pre[0]
        extra = 2.0 * polyline_length(m, pre)
    else:
        base = q
        extra = 0.0
    bound = lmax + 2.0 * D + eps + extra
    maxlen = max(length(m, c) for c in loops)
    mono = _monotone_adjacent(loops, m=m)
    odd = _degree_odd_fraction(m, loops, samples=degree_samples, seed=seed)
    b_theta = None
    if abs(np.hypot(*base) - m.domain_radius) < 1e-6:
        b_theta = float(np.arctan2(base[1], base[0]))
    return BasedHomotopy(members=loops, base=base, base_theta=b_theta,
                         max_length=maxlen, bound=bound, monotone_ok=mono,
                         degree_odd_fraction=odd)


def _last_crossing(sigma, poly):
    """Latest transverse crossing of the path sigma with a closed polyline."""
    best = (None, None, None)
    best_key = -1.0
    P1, P2 = sigma[:-1], sigma[1:]
    Q1, Q2 = poly[:-1], poly[1:]
    for i in range(len(P1)):
        d1 = P2[i] - P1[i]
        rel = Q1 - P1[i]
        d2 = Q2 - Q1
        denom = d1[0] * d2[:, 1] - d1[1] * d2[:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            tt = (rel[:, 0] * d2[:, 1] - rel[:, 1] * d2[:, 0]) / denom
            ss = (rel[:, 0] * d1[1] - rel[:, 1] * d1[0]) / (-denom)
        ok = (np.abs(denom) > 1e-15) & (tt >= -1e-12) & (tt <= 1 + 1e-12) \
            & (ss >= -1e-12) & (ss <= 1 + 1e-12)
        if ok.any():
            tmax = float(tt[ok].max())
            key = i + tmax
            if key > best_key:
                best_key = key
                pt = P1[i] + tmax * d1
                best = (i, tmax, pt)
    return best


def _rebase_cycle(poly, pt):
    """Closed polyline rebased to start/end at pt (inserted on its edge)."""
    P = poly[:-1]
    d = poly[1:] - poly[:-1]
    t = np.einsum("ij,ij->i", pt[None] - poly[:-1], d) / np.maximum(
        np.einsum("ij,ij->i", d, d), 1e-300)
    t = np.clip(t, 0.0, 1.0)
    proj = poly[:-1] + t[:, None] * d
    j = int(np.argmin(np.sum((proj - pt) ** 2, axis=1)))
    cyc = np.concatenate([[pt], poly[j + 1:-1], poly[: j + 1], [pt]], axis=0)
    return cyc


def _monotone_adjacent(members, angle_tol=1e-4, m=None, rim_tol=1e-3,
                       noise_tol=5e-3):
    # noise_tol should sit at the flow's spatial resolution: crossings
    # between members closer than that cannot be distinguished from
    # polyline discretization error
    """No transverse self- or inter-member crossings for adjacent pairs.

    Two discretization artifacts are excluded when the metric is supplied:
    crossings inside a thin collar of the rim (inscribed boundary-arc
    polylines against curves anchored exactly on the rim cannot be genuine
    crossings through the boundary), and crossings between members that
    coincide up to the flow's noise floor (nested curves separated by less
    than the ball-field resolution interleave numerically).
    """
    from .curves import crossing_points_between

    for a, b in zip(members[:-1], members[1:]):
        if transverse_self_intersections(a) > 0:
            return False
        if m is None:
            if transverse_between(a, b, angle_tol=angle_tol) > 0:
                return False
        else:
            pts = crossing_points_between(a, b, angle_tol=angle_tol)
            if len(pts):
                depth = m.domain_radius - np.hypot(pts[:, 0], pts[:, 1])
                if (depth > rim_tol * m.domain_radius).any():
                    if frechet_distance(m, a, b) > noise_tol * m.domain_radius:
                        return False
    return True


def _degree_odd_fraction(m, members, samples=60, seed=0, n_s=48):
    """Signed preimage count at random generic points, reported as the
    fraction with odd (hence non-zero) total."""
    rng = np.random.default_rng(seed)
    P = np.stack([resample_polyline(m, c.vertices, npts=n_s) for c in members])
    tri_a, tri_b, tri_c, sign_base = _triangulate_family(P)
    good = 0
    total = 0
    R = m.domain_radius
    tries = 0
    while total < samples and tries < samples * 20:
        tries += 1
        x = rng.uniform(-R, R, size=2)
        if np.hypot(*x) > 0.95 * R:
            continue
        d = _signed_count(tri_a, tri_b, tri_c, x)
        total += 1
        if d % 2 == 1:
            good += 1
    return good / max(total, 1)


def _triangulate_family(P):
    """Triangles of the (t, s) grid mapped into the parameter plane."""
    nt, ns, _ = P.shape
    A = P[:-1, :-1].reshape(-1, 2)
    B = P[1:, :-1].reshape(-1, 2)
    C = P[1:, 1:].reshape(-1, 2)
    D = P[:-1, 1:].reshape(-1, 2)
    tri_a = np.concatenate([A, A])
    tri_b = np.concatenate([B, C])
    tri_c = np.concatenate([C, D])
    return tri_a, tri_b, tri_c, None


def _signed_count(A, B, C, x):
    def cross(u, v):
        return u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]

    s1 = cross(B - A, x - A)
    s2 = cross(C - B, x - B)
    s3 = cross(A - C, x - C)
    pos = (s1 > 0) & (s2 > 0) & (s3 > 0)
    neg = (s1 < 0) & (s2 < 0) & (s3 < 0)
    return int(pos.sum()) - int(neg.sum())


# ---------------------------------------------------------------------------
# radial sweepout assembly


@dataclass
class RegionResolution:
    region: Region
    route: str                          # "pair" | "converted"
    pair: Optional[PairOutcome] = None
    based: Optional[BasedHomotopy] = None
    base_theta: Optional[float] = None  # base angle for converted routes
    h_max: float = 0.0
    chords: List[ChordCandidate] = field(default_factory=list)
    boundary: Optional[BoundaryRoute] = None


@dataclass
class RadialSweepout:
    curves: List[Chain]
    params: np.ndarray
    hub: np.ndarray
    h_max: float
    branch: str                        # "3a" | "3b"
    branch_bound: float
    eq1_bound: float
    max_length: float
    min_length: float
    monotone_ok: bool
    degree_odd_fraction: float
    segments: list = field(default_factory=list)

    def as_dict(self):
        return {
            "n_curves": len(self.curves),
            "hub": np.round(self.hub, 9).tolist(),
            "h_max": self.h_max,
            "branch": self.branch,
            "branch_bound": self.branch_bound,
            "eq1_bound": self.eq1_bound,
            "max_length": self.max_length,
            "min_length": self.min_length,
            "monotone_ok": bool(self.monotone_ok),
            "degree_odd_fraction": self.degree_odd_fraction,
        }


def _arclength_prefix(m, verts, frac):
    """Sub-polyline from the start to the given arclength fraction."""
    if frac >= 1.0 - 1e-12:
        return verts.copy()
    d = np.diff(verts, axis=0)
    mid = 0.5 * (verts[:-1] + verts[1:])
    seg = np.sqrt(np.maximum(m.inner(mid, d, d), 0.0))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = frac * cum[-1]
    j = int(np.searchsorted(cum, s))
    j = max(1, min(j, len(verts) - 1))
    t = (s - cum[j - 1]) / max(cum[j] - cum[j - 1], 1e-300)
    cut = verts[j - 1] * (1 - t) + verts[j] * t
    return np.concatenate([verts[:j], cut[None]], axis=0)


def _cat(*arrays):
    """Concatenate vertex arrays dropping duplicated junction points."""
    out = [np.atleast_2d(a) for a in arrays if len(np.atleast_2d(a))]
    res = [out[0]]
    for a in out[1:]:
        if len(res[-1]) and np.allclose(res[-1][-1], a[0], atol=1e-9):
            a = a[1:]
        if len(a):
            res.append(a)
    return np.concatenate(res, axis=0)


def _theta_of(v):
    return float(np.arctan2(v[1], v[0]))


def _unwrap_into(theta, lo, hi):
    """Representative of theta (mod 2pi) inside or nearest to [lo, hi]."""
    t = lo + ((theta - lo) % (2 * np.pi))
    if t > hi:
        if t - hi > lo + 2 * np.pi - t:
            t -= 2 * np.pi
    return t


class _SharedArc:
    """One dense boundary-arc discretization shared by a whole segment, so
    that members using different sub-arcs overlap exactly (prefixes of one
    polyline never cross each other transversely)."""

    def __init__(self, m, t0, t1, spacing=0.01):
        n = max(3, int(np.ceil(abs(t1 - t0) * m.domain_radius / spacing)) + 1)
        self.thetas = np.linspace(t0, t1, n)
        self.points = m.boundary_point(self.thetas)
        self.t0, self.t1 = t0, t1

    def prefix(self, th, tip=None):
        """Polyline from t0 to th (th between t0 and t1); optional exact tip."""
        frac = 0.0 if self.t1 == self.t0 else (th - self.t0) / (self.t1 - self.t0)
        frac = float(np.clip(frac, 0.0, 1.0))
        pos = frac * (len(self.thetas) - 1)
        j = int(np.floor(pos))
        out = self.points[:j + 1]
        end = tip if tip is not None else None
        if end is None:
            if pos - j > 1e-9 and j + 1 < len(self.points):
                t = pos - j
                end = self.points[j] * (1 - t) + self.points[j + 1] * t
        if end is not None and (len(out) == 0 or np.hypot(*(end - out[-1])) > 1e-12):
            out = np.concatenate([out, end[None]], axis=0)
        return out


def _expand_steps(m, cover, members, max_gap):
    """Insert ball-granular substeps wherever consecutive flow members are
    farther apart than ``max_gap`` (keeps the discrete family fine enough
    for the monotone and degree certificates)."""
    if len(members) < 2:
        return list(members)
    out = [members[0]]
    nb = len(cover.balls)
    for prev, nxt in zip(members[:-1], members[1:]):
        if nxt.is_point or prev.is_point:
            out.append(nxt)
            continue
        if frechet_distance(m, prev, nxt) > max_gap:
            last = prev
            for k in range(1, nb):
                sub = step_for(m, cover, prev, upto_ball=k)
                if sub.is_point:
                    break
                if frechet_distance(m, last, sub) > 1e-9:
                    out.append(sub)
                    last = sub
        out.append(nxt)
    return out


def resolve_region(m: MetricDisk, cover, region: Region, invariants,
                   ks=(2, 3), pair_budget=600, maeda_eps=None) -> RegionResolution:
    """Contract one fan region: free-boundary pair flow first, then the
    disk-flow boundary route with basepoint conversion.

    The conversion basepoint is taken directly on the region's boundary arc
    (closest arc point to the collapse point), which costs at most 2d in
    the member bound and keeps the based loops boundary-anchored.
    """
    two_d = 2.0 * invariants.d
    out = contract_pair(m, cover, region, two_d=two_d, budget=pair_budget)
    if out.kind == "homotopy":
        out.homotopy = _expand_steps(m, cover, out.homotopy,
                                     max_gap=cover.inj_lower / 4.0)
        hmax = max(length(m, c) for c in out.homotopy)
        return RegionResolution(region=region, route="pair", pair=out,
                                h_max=hmax, chords=list(out.chords))
    chords = list(out.chords)
    route = closed_geodesic_branch(m, cover, region, ks=ks,
                                   invariants=invariants)
    if route.kind == "closed_geodesic":
        # the boundary stalls on a closed geodesic: the non-simple iterates
        # are reported; the region still needs a homotopy for the sweepout,
        # which does not exist along this path
        chords.extend(route.iterates)
        if route.closed_geodesic is not None:
            chords.append(route.closed_geodesic)
        raise DiskchordError(
            "region boundary stalled on a closed geodesic; sweepout "
            "unavailable (cases 1-2 of the chord count apply)")
    members = _expand_steps(m, cover, route.free_homotopy,
                            max_gap=cover.inj_lower / 4.0)
    z = members[-1].vertices[0]
    th_dense = np.linspace(region.theta_a, region.theta_b, 256)
    arc_pts = m.boundary_point(th_dense)
    j = int(np.argmin(np.sum((arc_pts - z) ** 2, axis=1)))
    q_eta = arc_pts[j]
    base_theta = float(th_dense[j])
    eps = maeda_eps if maeda_eps is not None else 1e-3 * invariants.d
    based = basepoint_convert(m, members, q_eta, eps)
    return RegionResolution(region=region, route="converted", based=based,
                            base_theta=base_theta, h_max=based.max_length,
                            chords=chords, boundary=route)


def assemble_sweepout(m: MetricDisk, cover, fan: BergerFan,
                      resolutions: List[RegionResolution], invariants,
                      target_samples=720, degree_samples=100, seed=0,
                      epsilon=None) -> RadialSweepout:
    """Segment-wise assembly of the circle family from region homotopies."""
    d, P = invariants.d, invariants.P
    eps = epsilon if epsilon is not None else 1e-3 * d
    spacing = max(cover.spacing, 0.02)
    all_members: List[Chain] = []
    seg_marks = []
    n_seg = len(resolutions)
    per_seg = max(8, target_samples // max(n_seg, 1))
    h_max = 0.0
    any_converted = False
    for res in resolutions:
        reg = res.region
        A = reg.gamma_a
        B = reg.gamma_b
        h_max = max(h_max, res.h_max)
        seg_members: List[Chain] = []
        arc_fwd = _SharedArc(m, reg.theta_a, reg.theta_b, spacing=0.02)
        arc_bwd = _SharedArc(m, reg.theta_b, reg.theta_a, spacing=0.02)
        if res.route == "pair":
            members = res.pair.homotopy
            theta_c = res.pair.collapse_theta
            theta_c = (reg.theta_a if theta_c is None
                       else _unwrap_into(theta_c, reg.theta_a, reg.theta_b))
            n_a0 = max(3, per_seg // 8)
            for k in range(n_a0):
                u = (k + 1) / n_a0
                th1 = reg.theta_a + u * (theta_c - reg.theta_a)
                seg_members.append(Chain(_cat(A.vertices, arc_fwd.prefix(th1)), ARC))
            for H in members[::-1]:
                if H.is_point:
                    continue
                th_h = _unwrap_into(_theta_of(H.vertices[0]), reg.theta_a,
                                    reg.theta_b)
                arc = arc_fwd.prefix(th_h, tip=H.vertices[0])
                seg_members.append(Chain(_cat(A.vertices, arc, H.vertices), ARC))
            n_c = max(4, per_seg // 6)
            for k in range(n_c):
                v = 1.0 - (k + 1) / n_c
                pre = _arclength_prefix(m, A.vertices, v)
                seg_members.append(Chain(_cat(pre, pre[::-1], B.vertices), ARC))
        else:
            any_converted = True
            loops = res.based.members
            th_q = res.base_theta
            base_pt = loops[0].vertices[0]
            # Q1: grow the boundary tail from theta_a to the loop basepoint
            n_q1 = max(3, per_seg // 8)
            for k in range(n_q1):
                u = (k + 1) / n_q1
                th1 = reg.theta_a + u * (th_q - reg.theta_a)
                tip = base_pt if u == 1.0 else None
                seg_members.append(Chain(_cat(A.vertices,
                                              arc_fwd.prefix(th1, tip=tip)), ARC))
            # Q2: the based homotopy, traversed from point back to full loop
            arc_q = arc_fwd.prefix(th_q, tip=base_pt)
            for W in loops[::-1]:
                if W.is_point:
                    continue
                seg_members.append(Chain(_cat(A.vertices, arc_q, W.vertices), ARC))
            # Q2 ends at A * arc(a->q) * [arc(q->a) * -A * B * arc(b->q)].
            # Q3: retract the doubled arc pair from the q side
            n_q3 = max(3, per_seg // 8)
            tail_bq = arc_bwd.prefix(th_q, tip=base_pt)
            for k in range(n_q3):
                u = 1.0 - (k + 1) / n_q3
                th1 = reg.theta_a + u * (th_q - reg.theta_a)
                arc = arc_fwd.prefix(th1)
                seg_members.append(Chain(
                    _cat(A.vertices, arc, arc[::-1], A.vertices[::-1],
                         B.vertices, tail_bq), ARC))
            # Q4: retract the A spike over B (trailing arc b->q kept)
            n_q4 = max(4, per_seg // 6)
            for k in range(n_q4):
                v = 1.0 - (k + 1) / n_q4
                pre = _arclength_prefix(m, A.vertices, v)
                seg_members.append(Chain(_cat(pre, pre[::-1], B.vertices,
                                              tail_bq), ARC))
            # Q5: retract the trailing arc back to theta_b
            n_q5 = max(3, per_seg // 8)
            for k in range(n_q5):
                u = 1.0 - (k + 1) / n_q5
                th1 = reg.theta_b + u * (th_q - reg.theta_b)
                seg_members.append(Chain(_cat(B.vertices, arc_bwd.prefix(th1)), ARC))
        seg_marks.append((res.route, len(seg_members)))
        all_members.extend(seg_members)

    curves = all_members
    params = np.linspace(0.0, 2 * np.pi, len(curves), endpoint=False)
    lengths = [length(m, c) for c in curves]
    eq1 = d + P + h_max + 1e-6
    branch = "3b" if any_converted else "3a"
    bound = (7 * d + 2 * P + eps) if any_converted else (3 * d + P)
    mono = _monotone_adjacent(curves + curves[:1], m=m,
                              noise_tol=max(5e-3, cover.spacing / 3.0))
    odd = _degree_odd_fraction(m, curves + curves[:1], samples=degree_samples,
                               seed=seed)
    sw = RadialSweepout(curves=curves, params=params, hub=fan.p, h_max=h_max,
                        branch=branch, branch_bound=bound, eq1_bound=eq1,
                        max_length=float(max(lengths)),
                        min_length=float(min(lengths)),
                        monotone_ok=mono, degree_odd_fraction=odd,
                        segments=seg_marks)
    return sw


