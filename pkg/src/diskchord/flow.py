"""Ball covers and the disk / free-boundary disk flows.

A flow step processes the cover's balls in a fixed order; inside each ball
every arc of the chain is replaced by the minimizing geodesic between its
crossing points (interior arcs) or by the minimizing geodesic to the
boundary (arcs holding an endpoint, free-boundary mode).  Replacements are
only accepted when they do not lengthen the measured chain, so recorded
lengths are non-increasing by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .analysis import graph_for, inj_lower_estimate
from .chords import ChordCandidate, make_candidate, residuals
from .curves import (ARC, BASED, BOUNDARY, CLOSED, Chain, length, polygon_contains,
                     transverse_between, transverse_self_intersections)
from .errors import CoverError, FlowError
from .geodesics import (foot_fast, foot_orthogonal, geodesic_bvp,
                        polyline_length, relax_polyline, resample_polyline)
from .metrics import MetricDisk


@dataclass
class Ball:
    center: np.ndarray
    radius: float
    touches_boundary: bool
    theta_window: Optional[tuple] = None
    bbox: Optional[tuple] = None      # (umin, umax, vmin, vmax) in parameter space


@dataclass
class BallCover:
    m: MetricDisk
    balls: List[Ball]
    fields: np.ndarray          # (n_balls, res, res) distance-to-center grids
    resolution: int
    inj_lower: float
    half_cover_margin: float    # worst distance of a sample to its nearest center

    @property
    def radius(self) -> float:
        return min(b.radius for b in self.balls)

    @property
    def spacing(self) -> float:
        return 0.5 * self.radius  # chain vertex spacing used by the flows

    def _bilinear_ix(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        R = self.m.domain_radius
        n = self.resolution
        cell = 2 * R / (n - 1)
        fx = np.clip((pts[:, 0] + R) / cell, 0, n - 1 - 1e-9)
        fy = np.clip((pts[:, 1] + R) / cell, 0, n - 1 - 1e-9)
        i0 = fx.astype(int)
        j0 = fy.astype(int)
        return i0, j0, fx - i0, fy - j0

    def dist_to_centers(self, pts) -> np.ndarray:
        """Bilinear lookup of all center distance fields at pts -> (nb, npts)."""
        i0, j0, tx, ty = self._bilinear_ix(pts)
        f = self.fields
        return (f[:, i0, j0] * (1 - tx) * (1 - ty)
                + f[:, i0 + 1, j0] * tx * (1 - ty)
                + f[:, i0, j0 + 1] * (1 - tx) * ty
                + f[:, i0 + 1, j0 + 1] * tx * ty)

    def dist_one(self, ball_idx, pts) -> np.ndarray:
        """Distance field of one ball at pts -> (npts,)."""
        i0, j0, tx, ty = self._bilinear_ix(pts)
        f = self.fields[ball_idx]
        return (f[i0, j0] * (1 - tx) * (1 - ty)
                + f[i0 + 1, j0] * tx * (1 - ty)
                + f[i0, j0 + 1] * (1 - tx) * ty
                + f[i0 + 1, j0 + 1] * tx * ty)


def _fill_outside(img, inside, cell, passes=8):
    """Min-plus dilation so bilinear lookups near the rim stay meaningful."""
    big = 1e9
    out = np.where(inside, img, big)
    diag = cell * np.sqrt(2.0)
    for _ in range(passes):
        cand = out.copy()
        for (di, dj), w in [((0, 1), cell), ((0, -1), cell), ((1, 0), cell),
                            ((-1, 0), cell), ((1, 1), diag), ((1, -1), diag),
                            ((-1, 1), diag), ((-1, -1), diag)]:
            shifted = np.roll(out, (di, dj), axis=(0, 1)) + w
            if di > 0:
                shifted[:di, :] = big
            if di < 0:
                shifted[di:, :] = big
            if dj > 0:
                shifted[:, :dj] = big
            if dj < 0:
                shifted[:, dj:] = big
            cand = np.minimum(cand, shifted)
        out = np.where(inside, out, cand)
    return out


def build_cover(m: MetricDisk, inj_lower=None, resolution=129,
                certify_feet=True, max_radius_factor=3.0) -> BallCover:
    """Greedy net of totally normal balls with locally adaptive radii.

    Every ball's radius is capped by half its local totally-normal estimate
    (global curvature bound, and near the boundary the focal estimate; deep
    interior balls may grow up to the distance to the boundary).  Centers
    are chosen greedily until the half-radius balls cover a dense sample.
    """
    from .analysis import boundary_distance_field, sup_positive_curvature, \
        focal_distance_to_boundary

    if inj_lower is None:
        inj_lower = inj_lower_estimate(m)
    if inj_lower <= 0:
        raise CoverError("non-positive totally-normal radius estimate")
    base_radius = 0.5 * inj_lower
    supK = sup_positive_curvature(m)
    conj = np.pi / np.sqrt(supK) if supK > 0 else np.inf
    g, bfield = boundary_distance_field(m, resolution)
    fth, fprof = focal_distance_to_boundary(m, profile=True)

    def local_radius(node_idx):
        # boundary-touching cap from the local focal profile; interior balls
        # may instead grow up to their distance from the boundary
        x = g.points[node_idx]
        th = np.arctan2(x[1], x[0]) % (2 * np.pi)
        focal_loc = float(np.interp(th, fth, fprof, period=2 * np.pi))
        loc = min(0.5 * conj, max(0.95 * bfield[node_idx], 0.45 * focal_loc))
        return float(np.clip(loc, base_radius, max_radius_factor * base_radius))

    n_nodes = len(g.points)
    deficit = np.full(n_nodes, np.inf)   # d_to_nearest_center - r_center/2
    centers = []
    radii = []
    fields_nodes = []
    next_idx = g.nearest(np.zeros(2))
    for _ in range(20000):
        dists = g.dijkstra([next_idx])[0]
        r_here = local_radius(next_idx)
        centers.append(next_idx)
        radii.append(r_here)
        fields_nodes.append(dists)
        deficit = np.minimum(deficit, dists - 0.5 * r_here * 0.999)
        far = int(np.argmax(deficit))
        if deficit[far] <= 0.0:
            break
        next_idx = far
    else:
        raise CoverError("cover construction did not terminate")
    margin = float(np.max(deficit))

    R = m.domain_radius
    n = resolution
    ax = np.linspace(-R, R, n)
    U, V = np.meshgrid(ax, ax, indexing="ij")
    inside = np.hypot(U, V) <= R
    cell = 2 * R / (n - 1)
    idx_inside = np.flatnonzero(inside.ravel())

    balls = []
    fields = np.empty((len(centers), n, n))
    for b, (ci, rb, dn) in enumerate(zip(centers, radii, fields_nodes)):
        img = np.full(n * n, np.inf)
        img[idx_inside] = dn[:g.n_grid]
        img = img.reshape(n, n)
        fields[b] = _fill_outside(img, inside, cell)
        ring_d = dn[g.n_grid:]
        touches = bool(ring_d.min() <= rb)
        window = None
        if touches:
            sel = ring_d <= 1.05 * rb
            th = g.ring_thetas[sel]
            anchor = g.ring_thetas[int(np.argmin(ring_d))]
            rel = (th - anchor + np.pi) % (2 * np.pi) - np.pi
            window = (float(anchor + rel.min()), float(anchor + rel.max()))
        hit = fields[b] <= rb
        iu, iv = np.nonzero(hit)
        bbox = (float(ax[iu.min()] - cell), float(ax[iu.max()] + cell),
                float(ax[iv.min()] - cell), float(ax[iv.max()] + cell))
        balls.append(Ball(center=g.points[ci].copy(), radius=float(rb),
                          touches_boundary=touches, theta_window=window,
                          bbox=bbox))

    cover = BallCover(m=m, balls=balls, fields=fields, resolution=n,
                      inj_lower=float(inj_lower), half_cover_margin=margin)
    if certify_feet:
        _certify_boundary_feet(cover)
    return cover


def _certify_boundary_feet(cover: BallCover, per_ball=2):
    """Sampled unique-orthogonal-foot certificate for boundary balls."""
    m = cover.m
    for b in cover.balls:
        if not b.touches_boundary:
            continue
        rr = np.hypot(*b.center)
        probes = [b.center]
        if rr > 1e-9 and per_ball > 1:
            probes.append(b.center * max(0.0, (rr - 0.4 * b.radius)) / rr)
        for p in probes[:per_ball]:
            if np.hypot(*p) > m.domain_radius - 1e-9:
                continue
            foot_orthogonal(m, p, theta_window=b.theta_window,
                            spacing=cover.spacing, coarse=16)


def cover_for(m: MetricDisk, resolution=129) -> BallCover:
    cache = getattr(m, "_cover_cache", None)
    if cache is None:
        cache = {}
        m._cover_cache = cache
    if resolution not in cache:
        cache[resolution] = build_cover(m, resolution=resolution)
    return cache[resolution]


# ---------------------------------------------------------------------------
# flow steps


def _runs_of(mask):
    """Maximal runs of True as (start, stop) inclusive index pairs."""
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        return []
    brk = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate([[idx[0]], idx[brk + 1]])
    stops = np.concatenate([idx[brk], [idx[-1]]])
    return list(zip(starts.tolist(), stops.tolist()))


def _crossing_point(verts, dists, i_out, i_in, radius):
    """Linear-in-field crossing of the ball sphere on edge (i_out, i_in)."""
    d0, d1 = dists[i_out], dists[i_in]
    if d0 == d1:
        t = 0.5
    else:
        t = np.clip((d0 - radius) / (d0 - d1), 0.0, 1.0)
    return verts[i_out] * (1 - t) + verts[i_in] * t


def _replace_span(m, verts, lo_pt, hi_pt, spacing):
    seg = geodesic_bvp(m, lo_pt, hi_pt, spacing=spacing, iters=16)
    return resample_polyline(m, seg, spacing=spacing)


def _measured(m, verts):
    # fine quadrature so accept/reject tests are not biased by vertex density
    return polyline_length(m, verts, refine=6)


def _ball_pass(m: MetricDisk, cover: BallCover, chain: Chain, ball_idx: int,
               free_boundary: bool) -> Chain:
    """Process one ball; returns the (possibly) shortened chain."""
    ball = cover.balls[ball_idx]
    verts = chain.vertices
    n = len(verts)
    if n == 1:
        return chain
    if ball.bbox is not None:
        u0, u1, v0, v1 = ball.bbox
        if (verts[:, 0].max() < u0 or verts[:, 0].min() > u1
                or verts[:, 1].max() < v0 or verts[:, 1].min() > v1):
            return chain
    dists = cover.dist_one(ball_idx, verts)
    inside = dists <= ball.radius
    if not inside.any():
        return chain

    closed = chain.kind == CLOSED
    if inside.all():
        if closed:
            keep = verts[int(np.argmin(dists))]
            return Chain(keep[None, :].copy(), CLOSED)
        if chain.kind == BASED:
            return Chain(chain.base[None, :].copy(), BASED, base=chain.base)
        if free_boundary and ball.touches_boundary:
            mid = verts[n // 2]
            path, theta, _ = foot_orthogonal(m, mid, theta_window=ball.theta_window,
                                             spacing=cover.spacing, coarse=16,
                                             check_unique=False)
            return Chain(path[-1][None, :].copy(), BOUNDARY)
        return chain

    work = verts
    if closed:
        # rotate so index 0 lies outside the ball; wrap-free runs afterwards
        out0 = int(np.argmin(inside))
        if inside[out0]:
            return chain
        ring = np.concatenate([verts[:-1][out0:], verts[:-1][:out0]])
        work = np.concatenate([ring, ring[:1]])
        dists = cover.dist_one(ball_idx, work)
        inside = dists <= ball.radius

    pieces = []
    cursor = 0
    nw = len(work)
    changed = False
    for lo, hi in _runs_of(inside):
        starts_at_end = lo == 0
        stops_at_end = hi == nw - 1
        if chain.kind == BASED and (starts_at_end or stops_at_end):
            # base vertex pinned: straighten up to the base, never across it
            if starts_at_end and stops_at_end:
                continue
            if starts_at_end:
                hi_pt = _crossing_point(work, dists, hi + 1, hi, ball.radius)
                new = _replace_span(m, work, work[0], hi_pt, cover.spacing)
                old = np.concatenate([work[0:hi + 1], hi_pt[None]])
            else:
                lo_pt = _crossing_point(work, dists, lo - 1, lo, ball.radius)
                new = _replace_span(m, work, lo_pt, work[nw - 1], cover.spacing)
                old = np.concatenate([lo_pt[None], work[lo:nw]])
            if _measured(m, new) <= _measured(m, old) + 1e-12:
                if starts_at_end:
                    pieces.append(("replace", 0, hi, new))
                else:
                    pieces.append(("replace", lo, nw - 1, new))
                changed = True
            continue
        if free_boundary and not closed and (starts_at_end or stops_at_end):
            if starts_at_end and stops_at_end:
                continue
            if not ball.touches_boundary:
                # endpoint arc in an interior ball: endpoints sit on the rim,
                # impossible by construction; treat as interior replacement
                pass
            else:
                if starts_at_end:
                    x = _crossing_point(work, dists, hi + 1, hi, ball.radius)
                    path, theta, _ = foot_fast(m, x, theta_window=ball.theta_window,
                                               spacing=cover.spacing)
                    new = resample_polyline(m, path[::-1], spacing=cover.spacing)
                    old = np.concatenate([work[0:hi + 1], x[None]])
                    if _measured(m, new) <= _measured(m, old) + 1e-12:
                        pieces.append(("replace", 0, hi, new))
                        changed = True
                else:
                    x = _crossing_point(work, dists, lo - 1, lo, ball.radius)
                    path, theta, _ = foot_fast(m, x, theta_window=ball.theta_window,
                                               spacing=cover.spacing)
                    new = resample_polyline(m, path, spacing=cover.spacing)
                    old = np.concatenate([x[None], work[lo:nw]])
                    if _measured(m, new) <= _measured(m, old) + 1e-12:
                        pieces.append(("replace", lo, nw - 1, new))
                        changed = True
                continue
        # interior arc
        if starts_at_end or stops_at_end:
            if not closed and not free_boundary:
                continue  # disk flow on open chains: endpoints fixed
            if starts_at_end or stops_at_end:
                continue
        lo_pt = _crossing_point(work, dists, lo - 1, lo, ball.radius)
        hi_pt = _crossing_point(work, dists, hi + 1, hi, ball.radius)
        new = _replace_span(m, work, lo_pt, hi_pt, cover.spacing)
        old = np.concatenate([lo_pt[None], work[lo:hi + 1], hi_pt[None]])
        if _measured(m, new) <= _measured(m, old) + 1e-12:
            pieces.append(("replace", lo, hi, new))
            changed = True

    if not changed:
        return chain

    out = []
    cursor = 0
    for _, lo, hi, new in pieces:
        if lo > cursor:
            out.append(work[cursor:lo])
        out.append(new)
        cursor = hi + 1
    if cursor < nw:
        out.append(work[cursor:nw])
    new_verts = np.concatenate(out, axis=0)
    # drop duplicate consecutive vertices
    keep = np.ones(len(new_verts), dtype=bool)
    keep[1:] = np.any(np.abs(np.diff(new_verts, axis=0)) > 1e-14, axis=1)
    new_verts = new_verts[keep]
    if closed:
        if not np.allclose(new_verts[0], new_verts[-1], atol=1e-12):
            new_verts = np.concatenate([new_verts, new_verts[:1]])
    return Chain(new_verts, chain.kind, base=chain.base, orientation=chain.orientation)


def _guarded(m, before: Chain, after: Chain) -> Chain:
    """Never let a numeric replacement lengthen the measured chain."""
    if after is before:
        return before
    if length(m, after) <= length(m, before) + 1e-12:
        return after
    return before


def disk_flow_step(m: MetricDisk, cover: BallCover, c: Chain,
                   upto_ball: Optional[int] = None) -> Chain:
    """One pass of the disk flow over the cover (closed or based chains)."""
    if c.kind not in (CLOSED, BASED):
        raise FlowError("disk flow acts on closed or based chains")
    cur = c
    stop = len(cover.balls) if upto_ball is None else upto_ball
    for bi in range(stop):
        if cur.is_point:
            return cur
        cur = _ball_pass(m, cover, cur, bi, free_boundary=False)
    if upto_ball is None and not cur.is_point:
        cur = _guarded(m, cur, _resampled(m, cur, cover.spacing))
    return _guarded(m, c, cur)


def free_boundary_flow_step(m: MetricDisk, cover: BallCover, c: Chain,
                            upto_ball: Optional[int] = None) -> Chain:
    """One pass of the free-boundary disk flow (boundary-anchored chains)."""
    if c.kind != BOUNDARY:
        raise FlowError("free-boundary flow acts on boundary-anchored chains")
    cur = c
    stop = len(cover.balls) if upto_ball is None else upto_ball
    for bi in range(stop):
        if cur.is_point:
            return cur
        cur = _ball_pass(m, cover, cur, bi, free_boundary=True)
    if upto_ball is None and not cur.is_point:
        cur = _guarded(m, cur, _resampled(m, cur, cover.spacing))
    return _guarded(m, c, cur)


def _resampled(m, c: Chain, spacing) -> Chain:
    out = c.copy()
    out.vertices = resample_polyline(m, c.vertices, spacing=spacing)
    if c.kind == BOUNDARY:
        # keep endpoints exactly on the rim
        for idx in (0, -1):
            v = out.vertices[idx]
            r = np.hypot(*v)
            if r > 0:
                out.vertices[idx] = v * (m.domain_radius / r)
    return out


def step_for(m, cover, c: Chain, upto_ball=None) -> Chain:
    if c.kind == BOUNDARY:
        return free_boundary_flow_step(m, cover, c, upto_ball)
    return disk_flow_step(m, cover, c, upto_ball)


# ---------------------------------------------------------------------------
# full flow runs


@dataclass
class FlowStepRecord:
    step: int
    length: float
    intersections: int
    chain: Optional[Chain] = None


@dataclass
class FlowTrace:
    steps: List[FlowStepRecord]
    outcome: str                      # "chord" | "point" | "budget"
    chord: Optional[ChordCandidate] = None
    final: Optional[Chain] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def lengths(self):
        return [s.length for s in self.steps]

    @property
    def intersection_counts(self):
        return [s.intersections for s in self.steps]

    def recorded_chains(self):
        return [s.chain for s in self.steps if s.chain is not None]


def run_flow(m: MetricDisk, cover: BallCover, c: Chain, mode=None,
             budget=10_000, stall_rel=1e-6, stall_window=20,
             point_threshold=None, geo_tol=1e-3, ortho_tol=1e-3,
             record_chains=True, count_every=1, provenance="") -> FlowTrace:
    """Iterate the flow until point, certified chord, or budget exhaustion."""
    if mode is None:
        mode = "free_boundary" if c.kind == BOUNDARY else "disk"
    if mode == "free_boundary" and c.kind != BOUNDARY:
        raise FlowError("chain kind does not match free-boundary mode")
    if mode == "disk" and c.kind not in (CLOSED, BASED):
        raise FlowError("chain kind does not match disk mode")
    if point_threshold is None:
        point_threshold = 1e-3 * cover.inj_lower

    cur = c
    L = length(m, cur)
    xc = transverse_self_intersections(cur)
    records = [FlowStepRecord(0, L, xc, cur if record_chains else None)]
    window = []
    for step in range(1, budget + 1):
        cur = step_for(m, cover, cur)
        L_new = length(m, cur)
        if count_every and (step % count_every == 0 or cur.is_point):
            xc = min(xc, transverse_self_intersections(cur))
        records.append(FlowStepRecord(step, L_new, xc, cur if record_chains else None))
        if cur.is_point or L_new < point_threshold:
            return FlowTrace(records, "point", final=cur,
                             diagnostics={"steps": step})
        window.append((L, L_new))
        if len(window) > stall_window:
            window.pop(0)
        stalled = (len(window) == stall_window
                   and (window[0][0] - L_new) <= stall_rel * max(L_new, 1e-12))
        L = L_new
        if stalled:
            cand = make_candidate(m, cur, provenance=provenance)
            if cand.certified(geo_tol, ortho_tol) and (
                    c.kind != BOUNDARY or _endpoints_on_rim(m, cur)):
                return FlowTrace(records, "chord", chord=cand, final=cur,
                                 diagnostics={"steps": step})
            polished = _try_polish(m, cover, cur, geo_tol, ortho_tol, provenance)
            if polished is not None and polished.length <= L_new + 1e-9:
                records.append(FlowStepRecord(step, polished.length,
                                              polished.self_intersections,
                                              polished.chain if record_chains else None))
                return FlowTrace(records, "chord", chord=polished,
                                 final=polished.chain,
                                 diagnostics={"steps": step, "polished": True})
            window = []  # not yet a chord: keep flowing
    cand = make_candidate(m, cur, provenance=provenance)
    diag = {"steps": budget, "last_residuals": [cand.geo_residual, cand.ortho_residual]}
    if cand.certified(geo_tol, ortho_tol):
        return FlowTrace(records, "chord", chord=cand, final=cur, diagnostics=diag)
    return FlowTrace(records, "budget", final=cur, diagnostics=diag)


def _endpoints_on_rim(m, c: Chain, tol=1e-5) -> bool:
    if c.is_point:
        return abs(np.hypot(*c.vertices[0]) - m.domain_radius) < tol
    return all(abs(np.hypot(*c.vertices[i]) - m.domain_radius) < tol for i in (0, -1))


def _try_polish(m, cover, cur: Chain, geo_tol, ortho_tol, provenance):
    """Remove the ball-field grid imprint from a stalled near-chord state.

    The polished curve must stay within one vertex spacing of the flow
    state (the flow located the chord; the polish only sharpens it) and
    must certify; otherwise the stall is treated as not-yet-converged.
    """
    from .chords import polish_boundary_chord, polish_closed
    from .curves import frechet_distance

    try:
        if cur.kind == CLOSED and not cur.is_point:
            pv = polish_closed(m, cur.vertices)
            polished = Chain(pv, CLOSED)
        elif cur.kind == BOUNDARY and not cur.is_point:
            pv = polish_boundary_chord(m, cur.vertices)
            polished = Chain(pv, BOUNDARY)
        else:
            return None
        if frechet_distance(m, cur, polished) > cover.spacing:
            return None
        cand = make_candidate(m, polished, provenance=provenance)
        cand.meta["polished"] = True
        if cand.certified(geo_tol, ortho_tol) and (
                cur.kind != BOUNDARY or _endpoints_on_rim(m, polished)):
            return cand
    except Exception:
        return None
    return None


# ---------------------------------------------------------------------------
# families


@dataclass
class CurveFamily:
    members: List[Chain]
    params: np.ndarray
    kind: str = "interval"            # "interval" | "mobius"
    grid_shape: Optional[tuple] = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.members)

    def max_length(self, m):
        return max(length(m, c) for c in self.members)


@dataclass
class FamilyTrace:
    max_lengths: List[float]
    max_intersections: List[int]
    members_final: List[Chain]
    member_traces: Optional[list] = None


def family_flow(m: MetricDisk, cover: BallCover, fam: CurveFamily, steps=1,
                mode="free_boundary", keep_traces=False) -> FamilyTrace:
    """Apply the step map member-wise with the shared cover and ball order."""
    members = [c for c in fam.members]
    max_lengths = [max(length(m, c) for c in members)]
    max_x = [max(transverse_self_intersections(c) for c in members)]
    traces = [[c] for c in members] if keep_traces else None
    for _ in range(steps):
        new_members = []
        for i, c in enumerate(members):
            try:
                nc = c if c.is_point else step_for(m, cover, c)
            except Exception as exc:
                from .errors import FamilyError
                raise FamilyError(i, str(exc)) from exc
            new_members.append(nc)
            if keep_traces:
                traces[i].append(nc)
        members = new_members
        max_lengths.append(max(length(m, c) for c in members))
        max_x.append(max(transverse_self_intersections(c) for c in members))
    return FamilyTrace(max_lengths, max_x, members, traces)


# ---------------------------------------------------------------------------
# convexity monitor


def _signed_turns(c: Chain):
    v = c.vertices
    if c.kind == CLOSED:
        pts = v[:-1]
        pre = np.roll(pts, 1, axis=0)
        nxt = np.roll(pts, -1, axis=0)
        d1 = pts - pre
        d2 = nxt - pts
    else:
        d1 = np.diff(v, axis=0)[:-1]
        d2 = np.diff(v, axis=0)[1:]
    cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    return cross


def _polygon_area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x[:-1] * y[1:] - x[1:] * y[:-1]))


def _region_polygon(m, c: Chain, n_arc=64):
    """Close a boundary-anchored chain with the co-bounded boundary arc."""
    if c.kind == CLOSED:
        return c.vertices
    a = np.arctan2(c.vertices[-1][1], c.vertices[-1][0])
    b = np.arctan2(c.vertices[0][1], c.vertices[0][0])
    # two candidate arcs; pick the one making the polygon smaller in area
    best = None
    for direction in (1, -1):
        span = (b - a) % (2 * np.pi) if direction == 1 else -((a - b) % (2 * np.pi))
        th = a + np.linspace(0.0, span, n_arc)
        arc = m.boundary_point(th)
        poly = np.concatenate([c.vertices, arc[1:-1], c.vertices[:1]], axis=0)
        area = abs(_polygon_area(poly))
        if best is None or area < best[0]:
            best = (area, poly)
    return best[1]


def convexity_monitor(m: MetricDisk, trace: FlowTrace, angle_tol=1e-3,
                      region_samples=64) -> dict:
    """Verify simplicity, angle bounds, and region nesting along a trace.

    Applies to traces started from a piecewise-geodesic (free-boundary)
    convex chain; reports the first violating step if any.
    """
    chains = trace.recorded_chains()
    if not chains:
        return {"applicable": False, "reason": "trace has no recorded chains"}
    first = chains[0]
    if transverse_self_intersections(first) > 0:
        return {"applicable": False, "reason": "initial chain is not simple"}
    geo, _ = residuals(m, first)
    report = {"applicable": True, "simple_ok": True, "angles_ok": True,
              "nesting_ok": True, "violations": []}
    prev_poly = None
    for k, c in enumerate(chains):
        if c.is_point:
            break
        if transverse_self_intersections(c) > 0:
            report["simple_ok"] = False
            report["violations"].append((k, "self-intersection"))
            break
        turns = _signed_turns(c)
        area = _polygon_area(c.vertices if c.kind == CLOSED else _region_polygon(m, c))
        orient = 1.0 if area > 0 else -1.0
        # convex: all turns toward the region (angle tolerance in param space)
        seg = np.diff(c.vertices, axis=0)
        norms = np.hypot(seg[:, 0], seg[:, 1])
        if c.kind == CLOSED:
            pair_norm = norms[:-1] * norms[1:]
            pair_norm = np.append(pair_norm, norms[-1] * norms[0])
        else:
            pair_norm = norms[:-1] * norms[1:]
        sin_turn = orient * turns / np.maximum(pair_norm, 1e-300)
        if (sin_turn < -np.sin(angle_tol) - 1e-9).any():
            report["angles_ok"] = False
            report["violations"].append((k, "interior angle above pi"))
        if c.kind == BOUNDARY:
            geo_r, orth = residuals(m, c, fine=5)
            # free-boundary convexity allows endpoint angles up to pi/2
            for at_start in (True, False):
                ang = _endpoint_region_angle(m, c, at_start)
                if ang is not None and ang > 0.5 * np.pi + angle_tol:
                    report["angles_ok"] = False
                    report["violations"].append((k, "endpoint angle above pi/2"))
        poly = c.vertices if c.kind == CLOSED else _region_polygon(m, c)
        if prev_poly is not None and len(poly) > 3:
            probe = 0.98 * poly[:-1:max(1, len(poly) // region_samples)] \
                + 0.02 * poly[:-1:max(1, len(poly) // region_samples)].mean(axis=0)
            ok = polygon_contains(prev_poly, probe)
            if not ok.all():
                report["nesting_ok"] = False
                report["violations"].append((k, "region not nested"))
        prev_poly = poly
    report["ok"] = report["simple_ok"] and report["angles_ok"] and report["nesting_ok"]
    return report


def _endpoint_region_angle(m, c: Chain, at_start: bool):
    """Metric angle between the chain end and the co-bounded boundary arc."""
    from .geodesics import end_tangent
    v = c.vertices[0] if at_start else c.vertices[-1]
    if abs(np.hypot(*v) - m.domain_radius) > 1e-5:
        return None
    theta = np.arctan2(v[1], v[0])
    poly = _region_polygon(m, c)
    area = _polygon_area(poly)
    # tangent along the chain pointing away from the endpoint
    if at_start:
        chain_dir = end_tangent(m, c.vertices, at_start=True)
    else:
        chain_dir = -end_tangent(m, c.vertices, at_start=False)
    # boundary direction into the co-bounded arc: probe both and pick the one
    # whose nearby boundary point lies on the region polygon side
    tang = m.boundary_velocity(theta)
    for sgn in (1.0, -1.0):
        probe_theta = theta + sgn * 1e-2
        probe = m.boundary_point(probe_theta) * (1 - 1e-4)
        if polygon_contains(poly, probe[None])[0]:
            return float(m.angle(v, chain_dir, sgn * tang))
    return None
