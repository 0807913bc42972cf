"""Two-parameter min-max over doubled sweepout curves.

f1 doubles a fixed shortest sweepout member against the rotating family
(interval class); f2 doubles rotated pairs over a Mobius-band grid.  Both
are tightened member-wise with the free-boundary flow; members whose
initial length cannot affect the limiting maximum are pruned, and the
critical chord is captured by bisecting between neighbours that escape to
opposite sides of the saddle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .chords import ChordCandidate, make_candidate
from .curves import (BOUNDARY, Chain, concat, frechet_distance, frechet_distinct,
                     length, reverse)
from .errors import DiskchordError
from .flow import BallCover, CurveFamily, run_flow
from .geodesics import resample_polyline
from .metrics import MetricDisk


def _doubled(m: MetricDisk, ga: Chain, gb: Chain, spacing) -> Chain:
    out = concat(reverse(ga), gb)
    verts = resample_polyline(m, out.vertices, spacing=spacing)
    for i in (0, -1):
        r = np.hypot(*verts[i])
        if r > 0:
            verts[i] *= m.domain_radius / r
    c = Chain(verts, BOUNDARY)
    return c


def _self_contraction(m: MetricDisk, g: Chain, spacing, steps=10) -> List[Chain]:
    """Contraction of -G * G along itself down to its boundary endpoint."""
    verts = g.vertices
    d = np.diff(verts, axis=0)
    mid = 0.5 * (verts[:-1] + verts[1:])
    seg = np.sqrt(np.maximum(m.inner(mid, d, d), 0.0))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    out = []
    for k in range(1, steps + 1):
        s = total * k / steps
        j = int(np.searchsorted(cum, min(s, total)))
        j = max(1, min(j, len(verts) - 1))
        t = (s - cum[j - 1]) / max(cum[j] - cum[j - 1], 1e-300)
        cut = verts[j - 1] * (1 - t) + verts[j] * t
        tail = np.concatenate([cut[None], verts[j:]], axis=0)
        c = _doubled(m, Chain(tail), Chain(tail), spacing)
        out.append(c)
    out[-1] = Chain(g.vertices[-1][None, :].copy(), BOUNDARY)
    return out


def family_f1(m: MetricDisk, sweep, t0_index: Optional[int] = None,
              samples=180, spacing=0.1, pad=10) -> CurveFamily:
    """Interval family of doubled curves against the shortest member."""
    curves = sweep.curves
    N = len(curves)
    lengths = [length(m, c) for c in curves]
    if t0_index is None:
        t0_index = int(np.argmin(lengths))
    g0 = curves[t0_index]
    idx = [(t0_index + round(k * N / samples)) % N for k in range(samples + 1)]
    members = [_doubled(m, g0, curves[i], spacing) for i in idx]
    head = _self_contraction(m, g0, spacing)[::-1]
    tail = _self_contraction(m, g0, spacing)
    members = head + members + tail
    params = np.linspace(0.0, 1.0, len(members))
    fam = CurveFamily(members=members, params=params, kind="interval",
                      meta={"t0_index": t0_index, "source_indices": idx})
    return fam


def family_f2(m: MetricDisk, sweep, grid=24, spacing=0.1) -> CurveFamily:
    """Mobius-band family of doubled rotated pairs over an (s, t) grid.

    Node (i, j) doubles the sweepout members at circle indices mapped from
    s+t and s-t; the edge identification f2(0, t) = f2(pi, pi - t) holds
    exactly on grid nodes by index arithmetic (asserted).
    """
    curves = sweep.curves
    N = len(curves)
    n = grid

    def index_map(k):
        return int(round((k % (2 * n)) * N / (2 * n))) % N

    members = []
    coords = []
    keys = []
    cache = {}
    for i in range(n + 1):
        for j in range(n + 1):
            a = index_map(i + j)
            b = index_map(i - j)
            key = (min(a, b), max(a, b))
            if key in cache:
                members.append(cache[key])
            else:
                c = _doubled(m, curves[a], curves[b], spacing)
                cache[key] = c
                members.append(c)
            coords.append((i, j))
            keys.append(key)
    # Mobius identification check: (0, j) matches (n, n - j) as sets
    for j in range(n + 1):
        k1 = keys[0 * (n + 1) + j]
        k2 = keys[n * (n + 1) + (n - j)]
        if k1 != k2:
            raise DiskchordError("Mobius identification failed on grid nodes")
    params = np.array(coords, dtype=float) * (np.pi / n)
    fam = CurveFamily(members=members, params=params, kind="mobius",
                      grid_shape=(n + 1, n + 1),
                      meta={"keys": keys, "grid": n})
    return fam


# ---------------------------------------------------------------------------
# pull tight


@dataclass
class MemberResult:
    index: int
    initial: float
    final: float
    outcome: str               # "point" | "chord" | "budget" | "pruned"
    chord: Optional[ChordCandidate] = None
    collapse_point: Optional[np.ndarray] = None
    lengths: Optional[list] = None


@dataclass
class PullTightResult:
    w: float
    chord: Optional[ChordCandidate]
    members: List[MemberResult]
    bracket: tuple
    bisections: int
    converged: bool

    def family_max_trace(self):
        """Max member length per step (frozen finals padded)."""
        series = [mr.lengths if mr.lengths else [mr.initial] for mr in self.members]
        depth = max(len(s) for s in series)
        out = []
        for k in range(depth):
            out.append(max(s[min(k, len(s) - 1)] for s in series))
        return out


def _flow_member(m, cover, c: Chain, budget, provenance, record=False):
    tr = run_flow(m, cover, c, budget=budget, record_chains=record,
                  count_every=0, provenance=provenance)
    lengths = tr.lengths
    if tr.outcome == "chord":
        mr = MemberResult(index=-1, initial=lengths[0], final=tr.chord.length,
                          outcome="chord", chord=tr.chord, lengths=lengths)
    elif tr.outcome == "point":
        mr = MemberResult(index=-1, initial=lengths[0], final=0.0,
                          outcome="point",
                          collapse_point=tr.final.vertices[0].copy(),
                          lengths=lengths)
    else:
        mr = MemberResult(index=-1, initial=lengths[0], final=lengths[-1],
                          outcome="budget", lengths=lengths)
    return (mr, tr) if record else mr


def _polish_passage(m, cover, trace, provenance="minmax-passage"):
    """Certify the most chord-like state a collapsing trajectory passed.

    Near-separatrix trajectories shadow the saddle chord before escaping;
    Newton-polishing the closest state (guarded to stay within a couple of
    vertex spacings) recovers the chord the family hovers at.
    """
    from .chords import polish_boundary_chord, residuals

    best = None
    for rec in trace.steps:
        c = rec.chain
        if c is None or c.is_point or c.n < 4:
            continue
        geo, orth = residuals(m, c, fine=5)
        score = geo + orth
        if best is None or score < best[0]:
            best = (score, rec.length, c)
    if best is None or best[0] > 0.5:
        return None
    _, state_len, state = best
    try:
        pv = polish_boundary_chord(m, state.vertices)
    except Exception:
        return None
    polished = Chain(pv, BOUNDARY)
    if frechet_distance(m, state, polished) > 2.0 * cover.spacing:
        return None
    cand = make_candidate(m, polished, provenance=provenance)
    cand.meta["polished"] = True
    if not cand.certified() or cand.length > state_len + 1e-6:
        return None
    if abs(np.hypot(*pv[0]) - m.domain_radius) > 1e-5:
        return None
    return cand


def _align_average(m, a: Chain, b: Chain, npts=None) -> Chain:
    """Midpoint of two nearby boundary-anchored chains (orientation-aligned)."""
    n = npts or max(a.n, b.n, 8)
    A = resample_polyline(m, a.vertices, npts=n)
    B = resample_polyline(m, b.vertices, npts=n)
    Brev = B[::-1]
    if np.sum((A - Brev) ** 2) < np.sum((A - B) ** 2):
        B = Brev
    mid = 0.5 * (A + B)
    for i in (0, -1):
        r = np.hypot(*mid[i])
        if r > 0:
            mid[i] *= m.domain_radius / r
    return Chain(mid, BOUNDARY)


def pull_tight(m: MetricDisk, cover: BallCover, fam: CurveFamily,
               budget=1500, bisection_budget=24, capture_tol=1e-2,
               straddle_sep=None) -> PullTightResult:
    """Member-wise tightening with pruning and saddle bisection."""
    n = fam.n
    lengths0 = [length(m, c) for c in fam.members]
    order = sorted(range(n), key=lambda i: (-lengths0[i], i))
    results = [None] * n
    W = 0.0
    best: Optional[ChordCandidate] = None
    flown_cache = {}
    keys = fam.meta.get("keys")
    point_thr = 1e-3 * cover.inj_lower
    for i in order:
        if lengths0[i] <= max(W, point_thr):
            results[i] = MemberResult(index=i, initial=lengths0[i],
                                      final=lengths0[i], outcome="pruned")
            continue
        key = keys[i] if keys is not None else None
        if key is not None and key in flown_cache:
            mr = flown_cache[key]
            mr2 = MemberResult(index=i, initial=mr.initial, final=mr.final,
                               outcome=mr.outcome, chord=mr.chord,
                               collapse_point=mr.collapse_point,
                               lengths=mr.lengths)
            results[i] = mr2
        else:
            mr = _flow_member(m, cover, fam.members[i], budget, f"minmax-{i}")
            mr.index = i
            results[i] = mr
            if key is not None:
                flown_cache[key] = mr
        mr = results[i]
        if mr.outcome == "chord" and (best is None or mr.final > best.length):
            best = mr.chord
        W = max(W, mr.final)

    # saddle bisection between neighbours that escape to opposite sides
    bisections = 0
    if fam.kind == "interval":
        neighbour_pairs = [(i, i + 1) for i in range(n - 1)]
    else:
        g = fam.grid_shape[0]
        neighbour_pairs = []
        for i in range(g):
            for j in range(g):
                k = i * g + j
                if j + 1 < g:
                    neighbour_pairs.append((k, k + 1))
                if i + 1 < g:
                    neighbour_pairs.append((k, k + g))
    min_sep = (straddle_sep if straddle_sep is not None
               else max(4.0 * cover.spacing, 1e-2))
    straddles = []
    for a, b in neighbour_pairs:
        ra, rb = results[a], results[b]
        if ra.outcome == "point" and rb.outcome == "point":
            pa, pb = ra.collapse_point, rb.collapse_point
            if pa is not None and pb is not None:
                gap = float(np.hypot(*(pa - pb)))
                if gap > min_sep:
                    straddles.append((gap, max(lengths0[a], lengths0[b]), a, b))
    straddles.sort(reverse=True)
    for gap, _, a, b in straddles[:4]:
        lo, hi = fam.members[a], fam.members[b]
        ref = results[a].collapse_point
        for _ in range(bisection_budget):
            mid = _align_average(m, lo, hi)
            bisections += 1
            mr, tr = _flow_member(m, cover, mid, budget, "minmax-bisect",
                                  record=True)
            if mr.outcome == "chord":
                if best is None or mr.final > best.length - 1e-12:
                    best = mr.chord
                W = max(W, mr.final)
                break
            if mr.outcome == "budget":
                W = max(W, mr.final)
                break
            cand = _polish_passage(m, cover, tr)
            if cand is not None:
                if best is None or cand.length > best.length - 1e-12:
                    best = cand
                W = max(W, cand.length)
                break
            if np.hypot(*(mr.collapse_point - ref)) < 0.5 * gap:
                lo = mid
            else:
                hi = mid
            if frechet_distance(m, lo, hi) < 1e-4:
                break
        else:
            continue
        if best is not None and W <= best.length + capture_tol:
            break

    # 2-parameter families: codim-2 saddles sit at corners of >= 3 escape
    # basins; quadtree refinement of the richest grid cells walks the
    # family toward them (1-D bisection alone cannot hit a codim-2 set)
    if fam.kind == "mobius" and fam.grid_shape is not None:
        best, W, extra = _quadtree_capture(m, cover, fam, results, best, W,
                                           budget=budget,
                                           min_sep=min_sep)
        bisections += extra

    converged = best is not None and (W - best.length) < capture_tol
    return PullTightResult(w=W, chord=best, members=results,
                           bracket=(0.0 if best is None else best.length, W),
                           bisections=bisections, converged=converged)


def _collapse_classes(points, min_sep):
    """Union-find clustering of collapse points by separation."""
    pts = [p for p in points if p is not None]
    n = len(points)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if points[i] is None or points[j] is None:
                continue
            if np.hypot(*(points[i] - points[j])) < min_sep:
                parent[find(j)] = find(i)
    return [find(i) for i in range(n)]


def _quadtree_capture(m, cover, fam, results, best, W, budget, min_sep,
                      max_cells=3, max_depth=9):
    """Subdivide escape-class-rich grid cells toward the codim-2 junction.

    The junction of three or more collapse basins carries the stable set of
    an index-2 chord; centers of small rich cells shadow it, and the
    passage polish certifies the chord they shadow.
    """
    g = fam.grid_shape[0]

    def collapse_of(k):
        return results[k].collapse_point if results[k].outcome == "point" else None

    cells = []
    for i in range(g - 1):
        for j in range(g - 1):
            corners = [i * g + j, (i + 1) * g + j, i * g + j + 1,
                       (i + 1) * g + j + 1]
            pts = [collapse_of(k) for k in corners]
            if any(p is None for p in pts):
                continue
            n_classes = len(set(_collapse_classes(pts, min_sep)))
            if n_classes >= 3:
                cells.append((n_classes, max(results[k].initial for k in corners),
                              i, j, [fam.members[k] for k in corners], pts))
    cells.sort(key=lambda t: (-t[0], -t[1], t[2], t[3]))
    flows = 0
    captured = None

    def evaluate(chain):
        nonlocal flows, captured, W, best
        mr, tr = _flow_member(m, cover, chain, budget, "minmax-quadtree",
                              record=True)
        flows += 1
        if mr.outcome == "chord":
            if best is None or mr.final > best.length - 1e-12:
                best = mr.chord
            W = max(W, mr.final)
            captured = mr.chord
            return None
        if mr.outcome != "point":
            W = max(W, mr.final)
            return None
        cand = _polish_passage(m, cover, tr, provenance="minmax-quadtree")
        if cand is not None:
            if best is None or cand.length > best.length - 1e-12:
                best = cand
            W = max(W, cand.length)
            captured = cand
            return None
        return mr.collapse_point

    for _, _, _, _, quad, pts in cells[:max_cells]:
        # corners ordered A=(0,0) B=(1,0) C=(0,1) D=(1,1) in cell coords
        A, B, C, D = quad
        pA, pB, pC, pD = pts
        for _ in range(max_depth):
            mAB = _align_average(m, A, B)
            mCD = _align_average(m, C, D)
            mAC = _align_average(m, A, C)
            mBD = _align_average(m, B, D)
            ctr = _align_average(m, mAB, mCD)
            news = {}
            for key, ch in (("ab", mAB), ("cd", mCD), ("ac", mAC),
                            ("bd", mBD), ("c", ctr)):
                news[key] = evaluate(ch)
                if captured is not None:
                    return best, W, flows
            if any(v is None for v in news.values()):
                break  # a non-point outcome interrupted the subdivision
            subcells = [
                ((A, pA), (mAB, news["ab"]), (mAC, news["ac"]), (ctr, news["c"])),
                ((mAB, news["ab"]), (B, pB), (ctr, news["c"]), (mBD, news["bd"])),
                ((mAC, news["ac"]), (ctr, news["c"]), (C, pC), (mCD, news["cd"])),
                ((ctr, news["c"]), (mBD, news["bd"]), (mCD, news["cd"]), (D, pD)),
            ]
            scored = []
            for sc in subcells:
                spts = [p for _, p in sc]
                n_cls = len(set(_collapse_classes(spts, min_sep)))
                scored.append((n_cls, sc))
            scored.sort(key=lambda t: -t[0])
            n_cls, sc = scored[0]
            if n_cls < 3:
                break  # junction slipped outside this cell
            (A, pA), (B, pB), (C, pC), (D, pD) = sc
            if frechet_distance(m, A, D) < 1e-5:
                break
    return best, W, flows


# ---------------------------------------------------------------------------
# the two-chord extraction


@dataclass
class MinMaxResult:
    w1: float
    w2: float
    chord1: Optional[ChordCandidate]
    chord2: Optional[ChordCandidate]
    distinct: bool
    degenerate_lengths: bool
    l: float
    l_prime: float
    checks: dict
    degenerate_scan: list = field(default_factory=list)

    def as_dict(self):
        return {
            "w1": self.w1, "w2": self.w2,
            "l": self.l, "l_prime": self.l_prime,
            "distinct": self.distinct,
            "degenerate_lengths": self.degenerate_lengths,
            "checks": {k: bool(v) for k, v in sorted(self.checks.items())},
            "chord1": None if self.chord1 is None else self.chord1.as_dict(),
            "chord2": None if self.chord2 is None else self.chord2.as_dict(),
            "degenerate_scan": [c.as_dict() for c in self.degenerate_scan],
        }


def two_chords(m: MetricDisk, cover: BallCover, sweep, f1_samples=180,
               f2_grid=24, budget=1500, distinct_tol=0.02,
               length_coincide_tol=1e-2) -> MinMaxResult:
    lengths = [length(m, c) for c in sweep.curves]
    l = float(max(lengths))
    l_prime = float(min(lengths))
    f1 = family_f1(m, sweep, samples=f1_samples, spacing=cover.spacing)
    r1 = pull_tight(m, cover, f1, budget=budget)
    f2 = family_f2(m, sweep, grid=f2_grid, spacing=cover.spacing)
    r2 = pull_tight(m, cover, f2, budget=budget)
    w1, w2 = r1.w, r2.w
    chord1, chord2 = r1.chord, r2.chord
    checks = {
        "w1_le_l_plus_lprime": w1 <= l + l_prime + 1e-6,
        "w2_le_2l": w2 <= 2 * l + 1e-6,
        "w1_positive": w1 > 1e-3 * cover.inj_lower,
        "w2_positive": w2 > 1e-3 * cover.inj_lower,
        "f1_converged": r1.converged,
        "f2_converged": r2.converged,
    }
    distinct = False
    if chord1 is not None and chord2 is not None:
        distinct = frechet_distinct(m, chord1.chain, chord2.chain, distinct_tol)
    degenerate = abs(w1 - w2) <= length_coincide_tol
    scan = []
    if degenerate:
        seen = [c.chain for c in (chord1, chord2) if c is not None]
        for mr in r2.members:
            if mr.outcome == "chord" and mr.chord is not None:
                if all(frechet_distinct(m, mr.chord.chain, s, distinct_tol)
                       for s in seen):
                    scan.append(mr.chord)
                    seen.append(mr.chord.chain)
    return MinMaxResult(w1=w1, w2=w2, chord1=chord1, chord2=chord2,
                        distinct=distinct, degenerate_lengths=degenerate,
                        l=l, l_prime=l_prime, checks=checks,
                        degenerate_scan=scan)
