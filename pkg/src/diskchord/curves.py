"""Piecewise-geodesic chains: length, intersections, concatenation, Frechet.

A Chain stores vertices only; edges are implicit minimizing geodesics
reconstructed on demand.  Intersection tests run on the parameter-space
polyline (transversality is topological), with crossings flatter than a
tangency tolerance ignored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .geodesics import polyline_length, resample_polyline
from .metrics import MetricDisk

CLOSED = "closed"
BOUNDARY = "boundary"
BASED = "based"
ARC = "arc"          # generic path (e.g. hub-to-boundary sweepout members)

TANGENCY_ANGLE = 1e-4


@dataclass
class Chain:
    vertices: np.ndarray
    kind: str = ARC
    base: Optional[np.ndarray] = None
    orientation: int = 1

    def __post_init__(self):
        self.vertices = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if self.kind == CLOSED and len(self.vertices) > 1:
            if not np.allclose(self.vertices[0], self.vertices[-1], atol=1e-12):
                self.vertices = np.concatenate([self.vertices, self.vertices[:1]])

    @property
    def n(self) -> int:
        return len(self.vertices)

    @property
    def is_point(self) -> bool:
        return self.n == 1 or np.ptp(self.vertices, axis=0).max() < 1e-12

    def copy(self) -> "Chain":
        return Chain(self.vertices.copy(), self.kind,
                     None if self.base is None else np.array(self.base),
                     self.orientation)

    def validate(self, m: MetricDisk, edge_cap=None, tol=1e-6):
        r = np.hypot(self.vertices[:, 0], self.vertices[:, 1])
        if (r > m.domain_radius + 1e-7).any():
            raise ValueError("chain leaves the parameter disk")
        if self.kind == BOUNDARY and not self.is_point:
            for v in (self.vertices[0], self.vertices[-1]):
                if abs(np.hypot(*v) - m.domain_radius) > tol:
                    raise ValueError("boundary-anchored endpoint off the rim")
        if self.kind == CLOSED and not np.allclose(self.vertices[0], self.vertices[-1]):
            raise ValueError("closed chain must wrap")
        if edge_cap is not None and self.n > 1:
            d = np.diff(self.vertices, axis=0)
            mid = 0.5 * (self.vertices[:-1] + self.vertices[1:])
            seg = np.sqrt(np.maximum(m.inner(mid, d, d), 0.0))
            if seg.max() > edge_cap:
                raise ValueError(f"edge {seg.max():.4f} exceeds normal radius {edge_cap:.4f}")


def length(m: MetricDisk, c: Chain) -> float:
    """Metric length; zero iff point chain, additive under concat."""
    if c.is_point:
        return 0.0
    return polyline_length(m, c.vertices, refine=2)


def reverse(c: Chain) -> Chain:
    out = c.copy()
    out.vertices = out.vertices[::-1].copy()
    out.orientation = -c.orientation
    return out


def concat(a: Chain, b: Chain, kind=None, tol=1e-7) -> Chain:
    if not np.allclose(a.vertices[-1], b.vertices[0], atol=tol):
        raise ValueError("concat endpoint mismatch")
    verts = np.concatenate([a.vertices, b.vertices[1:]], axis=0)
    if kind is None:
        kind = ARC
        if np.allclose(verts[0], verts[-1], atol=tol):
            kind = CLOSED
    return Chain(verts, kind)


def resample(m: MetricDisk, c: Chain, spacing) -> Chain:
    if c.is_point:
        return c.copy()
    out = c.copy()
    out.vertices = resample_polyline(m, c.vertices, spacing=spacing)
    return out


# ---------------------------------------------------------------------------
# segment intersection machinery (vectorized, parameter space)


def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


def _pair_crossings(P1, P2, Q1, Q2, angle_tol=TANGENCY_ANGLE, eps=1e-12):
    """Boolean mask of transverse proper crossings for segment arrays."""
    d1 = P2 - P1
    d2 = Q2 - Q1
    denom = _cross(d1[:, 0], d1[:, 1], d2[:, 0], d2[:, 1])
    rel = Q1 - P1
    with np.errstate(divide="ignore", invalid="ignore"):
        t = _cross(rel[:, 0], rel[:, 1], d2[:, 0], d2[:, 1]) / denom
        s = _cross(rel[:, 0], rel[:, 1], d1[:, 0], d1[:, 1]) / denom
    n1 = np.hypot(d1[:, 0], d1[:, 1])
    n2 = np.hypot(d2[:, 0], d2[:, 1])
    sin_angle = np.abs(denom) / np.maximum(n1 * n2, 1e-300)
    ok = (np.abs(denom) > eps) & (sin_angle > angle_tol)
    ok &= (t > eps) & (t < 1 - eps) & (s > eps) & (s < 1 - eps)
    return ok


def transverse_self_intersections(c: Chain, angle_tol=TANGENCY_ANGLE) -> int:
    """Count transverse crossing pairs of the polyline with itself."""
    v = c.vertices
    n = len(v) - 1
    if n < 3:
        return 0
    i, j = np.triu_indices(n, k=2)
    if c.kind == CLOSED or np.allclose(v[0], v[-1], atol=1e-12):
        keep = ~((i == 0) & (j == n - 1))
        i, j = i[keep], j[keep]
    ok = _pair_crossings(v[i], v[i + 1], v[j], v[j + 1], angle_tol)
    return int(ok.sum())


def transverse_between(a: Chain, b: Chain, angle_tol=TANGENCY_ANGLE) -> int:
    """Transverse crossings between two distinct chains."""
    va, vb = a.vertices, b.vertices
    na, nb = len(va) - 1, len(vb) - 1
    if na < 1 or nb < 1:
        return 0
    i, j = np.meshgrid(np.arange(na), np.arange(nb), indexing="ij")
    i, j = i.ravel(), j.ravel()
    ok = _pair_crossings(va[i], va[i + 1], vb[j], vb[j + 1], angle_tol)
    return int(ok.sum())


def crossing_points_between(a: Chain, b: Chain, angle_tol=TANGENCY_ANGLE):
    """Coordinates of the transverse crossings between two chains."""
    va, vb = a.vertices, b.vertices
    na, nb = len(va) - 1, len(vb) - 1
    if na < 1 or nb < 1:
        return np.zeros((0, 2))
    i, j = np.meshgrid(np.arange(na), np.arange(nb), indexing="ij")
    i, j = i.ravel(), j.ravel()
    P1, P2, Q1, Q2 = va[i], va[i + 1], vb[j], vb[j + 1]
    ok = _pair_crossings(P1, P2, Q1, Q2, angle_tol)
    if not ok.any():
        return np.zeros((0, 2))
    P1, P2, Q1, Q2 = P1[ok], P2[ok], Q1[ok], Q2[ok]
    d1 = P2 - P1
    d2 = Q2 - Q1
    denom = _cross(d1[:, 0], d1[:, 1], d2[:, 0], d2[:, 1])
    rel = Q1 - P1
    t = _cross(rel[:, 0], rel[:, 1], d2[:, 0], d2[:, 1]) / denom
    return P1 + t[:, None] * d1


def polygon_contains(poly: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Even-odd point-in-polygon test, vectorized over query points."""
    poly = np.asarray(poly, dtype=float)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x, y = pts[:, 0][:, None], pts[:, 1][:, None]
    x1, y1 = poly[:-1, 0][None, :], poly[:-1, 1][None, :]
    x2, y2 = poly[1:, 0][None, :], poly[1:, 1][None, :]
    cond = (y1 <= y) != (y2 <= y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xin = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
    crossings = cond & (x < xin)
    return crossings.sum(axis=1) % 2 == 1


# ---------------------------------------------------------------------------
# discrete Frechet distance


def _frechet_dp(D: np.ndarray) -> float:
    n, m_ = D.shape
    F = np.empty_like(D)
    F[0, 0] = D[0, 0]
    for j in range(1, m_):
        F[0, j] = max(F[0, j - 1], D[0, j])
    for i in range(1, n):
        F[i, 0] = max(F[i - 1, 0], D[i, 0])
        Fm1 = F[i - 1]
        row = F[i]
        for j in range(1, m_):
            row[j] = max(min(Fm1[j], Fm1[j - 1], row[j - 1]), D[i, j])
    return float(F[-1, -1])


def _metric_point_dists(m: MetricDisk, A, B):
    mid = 0.5 * (A[:, None, :] + B[None, :, :])
    d = A[:, None, :] - B[None, :, :]
    return np.sqrt(np.maximum(m.inner(mid, d, d), 0.0))


def frechet_distance(m: MetricDisk, a: Chain, b: Chain, max_pts=80) -> float:
    """Orientation-agnostic discrete Frechet distance (cyclic for closed)."""
    A = resample_polyline(m, a.vertices, npts=min(max_pts, max(a.n, 2)))
    B = resample_polyline(m, b.vertices, npts=min(max_pts, max(b.n, 2)))
    if a.is_point and b.is_point:
        return float(_metric_point_dists(m, A[:1], B[:1])[0, 0])
    best = np.inf
    cyclic = a.kind == CLOSED and b.kind == CLOSED
    D0 = _metric_point_dists(m, A, B)
    for Dm in (D0, D0[:, ::-1]):
        if cyclic:
            nb = Dm.shape[1] - 1
            step = max(1, nb // 24)
            for shift in range(0, nb, step):
                Ds = np.concatenate([Dm[:, shift:nb], Dm[:, :shift + 1]], axis=1)
                best = min(best, _frechet_dp(Ds))
        else:
            best = min(best, _frechet_dp(Dm))
    return best


def frechet_distinct(m: MetricDisk, a: Chain, b: Chain, tol: float) -> bool:
    """True iff the two chains are further apart than ``tol``."""
    return frechet_distance(m, a, b) > tol


# ---------------------------------------------------------------------------
# serialization


def chain_to_json(c: Chain) -> dict:
    out = {"kind": c.kind, "vertices": np.round(c.vertices, 12).tolist()}
    if c.base is not None:
        out["base"] = np.round(np.asarray(c.base), 12).tolist()
    return out


def chain_from_json(data: dict) -> Chain:
    return Chain(np.array(data["vertices"], dtype=float), data.get("kind", ARC),
                 None if data.get("base") is None else np.array(data["base"]))
