"""Chord candidates: residual certification and a numeric Morse index.

The geodesic residual is the largest turning angle at interior vertices with
each edge realized as a relaxed fine geodesic; the orthogonality residual is
the endpoint deviation from a right angle against the boundary tangent.  The
index estimator discretizes the second variation of energy with Robin
boundary terms given by the boundary's geodesic curvature.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import eigh

from .analysis import boundary_geodesic_curvature
from .curves import BOUNDARY, CLOSED, Chain, length, transverse_self_intersections
from .geodesics import end_tangent, geodesic_bvp, polyline_length, relax_polyline
from .metrics import MetricDisk


def _edge_tangents(m: MetricDisk, verts, fine=7):
    """(incoming, outgoing) unit tangents at each vertex, edges refined."""
    n = len(verts)
    tang_out = [None] * (n - 1)   # tangent at start of edge i
    tang_in = [None] * (n - 1)    # tangent at end of edge i
    for i in range(n - 1):
        a, b = verts[i], verts[i + 1]
        if np.allclose(a, b, atol=1e-14):
            tang_out[i] = tang_in[i] = None
            continue
        t = np.linspace(0.0, 1.0, fine)[:, None]
        seg = relax_polyline(m, a * (1 - t) + b * t, iters=30)
        tang_out[i] = end_tangent(m, seg, at_start=True)
        tang_in[i] = end_tangent(m, seg, at_start=False)
    return tang_in, tang_out


def residuals(m: MetricDisk, c: Chain, fine=7):
    """(geo_residual, ortho_residual) in radians.

    geo: max interior turning angle between consecutive edge geodesics.
    ortho: max endpoint deviation from pi/2 against the boundary tangent
    (0 for closed chains, where the wrap vertex counts as interior).
    """
    verts = c.vertices
    if c.is_point:
        return 0.0, 0.0
    tang_in, tang_out = _edge_tangents(m, verts, fine=fine)
    n = len(verts)
    geo = 0.0
    interior = list(range(1, n - 1))
    pairs = [(i - 1, i, verts[i]) for i in interior]
    if c.kind == CLOSED:
        pairs.append((n - 2, 0, verts[0]))
    for ein, eout, v in pairs:
        if tang_in[ein] is None or tang_out[eout] is None:
            continue
        geo = max(geo, float(m.angle(v, tang_in[ein], tang_out[eout])))
    ortho = 0.0
    if c.kind != CLOSED:
        for at_start in (True, False):
            idx = 0 if at_start else n - 1
            v = verts[idx]
            theta = np.arctan2(v[1], v[0])
            if abs(np.hypot(*v) - m.domain_radius) > 1e-5:
                ortho = np.pi / 2  # endpoint off the rim: maximally non-orthogonal
                continue
            edge = tang_out[0] if at_start else tang_in[n - 2]
            if edge is None:
                continue
            ang = float(m.angle(v, edge, m.boundary_velocity(theta)))
            ortho = max(ortho, abs(ang - 0.5 * np.pi))
    return geo, ortho


@dataclass
class ChordCandidate:
    chain: Chain
    length: float
    geo_residual: float
    ortho_residual: float
    self_intersections: int
    morse_index: Optional[int] = None
    degenerate: bool = False
    provenance: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def simple(self) -> bool:
        return self.self_intersections == 0

    def certified(self, geo_tol=1e-3, ortho_tol=1e-3) -> bool:
        return self.geo_residual < geo_tol and self.ortho_residual < ortho_tol

    def as_dict(self) -> dict:
        from .curves import chain_to_json
        return {
            "length": self.length,
            "geo_residual": self.geo_residual,
            "ortho_residual": self.ortho_residual,
            "self_intersections": self.self_intersections,
            "morse_index": self.morse_index,
            "degenerate": self.degenerate,
            "provenance": self.provenance,
            "chain": chain_to_json(self.chain),
            "meta": {k: v for k, v in sorted(self.meta.items())},
        }


def make_candidate(m: MetricDisk, c: Chain, provenance="", with_index=True,
                   fine=7) -> ChordCandidate:
    geo, ortho = residuals(m, c, fine=fine)
    cand = ChordCandidate(
        chain=c,
        length=length(m, c),
        geo_residual=geo,
        ortho_residual=ortho,
        self_intersections=transverse_self_intersections(c),
        provenance=provenance,
    )
    if with_index and not c.is_point:
        try:
            idx, degen, lam = morse_index(m, c)
            cand.morse_index = idx
            cand.degenerate = degen
            cand.meta["lambda_min"] = float(lam)
        except Exception as exc:  # index is advisory; never fail certification
            cand.meta["index_error"] = str(exc)
    return cand


def polish_closed(m: MetricDisk, verts, iters=40, tol=1e-14):
    """Newton relaxation onto a nearby closed discrete geodesic.

    Vertices move along parameter-space normals only, which removes the
    tangential reparameterization null space; valid near stable closed
    geodesics (local length minima), where the reduced Hessian is SPD.
    Removes the grid-imprint bias of the ball fields from a stalled state.
    """
    from scipy.optimize import minimize
    from .geodesics import resample_polyline

    pts0 = np.array(verts, dtype=float)
    # fine vertices keep the O(h^2) chord-length bias below residual tolerance
    target = max(4 * (len(pts0) - 1), 192)
    pts0 = resample_polyline(m, pts0, npts=target + 1)
    if np.allclose(pts0[0], pts0[-1]):
        pts0 = pts0[:-1]
    n = len(pts0)
    chord = np.roll(pts0, -1, axis=0) - np.roll(pts0, 1, axis=0)
    nrm = np.stack([-chord[:, 1], chord[:, 0]], axis=-1)
    nrm /= np.maximum(np.hypot(nrm[:, 0], nrm[:, 1]), 1e-300)[:, None]

    def length_grad(p):
        d = np.roll(p, -1, axis=0) - p
        mid = p + 0.5 * d
        G = m.tensor(mid)
        dG = m.tensor_grad(mid)
        gd = np.einsum("...ij,...j->...i", G, d)
        ell = np.sqrt(np.maximum(np.einsum("...i,...i->...", d, gd), 1e-300))
        S = np.einsum("...kij,...i,...j->...k", dG, d, d)
        gradL = -(gd / ell[:, None]) + S / (4.0 * ell[:, None])
        gradL += np.roll(gd / ell[:, None] + S / (4.0 * ell[:, None]), 1, axis=0)
        return float(ell.sum()), gradL

    def obj(s):
        p = pts0 + s[:, None] * nrm
        L, gL = length_grad(p)
        return L, np.einsum("ki,ki->k", gL, nrm)

    res = minimize(obj, np.zeros(n), jac=True, method="L-BFGS-B",
                   options={"maxiter": 200, "ftol": 1e-16, "gtol": 1e-12})
    pts = pts0 + res.x[:, None] * nrm
    return np.concatenate([pts, pts[:1]], axis=0)


def polish_boundary_chord(m: MetricDisk, verts, max_pts=48):
    """Solve the chord stationarity system near a stalled flow state.

    Unknowns are the interior vertices plus two boundary angles; residuals
    are the interior energy gradients and the endpoint orthogonality inner
    products.  Newton-style least squares converges to the saddle the flow
    hovers at; callers must verify the result stays near the input.
    """
    from scipy.optimize import least_squares
    from .geodesics import resample_polyline

    pts = resample_polyline(m, np.asarray(verts, dtype=float),
                            npts=min(max_pts, max(len(verts), 6)))
    n = len(pts)
    th0 = np.arctan2(pts[0, 1], pts[0, 0])
    th1 = np.arctan2(pts[-1, 1], pts[-1, 0])

    def unpack(x):
        inner_pts = x[:2 * (n - 2)].reshape(n - 2, 2)
        a, b = x[-2], x[-1]
        p = np.concatenate([m.boundary_point(a)[None], inner_pts,
                            m.boundary_point(b)[None]], axis=0)
        return p, a, b

    # (endpoints stay exactly on the rim by construction)

    def F(x):
        p, a, b = unpack(x)
        _, grad = _interior_energy_grad(m, p)
        res = [grad[1:-1].reshape(-1)]
        for theta, at_start in ((a, True), (b, False)):
            q = m.boundary_point(theta)
            d = (p[1] - p[0]) if at_start else (p[-1] - p[-2])
            gam = m.christoffel(q[None])[0]
            tang = d + (0.5 if at_start else -0.5) * np.einsum("kij,i,j->k", gam, d, d)
            res.append(np.atleast_1d(m.inner(q[None], tang[None],
                                             m.boundary_velocity(theta)[None])[0]))
        return np.concatenate(res)

    x0 = np.concatenate([pts[1:-1].reshape(-1), [th0, th1]])
    sol = least_squares(F, x0, method="lm", xtol=1e-14, ftol=1e-14, max_nfev=4000)
    p, a, b = unpack(sol.x)
    return p


def _interior_energy_grad(m, pts):
    d = np.diff(pts, axis=0)
    mid = 0.5 * (pts[:-1] + pts[1:])
    G = m.tensor(mid)
    dG = m.tensor_grad(mid)
    gd = np.einsum("...ij,...j->...i", G, d)
    E = float(np.sum(np.einsum("...i,...i->...", d, gd)))
    S = np.einsum("...kij,...i,...j->...k", dG, d, d)
    grad = np.zeros_like(pts)
    grad[1:] += 2.0 * gd + 0.5 * S
    grad[:-1] += -2.0 * gd + 0.5 * S
    return E, grad


def morse_index(m: MetricDisk, c: Chain, nodes=80, zero_tol=1e-6,
                with_mode=False):
    """Numeric Morse index of a (near-)geodesic chain.

    Index form for normal variations f along a unit-speed geodesic:
        Q(f) = int f'^2 - K f^2 ds  - kg(0) f(0)^2 - kg(L) f(L)^2
    with Robin terms only for boundary-anchored chains.  Returns
    (negative eigenvalue count, degenerate flag, smallest eigenvalue)
    and, with ``with_mode``, also the lowest eigenfunction sampled on the
    resampled vertices (useful as a perturbation direction).
    """
    from .geodesics import resample_polyline

    verts = resample_polyline(m, c.vertices, npts=nodes)
    d = np.diff(verts, axis=0)
    mid = 0.5 * (verts[:-1] + verts[1:])
    h = np.sqrt(np.maximum(m.inner(mid, d, d), 1e-300))
    K = m.gauss_curvature(verts)
    n = len(verts)
    closed = c.kind == CLOSED
    if closed:
        n_dof = n - 1
    else:
        n_dof = n
    A = np.zeros((n_dof, n_dof))
    M = np.zeros(n_dof)

    def dof(i):
        return i % n_dof if closed else i

    for i in range(n - 1):
        a, b = dof(i), dof(i + 1)
        w = 1.0 / h[i]
        A[a, a] += w
        A[b, b] += w
        A[a, b] -= w
        A[b, a] -= w
        M[a] += 0.5 * h[i]
        M[b] += 0.5 * h[i]
    lump = M.copy()
    for i in range(n_dof):
        A[i, i] -= K[i] * lump[i]
    if not closed and c.kind in (BOUNDARY,):
        for idx in (0, n - 1):
            v = verts[idx]
            if abs(np.hypot(*v) - m.domain_radius) < 1e-5:
                theta = np.arctan2(v[1], v[0])
                kg = float(boundary_geodesic_curvature(m, theta)[0])
                A[dof(idx), dof(idx)] -= kg
    if with_mode:
        lam, vec = eigh(A, np.diag(M))
        neg = int(np.sum(lam < -zero_tol))
        degen = bool(np.min(np.abs(lam)) < zero_tol)
        mode_dof = vec[:, 0]
        if closed:
            mode = np.concatenate([mode_dof, mode_dof[:1]])
        else:
            mode = mode_dof
        mode = mode / np.max(np.abs(mode))
        return neg, degen, float(lam.min()), mode, verts
    lam = eigh(A, np.diag(M), eigvals_only=True)
    neg = int(np.sum(lam < -zero_tol))
    degen = bool(np.min(np.abs(lam)) < zero_tol)
    return neg, degen, float(lam.min())
