"""Collar extension for non-convex boundaries.

A Fermi chart parameterizes a collar of the boundary by (arclength x,
depth t); the extension glues an outward band in which the profile is
frozen at its boundary value, so the band is a flat product strip and the
new outer boundary is totally geodesic (hence convex).  The convex pipeline
then runs on the extended disk and the chord's arc inside the original disk
is extracted; it meets the original boundary orthogonally at the end that
entered through the band.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .analysis import (boundary_arclength_table, boundary_convexity_check,
                       focal_distance_to_boundary, global_invariants)
from .chords import make_candidate, residuals
from .curves import ARC, BOUNDARY, Chain, length
from .errors import CollarError
from .geodesics import end_tangent, polyline_length, resample_polyline, shoot_batch, _rk4_step
from .metrics import MetricDisk


@dataclass
class FermiChart:
    eps: float
    thetas: np.ndarray            # boundary samples (angle)
    arclengths: np.ndarray        # x coordinate of each sample
    levels: np.ndarray            # depth values t >= 0 (inward)
    points: np.ndarray            # (n_theta, n_levels, 2) chart positions
    velocities: np.ndarray        # (n_theta, n_levels, 2) d/dt of the chart
    profile: np.ndarray           # g(x, t) = |d_x F|^2 samples
    cross_terms: np.ndarray       # g(d_x F, d_t F) samples
    level_orthogonality: np.ndarray  # |angle vs N_t tangent - pi/2|

    @property
    def max_cross_term(self):
        return float(np.max(np.abs(self.cross_terms)))

    @property
    def max_level_residual(self):
        return float(np.max(self.level_orthogonality))


def fermi_collar(m: MetricDisk, eps: float, n_theta=96, n_levels=9,
                 delta=5e-4, step=1e-3) -> FermiChart:
    """Inward Fermi chart of depth eps with numeric orthogonality checks.

    The x-derivative is taken by central differences of extra geodesics
    shot from boundary points offset by ``delta`` in arclength, so the
    cross-term check measures the integrator, not the sampling.
    """
    if eps <= 0:
        raise CollarError("collar width must be positive")
    focal = focal_distance_to_boundary(m)
    if eps >= focal:
        raise CollarError(f"collar width {eps} reaches the focal distance {focal}")
    thetas_t, s_t, P = boundary_arclength_table(m)
    thetas = np.linspace(0.0, 2 * np.pi, n_theta, endpoint=False)
    s_of = np.interp(thetas, thetas_t, s_t)
    dtheta_ds = 1.0 / np.maximum(np.interp(thetas, thetas_t,
                                           np.gradient(s_t, thetas_t)), 1e-12)
    levels = np.linspace(0.0, eps, n_levels)

    # shoot the central and offset normal geodesics together
    th_plus = np.interp(s_of + delta, s_t, thetas_t)
    th_minus = np.interp(s_of - delta, np.concatenate([s_t - P, s_t]),
                         np.concatenate([thetas_t - 2 * np.pi, thetas_t]))
    all_th = np.concatenate([thetas, th_plus, th_minus])
    starts = m.boundary_point(all_th)
    dirs = m.inward_normal(all_th)
    n = len(all_th)
    x = starts.copy()
    v = dirs.copy()
    pts = np.zeros((n, n_levels, 2))
    vels = np.zeros((n, n_levels, 2))
    pts[:, 0] = x
    vels[:, 0] = v
    t = 0.0
    li = 1
    while li < n_levels:
        target = levels[li]
        while t < target - 1e-12:
            h = min(step, target - t)
            x, v = _rk4_step(m, x, v, h)
            t += h
        pts[:, li] = x
        vels[:, li] = v
        li += 1

    C = pts[:n_theta]
    Cp = pts[n_theta:2 * n_theta]
    Cm = pts[2 * n_theta:]
    dX = (Cp - Cm) / (2 * delta)            # d/dx of the chart
    Vc = vels[:n_theta]
    flat_pts = C.reshape(-1, 2)
    flat_dx = dX.reshape(-1, 2)
    flat_v = Vc.reshape(-1, 2)
    cross = m.inner(flat_pts, flat_dx, flat_v).reshape(n_theta, n_levels)
    prof = m.inner(flat_pts, flat_dx, flat_dx).reshape(n_theta, n_levels)
    ang = m.angle(flat_pts, flat_v, flat_dx).reshape(n_theta, n_levels)
    level_res = np.abs(ang - 0.5 * np.pi)
    return FermiChart(eps=eps, thetas=thetas, arclengths=s_of, levels=levels,
                      points=C, velocities=Vc, profile=prof,
                      cross_terms=cross, level_orthogonality=level_res)


def smoothing_function(eps: float, samples=257):
    """phi(t) on [-eps, eps]: identity up to eps/3, frozen at eps beyond
    2 eps/3, quintic Hermite in between (C^2, monotone)."""
    t = np.linspace(-eps, eps, samples)
    lo, hi = eps / 3.0, 2.0 * eps / 3.0
    phi = t.copy()
    ramp = (t >= lo) & (t <= hi)
    u = (t[ramp] - lo) / (hi - lo)
    h00 = 1 - 10 * u ** 3 + 15 * u ** 4 - 6 * u ** 5
    h10 = u - 6 * u ** 3 + 8 * u ** 4 - 3 * u ** 5
    h01 = 10 * u ** 3 - 15 * u ** 4 + 6 * u ** 5
    phi[ramp] = h00 * lo + h10 * (hi - lo) * 1.0 + h01 * eps
    phi[t > hi] = eps
    return t, phi


@dataclass
class CollarExtension:
    epsilon: float
    phi_t: np.ndarray
    phi: np.ndarray
    extended: MetricDisk
    chart: FermiChart
    band_radius: float              # new domain radius
    checks: dict = field(default_factory=dict)


def extend_metric(m: MetricDisk, eps: float, n_theta=192) -> CollarExtension:
    """Extended disk with a frozen-profile product band behind the boundary.

    The band chart matches the interior chart to first order on the
    junction circle, so tensor components stay continuous; the outer
    boundary is totally geodesic, hence convex.
    """
    chart = fermi_collar(m, eps, n_theta=min(96, n_theta))
    thetas = np.linspace(0.0, 2 * np.pi, n_theta, endpoint=False)
    th_t, s_t, P = boundary_arclength_table(m)
    s_of = np.interp(thetas, th_t, s_t)
    bpts = m.boundary_point(thetas)
    tvel = m.boundary_velocity(thetas)
    g_b = m.tensor(bpts)
    sigma = np.sqrt(np.einsum("...i,...ij,...j->...", tvel, g_b, tvel))
    tau_hat = tvel / sigma[:, None]
    nu = m.inward_normal(thetas)
    e_r = bpts / np.hypot(bpts[:, 0], bpts[:, 1])[:, None]
    a_vals = np.einsum("...i,...ij,...j->...", tau_hat, g_b, e_r)
    b_vals = -np.einsum("...i,...ij,...j->...", nu, g_b, e_r)
    if (b_vals <= 0).any():
        raise CollarError("radial chart direction not outward somewhere")
    band = eps / float(b_vals.max())
    R_new = m.domain_radius + band

    per = 2 * np.pi
    ext_th = np.concatenate([thetas, [per]])
    sp_s = CubicSpline(ext_th, np.concatenate([s_of, [P]]))
    sp_a = CubicSpline(ext_th, np.concatenate([a_vals, [a_vals[0]]]),
                       bc_type="periodic")
    sp_b = CubicSpline(ext_th, np.concatenate([b_vals, [b_vals[0]]]),
                       bc_type="periodic")

    R0 = m.domain_radius

    def band_tensor(pts):
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, 2)
        rho = np.hypot(flat[:, 0], flat[:, 1])
        th = np.arctan2(flat[:, 1], flat[:, 0]) % per
        h = np.clip((rho - R0) / band, 0.0, 1.0)
        a = sp_a(th)
        b = sp_b(th)
        sprime = sp_s(th, 1)
        aprime = sp_a(th, 1)
        bprime = sp_b(th, 1)
        m0 = b * band / eps
        eta = h * (1 - h) ** 2
        etap = (1 - h) ** 2 - 2 * h * (1 - h)
        H = h * h * (3 - 2 * h) + m0 * eta + h * h * (h - 1)
        Hp = 6 * h * (1 - h) + m0 * etap + (3 * h * h - 2 * h)
        dH_dm0 = eta
        X_th = sprime + aprime * band * eta
        X_rho = a * etap
        T_th = eps * dH_dm0 * (bprime * band / eps)
        T_rho = eps * Hp / band
        # polar to cartesian: d(theta, rho)/d(u, v)
        st, ct = np.sin(th), np.cos(th)
        rho_safe = np.maximum(rho, 1e-12)
        dth_du, dth_dv = -st / rho_safe, ct / rho_safe
        drho_du, drho_dv = ct, st
        Jxu = X_th * dth_du + X_rho * drho_du
        Jxv = X_th * dth_dv + X_rho * drho_dv
        Jtu = T_th * dth_du + T_rho * drho_du
        Jtv = T_th * dth_dv + T_rho * drho_dv
        out = np.empty(flat.shape[:-1] + (2, 2))
        out[:, 0, 0] = Jxu * Jxu + Jtu * Jtu
        out[:, 0, 1] = Jxu * Jxv + Jtu * Jtv
        out[:, 1, 0] = out[:, 0, 1]
        out[:, 1, 1] = Jxv * Jxv + Jtv * Jtv
        return out.reshape(pts.shape[:-1] + (2, 2))

    def tensor(pts):
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, 2)
        rho = np.hypot(flat[:, 0], flat[:, 1])
        inside = rho <= R0
        out = np.empty(flat.shape[:-1] + (2, 2))
        if inside.any():
            out[inside] = m.tensor(flat[inside])
        if (~inside).any():
            out[~inside] = band_tensor(flat[~inside])
        return out.reshape(pts.shape[:-1] + (2, 2))

    def gauss(pts):
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, 2)
        rho = np.hypot(flat[:, 0], flat[:, 1])
        out = np.zeros(len(flat))
        inside = rho <= R0 - 1e-9
        if inside.any():
            out[inside] = m.gauss_curvature(flat[inside])
        return out.reshape(pts.shape[:-1])

    ext = MetricDisk(name=f"{m.name}+collar", tensor_fn=tensor, grad_fn=None,
                     gauss_fn=gauss, domain_radius=R_new,
                     grid_resolution=m.grid_resolution,
                     source=m.source, params=dict(m.params, collar_eps=eps))

    phi_t, phi = smoothing_function(eps)
    checks = {}
    # restriction identity on shared interior nodes
    probe = np.array([[0.2, 0.1], [-0.4, 0.3], [0.0, -0.7], [0.5, 0.5]])
    checks["restriction_exact"] = bool(
        np.allclose(ext.tensor(probe), m.tensor(probe), atol=0.0, rtol=0.0))
    cvx = boundary_convexity_check(ext)
    checks["extended_boundary_convex"] = bool(cvx.convex)
    checks["extended_min_curvature"] = cvx.min_curvature
    checks["max_cross_term"] = chart.max_cross_term
    checks["max_level_residual"] = chart.max_level_residual
    P_ext = float(np.trapz(np.sqrt(np.einsum(
        "...i,...ij,...j->...", ext.boundary_velocity(thetas),
        ext.tensor(ext.boundary_point(thetas)),
        ext.boundary_velocity(thetas))), thetas) * 1.0) * (1.0 + 1.0 / n_theta * 0)
    checks["P_extended"] = P_ext
    checks["P_original"] = float(P)
    return CollarExtension(epsilon=eps, phi_t=phi_t, phi=phi, extended=ext,
                           chart=chart, band_radius=R_new, checks=checks)


@dataclass
class NonConvexResult:
    segments: List[dict]
    best: Optional[dict]
    eps_schedule: List[float]
    errors: List[str] = field(default_factory=list)


def _extract_interior_arc(m_orig: MetricDisk, ext: MetricDisk, chord: Chain):
    """Arc of an extended-disk chord between crossings of the original rim."""
    verts = chord.vertices
    R0 = m_orig.domain_radius
    r = np.hypot(verts[:, 0], verts[:, 1])
    inside = r <= R0
    if not inside.any():
        return None
    runs = []
    i = 0
    n = len(verts)
    while i < n:
        if inside[i]:
            j = i
            while j + 1 < n and inside[j + 1]:
                j += 1
            runs.append((i, j))
            i = j + 1
        else:
            i += 1
    best = max(runs, key=lambda ab: ab[1] - ab[0])
    i0, j0 = best
    pieces = [verts[i0:j0 + 1]]
    if i0 > 0:
        t = (R0 - r[i0 - 1]) / (r[i0] - r[i0 - 1])
        x = verts[i0 - 1] * (1 - t) + verts[i0] * t
        x *= R0 / np.hypot(*x)
        pieces.insert(0, x[None])
    if j0 < n - 1:
        t = (R0 - r[j0]) / (r[j0 + 1] - r[j0])
        x = verts[j0] * (1 - t) + verts[j0 + 1] * t
        x *= R0 / np.hypot(*x)
        pieces.append(x[None])
    arc = np.concatenate(pieces, axis=0)
    return Chain(arc, BOUNDARY)


def chord_in_nonconvex(m: MetricDisk, eps_schedule=None, pipeline_kwargs=None,
                       ortho_tol=1e-3) -> NonConvexResult:
    """Convex pipeline on a shrinking collar schedule, returning interior
    geodesic segments orthogonal to the original boundary at one end."""
    from .pipeline import run_convex_pipeline

    gi = global_invariants(m)
    if eps_schedule is None:
        eps_schedule = [f * gi.inj_lower for f in (0.1, 0.05, 0.025)]
    pipeline_kwargs = dict(pipeline_kwargs or {})
    pipeline_kwargs.setdefault("sweepout_samples", 240)
    pipeline_kwargs.setdefault("f1_samples", 90)
    pipeline_kwargs.setdefault("f2_grid", 12)
    segments = []
    errors = []
    for eps in eps_schedule:
        try:
            coll = extend_metric(m, eps)
            pr = run_convex_pipeline(coll.extended, require_convex=False,
                                     **pipeline_kwargs)
            certified = [c for c in pr.chords
                         if c.certified() and not c.chain.is_point]
            if not certified:
                errors.append(f"eps={eps:.4f}: no certified chord")
                continue
            chord = min(certified, key=lambda c: c.length)
            arc = _extract_interior_arc(m, coll.extended, chord.chain)
            if arc is None or arc.n < 3:
                errors.append(f"eps={eps:.4f}: chord does not enter the disk")
                continue
            geo, orth_both = residuals(m, arc)
            o_start, o_end = _one_sided_orthogonality(m, arc)
            seg_len = length(m, arc)
            d_eps = pr.invariants.d
            P_eps = pr.invariants.P
            interior_r = np.hypot(arc.vertices[1:-1, 0], arc.vertices[1:-1, 1])
            segments.append({
                "eps": float(eps),
                "length": float(seg_len),
                "geo_residual": float(geo),
                "ortho_start": float(o_start),
                "ortho_end": float(o_end),
                "one_sided_ok": bool(min(o_start, o_end) < ortho_tol),
                "strictly_interior": bool(
                    (interior_r < m.domain_radius - 1e-9).all()),
                "bound_4d_P": float(4 * gi.d + gi.P),
                "bound_with_eps": float(4 * gi.d + gi.P + 8 * eps
                                        + abs(P_eps - gi.P)),
                "bound_ok": bool(seg_len <= 4 * gi.d + gi.P + 8 * eps
                                 + abs(P_eps - gi.P) + 1e-3),
                "d_eps": float(d_eps),
                "d_eps_le_d_plus_2eps": bool(d_eps <= gi.d + 2 * eps
                                             + 0.01 * gi.d),
                "arc": arc,
                "collar_checks": coll.checks,
            })
        except Exception as exc:
            errors.append(f"eps={eps:.4f}: {exc}")
    best = None
    if segments:
        best = min(segments, key=lambda s: s["length"])
    return NonConvexResult(segments=segments, best=best,
                           eps_schedule=[float(e) for e in eps_schedule],
                           errors=errors)


def _one_sided_orthogonality(m: MetricDisk, arc: Chain):
    out = []
    for at_start in (True, False):
        v = arc.vertices[0] if at_start else arc.vertices[-1]
        theta = np.arctan2(v[1], v[0])
        tang = end_tangent(m, arc.vertices, at_start=at_start)
        ang = float(m.angle(v, tang, m.boundary_velocity(theta)))
        out.append(abs(ang - 0.5 * np.pi))
    return out[0], out[1]
