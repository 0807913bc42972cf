"""Geodesic initial-value and boundary-value solvers.

The IVP integrator is a fixed-step RK4 on the first-order system
(x' = v, v'^k = -Gamma^k_ij v^i v^j), batched over many trajectories at once;
boundary hits are located by bisecting the final step.  The BVP solver
relaxes a polyline by minimizing discrete energy, which is robust inside
totally normal balls and needs only metric values and first derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BvpError, DegenerateTensor, DomainError, FootError
from .metrics import MetricDisk


@dataclass
class Shot:
    """Result of integrating one geodesic from the interior."""

    points: np.ndarray          # (N, 2) polyline including endpoints
    length: float
    hit_boundary: bool
    hit_theta: float | None     # boundary angle of the hit point
    incidence: float | None     # metric angle vs boundary tangent, in [0, pi]
    final_velocity: np.ndarray


def _rhs(m: MetricDisk, x, v):
    gam = m.christoffel(x)
    acc = -np.einsum("...kij,...i,...j->...k", gam, v, v)
    return v, acc


def _rk4_step(m, x, v, h):
    k1x, k1v = _rhs(m, x, v)
    k2x, k2v = _rhs(m, x + 0.5 * h * k1x, v + 0.5 * h * k1v)
    k3x, k3v = _rhs(m, x + 0.5 * h * k2x, v + 0.5 * h * k2v)
    k4x, k4v = _rhs(m, x + h * k3x, v + h * k3v)
    xn = x + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
    vn = v + (h / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
    return xn, vn


def shoot_batch(m: MetricDisk, starts, dirs, max_length, step=5e-3,
                stop_at_boundary=True):
    """Integrate many unit-speed geodesics at once.

    Returns (end_points, end_vels, lengths, hit_mask).  Trajectories are not
    stored; use :func:`geodesic_ivp` for a single polyline.
    """
    x = np.array(starts, dtype=float)
    v = np.array(dirs, dtype=float)
    n = x.shape[0]
    v = v / np.maximum(m.norm(x, v), 1e-300)[:, None]
    R = m.domain_radius
    traveled = np.zeros(n)
    active = np.ones(n, dtype=bool)
    hit = np.zeros(n, dtype=bool)
    nsteps = int(np.ceil(max_length / step))
    for _ in range(nsteps):
        if not active.any():
            break
        xa, va = x[active], v[active]
        xn, vn = _rk4_step(m, xa, va, step)
        crossed = np.hypot(xn[:, 0], xn[:, 1]) > R
        if stop_at_boundary and crossed.any():
            xc, vc = xa[crossed], va[crossed]
            lo = np.zeros(xc.shape[0])
            hi = np.full(xc.shape[0], step)
            for _ in range(48):
                mid = 0.5 * (lo + hi)
                xm, _ = _rk4_step(m, xc, vc, mid[:, None])
                out = np.hypot(xm[:, 0], xm[:, 1]) > R
                hi = np.where(out, mid, hi)
                lo = np.where(out, lo, mid)
            frac = 0.5 * (lo + hi)
            xh, vh = _rk4_step(m, xc, vc, frac[:, None])
            # renormalize onto the rim
            rr = np.hypot(xh[:, 0], xh[:, 1])
            xh = xh * (R / rr)[:, None]
            xn[crossed], vn[crossed] = xh, vh
            idx = np.flatnonzero(active)
            sub = idx[crossed]
            traveled[sub] += frac
            hit[sub] = True
        idx = np.flatnonzero(active)
        keep = ~crossed if stop_at_boundary else np.ones(len(idx), dtype=bool)
        traveled[idx[keep]] += step
        x[idx], v[idx] = xn, vn
        if stop_at_boundary:
            active[idx[crossed]] = False
        done = traveled >= max_length - 1e-12
        active &= ~done
    return x, v, traveled, hit


def geodesic_ivp(m: MetricDisk, start, arclength, step=5e-3,
                 stop_at_boundary=True) -> Shot:
    """Integrate one unit-speed geodesic, returning its polyline.

    ``start`` is a TangentVec or a (point, direction) pair.  Raises
    DomainError for starts outside the disk and DegenerateTensor when the
    initial speed vanishes.
    """
    if hasattr(start, "base"):
        x0, v0 = np.asarray(start.base, float), start.vec
    else:
        x0, v0 = (np.asarray(a, dtype=float) for a in start)
    if np.hypot(*x0) > m.domain_radius + 1e-9:
        raise DomainError(f"start {x0} outside the parameter disk")
    sp = float(m.norm(x0, v0))
    if not np.isfinite(sp) or sp <= 0:
        raise DegenerateTensor("zero or non-finite initial speed")
    if arclength < 0:
        raise ValueError("arclength must be >= 0")
    if arclength == 0:
        return Shot(points=np.array([x0]), length=0.0, hit_boundary=False,
                    hit_theta=None, incidence=None, final_velocity=v0 / sp)

    x = x0.copy()
    v = v0 / sp
    R = m.domain_radius
    pts = [x.copy()]
    traveled = 0.0
    hit = False
    while traveled < arclength - 1e-12:
        h = min(step, arclength - traveled)
        xn, vn = _rk4_step(m, x[None], v[None], h)
        xn, vn = xn[0], vn[0]
        if stop_at_boundary and np.hypot(*xn) > R:
            lo, hi = 0.0, h
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                xm, _ = _rk4_step(m, x[None], v[None], mid)
                if np.hypot(*xm[0]) > R:
                    hi = mid
                else:
                    lo = mid
            frac = 0.5 * (lo + hi)
            xn, vn = _rk4_step(m, x[None], v[None], frac)
            xn, vn = xn[0], vn[0]
            xn *= R / np.hypot(*xn)
            traveled += frac
            x, v = xn, vn
            pts.append(x.copy())
            hit = True
            break
        x, v = xn, vn
        traveled += h
        pts.append(x.copy())

    theta = None
    incidence = None
    if hit:
        theta = float(np.arctan2(x[1], x[0]))
        tang = m.boundary_velocity(theta)
        incidence = float(m.angle(x, v, tang))
    return Shot(points=np.array(pts), length=float(traveled), hit_boundary=hit,
                hit_theta=theta, incidence=incidence, final_velocity=v)


# ---------------------------------------------------------------------------
# boundary-value solve by polyline relaxation


_REFINE_T = {}


def polyline_length(m: MetricDisk, pts, refine=2) -> float:
    """Metric length of a parameter-space polyline (midpoint quadrature)."""
    pts = np.asarray(pts, dtype=float)
    if len(pts) < 2:
        return 0.0
    if refine > 1:
        t = _REFINE_T.get(refine)
        if t is None:
            t = np.linspace(0.0, 1.0, refine + 1)[:-1]
            _REFINE_T[refine] = t
        sub = pts[:-1, None, :] * (1.0 - t)[None, :, None] + pts[1:, None, :] * t[None, :, None]
        sub = np.concatenate([sub.reshape(-1, 2), pts[-1:]], axis=0)
        pts = sub
    d = np.diff(pts, axis=0)
    mid = 0.5 * (pts[:-1] + pts[1:])
    return float(np.sum(np.sqrt(np.maximum(m.inner(mid, d, d), 0.0))))


def _energy_and_grad(m, pts):
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
    grad[0] = 0.0
    grad[-1] = 0.0
    return E, grad


def _newton_direction(G, grad):
    """Solve the quadratic-part Hessian system for interior points.

    H is block tridiagonal with diagonal 2(G_{j-1}+G_j) and off-diagonal
    -2 G_j; assembled in lower banded form for solveh_banded.
    """
    from scipy.linalg import solveh_banded

    n_int = len(grad)
    nu = 2 * n_int
    ab = np.zeros((4, nu))
    D = 2.0 * (G[:-1] + G[1:])           # (n_int, 2, 2)
    B = -2.0 * G[1:-1]                   # coupling blocks, (n_int-1, 2, 2)
    ab[0, 0::2] = D[:, 0, 0]
    ab[0, 1::2] = D[:, 1, 1]
    ab[1, 0::2] = D[:, 1, 0]
    if n_int > 1:
        ab[1, 1:-1:2] = B[:, 0, 1]
        ab[2, 0:-2:2] = B[:, 0, 0]
        ab[2, 1:-1:2] = B[:, 1, 1]
        ab[3, 0:-2:2] = B[:, 1, 0]
    rhs = -grad.reshape(-1)
    try:
        sol = solveh_banded(ab, rhs, lower=True)
    except np.linalg.LinAlgError:
        return -grad
    return sol.reshape(n_int, 2)


def relax_polyline(m: MetricDisk, pts, iters=60, tol=1e-13):
    """Relax interior vertices toward the discrete geodesic (endpoints fixed).

    Damped Newton on the discrete energy with the quadratic-part Hessian;
    converges in a handful of iterations even for long chains.
    """
    pts = np.array(pts, dtype=float)
    if len(pts) <= 2:
        return pts
    E, g = _energy_and_grad(m, pts)
    scale = max(E, 1e-30)
    for _ in range(iters):
        mid = 0.5 * (pts[:-1] + pts[1:])
        G = m.tensor(mid)
        step = _newton_direction(G, g[1:-1])
        lam = 1.0
        improved = False
        for _ in range(20):
            cand = pts.copy()
            cand[1:-1] = pts[1:-1] + lam * step
            Ec, gc = _energy_and_grad(m, cand)
            if Ec <= E + 1e-14 * scale:
                improved = True
                break
            lam *= 0.5
        if not improved:
            break
        gain = E - Ec
        pts, E, g = cand, Ec, gc
        if gain < tol * scale:
            break
    return pts


def geodesic_bvp(m: MetricDisk, p, q, spacing=0.05, npts=None, iters=60):
    """Minimizing geodesic between nearby points as a relaxed polyline.

    Caller is responsible for p, q lying in a common totally normal ball.
    Raises BvpError when the relaxation fails to settle.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    chord = polyline_length(m, np.array([p, q]), refine=4)
    if npts is None:
        npts = max(2, int(np.ceil(chord / spacing)) + 1)
    if npts == 2 or chord < 1e-14:
        return np.array([p, q])
    t = np.linspace(0.0, 1.0, npts)[:, None]
    init = p * (1.0 - t) + q * t
    out = relax_polyline(m, init, iters=iters)
    if not np.all(np.isfinite(out)):
        raise BvpError("relaxation diverged; shrink the ball cover")
    return out


def resample_polyline(m: MetricDisk, pts, spacing=None, npts=None):
    """Resample by metric arclength; endpoints preserved exactly."""
    pts = np.asarray(pts, dtype=float)
    if len(pts) < 2:
        return pts.copy()
    d = np.diff(pts, axis=0)
    mid = 0.5 * (pts[:-1] + pts[1:])
    seg = np.sqrt(np.maximum(m.inner(mid, d, d), 0.0))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total < 1e-14:
        return pts[[0, -1]].copy()
    if npts is None:
        npts = max(2, int(np.ceil(total / spacing)) + 1)
    s = np.linspace(0.0, total, npts)
    out = np.empty((npts, 2))
    out[:, 0] = np.interp(s, cum, pts[:, 0])
    out[:, 1] = np.interp(s, cum, pts[:, 1])
    out[0], out[-1] = pts[0], pts[-1]
    return out


def end_tangent(m: MetricDisk, pts, at_start=True, refine=True):
    """Unit tangent, in the direction of travel, at one end of a geodesic
    polyline.

    Chord directions are second-order corrected with the Christoffel term
    (geodesic Taylor expansion) so residual certificates are not limited by
    vertex spacing: at the start u = d + Gamma(d,d)/2, at the end
    u = d - Gamma(d,d)/2 with d the adjacent chord.
    """
    pts = np.asarray(pts, dtype=float)
    if len(pts) < 2:
        raise ValueError("degenerate polyline")
    if at_start:
        base = pts[0]
        d = pts[1] - pts[0]
        sgn = +0.5
    else:
        base = pts[-1]
        d = pts[-1] - pts[-2]
        sgn = -0.5
    v = d.copy()
    if refine:
        gam = m.christoffel(base[None])[0]
        v = d + sgn * np.einsum("kij,i,j->k", gam, d, d)
    n = float(m.norm(base, v))
    if n <= 0:
        raise DegenerateTensor("zero tangent")
    return v / n


# ---------------------------------------------------------------------------
# orthogonal foot on the boundary


def foot_fast(m: MetricDisk, p, theta_window=None, spacing=0.05):
    """Secant root-find of the arrival-orthogonality condition.

    Cheap foot used inside flow steps; assumes a unique foot in the window
    (certified at cover construction).  Returns (path, theta, angle).
    """
    p = np.asarray(p, dtype=float)
    R = m.domain_radius
    r = float(np.hypot(*p))
    if abs(r - R) < 1e-12:
        th = float(np.arctan2(p[1], p[0]))
        return np.array([p, p]), th, 0.5 * np.pi

    th0 = float(np.arctan2(p[1], p[0])) if r > 1e-12 else 0.0
    if theta_window is not None:
        lo, hi = theta_window
        mid = 0.5 * (lo + hi)
        th0 = mid + np.clip(((th0 - mid + np.pi) % (2 * np.pi)) - np.pi,
                            lo - mid, hi - mid)
    else:
        lo, hi = th0 - 1.2, th0 + 1.2

    def h(theta):
        path = geodesic_bvp(m, p, m.boundary_point(theta), spacing=spacing, iters=25)
        b = m.boundary_point(theta)
        tang = end_tangent(m, path, at_start=False)
        return float(m.inner(b[None], tang[None], m.boundary_velocity(theta)[None])[0]), path

    t0, t1 = th0, th0 + min(0.15, 0.25 * (hi - lo))
    f0, _ = h(t0)
    f1, path = h(t1)
    for _ in range(14):
        if abs(f1 - f0) < 1e-15:
            break
        t2 = t1 - f1 * (t1 - t0) / (f1 - f0)
        t2 = float(np.clip(t2, lo, hi))
        f2, path = h(t2)
        t0, f0, t1, f1 = t1, f1, t2, f2
        if abs(f1) < 1e-10:
            break
    theta = t1
    b = m.boundary_point(theta)
    tang = end_tangent(m, path, at_start=False)
    angle = float(m.angle(b, tang, m.boundary_velocity(theta)))
    return path, float(theta), angle


def foot_orthogonal(m: MetricDisk, p, theta_window=None, spacing=0.05,
                    coarse=24, check_unique=True):
    """Minimizing geodesic from ``p`` to the boundary circle.

    ``theta_window`` restricts the search to a boundary arc (used by the
    free-boundary flow with a ball's boundary trace); by default a window
    around the radial direction is scanned.  Raises FootError when two
    separated minima tie within tolerance.
    """
    p = np.asarray(p, dtype=float)
    R = m.domain_radius
    r = float(np.hypot(*p))
    if r > R + 1e-9:
        raise DomainError("point outside the disk")
    th0 = float(np.arctan2(p[1], p[0])) if r > 1e-12 else 0.0
    if theta_window is None:
        theta_window = (th0 - np.pi, th0 + np.pi) if r < 1e-12 else (th0 - 1.2, th0 + 1.2)
    lo, hi = theta_window

    if abs(r - R) < 1e-12:
        return np.array([p, p]), th0, 0.5 * np.pi

    def cost(theta):
        return polyline_length(m, geodesic_bvp(m, p, m.boundary_point(theta),
                                               spacing=spacing, iters=30))

    thetas = np.linspace(lo, hi, coarse)
    vals = np.array([cost(t) for t in thetas])
    order = int(np.argmin(vals))
    if check_unique:
        interior = vals[1:-1]
        mins = [i + 1 for i in range(len(interior))
                if vals[i + 1] <= vals[i] and vals[i + 1] <= vals[i + 2]]
        close = [i for i in mins if vals[i] < vals[order] + 1e-6]
        if len(close) > 1 and (max(close) - min(close)) > 1:
            span = abs(thetas[max(close)] - thetas[min(close)])
            if span > 3.0 * (hi - lo) / (coarse - 1):
                raise FootError("two orthogonal feet tie; refine the cover")

    a = thetas[max(order - 1, 0)]
    b = thetas[min(order + 1, coarse - 1)]
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = cost(c), cost(d)
    for _ in range(40):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = cost(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = cost(d)
        if abs(b - a) < 1e-10:
            break
    theta = 0.5 * (a + b)
    path = geodesic_bvp(m, p, m.boundary_point(theta), spacing=spacing, iters=80)
    tang = end_tangent(m, path, at_start=False)
    angle = float(m.angle(m.boundary_point(theta), tang, m.boundary_velocity(theta)))
    return path, float(theta), angle
