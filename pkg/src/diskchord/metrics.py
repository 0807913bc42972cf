"""Riemannian metrics on the closed parameter disk.

A :class:`MetricDisk` is a 2x2 symmetric positive-definite tensor field over
the closed disk of radius ``domain_radius`` (1.0 for every catalog entry;
collar-extended disks use a slightly larger radius).  Catalog entries are
analytic and vectorized; sampled metrics come from JSON grids and are
interpolated with bicubic splines.

All point arrays have shape (..., 2); tensors (..., 2, 2); tensor gradients
(..., 2, 2, 2) indexed [k, i, j] = d g_ij / d x_k.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RectBivariateSpline

FD_STEP = 1e-5


@dataclass
class TangentVec:
    """Tangent vector (du, dv) based at a parameter point."""

    base: np.ndarray
    du: float
    dv: float

    @property
    def vec(self) -> np.ndarray:
        return np.array([self.du, self.dv], dtype=float)


@dataclass
class MetricDisk:
    name: str
    tensor_fn: Callable[[np.ndarray], np.ndarray]
    grad_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    gauss_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    domain_radius: float = 1.0
    grid_resolution: int = 257
    source: str = "analytic-catalog-entry"
    params: dict = field(default_factory=dict)

    # ---- tensor field -------------------------------------------------

    def tensor(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return self.tensor_fn(pts)

    def tensor_grad(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if self.grad_fn is not None:
            return self.grad_fn(pts)
        return self._fd_grad(pts)

    def _fd_grad(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        h = FD_STEP
        out = np.empty(pts.shape[:-1] + (2, 2, 2))
        for k in range(2):
            dp = np.zeros(2)
            dp[k] = h
            out[..., k, :, :] = (self.tensor_fn(pts + dp) - self.tensor_fn(pts - dp)) / (2 * h)
        return out

    def christoffel(self, pts) -> np.ndarray:
        """Symbols G[..., k, i, j] = Gamma^k_ij, symmetric in (i, j)."""
        pts = np.asarray(pts, dtype=float)
        g = self.tensor(pts)
        dg = self.tensor_grad(pts)
        ginv = inv2x2(g)
        # Gamma^k_ij = 1/2 g^{kl} (d_i g_lj + d_j g_li - d_l g_ij)
        term = np.einsum("...ilj->...lij", dg) + np.einsum("...jli->...lij", dg) - dg
        return 0.5 * np.einsum("...kl,...lij->...kij", ginv, term)

    def gauss_curvature(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if self.gauss_fn is not None:
            return self.gauss_fn(pts)
        return self._fd_gauss(pts)

    def _fd_gauss(self, pts) -> np.ndarray:
        # K = R_1212 / det g via central differences of the symbols
        pts = np.asarray(pts, dtype=float)
        h = 1e-4 * max(1.0, self.domain_radius)
        dGam = np.empty(pts.shape[:-1] + (2, 2, 2, 2))
        for k in range(2):
            dp = np.zeros(2)
            dp[k] = h
            dGam[..., k, :, :, :] = (self.christoffel(pts + dp) - self.christoffel(pts - dp)) / (2 * h)
        Gam = self.christoffel(pts)
        g = self.tensor(pts)
        # R^l_{k i j} = d_i Gam^l_jk - d_j Gam^l_ik + Gam^l_im Gam^m_jk - Gam^l_jm Gam^m_ik
        i, j, k = 0, 1, 1  # R^l_{212} -> lower with g_{l1}
        Rl = (dGam[..., i, :, j, k] - dGam[..., j, :, i, k]
              + np.einsum("...lm,...m->...l", Gam[..., :, i, :], Gam[..., :, j, k])
              - np.einsum("...lm,...m->...l", Gam[..., :, j, :], Gam[..., :, i, k]))
        R1212 = np.einsum("...l,...l->...", g[..., 0, :], Rl)
        return R1212 / det2x2(g)

    # ---- pointwise algebra --------------------------------------------

    def inner(self, pts, u, v) -> np.ndarray:
        g = self.tensor(pts)
        return np.einsum("...i,...ij,...j->...", u, g, v)

    def norm(self, pts, v) -> np.ndarray:
        return np.sqrt(np.maximum(self.inner(pts, v, v), 0.0))

    def unit(self, pts, v) -> np.ndarray:
        n = self.norm(pts, v)
        return v / n[..., None]

    def angle(self, pts, u, v) -> np.ndarray:
        c = self.inner(pts, u, v) / (self.norm(pts, u) * self.norm(pts, v))
        return np.arccos(np.clip(c, -1.0, 1.0))

    def sqrt_det(self, pts) -> np.ndarray:
        return np.sqrt(np.maximum(det2x2(self.tensor(pts)), 0.0))

    # ---- boundary circle ----------------------------------------------

    def boundary_point(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return self.domain_radius * np.stack([np.cos(theta), np.sin(theta)], axis=-1)

    def boundary_velocity(self, theta) -> np.ndarray:
        """Parameter-space d/dtheta of the boundary circle."""
        theta = np.asarray(theta, dtype=float)
        return self.domain_radius * np.stack([-np.sin(theta), np.cos(theta)], axis=-1)

    def inward_normal(self, theta) -> np.ndarray:
        """Metric-unit inward normal at boundary angle theta."""
        scalar = np.ndim(theta) == 0
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        p = self.boundary_point(theta)
        t = self.boundary_velocity(theta)
        g = self.tensor(p)
        # solve g(n, t) = 0 with n pointing inward, |n|_g = 1
        gt = np.einsum("...ij,...j->...i", g, t)
        n = np.stack([-gt[..., 1], gt[..., 0]], axis=-1)
        n = self.unit(p, n)
        inward = -p  # toward the origin
        flip = np.einsum("...i,...i->...", n, inward) < 0
        n[flip] *= -1.0
        return n[0] if scalar else n

    def contains(self, pts, tol=1e-9) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return np.hypot(pts[..., 0], pts[..., 1]) <= self.domain_radius + tol

    # ---- validation ----------------------------------------------------

    def validate(self, lipschitz_budget=50.0) -> dict:
        """Positive-definiteness and grid-level continuity certificate."""
        n = self.grid_resolution
        R = self.domain_radius
        ax = np.linspace(-R, R, n)
        U, V = np.meshgrid(ax, ax, indexing="ij")
        pts = np.stack([U, V], axis=-1)
        inside = np.hypot(U, V) <= R
        g = self.tensor(pts)
        tr = g[..., 0, 0] + g[..., 1, 1]
        dt = det2x2(g)
        lam_min = 0.5 * (tr - np.sqrt(np.maximum(tr * tr - 4 * dt, 0.0)))
        min_eig = float(lam_min[inside].min())
        cell = 2 * R / (n - 1)
        jump = max(
            float(np.abs(np.diff(g[..., i, j], axis=a))[np.minimum(inside[:-1] if a == 0 else inside[:, :-1], inside[1:] if a == 0 else inside[:, 1:])].max() if inside.any() else 0.0)
            for i in range(2) for j in range(2) for a in range(2)
        )
        return {
            "positive_definite": bool(min_eig > 0.0),
            "min_eigenvalue": min_eig,
            "max_cell_jump": jump,
            "lipschitz_ok": bool(jump <= lipschitz_budget * cell),
            "resolution": n,
        }


# ---------------------------------------------------------------------------
# small matrix helpers


def det2x2(g):
    return g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] * g[..., 1, 0]


def inv2x2(g):
    d = det2x2(g)
    out = np.empty_like(g)
    out[..., 0, 0] = g[..., 1, 1]
    out[..., 1, 1] = g[..., 0, 0]
    out[..., 0, 1] = -g[..., 0, 1]
    out[..., 1, 0] = -g[..., 1, 0]
    return out / d[..., None, None]


# ---------------------------------------------------------------------------
# catalog entries


def _constant_metric(mat) -> tuple:
    mat = np.asarray(mat, dtype=float)

    def tensor(pts):
        return np.broadcast_to(mat, pts.shape[:-1] + (2, 2)).copy()

    def grad(pts):
        return np.zeros(pts.shape[:-1] + (2, 2, 2))

    def gauss(pts):
        return np.zeros(pts.shape[:-1])

    return tensor, grad, gauss


def _conformal_metric(phi, grad_phi, lap_phi) -> tuple:
    """g = exp(2 phi) * I from a scalar field and its derivatives."""

    def tensor(pts):
        e = np.exp(2.0 * phi(pts))
        out = np.zeros(pts.shape[:-1] + (2, 2))
        out[..., 0, 0] = e
        out[..., 1, 1] = e
        return out

    def grad(pts):
        e = np.exp(2.0 * phi(pts))
        gp = grad_phi(pts)
        out = np.zeros(pts.shape[:-1] + (2, 2, 2))
        for k in range(2):
            out[..., k, 0, 0] = 2.0 * gp[..., k] * e
            out[..., k, 1, 1] = 2.0 * gp[..., k] * e
        return out

    def gauss(pts):
        return -np.exp(-2.0 * phi(pts)) * lap_phi(pts)

    return tensor, grad, gauss


def _gaussian_bumps(centers, heights, widths):
    centers = np.asarray(centers, dtype=float)
    heights = np.asarray(heights, dtype=float)
    widths = np.asarray(widths, dtype=float)

    def phi(pts):
        d2 = np.sum((pts[..., None, :] - centers) ** 2, axis=-1)
        return np.sum(heights * np.exp(-widths * d2), axis=-1)

    def grad_phi(pts):
        diff = pts[..., None, :] - centers
        d2 = np.sum(diff ** 2, axis=-1)
        w = heights * np.exp(-widths * d2) * (-2.0 * widths)
        return np.sum(w[..., None] * diff, axis=-2)

    def lap_phi(pts):
        diff = pts[..., None, :] - centers
        d2 = np.sum(diff ** 2, axis=-1)
        e = heights * np.exp(-widths * d2)
        return np.sum(e * (4.0 * widths ** 2 * d2 - 4.0 * widths), axis=-1)

    return phi, grad_phi, lap_phi


def _smoothstep(x):
    """Quintic smoothstep: 0 below 0, 1 above 1, C^2 joins."""
    x = np.clip(x, 0.0, 1.0)
    return x ** 3 * (10.0 - 15.0 * x + 6.0 * x * x)


def _smoothstep_d(x):
    xc = np.clip(x, 0.0, 1.0)
    d = 30.0 * xc ** 2 * (1.0 - xc) ** 2
    return np.where((x < 0) | (x > 1), 0.0, d)


def _dent_map(c, k, r0):
    """Radial map pushing the unit circle onto a dented planar curve.

    F(u,v) = s(r,theta) * (u,v) with s = 1 + (R(theta)-1) w(r); R has a
    Gaussian-like dent at theta=0 deep enough to make the image boundary
    locally concave; w ramps from 0 (near origin) to 1 at r=1 so the map is
    smooth at the origin.
    """

    def R_of(theta):
        return 1.0 - c * np.exp(k * (np.cos(theta) - 1.0))

    def Rp_of(theta):
        return c * k * np.sin(theta) * np.exp(k * (np.cos(theta) - 1.0))

    def jac(pts):
        u = pts[..., 0]
        v = pts[..., 1]
        r = np.hypot(u, v)
        r_safe = np.maximum(r, 1e-300)
        theta = np.arctan2(v, u)
        x = (r - r0) / (1.0 - r0)
        w = _smoothstep(x)
        wp = _smoothstep_d(x) / (1.0 - r0)
        R = R_of(theta)
        Rp = Rp_of(theta)
        s = 1.0 + (R - 1.0) * w
        s_u = (R - 1.0) * wp * (u / r_safe) + Rp * w * (-v / r_safe ** 2)
        s_v = (R - 1.0) * wp * (v / r_safe) + Rp * w * (u / r_safe ** 2)
        J = np.empty(pts.shape[:-1] + (2, 2))
        J[..., 0, 0] = s + u * s_u
        J[..., 0, 1] = u * s_v
        J[..., 1, 0] = v * s_u
        J[..., 1, 1] = s + v * s_v
        return J

    def tensor(pts):
        J = jac(np.asarray(pts, dtype=float))
        return np.einsum("...ki,...kj->...ij", J, J)

    def gauss(pts):
        return np.zeros(np.asarray(pts).shape[:-1])  # flat pullback

    return tensor, gauss


def _scaled(fns, scale):
    tensor, grad, gauss = fns
    s2 = scale * scale

    def tensor_s(pts):
        return s2 * tensor(pts)

    grad_s = None
    if grad is not None:
        def grad_s(pts):  # noqa: E306
            return s2 * grad(pts)

    gauss_s = None
    if gauss is not None:
        def gauss_s(pts):  # noqa: E306
            return gauss(pts) / s2

    return tensor_s, grad_s, gauss_s


def catalog(name: str, **params) -> MetricDisk:
    """Build a catalog metric by name.

    Known names: flat, ellipse(a, b), bump(height, width), threebump,
    dumbbell(beta, r_neck, width, asym), dent(depth, sharpness, ramp_start).
    Every entry accepts ``scale`` (lengths multiply by it) and
    ``grid_resolution``.
    """
    scale = float(params.pop("scale", 1.0))
    res = int(params.pop("grid_resolution", 257))

    if name == "flat":
        fns = _constant_metric(np.eye(2))
    elif name == "ellipse":
        a = float(params.setdefault("a", 2.0))
        b = float(params.setdefault("b", 1.0))
        fns = _constant_metric(np.diag([a * a, b * b]))
    elif name == "bump":
        h = float(params.setdefault("height", 0.3))
        w = float(params.setdefault("width", 8.0))
        fns = _conformal_metric(*_gaussian_bumps([[0.0, 0.0]], [h], [w]))
    elif name == "threebump":
        h = float(params.setdefault("height", 0.5))
        w = float(params.setdefault("width", 12.0))
        rad = float(params.setdefault("radius", 0.55))
        angles = np.deg2rad([90.0, 210.0, 330.0])
        centers = rad * np.stack([np.cos(angles), np.sin(angles)], axis=-1)
        fns = _conformal_metric(*_gaussian_bumps(centers, [h] * 3, [w] * 3))
    elif name == "dumbbell":
        # conformal pinch in the squared radius keeps the origin smooth;
        # the small off-center bump breaks rotational symmetry so wrap-around
        # chords exist as genuine geodesics
        beta = float(params.setdefault("beta", 0.7))
        rc = float(params.setdefault("r_neck", 0.7))
        wd = float(params.setdefault("width", 0.28))
        asym = float(params.setdefault("asym", 0.05))
        sc = rc * rc

        def _y(s):
            return (s - sc) / wd

        def phi(pts):
            s = pts[..., 0] ** 2 + pts[..., 1] ** 2
            base = -beta * np.exp(-_y(s) ** 2)
            return base + asym * np.exp(-6.0 * ((pts[..., 0] - 0.3) ** 2 + pts[..., 1] ** 2))

        def grad_phi(pts):
            s = pts[..., 0] ** 2 + pts[..., 1] ** 2
            y = _y(s)
            dF = (2.0 * beta * y / wd) * np.exp(-y * y)   # dphi/ds
            out = (2.0 * dF)[..., None] * pts
            diff = pts - np.array([0.3, 0.0])
            e = asym * np.exp(-6.0 * np.sum(diff ** 2, axis=-1))
            out += (-12.0 * e)[..., None] * diff
            return out

        def lap_phi(pts):
            s = pts[..., 0] ** 2 + pts[..., 1] ** 2
            y = _y(s)
            e = np.exp(-y * y)
            dF = (2.0 * beta * y / wd) * e
            d2F = (2.0 * beta / wd ** 2) * (1.0 - 2.0 * y * y) * e
            base = 4.0 * s * d2F + 4.0 * dF
            diff = pts - np.array([0.3, 0.0])
            d2b = np.sum(diff ** 2, axis=-1)
            eb = asym * np.exp(-6.0 * d2b)
            return base + eb * (144.0 * d2b - 24.0)

        fns = _conformal_metric(phi, grad_phi, lap_phi)
    elif name == "dent":
        c = float(params.setdefault("depth", 0.25))
        k = float(params.setdefault("sharpness", 8.0))
        r0 = float(params.setdefault("ramp_start", 0.35))
        tensor, gauss = _dent_map(c, k, r0)
        fns = (tensor, None, gauss)
    else:
        raise ValueError(f"unknown catalog metric: {name}")

    if scale != 1.0:
        fns = _scaled(fns, scale)
        params["scale"] = scale

    tensor, grad, gauss = fns
    return MetricDisk(name=name, tensor_fn=tensor, grad_fn=grad, gauss_fn=gauss,
                      grid_resolution=res, params=dict(params))


# ---------------------------------------------------------------------------
# sampled-grid ingestion (JSON interchange format)
#
# {"resolution": N, "catalog_name": "...", "domain_radius": 1.0,
#  "g11": [...], "g12": [...], "g22": [...]}   row-major over [-R, R]^2


def from_grid(g11, g12, g22, resolution, domain_radius=1.0, name="sampled") -> MetricDisk:
    R = float(domain_radius)
    ax = np.linspace(-R, R, resolution)
    comps = [np.asarray(a, dtype=float).reshape(resolution, resolution)
             for a in (g11, g12, g22)]
    splines = [RectBivariateSpline(ax, ax, comp, kx=3, ky=3) for comp in comps]

    def tensor(pts):
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, 2)
        vals = [sp.ev(flat[:, 0], flat[:, 1]) for sp in splines]
        out = np.empty(flat.shape[:-1] + (2, 2))
        out[:, 0, 0] = vals[0]
        out[:, 0, 1] = vals[1]
        out[:, 1, 0] = vals[1]
        out[:, 1, 1] = vals[2]
        return out.reshape(pts.shape[:-1] + (2, 2))

    def grad(pts):
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, 2)
        out = np.empty(flat.shape[:-1] + (2, 2, 2))
        for k, (dx, dy) in enumerate([(1, 0), (0, 1)]):
            vals = [sp.ev(flat[:, 0], flat[:, 1], dx=dx, dy=dy) for sp in splines]
            out[:, k, 0, 0] = vals[0]
            out[:, k, 0, 1] = vals[1]
            out[:, k, 1, 0] = vals[1]
            out[:, k, 1, 1] = vals[2]
        return out.reshape(pts.shape[:-1] + (2, 2, 2))

    return MetricDisk(name=name, tensor_fn=tensor, grad_fn=grad, gauss_fn=None,
                      domain_radius=R, grid_resolution=int(resolution),
                      source="sampled-grid")


def sample_to_grid(m: MetricDisk, resolution=None) -> dict:
    n = int(resolution or m.grid_resolution)
    R = m.domain_radius
    ax = np.linspace(-R, R, n)
    U, V = np.meshgrid(ax, ax, indexing="ij")
    g = m.tensor(np.stack([U, V], axis=-1))
    return {
        "resolution": n,
        "catalog_name": m.name,
        "domain_radius": R,
        "g11": g[..., 0, 0].ravel().tolist(),
        "g12": g[..., 0, 1].ravel().tolist(),
        "g22": g[..., 1, 1].ravel().tolist(),
    }


def save_metric_json(m: MetricDisk, path, resolution=None):
    with open(path, "w") as f:
        json.dump(sample_to_grid(m, resolution), f)


def load_metric_json(path) -> MetricDisk:
    with open(path) as f:
        data = json.load(f)
    return from_grid(data["g11"], data["g12"], data["g22"], data["resolution"],
                     domain_radius=data.get("domain_radius", 1.0),
                     name=data.get("catalog_name", "sampled"))
