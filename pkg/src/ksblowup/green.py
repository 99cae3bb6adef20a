"""Neumann Green's function, its regular part and the Robin function.

The Green's function is split as ``G = Gamma + H`` with the explicit singular
part ``Gamma = (4/rho) chi(|x - xi|/r0) log(1/|x - xi|)``. ``H`` solves a
Neumann problem with smooth data, so P1 elements resolve it well; the Robin
value is ``H`` at the source.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .cutoff import cutoff, cutoff_derivatives
from .errors import NumericalFailure, ValidationError
from .fem import EllipticOperator, Field, boundary_load, integrate, load_vector
from .geometry import DomainSpec, Mesh, RefinementPlan, interpolate, locate

RHO_INTERIOR = 8.0 * math.pi
RHO_BOUNDARY = 4.0 * math.pi
COMPAT_TOL = 1e-3


def concentration_mass(on_boundary: bool) -> float:
    return RHO_BOUNDARY if on_boundary else RHO_INTERIOR


def on_boundary(domain: DomainSpec, xi, tol: float | None = None) -> bool:
    tol = 1e-9 * domain.diameter if tol is None else tol
    return bool(abs(domain.signed_distance(xi)[0]) <= tol)


def default_cutoff_radius(domain: DomainSpec, xi, boundary: bool) -> float:
    """Chart radius for boundary sources; interior sources keep the cutoff support inside."""
    if boundary:
        return domain.chart_radius
    dist = -float(domain.signed_distance(xi)[0])
    if dist <= 0:
        raise ValidationError("interior source must lie inside the domain")
    return min(domain.chart_radius, 0.5 * dist)


def green_plan(domain: DomainSpec, sources: np.ndarray, radii: Sequence[float],
               resolution: float = 20.0) -> RefinementPlan:
    """Refinement resolving each cutoff annulus with about ``resolution`` elements per ``r0``."""
    r = np.asarray(radii, dtype=float)
    return RefinementPlan.build(sources, 2.2 * r, np.minimum(r / resolution, domain.target_h))


def gamma_part(xi, r0: float, rho: float) -> Callable[[np.ndarray], np.ndarray]:
    """Pointwise singular part ``(4/rho) chi(|y|/r0) log(1/|y|)``."""
    c = np.asarray(xi, dtype=float)
    if r0 <= 0:
        raise ValidationError("cutoff radius must be positive")

    def f(pts: np.ndarray) -> np.ndarray:
        r = np.hypot(pts[:, 0] - c[0], pts[:, 1] - c[1])
        with np.errstate(divide="ignore"):
            return (4.0 / rho) * cutoff(r / r0) * -np.log(r)

    return f


def gamma_gradient(xi, r0: float, rho: float, pts: np.ndarray) -> np.ndarray:
    c = np.asarray(xi, dtype=float)
    d = np.atleast_2d(pts) - c
    r = np.hypot(d[:, 0], d[:, 1])
    chi, dchi, _ = cutoff_derivatives(r / r0)
    radial = (4.0 / rho) * (dchi / r0 * -np.log(r) - chi / r)
    return radial[:, None] * d / r[:, None]


def _gamma_laplacian(xi, r0: float, rho: float) -> Callable[[np.ndarray], np.ndarray]:
    """Flat Laplacian of the singular part away from the source (supported on r0 < r < 2 r0)."""
    c = np.asarray(xi, dtype=float)

    def f(pts: np.ndarray) -> np.ndarray:
        r = np.hypot(pts[:, 0] - c[0], pts[:, 1] - c[1])
        out = np.zeros_like(r)
        band = (r > r0) & (r < 2 * r0)
        rb = r[band]
        _, d1, d2 = cutoff_derivatives(rb / r0)
        lap_chi = d2 / r0**2 + d1 / (r0 * rb)
        out[band] = (4.0 / rho) * (lap_chi * -np.log(rb) - 2.0 * d1 / (r0 * rb))
        return out

    return f


def _gamma_flux(xi, r0: float, rho: float) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    c = np.asarray(xi, dtype=float)

    def g(pts: np.ndarray, nrm: np.ndarray) -> np.ndarray:
        d = pts - c
        r = np.hypot(d[:, 0], d[:, 1])
        out = np.zeros_like(r)
        ok = (r > 0) & (r < 2 * r0)
        chi, d1, _ = cutoff_derivatives(r[ok] / r0)
        cos_n = np.sum(d[ok] * nrm[ok], axis=1) / r[ok]
        out[ok] = (4.0 / rho) * cos_n * (d1 / r0 * -np.log(r[ok]) - chi / r[ok])
        return out

    return g


def smooth_fit(mesh: Mesh, values: np.ndarray, p, radius: float | None = None) -> tuple[float, np.ndarray]:
    """Weighted quadratic least-squares fit of nodal data around ``p``.

    Weights ``(1 - d^2/R^2)^4`` make the result depend smoothly on ``p``.
    Returns the fitted value and gradient at ``p``.
    """
    p = np.asarray(p, dtype=float)
    R = 2.5 * mesh.local_h(p) if radius is None else radius
    idx = mesh.node_tree.query_ball_point(p, R)
    if len(idx) < 10:
        _, idx = mesh.node_tree.query(p, k=min(12, mesh.n_nodes))
        R = float(np.max(np.linalg.norm(mesh.nodes[idx] - p, axis=1))) * 1.01
    idx = np.asarray(idx)
    d = (mesh.nodes[idx] - p) / R
    w = np.clip(1.0 - np.sum(d * d, axis=1), 0.0, None) ** 4
    X = np.column_stack([np.ones(len(d)), d[:, 0], d[:, 1], d[:, 0] ** 2, d[:, 0] * d[:, 1], d[:, 1] ** 2])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], values[idx] * sw, rcond=None)
    return float(coef[0]), np.array([coef[1], coef[2]]) / R


@dataclass(frozen=True, eq=False)
class GreenCache:
    """Regular part and Robin data for one source point."""

    source: np.ndarray
    rho: float
    on_boundary: bool
    r0: float
    H: Field
    robin: float
    grad_H_at_source: np.ndarray
    tangent: np.ndarray | None
    compat_defect: float
    op: EllipticOperator
    fit_radius: float | None = None

    def gamma(self, pts) -> np.ndarray:
        return gamma_part(self.source, self.r0, self.rho)(np.atleast_2d(pts))

    @property
    def grad_H_tangential(self) -> float:
        return float(self.grad_H_at_source @ self.tangent) if self.tangent is not None else float("nan")


def regular_part(op: EllipticOperator, xi, r0: float | None = None, boundary: bool | None = None,
                 fit_radius: float | None = None) -> GreenCache:
    """Solve for the regular part ``H`` of the Green's function with source ``xi``.

    The right-hand side collects the smooth source produced by the cutoff, the
    ``-beta Gamma`` term and ``-1/|Sigma|``; the Neumann data cancels the flux of
    ``Gamma``; the multiplier enforces ``int H = -int Gamma`` so that the
    Green's function has zero mean. A fixed ``fit_radius`` makes the Robin
    read-off depend smoothly on ``xi`` (needed for differences in ``xi``).
    """
    mesh = op.mesh
    domain = mesh.domain
    xi = np.asarray(xi, dtype=float)
    if domain is None:
        raise ValidationError("mesh without a domain description")
    if domain.signed_distance(xi)[0] > 1e-9 * domain.diameter:
        raise ValidationError("source outside the domain")
    bd = on_boundary(domain, xi) if boundary is None else boundary
    rho = concentration_mass(bd)
    r0 = default_cutoff_radius(domain, xi, bd) if r0 is None else float(r0)
    if r0 > 2.0 * domain.chart_radius:
        raise ValidationError(f"cutoff radius {r0} too large for the domain")

    load = load_vector(mesh, _gamma_laplacian(xi, r0, rho), metric=False)
    load -= op.ones_load / op.volume
    gam = gamma_part(xi, r0, rho)
    if op.beta > 0:
        load -= op.beta * load_vector(mesh, gam, singular_center=xi)
    dist = -float(domain.signed_distance(xi)[0])
    if bd or dist < 2 * r0:
        load -= boundary_load(mesh, _gamma_flux(xi, r0, rho), metric=False)
    mean_gamma = integrate(mesh, gam, singular_center=xi)
    defect = float(load.sum()) if op.beta == 0 else 0.0
    if abs(defect) > COMPAT_TOL:
        raise NumericalFailure(f"Green data incompatible at beta=0 (net source {defect:.3e})")
    H, _ = op.solve_load(load, -mean_gamma)
    robin, grad = smooth_fit(mesh, H, xi, fit_radius)
    tangent = None
    if bd:
        s = domain.boundary_arclength(xi)
        _, t, _ = domain.boundary_point(s)
        tangent = t[0]
    return GreenCache(xi, rho, bd, r0, Field(mesh, H, False), robin, grad, tangent, defect, op, fit_radius)


def green_eval(cache: GreenCache, x, smooth: bool = False) -> np.ndarray:
    """``G(x, xi) = Gamma(x) + H(x)``; ``smooth`` uses the local quadratic fit for ``H``."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if np.any(np.all(pts == cache.source, axis=1)):
        raise ValidationError("Green's function evaluated at its source")
    if smooth:
        h = np.array([smooth_fit(cache.H.mesh, cache.H.values, p, cache.fit_radius)[0] for p in pts])
    else:
        h = interpolate(cache.H.mesh, cache.H.values, pts)
    return cache.gamma(pts) + h


def green_grad_x(cache: GreenCache, x) -> np.ndarray:
    """Gradient of ``G(., xi)`` at ``x`` from the exact singular part and a fit of ``H``."""
    p = np.asarray(x, dtype=float)
    _, gh = smooth_fit(cache.H.mesh, cache.H.values, p, cache.fit_radius)
    return gamma_gradient(cache.source, cache.r0, cache.rho, p[None, :])[0] + gh


def point_source_green(op: EllipticOperator, xi) -> Field:
    """Galerkin solution with a point load at ``xi`` (minus the mean), on the mesh of ``op``.

    Its far field is free of the cutoff-annulus error of ``regular_part``,
    which makes it the consistent comparator for far-field expansions.
    """
    mesh = op.mesh
    t, lam = locate(mesh, np.asarray(xi, dtype=float)[None, :])
    load = -op.ones_load / op.volume
    np.add.at(load, mesh.triangles[t[0]], lam[0])
    u, _ = op.solve_load(load)
    return Field(mesh, u, True)


# ---------------------------------------------------------------- disk oracle

def disk_oracle_green(xi, x) -> np.ndarray:
    """Image-formula Green's function of the unit disk (beta = 0, Neumann, zero mean).

    ``G = -(1/2pi)[log|x - xi| + log(|xi| |x - xi*|)] + (|x|^2 + |xi|^2)/(4 pi) - 3/(8 pi)``
    with ``xi* = xi/|xi|^2``; the constant makes the mean vanish.
    """
    xi = np.asarray(xi, dtype=float)
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    d = np.linalg.norm(pts - xi, axis=1)
    if np.any(d == 0):
        raise ValidationError("oracle evaluated at the source")
    a = float(np.linalg.norm(xi))
    if a >= 1:
        raise ValidationError("oracle needs an interior source")
    if a == 0:
        image = np.zeros(len(pts))
    else:
        image = np.log(np.linalg.norm(a * pts - xi / a, axis=1))
    r2 = np.sum(pts * pts, axis=1)
    return -(np.log(d) + image) / (2 * math.pi) + (r2 + a * a) / (4 * math.pi) - 3.0 / (8 * math.pi)


def disk_oracle_robin(xi) -> float:
    a2 = float(np.sum(np.asarray(xi, dtype=float) ** 2))
    return -math.log(1.0 - a2) / (2 * math.pi) + a2 / (2 * math.pi) - 3.0 / (8 * math.pi)


def disk_oracle_robin_gradient(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    a2 = float(xi @ xi)
    return xi / (math.pi * (1.0 - a2)) + xi / math.pi


def disk_oracle_grad_x(xi, x) -> np.ndarray:
    """Gradient of the disk oracle in ``x``; one point gives shape (2,), several give (n, 2)."""
    xi = np.asarray(xi, dtype=float)
    p = np.asarray(x, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    a = float(np.linalg.norm(xi))
    d = p - xi
    g = -d / (2 * math.pi * np.sum(d * d, axis=1, keepdims=True))
    if a > 0:
        q = a * p - xi / a
        g -= a * q / (2 * math.pi * np.sum(q * q, axis=1, keepdims=True))
    g = g + p / (2 * math.pi)
    return g[0] if single else g


# ---------------------------------------------------------------- xi-derivatives

@dataclass(frozen=True)
class GreenGradient:
    """Finite-difference derivatives in the source position.

    ``robin``: derivative of ``R(xi)`` (2 components, or 1 tangential for a
    boundary source); ``robin_coarse``: the same with the coarse step only;
    ``robin_identity``: ``2 d_x H(x, xi)`` at ``x = xi``; ``cross[h]``:
    derivative of ``G(x_h, xi)`` in ``xi``.
    """

    robin: np.ndarray
    robin_coarse: np.ndarray
    robin_identity: np.ndarray
    cross: np.ndarray
    step: float


def fd_step(mesh: Mesh, xi) -> float:
    diam = mesh.domain.diameter if mesh.domain is not None else float(np.ptp(mesh.nodes, axis=0).max())
    return max(4.0 * mesh.local_h(xi), 1e-4 * diam)


def moved_sources(domain: DomainSpec, xi, boundary: bool, step: float) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairs of (minus, plus) displaced sources per direction."""
    xi = np.asarray(xi, dtype=float)
    if boundary:
        s = domain.boundary_arclength(xi)
        L = domain.boundary_length
        pm, _, _ = domain.boundary_point(np.array([(s - step) % L, (s + step) % L]))
        return [(pm[0], pm[1])]
    return [(xi - step * e, xi + step * e) for e in np.eye(2)]


def grad_green(op: EllipticOperator, xi, others: Sequence = (), r0: float | None = None,
               step: float | None = None, fit_radius: float | None = None,
               boundary: bool | None = None) -> GreenGradient:
    """Central differences with Richardson extrapolation (steps ``rho`` and ``rho/2``).

    All displaced solves share the cutoff radius and the fit radius of the
    base source, so the differences see a smooth function of ``xi``.
    """
    mesh = op.mesh
    domain = mesh.domain
    xi = np.asarray(xi, dtype=float)
    fit_radius = 2.5 * mesh.local_h(xi) if fit_radius is None else fit_radius
    base = regular_part(op, xi, r0, boundary, fit_radius)
    bd = base.on_boundary
    r0 = base.r0
    rho_fd = fd_step(mesh, xi) if step is None else float(step)
    if not bd:
        dist = -float(domain.signed_distance(xi)[0])
        while rho_fd >= 0.5 * dist:
            rho_fd *= 0.5
    others = np.atleast_2d(np.asarray(others, dtype=float)).reshape(-1, 2)
    d_full, d_half = [], []
    c_full, c_half = [], []
    for h, store, cstore in ((rho_fd, d_full, c_full), (0.5 * rho_fd, d_half, c_half)):
        for minus, plus in moved_sources(domain, xi, bd, h):
            cm = regular_part(op, minus, r0, bd, fit_radius)
            cp = regular_part(op, plus, r0, bd, fit_radius)
            store.append((cp.robin - cm.robin) / (2 * h))
            if len(others):
                cstore.append((green_eval(cp, others, smooth=True) - green_eval(cm, others, smooth=True)) / (2 * h))
            else:
                cstore.append(np.zeros(0))
    d_full, d_half = np.array(d_full), np.array(d_half)
    robin = (4.0 * d_half - d_full) / 3.0
    cross = (4.0 * np.array(c_half) - np.array(c_full)) / 3.0
    ident = 2.0 * base.grad_H_at_source
    if bd:
        ident = np.array([ident @ base.tangent])
    return GreenGradient(robin, d_full, ident, cross.T, rho_fd)


def write_robin_table(path, caches: Sequence[GreenCache]) -> None:
    with open(path, "w") as fh:
        fh.write("xi_x,xi_y,on_boundary,robin,gradH_1,gradH_2\n")
        for c in caches:
            g = c.grad_H_at_source
            fh.write(f"{c.source[0]:.12g},{c.source[1]:.12g},{int(c.on_boundary)},{c.robin:.12g},"
                     f"{g[0]:.12g},{g[1]:.12g}\n")
