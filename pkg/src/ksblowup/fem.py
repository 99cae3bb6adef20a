"""P1 finite elements for the zero-mean Neumann problem of ``-Laplace + beta``.

The zero-mean constraint is imposed with a Lagrange multiplier, so every solve
goes through the bordered matrix ``[[A, c], [c^T, 0]]`` with ``c = M 1``. The
bordered matrix is factorized once per operator with SuperLU.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalFailure, ValidationError
from .geometry import Mesh, barycentric, locate

log = logging.getLogger(__name__)

# Degree-5 seven-point rule on the reference triangle (barycentric, weights sum to 1).
_R15 = math.sqrt(15.0)
_A1, _B1 = (9.0 - 2.0 * _R15) / 21.0, (6.0 + _R15) / 21.0
_A2, _B2 = (9.0 + 2.0 * _R15) / 21.0, (6.0 - _R15) / 21.0
TRI_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
TRI_W = np.array([9.0 / 40.0] + [(155.0 + _R15) / 1200.0] * 3 + [(155.0 - _R15) / 1200.0] * 3)

EDGE_T, EDGE_W = np.polynomial.legendre.leggauss(4)
EDGE_T = 0.5 * (EDGE_T + 1.0)
EDGE_W = 0.5 * EDGE_W

SOLVE_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class Quadrature:
    """Quadrature points on every triangle with flat and metric weights."""

    points: np.ndarray     # (nT, nq, 2)
    bary: np.ndarray       # (nq, 3)
    w_flat: np.ndarray     # (nT, nq), sums to triangle areas
    w_metric: np.ndarray   # (nT, nq), includes exp(conformal factor)

    def interp(self, mesh: Mesh, values: np.ndarray) -> np.ndarray:
        return values[mesh.triangles] @ self.bary.T


def quadrature(mesh: Mesh) -> Quadrature:
    cached = mesh.__dict__.get("_quadrature")
    if cached is not None:
        return cached
    corners = mesh.nodes[mesh.triangles]
    pts = np.einsum("qk,tkd->tqd", TRI_BARY, corners)
    w = mesh.areas[:, None] * TRI_W[None, :]
    wm = w
    if mesh.domain is not None and mesh.domain.conformal_factor is not None:
        wm = w * np.exp(mesh.domain.conformal(pts.reshape(-1, 2))).reshape(w.shape)
    q = Quadrature(pts, TRI_BARY, w, wm)
    mesh.__dict__["_quadrature"] = q
    return q


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal P1 field."""

    mesh: Mesh
    values: np.ndarray
    mean_zero: bool = False

    def __add__(self, other: "Field") -> "Field":
        _same_mesh(self, other)
        return Field(self.mesh, self.values + other.values, self.mean_zero and other.mean_zero)

    def __sub__(self, other: "Field") -> "Field":
        _same_mesh(self, other)
        return Field(self.mesh, self.values - other.values, self.mean_zero and other.mean_zero)

    def scaled(self, a: float) -> "Field":
        return Field(self.mesh, a * self.values, self.mean_zero)

    def at(self, p) -> np.ndarray:
        t, lam = locate(self.mesh, p)
        return np.sum(self.values[self.mesh.triangles[t]] * lam, axis=-1)


def _same_mesh(u, v) -> None:
    if isinstance(u, Field) and isinstance(v, Field) and u.mesh is not v.mesh:
        raise ValidationError("fields live on different meshes")


def _vals(u) -> np.ndarray:
    return u.values if isinstance(u, Field) else np.asarray(u, dtype=float)


class BorderedSolver:
    """Direct solver for ``[[B, c], [c^T, 0]] [u; mu] = [b; m]``."""

    def __init__(self, matrix: sp.spmatrix, c: np.ndarray):
        n = matrix.shape[0]
        col = sp.csc_matrix(c.reshape(n, 1))
        self.matrix = matrix.tocsr()
        self.c = c
        big = sp.bmat([[matrix, col], [col.T, None]], format="csc")
        try:
            self.lu = spla.splu(big)
        except RuntimeError as exc:
            raise NumericalFailure(f"factorization failed: {exc}") from exc

    def solve(self, b: np.ndarray, m=0.0) -> tuple[np.ndarray, np.ndarray]:
        b = np.asarray(b, dtype=float)
        n = self.matrix.shape[0]
        multi = b.ndim == 2
        bb = b if multi else b[:, None]
        mm = np.broadcast_to(np.asarray(m, dtype=float), (bb.shape[1],))
        rhs = np.vstack([bb, mm[None, :]])
        x = self.lu.solve(rhs)
        for _ in range(2):
            res = rhs - np.vstack([self.matrix @ x[:n] + np.outer(self.c, x[n]), self.c @ x[:n]])
            scale = np.linalg.norm(rhs, axis=0) + 1e-300
            if np.all(np.linalg.norm(res, axis=0) <= SOLVE_RTOL * scale):
                break
            x = x + self.lu.solve(res)
        else:
            res = rhs - np.vstack([self.matrix @ x[:n] + np.outer(self.c, x[n]), self.c @ x[:n]])
            rel = np.max(np.linalg.norm(res, axis=0) / (np.linalg.norm(rhs, axis=0) + 1e-300))
            if rel > 1e-6:
                raise NumericalFailure(f"linear solve residual {rel:.2e}")
        u, mu = x[:n], x[n]
        return (u, mu) if multi else (u[:, 0], mu[0])


class EllipticOperator:
    """Stiffness, mass and the bordered factorization for ``-Laplace_g + beta``."""

    def __init__(self, mesh: Mesh, beta: float, stiffness: sp.csr_matrix, mass: sp.csr_matrix):
        self.mesh = mesh
        self.beta = float(beta)
        self.stiffness = stiffness
        self.mass = mass
        self.matrix = (stiffness + self.beta * mass).tocsr()
        self.ones_load = np.asarray(mass.sum(axis=1)).ravel()
        self.volume = float(self.ones_load.sum())

    @cached_property
    def solver(self) -> BorderedSolver:
        return BorderedSolver(self.matrix, self.ones_load)

    def solve_load(self, load: np.ndarray, mean_value=0.0) -> tuple[np.ndarray, np.ndarray]:
        """Solve ``A u + mu c = load``, ``c^T u = mean_value``.

        For any ``beta`` the multiplier equals the mean of the data, so this is
        the zero-mean solve with the right-hand side's mean removed.
        """
        return self.solver.solve(load, mean_value)

    def energy(self, u, v=None) -> float:
        a = _vals(u)
        b = a if v is None else _vals(v)
        return float(a @ (self.matrix @ b))

    def mean(self, u) -> float:
        return float(self.ones_load @ _vals(u)) / self.volume

    def integral(self, u) -> float:
        return float(self.ones_load @ _vals(u))


def assemble(mesh: Mesh, beta: float) -> EllipticOperator:
    """Assemble P1 stiffness and metric mass matrices."""
    if beta < 0:
        raise ValidationError("beta must be nonnegative")
    if np.any(mesh.areas <= 0):
        raise ValidationError("degenerate triangle (zero or negative area)")
    tri = mesh.triangles
    p = mesh.nodes[tri]
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    kloc = np.einsum("tid,tjd->tij", e, e) / (4.0 * mesh.areas[:, None, None])
    q = quadrature(mesh)
    mloc = np.einsum("tq,qi,qj->tij", q.w_metric, q.bary, q.bary)
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_nodes
    K = sp.coo_matrix((kloc.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    M = sp.coo_matrix((mloc.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    K = 0.5 * (K + K.T)
    M = 0.5 * (M + M.T)
    return EllipticOperator(mesh, beta, K.tocsr(), M.tocsr())


def weighted_mass(mesh: Mesh, weight_qp: np.ndarray, metric: bool = True) -> sp.csr_matrix:
    """Matrix of ``int W phi_a phi_b`` with ``W`` given at quadrature points."""
    q = quadrature(mesh)
    w = (q.w_metric if metric else q.w_flat) * weight_qp
    loc = np.einsum("tq,qi,qj->tij", w, q.bary, q.bary)
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_nodes
    W = sp.coo_matrix((loc.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return (0.5 * (W + W.T)).tocsr()


def load_from_qp(mesh: Mesh, values_qp: np.ndarray, metric: bool = True) -> np.ndarray:
    """Load vector ``int f phi_a`` from values of ``f`` at the quadrature points."""
    q = quadrature(mesh)
    w = (q.w_metric if metric else q.w_flat) * values_qp
    contrib = w @ q.bary
    return np.bincount(mesh.triangles.ravel(), weights=contrib.ravel(), minlength=mesh.n_nodes)


# ---------------------------------------------------------------- singular quadrature

N_RINGS = 16
N_SECTORS = 16
RING_RATIO = 0.4


def _duffy_reference() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    gu, wu = np.polynomial.legendre.leggauss(4)
    gv, wv = np.polynomial.legendre.leggauss(2)
    edges = np.concatenate([RING_RATIO ** np.arange(N_RINGS + 1), [0.0]])[::-1]
    us, uw = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        us.append(a + (b - a) * 0.5 * (gu + 1))
        uw.append((b - a) * 0.5 * wu)
    us, uw = np.concatenate(us), np.concatenate(uw)
    sec = np.linspace(0.0, 1.0, N_SECTORS + 1)
    vs, vw = [], []
    for a, b in zip(sec[:-1], sec[1:]):
        vs.append(a + (b - a) * 0.5 * (gv + 1))
        vw.append((b - a) * 0.5 * wv)
    vs, vw = np.concatenate(vs), np.concatenate(vw)
    U, Vv = np.meshgrid(us, vs, indexing="ij")
    W = np.outer(uw, vw) * U
    return U.ravel(), Vv.ravel(), W.ravel()


_DUFFY = _duffy_reference()


def _closest_point_in_triangle(corners: np.ndarray, p: np.ndarray) -> np.ndarray:
    a, b, c = corners
    v0, v1, v2 = b - a, c - a, p - a
    det = v0[0] * v1[1] - v0[1] * v1[0]
    l1 = (v2[0] * v1[1] - v2[1] * v1[0]) / det
    l2 = (v0[0] * v2[1] - v0[1] * v2[0]) / det
    if l1 >= 0 and l2 >= 0 and l1 + l2 <= 1:
        return p.copy()
    best, bd = None, np.inf
    for s, t in ((a, b), (b, c), (c, a)):
        d = t - s
        w = float(np.clip(np.dot(p - s, d) / np.dot(d, d), 0.0, 1.0))
        q = s + w * d
        dist = float(np.linalg.norm(q - p))
        if dist < bd:
            best, bd = q, dist
    return best


def singular_rule(mesh: Mesh, center, reach: float = 2.5) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Graded polar rule on triangles near ``center``.

    Each triangle whose centroid lies within ``reach`` diameters of ``center``
    is split into three pieces with apex at the closest point to ``center``;
    each piece gets a Duffy map with ``N_RINGS`` geometric rings toward the
    apex and ``N_SECTORS`` angular sectors.

    Returns triangle indices, points, weights (flat measure) and the index of
    the owning triangle per point.
    """
    c = np.asarray(center, dtype=float)
    dist = np.linalg.norm(mesh.centroids - c, axis=1)
    near = np.flatnonzero(dist < reach * mesh.diameters)
    if near.size == 0:
        t, _ = locate(mesh, c)
        near = np.atleast_1d(t)
    U, Vv, W = _DUFFY
    pts, wts, owner = [], [], []
    for t in near:
        corners = mesh.nodes[mesh.triangles[t]]
        apex = _closest_point_in_triangle(corners, c)
        for k in range(3):
            a, b = corners[k], corners[(k + 1) % 3]
            da, db = a - apex, b - apex
            area2 = abs(da[0] * db[1] - da[1] * db[0])
            if area2 <= 1e-14 * mesh.areas[t]:
                continue
            x = apex + U[:, None] * (da[None, :] + Vv[:, None] * (b - a)[None, :])
            pts.append(x)
            wts.append(W * area2)
            owner.append(np.full(len(W), t))
    return near, np.vstack(pts), np.concatenate(wts), np.concatenate(owner)


def load_vector(mesh: Mesh, f: Callable[[np.ndarray], np.ndarray], singular_center=None,
                metric: bool = True) -> np.ndarray:
    """Load vector ``int f phi_a``; ``f`` may have a log singularity at ``singular_center``."""
    q = quadrature(mesh)
    fq = np.asarray(f(q.points.reshape(-1, 2)), dtype=float).reshape(q.w_flat.shape)
    if singular_center is not None:
        near, pts, wts, owner = singular_rule(mesh, singular_center)
        fq[near] = 0.0
    if not np.all(np.isfinite(fq)):
        raise NumericalFailure("NaN or infinity in integrand")
    out = load_from_qp(mesh, fq, metric)
    if singular_center is not None:
        fv = np.asarray(f(pts), dtype=float)
        if metric and mesh.domain is not None and mesh.domain.conformal_factor is not None:
            fv = fv * np.exp(mesh.domain.conformal(pts))
        if not np.all(np.isfinite(fv)):
            raise NumericalFailure("NaN or infinity in singular integrand")
        lam = barycentric(mesh, owner, pts)
        contrib = (fv * wts)[:, None] * lam
        out += np.bincount(mesh.triangles[owner].ravel(), weights=contrib.ravel(), minlength=mesh.n_nodes)
    return out


def integrate(mesh: Mesh, f: Callable[[np.ndarray], np.ndarray], singular_center=None,
              metric: bool = True) -> float:
    """Integral of a pointwise function over the mesh.

    Without a center this is the degree-5 rule; with a center, triangles around
    it use the graded polar rule so log singularities are integrated exactly
    up to roundoff.
    """
    q = quadrature(mesh)
    fq = np.asarray(f(q.points.reshape(-1, 2)), dtype=float).reshape(q.w_flat.shape)
    if singular_center is not None:
        near, pts, wts, _ = singular_rule(mesh, singular_center)
        fq[near] = 0.0
    if not np.all(np.isfinite(fq)):
        raise NumericalFailure("NaN or infinity in integrand")
    total = float(np.sum(fq * (q.w_metric if metric else q.w_flat)))
    if singular_center is not None:
        fv = np.asarray(f(pts), dtype=float)
        if metric and mesh.domain is not None and mesh.domain.conformal_factor is not None:
            fv = fv * np.exp(mesh.domain.conformal(pts))
        if not np.all(np.isfinite(fv)):
            raise NumericalFailure("NaN or infinity in singular integrand")
        total += float(np.sum(fv * wts))
    return total


def boundary_load(mesh: Mesh, g: Callable[[np.ndarray, np.ndarray], np.ndarray], metric: bool = True,
                  exact: bool = True) -> np.ndarray:
    """Load vector ``int_boundary g phi_a ds``; ``g(points, outward_normals)``.

    With ``exact`` the data is sampled at the projections of the edge
    quadrature points onto the exact boundary, with exact normals, which keeps
    fluxes of singular data consistent on curved boundaries. ``metric`` adds the
    conformal line element.
    """
    e = mesh.boundary_edges
    a, b = mesh.nodes[e[:, 0]], mesh.nodes[e[:, 1]]
    d = b - a
    length = np.linalg.norm(d, axis=1)
    normal = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]
    pts = a[:, None, :] + EDGE_T[None, :, None] * d[:, None, :]
    flat_pts = pts.reshape(-1, 2)
    flat_nrm = np.broadcast_to(normal[:, None, :], pts.shape).reshape(-1, 2)
    if exact and mesh.domain is not None:
        flat_pts, flat_nrm = mesh.domain.project_to_boundary(flat_pts)
    gv = np.asarray(g(flat_pts, flat_nrm), dtype=float).reshape(len(e), -1)
    if metric and mesh.domain is not None and mesh.domain.conformal_factor is not None:
        gv = gv * np.exp(0.5 * mesh.domain.conformal(pts.reshape(-1, 2))).reshape(gv.shape)
    w = gv * (EDGE_W[None, :] * length[:, None])
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, e[:, 0], w @ (1.0 - EDGE_T))
    np.add.at(out, e[:, 1], w @ EDGE_T)
    return out


def boundary_integral(mesh: Mesh, g: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> float:
    return float(boundary_load(mesh, g).sum())


# ---------------------------------------------------------------- solves and norms

def solve_zero_mean(op: EllipticOperator, rhs, neumann_data=None, subtract_mean: bool = False,
                    compat_tol: float = 1e-8) -> Field:
    """Weak solution of ``(-Laplace_g + beta) u = rhs``, ``d_nu u = h``, ``int u = 0``.

    ``rhs`` is a Field (nodal data, integrated exactly as a P1 function) or a
    callable evaluated at quadrature points. ``neumann_data`` is ``None`` or a
    callable ``h(points, normals)``. With ``subtract_mean`` the data's mean is
    removed first; otherwise ``beta = 0`` requires compatible data.
    """
    mesh = op.mesh
    if isinstance(rhs, Field):
        _same_mesh(Field(mesh, np.zeros(0)), rhs)
        load = op.mass @ rhs.values
        scale = float(op.ones_load @ np.abs(rhs.values))
    elif callable(rhs):
        load = load_vector(mesh, rhs)
        scale = float(np.abs(load).sum())
    else:
        load = op.mass @ np.asarray(rhs, dtype=float)
        scale = float(np.abs(load).sum())
    if neumann_data is not None:
        bl = boundary_load(mesh, neumann_data)
        load = load + bl
        scale += float(np.abs(bl).sum())
    total = float(load.sum())
    if subtract_mean:
        load = load - (total / op.volume) * op.ones_load
    elif op.beta == 0.0 and abs(total) > compat_tol * max(scale, 1e-300):
        raise ValidationError(f"incompatible Neumann data at beta=0: net source {total:.3e}")
    u, _ = op.solve_load(load)
    return Field(mesh, u, True)


def inner(op: EllipticOperator, u, v) -> float:
    """Energy inner product ``int grad u . grad v + beta int u v``."""
    _same_mesh(u, v)
    return op.energy(u, v)


def l2_norm(op: EllipticOperator, u) -> float:
    a = _vals(u)
    return math.sqrt(max(float(a @ (op.mass @ a)), 0.0))


def l2_error(mesh: Mesh, values: np.ndarray, exact: Callable[[np.ndarray], np.ndarray]) -> float:
    """L2 distance between a P1 field and a function, by the degree-5 rule."""
    q = quadrature(mesh)
    uh = q.interp(mesh, values)
    ex = np.asarray(exact(q.points.reshape(-1, 2))).reshape(uh.shape)
    return math.sqrt(float(np.sum(q.w_metric * (uh - ex) ** 2)))


def h1_seminorm_error(mesh: Mesh, values: np.ndarray, grad_exact: Callable[[np.ndarray], np.ndarray]) -> float:
    q = quadrature(mesh)
    tri = mesh.triangles
    p = mesh.nodes[tri]
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    rot = np.stack([e[..., 1], -e[..., 0]], axis=-1) / (2.0 * mesh.areas[:, None, None])
    gh = np.einsum("ti,tid->td", values[tri], rot)
    ge = np.asarray(grad_exact(q.points.reshape(-1, 2))).reshape(len(tri), -1, 2)
    return math.sqrt(float(np.sum(q.w_flat * np.sum((ge - gh[:, None, :]) ** 2, axis=-1))))


def nodal_gradients(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """Per-triangle constant gradients of a P1 field."""
    tri = mesh.triangles
    p = mesh.nodes[tri]
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    rot = np.stack([e[..., 1], -e[..., 0]], axis=-1) / (2.0 * mesh.areas[:, None, None])
    return np.einsum("ti,tid->td", values[tri], rot)


def plane_radial_integral(profile: Callable[[np.ndarray], np.ndarray], r_max: float,
                          tail: float = 0.0, panels: int = 400) -> float:
    """``2 pi int_0^r_max profile(r) r dr`` by composite Gauss-Legendre plus a known tail.

    Panels are uniform in ``log(1 + r)`` so both the core and the far region
    are resolved.
    """
    g, w = np.polynomial.legendre.leggauss(10)
    edges = np.expm1(np.linspace(0.0, math.log1p(r_max), panels + 1))
    a, b = edges[:-1, None], edges[1:, None]
    r = a + (b - a) * 0.5 * (g[None, :] + 1)
    wt = (b - a) * 0.5 * w[None, :]
    return float(2.0 * math.pi * np.sum(profile(r) * r * wt) + tail)


def write_field_csv(path, field: Field) -> None:
    with open(path, "w") as fh:
        fh.write("node_index,value\n")
        for i, v in enumerate(field.values):
            fh.write(f"{i},{v:.17g}\n")


def read_field_csv(path, mesh: Mesh) -> Field:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    vals = np.zeros(mesh.n_nodes)
    vals[data[:, 0].astype(int)] = data[:, 1]
    return Field(mesh, vals)
