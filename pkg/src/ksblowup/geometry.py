"""Planar domains, graded triangular meshes and boundary parameterization.

Domains are described by a :class:`DomainSpec`. Meshes are built from a point
cloud (boundary nodes, concentric rings around refinement centers, and a
background hexagonal lattice) triangulated with ``scipy.spatial.Delaunay``.
Boundary nodes sit on the exact curves, so curved boundaries are represented by
inscribed polygons.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .errors import NumericalFailure, ValidationError

log = logging.getLogger(__name__)

SHAPES = ("unit_disk", "rectangle", "annulus", "polygon")


@dataclass(frozen=True)
class CurvePiece:
    """A straight segment or a full circle traversed with the domain on the left."""

    kind: str
    a: tuple[float, float]
    b: tuple[float, float] = (0.0, 0.0)
    radius: float = 0.0
    orientation: int = 1

    @property
    def length(self) -> float:
        if self.kind == "segment":
            return float(math.hypot(self.b[0] - self.a[0], self.b[1] - self.a[1]))
        return 2.0 * math.pi * self.radius

    def evaluate(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Points and unit tangents at local arclength ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.kind == "segment":
            a = np.asarray(self.a)
            d = (np.asarray(self.b) - a) / self.length
            return a + t[:, None] * d, np.broadcast_to(d, (t.size, 2)).copy()
        theta = self.orientation * t / self.radius
        c, s = np.cos(theta), np.sin(theta)
        pts = np.asarray(self.a) + self.radius * np.column_stack([c, s])
        tang = self.orientation * np.column_stack([-s, c])
        return pts, tang

    def project(self, p: np.ndarray) -> tuple[float, float]:
        """Local arclength of the closest point and the distance to it."""
        if self.kind == "segment":
            a = np.asarray(self.a)
            d = np.asarray(self.b) - a
            t = float(np.clip(np.dot(p - a, d) / np.dot(d, d), 0.0, 1.0))
            return t * self.length, float(np.linalg.norm(a + t * d - p))
        v = p - np.asarray(self.a)
        theta = math.atan2(v[1], v[0]) * self.orientation
        t = (theta % (2 * math.pi)) * self.radius
        return t, abs(float(np.linalg.norm(v)) - self.radius)


def outward_normal(tangent: np.ndarray) -> np.ndarray:
    """Rotate tangents clockwise; with the domain on the left this points outward."""
    return np.column_stack([tangent[:, 1], -tangent[:, 0]])


@dataclass(frozen=True)
class DomainSpec:
    """Domain shape, nominal element size and conformal factor.

    The conformal factor ``phi`` gives the metric ``exp(phi) |dx|^2`` on the
    global chart; ``None`` means flat.
    """

    shape: str = "unit_disk"
    width: float = 1.0
    height: float = 1.0
    r_in: float = 0.5
    r_out: float = 1.0
    vertices: tuple = ()
    target_h: float = 0.05
    conformal_factor: Callable[[np.ndarray], np.ndarray] | None = None

    @classmethod
    def unit_disk(cls, target_h: float = 0.05, **kw) -> "DomainSpec":
        return cls(shape="unit_disk", target_h=target_h, **kw)

    @classmethod
    def rectangle(cls, width: float = 1.0, height: float = 1.0, target_h: float = 0.05, **kw) -> "DomainSpec":
        return cls(shape="rectangle", width=width, height=height, target_h=target_h, **kw)

    @classmethod
    def annulus(cls, r_in: float, r_out: float, target_h: float = 0.05, **kw) -> "DomainSpec":
        return cls(shape="annulus", r_in=r_in, r_out=r_out, target_h=target_h, **kw)

    @classmethod
    def polygon(cls, vertices: Sequence[Sequence[float]], target_h: float = 0.05, **kw) -> "DomainSpec":
        v = np.asarray(vertices, dtype=float)
        x, y = v[:, 0], v[:, 1]
        if 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y) < 0:
            v = v[::-1]
        return cls(shape="polygon", vertices=tuple(map(tuple, v.tolist())), target_h=target_h, **kw)

    def validate(self) -> None:
        if self.shape not in SHAPES:
            raise ValidationError(f"unknown shape {self.shape!r}")
        if not self.target_h > 0:
            raise ValidationError("target_h must be positive")
        if self.shape == "rectangle" and not (self.width > 0 and self.height > 0):
            raise ValidationError("rectangle needs positive width and height")
        if self.shape == "annulus" and not (0 < self.r_in < self.r_out):
            raise ValidationError("annulus needs 0 < r_in < r_out")
        if self.shape == "polygon":
            if len(self.vertices) < 3 or self.area <= 0:
                raise ValidationError("polygon has zero area")

    def loops(self) -> list[list[CurvePiece]]:
        """Boundary loops, each a list of pieces, with the domain on the left."""
        if self.shape == "unit_disk":
            return [[CurvePiece("arc", (0.0, 0.0), radius=1.0)]]
        if self.shape == "annulus":
            return [[CurvePiece("arc", (0.0, 0.0), radius=self.r_out)],
                    [CurvePiece("arc", (0.0, 0.0), radius=self.r_in, orientation=-1)]]
        verts = self.polygon_vertices
        n = len(verts)
        return [[CurvePiece("segment", tuple(verts[i]), tuple(verts[(i + 1) % n])) for i in range(n)]]

    @property
    def polygon_vertices(self) -> np.ndarray:
        if self.shape == "rectangle":
            w, h = self.width, self.height
            return np.array([[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]])
        return np.asarray(self.vertices, dtype=float)

    @property
    def area(self) -> float:
        if self.shape == "unit_disk":
            return math.pi
        if self.shape == "annulus":
            return math.pi * (self.r_out**2 - self.r_in**2)
        v = self.polygon_vertices
        x, y = v[:, 0], v[:, 1]
        return float(0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    @property
    def boundary_length(self) -> float:
        return float(sum(p.length for loop in self.loops() for p in loop))

    @property
    def diameter(self) -> float:
        if self.shape == "unit_disk":
            return 2.0
        if self.shape == "annulus":
            return 2.0 * self.r_out
        v = self.polygon_vertices
        return float(np.max(np.linalg.norm(v[:, None] - v[None], axis=-1)))

    @property
    def chart_radius(self) -> float:
        """Radius within which a single flat chart around any point is used."""
        if self.shape == "unit_disk":
            return 0.25
        if self.shape == "annulus":
            return 0.25 * (self.r_out - self.r_in)
        v = self.polygon_vertices
        edges = np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)
        return 0.25 * float(edges.min())

    def conformal(self, pts: np.ndarray) -> np.ndarray:
        if self.conformal_factor is None:
            return np.zeros(len(pts))
        return np.asarray(self.conformal_factor(pts), dtype=float)

    def signed_distance(self, pts) -> np.ndarray:
        """Signed distance to the boundary, negative inside."""
        p = np.atleast_2d(np.asarray(pts, dtype=float))
        r = np.hypot(p[:, 0], p[:, 1])
        if self.shape == "unit_disk":
            return r - 1.0
        if self.shape == "annulus":
            return np.maximum(r - self.r_out, self.r_in - r)
        v = self.polygon_vertices
        a = v[None, :, :]
        d = np.roll(v, -1, axis=0)[None] - a
        w = p[:, None, :] - a
        t = np.clip(np.sum(w * d, -1) / np.sum(d * d, -1), 0.0, 1.0)
        dist = np.linalg.norm(w - t[..., None] * d, axis=-1).min(axis=1)
        y0, y1 = v[:, 1][None], np.roll(v[:, 1], -1)[None]
        x0, x1 = v[:, 0][None], np.roll(v[:, 0], -1)[None]
        py, px = p[:, 1:2], p[:, 0:1]
        crosses = (y0 > py) != (y1 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
        inside = np.sum(crosses & (px < xint), axis=1) % 2 == 1
        return np.where(inside, -dist, dist)

    def project_to_boundary(self, pts) -> tuple[np.ndarray, np.ndarray]:
        """Closest exact boundary points and outward normals there."""
        p = np.atleast_2d(np.asarray(pts, dtype=float))
        r = np.hypot(p[:, 0], p[:, 1])
        with np.errstate(invalid="ignore", divide="ignore"):
            radial = p / r[:, None]
        if self.shape == "unit_disk":
            return radial.copy(), radial.copy()
        if self.shape == "annulus":
            outer = np.abs(r - self.r_out) <= np.abs(r - self.r_in)
            rad = np.where(outer, self.r_out, self.r_in)
            return radial * rad[:, None], np.where(outer[:, None], radial, -radial)
        v = self.polygon_vertices
        a = v[None, :, :]
        d = np.roll(v, -1, axis=0)[None] - a
        w = p[:, None, :] - a
        t = np.clip(np.sum(w * d, -1) / np.sum(d * d, -1), 0.0, 1.0)
        foot = a + t[..., None] * d
        k = np.argmin(np.linalg.norm(p[:, None, :] - foot, axis=-1), axis=1)
        rows = np.arange(len(p))
        dk = d[0, k]
        nrm = np.column_stack([dk[:, 1], -dk[:, 0]]) / np.linalg.norm(dk, axis=1)[:, None]
        return foot[rows, k], nrm

    def boundary_point(self, s) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Exact boundary point, unit tangent and outward normal at global arclength ``s``."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        total = self.boundary_length
        if np.any(s < 0) or np.any(s >= total * (1 + 1e-14)):
            raise ValidationError(f"arclength outside [0, {total})")
        pts = np.empty((s.size, 2))
        tang = np.empty((s.size, 2))
        offset = 0.0
        pieces = [p for loop in self.loops() for p in loop]
        for k, piece in enumerate(pieces):
            last = k == len(pieces) - 1
            sel = (s >= offset) & ((s < offset + piece.length) | last)
            if np.any(sel):
                pts[sel], tang[sel] = piece.evaluate(s[sel] - offset)
            offset += piece.length
        return pts, tang, outward_normal(tang)

    def boundary_arclength(self, p) -> float:
        """Global arclength of the boundary point closest to ``p``."""
        p = np.asarray(p, dtype=float)
        best, best_s, offset = np.inf, 0.0, 0.0
        for loop in self.loops():
            for piece in loop:
                t, d = piece.project(p)
                if d < best - 1e-15:
                    best, best_s = d, offset + t
                offset += piece.length
        return best_s % self.boundary_length


@dataclass(frozen=True)
class RefinementPlan:
    """Graded refinement: spacing ``min_h`` inside ``inner_radius`` of each center,
    then growing linearly with slope ``grading`` up to the domain's ``target_h``."""

    centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    inner_radius: np.ndarray = field(default_factory=lambda: np.zeros(0))
    min_h: np.ndarray = field(default_factory=lambda: np.zeros(0))
    grading: float = 0.08

    @classmethod
    def build(cls, centers, inner_radius, min_h, grading: float = 0.08) -> "RefinementPlan":
        c = np.atleast_2d(np.asarray(centers, dtype=float)).reshape(-1, 2)
        n = len(c)
        return cls(c, np.broadcast_to(np.asarray(inner_radius, float), (n,)).copy(),
                   np.broadcast_to(np.asarray(min_h, float), (n,)).copy(), grading)

    def merge(self, other: "RefinementPlan") -> "RefinementPlan":
        return RefinementPlan(np.vstack([self.centers, other.centers]),
                              np.concatenate([self.inner_radius, other.inner_radius]),
                              np.concatenate([self.min_h, other.min_h]),
                              min(self.grading, other.grading))

    def center_size(self, i: int, r: np.ndarray) -> np.ndarray:
        return self.min_h[i] + self.grading * np.maximum(r - self.inner_radius[i], 0.0)

    def size(self, pts: np.ndarray, target_h: float) -> np.ndarray:
        h = np.full(len(pts), float(target_h))
        for i, c in enumerate(self.centers):
            r = np.linalg.norm(pts - c, axis=1)
            h = np.minimum(h, self.center_size(i, r))
        return h


@dataclass(frozen=True, eq=False)
class BoundaryLoop:
    nodes: np.ndarray        # node indices in traversal order (closed implicitly)
    s: np.ndarray            # polyline arclength at each node, starting at 0
    length: float            # polyline length of the loop
    end_normals: np.ndarray  # (nseg, 2, 2) exact one-sided normals at both ends of each segment


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangulation with boundary parameterization and conformal weights."""

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    node_weights: np.ndarray
    loops: tuple[BoundaryLoop, ...]
    domain: DomainSpec | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def boundary_length(self) -> float:
        return float(sum(lp.length for lp in self.loops))

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        return np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)

    @cached_property
    def diameters(self) -> np.ndarray:
        return self.edge_lengths.max(axis=1)

    @cached_property
    def centroid_tree(self) -> cKDTree:
        return cKDTree(self.centroids)

    @cached_property
    def node_tree(self) -> cKDTree:
        return cKDTree(self.nodes)

    @cached_property
    def boundary_node_set(self) -> np.ndarray:
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.boundary_edges.ravel()] = True
        return mask

    def local_h(self, p) -> float:
        """Largest diameter among triangles touching the node nearest to ``p``."""
        node = int(self.node_tree.query(np.asarray(p, float))[1])
        touching = np.any(self.triangles == node, axis=1)
        return float(self.diameters[touching].max())

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    def nearest_node(self, p) -> tuple[int, float]:
        d, i = self.node_tree.query(np.asarray(p, float))
        return int(i), float(d)


def _hex_lattice(lo: np.ndarray, hi: np.ndarray, h: float) -> np.ndarray:
    dy = h * math.sqrt(3.0) / 2.0
    ys = np.arange(lo[1], hi[1] + dy, dy)
    xs = np.arange(lo[0], hi[0] + h, h)
    X, Y = np.meshgrid(xs, ys)
    X = X + 0.5 * h * (np.arange(len(ys)) % 2)[:, None]
    return np.column_stack([X.ravel(), Y.ravel()])


def _ring_points(center: np.ndarray, plan: RefinementPlan, i: int, target_h: float) -> np.ndarray:
    out = []
    r = 0.9 * plan.min_h[i]
    k = 1
    while True:
        h = float(plan.center_size(i, np.array([r]))[0])
        if h >= target_h:
            break
        n = max(6, int(round(2.0 * math.pi * r / h)))
        ang = (np.arange(n) + 0.5 * (k % 2)) * (2.0 * math.pi / n)
        out.append(center + r * np.column_stack([np.cos(ang), np.sin(ang)]))
        r += 0.9 * h
        k += 1
    return np.vstack(out) if out else np.zeros((0, 2))


def _equidistribute(piece: CurvePiece, t0: float, t1: float, size: Callable, n_min: int = 1,
                    multiple: int = 1) -> np.ndarray:
    """Local arclengths in [t0, t1) with spacing following ``size`` along the piece."""
    ts = np.linspace(t0, t1, 4001)
    pts, _ = piece.evaluate(ts)
    dens = 1.0 / size(pts)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(ts))])
    n = max(n_min, int(math.ceil(cum[-1] - 1e-9)))
    n = multiple * int(math.ceil(n / multiple))
    targets = np.arange(n) * cum[-1] / n
    return np.interp(targets, cum, ts)


def _boundary_nodes(spec: DomainSpec, anchors: list[float], size: Callable):
    """Boundary nodes per loop with exact one-sided normals per segment."""
    loops_out = []
    offset = 0.0
    for loop in spec.loops():
        pts_all, tan_all, seg_nrm = [], [], []
        loop_len = sum(p.length for p in loop)
        single_smooth = len(loop) == 1
        for piece in loop:
            local = sorted({0.0} | {a - offset for a in anchors if offset - 1e-12 <= a < offset + piece.length - 1e-12})
            bounds = local + [piece.length]
            ts = []
            for t0, t1 in zip(bounds[:-1], bounds[1:]):
                mult = 4 if (single_smooth and len(local) == 1) else 1
                ts.append(_equidistribute(piece, t0, t1, size, n_min=3 if single_smooth and len(local) == 1 else 1,
                                          multiple=mult))
            t = np.concatenate(ts)
            p, tg = piece.evaluate(t)
            pts_all.append(p)
            tan_all.append(tg)
            tn = np.append(t[1:], piece.length)
            _, tg_end = piece.evaluate(tn)
            seg_nrm.append(np.stack([outward_normal(tg), outward_normal(tg_end)], axis=1))
            offset += piece.length
        loops_out.append((np.vstack(pts_all), np.vstack(seg_nrm), loop_len))
    return loops_out


def generate_mesh(spec: DomainSpec, plan: RefinementPlan | None = None) -> Mesh:
    """Build a conforming triangulation of ``spec`` honoring ``plan``.

    Parameters
    ----------
    spec : DomainSpec
        Domain and nominal element diameter.
    plan : RefinementPlan, optional
        Centers with local spacing requirements. Centers on the boundary become
        boundary nodes; interior centers become interior nodes.

    Returns
    -------
    Mesh
    """
    spec.validate()
    plan = plan if plan is not None else RefinementPlan()
    tol = 1e-9 * spec.diameter
    if len(plan.centers):
        sd = spec.signed_distance(plan.centers)
        if np.any(sd > tol):
            raise ValidationError(f"refinement center outside domain (signed distance {sd.max():.3e})")
        if np.any(plan.min_h > spec.target_h) or np.any(plan.min_h <= 0):
            raise ValidationError("min_h must lie in (0, target_h]")
    else:
        sd = np.zeros(0)

    def size(p):
        return plan.size(np.atleast_2d(p), spec.target_h)

    on_bdry = np.abs(sd) <= tol
    anchors = [spec.boundary_arclength(c) for c in plan.centers[on_bdry]]
    bloops = _boundary_nodes(spec, anchors, size)
    bpts = np.vstack([b[0] for b in bloops])
    nb = len(bpts)

    interior_centers = plan.centers[~on_bdry]
    rings, ring_h = [], []
    for i, c in enumerate(plan.centers):
        rp = _ring_points(c, plan, i, spec.target_h)
        rings.append(rp)
        ring_h.append(plan.center_size(i, np.linalg.norm(rp - c, axis=1)))
    ring_pts = np.vstack(rings) if rings else np.zeros((0, 2))
    ring_h = np.concatenate(ring_h) if ring_h else np.zeros(0)
    order = np.argsort(ring_h, kind="stable")
    ring_pts = ring_pts[order]

    lo = bpts.min(axis=0) - spec.target_h
    hi = bpts.max(axis=0) + spec.target_h
    lattice = _hex_lattice(lo, hi, spec.target_h)
    lattice = lattice[size(lattice) >= spec.target_h * (1 - 1e-12)]

    cand = np.vstack([interior_centers, ring_pts, lattice])
    hc = size(cand)
    sdc = spec.signed_distance(cand)
    keep = sdc < -0.5 * hc
    keep[: len(interior_centers)] = True
    cand, hc = cand[keep], hc[keep]

    allp = np.vstack([bpts, cand])
    allh = np.concatenate([size(bpts), hc])
    tree = cKDTree(allp)
    neigh = tree.query_ball_point(allp, r=0.6 * allh)
    accepted = np.zeros(len(allp), dtype=bool)
    accepted[:nb] = True
    for i in range(nb, len(allp)):
        ok = True
        for j in neigh[i]:
            if j < i and accepted[j]:
                ok = False
                break
        accepted[i] = ok
    pts = allp[accepted]

    tri = Delaunay(pts).simplices.astype(np.int64)
    cen = pts[tri].mean(axis=1)
    inside = spec.signed_distance(cen) < 0
    tri, cen = tri[inside], cen[inside]
    p = pts[tri]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    neg = area < 0
    tri[neg] = tri[neg][:, [0, 2, 1]]
    scale = size(cen)
    if np.any(np.abs(area) < 1e-10 * scale**2):
        raise NumericalFailure("degenerate triangle in mesh")

    used = np.zeros(len(pts), dtype=bool)
    used[tri.ravel()] = True
    if not np.all(used[:nb]):
        raise NumericalFailure("boundary node dropped by triangulation")
    remap = -np.ones(len(pts), dtype=np.int64)
    remap[used] = np.arange(used.sum())
    pts = pts[used]
    tri = remap[tri]

    bedges = _boundary_edges(tri)
    loops = []
    start = 0
    bset = {tuple(e) for e in bedges.tolist()}
    for lp_pts, seg_nrm, loop_len in bloops:
        n = len(lp_pts)
        idx = np.arange(start, start + n)
        for a, b in zip(idx, np.roll(idx, -1)):
            if (int(a), int(b)) not in bset:
                raise NumericalFailure("triangulation does not conform to the boundary")
        seg = np.linalg.norm(np.roll(lp_pts, -1, axis=0) - lp_pts, axis=1)
        loops.append(BoundaryLoop(idx, np.concatenate([[0.0], np.cumsum(seg)[:-1]]), float(seg.sum()), seg_nrm))
        start += n
    if len(bedges) != nb:
        raise NumericalFailure("spurious boundary edges in triangulation")

    weights = np.exp(spec.conformal(pts))
    mesh = Mesh(pts, tri, bedges, weights, tuple(loops), spec)
    log.debug("mesh: %d nodes, %d triangles", len(pts), len(tri))
    return mesh


def _boundary_edges(tri: np.ndarray) -> np.ndarray:
    e = np.vstack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    key = np.sort(e, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return e[counts[inv.ravel()] == 1]


def boundary_point(mesh: Mesh, s: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Point on the boundary polyline at arclength ``s`` with unit tangent and outward normal.

    The normal interpolates the exact one-sided normals at the segment ends, so
    it is continuous along smooth curves and exact at nodes.
    """
    total = mesh.boundary_length
    if not 0.0 <= s < total:
        raise ValidationError(f"arclength {s} outside [0, {total})")
    offset = 0.0
    for lp in mesh.loops:
        if s < offset + lp.length:
            local = s - offset
            k = int(np.searchsorted(lp.s, local, side="right") - 1)
            a = mesh.nodes[lp.nodes[k]]
            b = mesh.nodes[lp.nodes[(k + 1) % len(lp.nodes)]]
            seg = float(np.linalg.norm(b - a))
            w = (local - lp.s[k]) / seg
            point = (1 - w) * a + w * b
            n = (1 - w) * lp.end_normals[k, 0] + w * lp.end_normals[k, 1]
            n = n / np.linalg.norm(n)
            tangent = np.array([-n[1], n[0]])
            return point, tangent, n
        offset += lp.length
    raise ValidationError("arclength outside boundary")


def barycentric(mesh: Mesh, tri_idx: np.ndarray, pts: np.ndarray) -> np.ndarray:
    p = mesh.nodes[mesh.triangles[tri_idx]]
    a, b, c = p[..., 0, :], p[..., 1, :], p[..., 2, :]
    v0, v1, v2 = b - a, c - a, pts - a
    det = v0[..., 0] * v1[..., 1] - v0[..., 1] * v1[..., 0]
    l1 = (v2[..., 0] * v1[..., 1] - v2[..., 1] * v1[..., 0]) / det
    l2 = (v0[..., 0] * v2[..., 1] - v0[..., 1] * v2[..., 0]) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=-1)


def locate(mesh: Mesh, p, tol: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Containing triangles and barycentric coordinates for one or many points.

    Points outside the polygon but within ``tol`` of it (the sagitta of curved
    boundaries) are attached to the nearest triangle with clipped coordinates.
    """
    pts = np.atleast_2d(np.asarray(p, dtype=float))
    ntri = len(mesh.triangles)
    k = min(12, ntri)
    _, cand = mesh.centroid_tree.query(pts, k=k)
    cand = cand.reshape(len(pts), k)
    lam = barycentric(mesh, cand, pts[:, None, :])
    score = lam.min(axis=-1)
    best = np.argmax(score, axis=1)
    rows = np.arange(len(pts))
    tri_idx = cand[rows, best]
    bary = lam[rows, best]
    bad = score[rows, best] < -1e-12
    for i in np.flatnonzero(bad):
        lam_all = barycentric(mesh, np.arange(ntri), pts[i][None, :])
        j = int(np.argmax(lam_all.min(axis=1)))
        tri_idx[i], bary[i] = j, lam_all[j]
        if lam_all[j].min() >= -1e-12:
            continue
        corners = mesh.nodes[mesh.triangles[j]]
        clipped = np.clip(lam_all[j], 0.0, None)
        clipped /= clipped.sum()
        gap = float(np.linalg.norm(clipped @ corners - pts[i]))
        limit = tol if tol is not None else 0.25 * float(mesh.diameters[j])
        if gap > limit:
            dist = float(mesh.domain.signed_distance(pts[i])[0]) if mesh.domain is not None else gap
            raise ValidationError(f"point {pts[i].tolist()} outside domain (signed distance {dist:.3e})")
        bary[i] = clipped
    return tri_idx, bary


def interpolate(mesh: Mesh, values: np.ndarray, p) -> np.ndarray:
    """Piecewise-linear interpolation of nodal ``values`` at points ``p``."""
    t, lam = locate(mesh, p)
    return np.sum(values[mesh.triangles[t]] * lam, axis=-1)


def morph(mesh: Mesh, displacement: Callable[[np.ndarray], np.ndarray],
          boundary_shift: Callable[[np.ndarray], np.ndarray] | None = None) -> Mesh:
    """Move nodes smoothly, keeping connectivity.

    ``displacement`` maps interior node coordinates to displacement vectors.
    Boundary nodes are moved along the exact boundary by ``boundary_shift``
    (arclength increments), or kept fixed.
    """
    nodes = mesh.nodes.copy()
    interior = ~mesh.boundary_node_set
    nodes[interior] += displacement(mesh.nodes[interior])
    if boundary_shift is not None and mesh.domain is not None:
        bidx = np.flatnonzero(mesh.boundary_node_set)
        ds = boundary_shift(mesh.nodes[bidx])
        moving = np.abs(ds) > 0
        if np.any(moving):
            spec = mesh.domain
            total = spec.boundary_length
            s0 = np.array([spec.boundary_arclength(q) for q in mesh.nodes[bidx[moving]]])
            new, _, _ = spec.boundary_point((s0 + ds[moving]) % total)
            nodes[bidx[moving]] = new
    out = Mesh(nodes, mesh.triangles, mesh.boundary_edges, mesh.node_weights, mesh.loops, mesh.domain)
    if np.any(out.areas <= 0):
        raise NumericalFailure("mesh morph inverted a triangle")
    if mesh.domain is not None:
        out = Mesh(nodes, mesh.triangles, mesh.boundary_edges, np.exp(mesh.domain.conformal(nodes)),
                   _recompute_loops(nodes, mesh.loops), mesh.domain)
    return out


def _recompute_loops(nodes: np.ndarray, loops: tuple[BoundaryLoop, ...]) -> tuple[BoundaryLoop, ...]:
    out = []
    for lp in loops:
        p = nodes[lp.nodes]
        seg = np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1)
        out.append(BoundaryLoop(lp.nodes, np.concatenate([[0.0], np.cumsum(seg)[:-1]]), float(seg.sum()),
                                lp.end_normals))
    return tuple(out)


def write_mesh(path, mesh: Mesh) -> None:
    with open(path, "w") as fh:
        fh.write(f"nodes {mesh.n_nodes} triangles {len(mesh.triangles)} bedges {len(mesh.boundary_edges)}\n")
        for (x, y), w in zip(mesh.nodes, mesh.node_weights):
            fh.write(f"{x:.17g} {y:.17g} {w:.17g}\n")
        for t in mesh.triangles:
            fh.write(f"{t[0]} {t[1]} {t[2]}\n")
        for e in mesh.boundary_edges:
            fh.write(f"{e[0]} {e[1]}\n")


def read_mesh(path) -> Mesh:
    """Read a mesh file; boundary loops are rebuilt by chaining boundary edges."""
    with open(path) as fh:
        head = fh.readline().split()
        n, m, k = int(head[1]), int(head[3]), int(head[5])
        data = np.loadtxt(fh, max_rows=n, ndmin=2)
        tri = np.loadtxt(fh, dtype=np.int64, max_rows=m, ndmin=2)
        bed = np.loadtxt(fh, dtype=np.int64, max_rows=k, ndmin=2)
    nodes, weights = data[:, :2], data[:, 2]
    nxt = {int(a): int(b) for a, b in bed}
    seen, loops = set(), []
    for a0 in [int(a) for a in bed[:, 0]]:
        if a0 in seen:
            continue
        chain = [a0]
        seen.add(a0)
        while nxt[chain[-1]] != a0:
            chain.append(nxt[chain[-1]])
            seen.add(chain[-1])
        idx = np.array(chain)
        p = nodes[idx]
        d = np.roll(p, -1, axis=0) - p
        seg = np.linalg.norm(d, axis=1)
        nrm = np.column_stack([d[:, 1], -d[:, 0]]) / seg[:, None]
        loops.append(BoundaryLoop(idx, np.concatenate([[0.0], np.cumsum(seg)[:-1]]), float(seg.sum()),
                                  np.stack([nrm, nrm], axis=1)))
    return Mesh(nodes, tri, bed, weights, tuple(loops), None)
