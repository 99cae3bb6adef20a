"""Liouville bubbles, their projections and the approximate solution.

A bubble of width ``tau * eps`` centred at ``xi`` has density
``eps^2 e^U = 8 tau^2 eps^2 / (tau^2 eps^2 + |y|^2)^2``; its projection ``PU``
is the zero-mean Neumann solution with that density (cut off around ``xi``)
as source. ``PPsi^j`` are the projections of the parameter derivatives.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cutoff import cutoff
from .errors import NumericalFailure, ValidationError
from .fem import EllipticOperator, Field, assemble, load_from_qp, plane_radial_integral, quadrature
from .geometry import DomainSpec, Mesh, RefinementPlan, generate_mesh
from .green import GreenCache, concentration_mass, green_eval, green_plan, on_boundary, regular_part

EXP_CLAMP = 60.0
CORE_ELEMENTS = 8.0      # elements across tau*eps
CORE_RADIUS = 16.0       # refined radius in units of tau*eps


def d_constants() -> tuple[float, float]:
    """``int (1-|y|^2)/(1+|y|^2)^4`` and ``int |y|^2/(1+|y|^2)^4`` over the plane."""
    d0 = plane_radial_integral(lambda r: (1 - r * r) / (1 + r * r) ** 4, 1e4)
    d1 = plane_radial_integral(lambda r: r * r / (1 + r * r) ** 4, 1e4)
    return d0, d1


def bubble_density(pts: np.ndarray, center, width: float) -> np.ndarray:
    """``eps^2 e^U`` with ``width = tau * eps``."""
    d = np.atleast_2d(pts) - np.asarray(center, dtype=float)
    r2 = np.sum(d * d, axis=-1)
    w2 = width * width
    return 8.0 * w2 / (w2 + r2) ** 2


@dataclass(frozen=True)
class Bubble:
    center: np.ndarray
    tau: float
    epsilon: float
    rho: float
    r0: float
    tangent: np.ndarray | None = None   # unit tangent for boundary bubbles

    def __post_init__(self):
        if self.tau <= 0 or self.epsilon <= 0:
            raise ValidationError("tau and epsilon must be positive")
        if self.width > self.r0 / 4:
            raise ValidationError(f"bubble width {self.width:.3g} not small against r0={self.r0:.3g}")
        if self.width > self.r0 / 16:
            warnings.warn(f"bubble width {self.width:.3g} exceeds r0/16 = {self.r0 / 16:.3g}", stacklevel=2)

    @property
    def width(self) -> float:
        return self.tau * self.epsilon

    @property
    def on_boundary(self) -> bool:
        return self.tangent is not None

    @property
    def n_derivatives(self) -> int:
        return 1 if self.on_boundary else 2

    def chi(self, pts: np.ndarray) -> np.ndarray:
        d = np.atleast_2d(pts) - self.center
        return cutoff(np.hypot(d[:, 0], d[:, 1]) / self.r0)

    def density(self, pts: np.ndarray) -> np.ndarray:
        return bubble_density(pts, self.center, self.width)

    def profile(self, pts: np.ndarray) -> np.ndarray:
        """``U - log(8 tau^2) = -2 log(tau^2 eps^2 + |y|^2)``."""
        d = np.atleast_2d(pts) - self.center
        return -2.0 * np.log(self.width**2 + np.sum(d * d, axis=-1))

    def psi(self, j: int, pts: np.ndarray) -> np.ndarray:
        """Derivative functions: ``j = 0`` in ``tau``, ``j >= 1`` in the centre.

        Boundary bubbles have one centre direction, the boundary tangent.
        """
        d = np.atleast_2d(pts) - self.center
        r2 = np.sum(d * d, axis=-1)
        w2 = self.width**2
        if j == 0:
            return (2.0 / self.tau) * (r2 - w2) / (r2 + w2)
        if j > self.n_derivatives:
            raise ValidationError(f"derivative index {j} out of range")
        comp = d @ self.tangent if self.on_boundary else d[:, j - 1]
        return 4.0 * comp / (w2 + r2)


def bubble_mass(width: float = 1.0, half: bool = False, r_max: float = math.inf) -> float:
    """``int_{|y|<r_max} eps^2 e^U dy`` in closed form: ``8 pi r^2/(w^2 + r^2)``."""
    full = 8.0 * math.pi if math.isinf(r_max) else 8.0 * math.pi * r_max**2 / (width**2 + r_max**2)
    return 0.5 * full if half else full


def scaling_tau(greens: Sequence[GreenCache], V: Callable, i: int, smooth: bool = True) -> float:
    """Scaling of bubble ``i`` from the Robin value and the other Green's functions, in log space."""
    gi = greens[i]
    v = float(np.asarray(V(gi.source[None, :])).ravel()[0])
    if not v > 0:
        raise ValidationError(f"V(xi_{i}) = {v} is not positive")
    expo = math.log(v) - math.log(8.0) + gi.rho * gi.robin
    for j, gj in enumerate(greens):
        if j != i:
            expo += gj.rho * float(green_eval(gj, gi.source, smooth=smooth)[0])
    return math.exp(0.5 * expo)


def default_radius(domain: DomainSpec, points: np.ndarray, boundary: Sequence[bool]) -> float:
    """One eighth of the smallest separation (pairs, and interior points to the boundary),
    capped by the chart radius."""
    pts = np.atleast_2d(points)
    seps = []
    for a in range(len(pts)):
        if not boundary[a]:
            seps.append(-float(domain.signed_distance(pts[a])[0]))
        for b in range(a + 1, len(pts)):
            seps.append(float(np.linalg.norm(pts[a] - pts[b])))
    r0 = domain.chart_radius if not seps else min(domain.chart_radius, min(seps) / 8.0)
    if r0 <= 0:
        raise ValidationError("configuration points coincide or leave the domain")
    return r0


def bubble_plan(points: np.ndarray, widths: Sequence[float]) -> RefinementPlan:
    w = np.asarray(widths, dtype=float)
    return RefinementPlan.build(points, CORE_RADIUS * w, w / CORE_ELEMENTS)


def _tangents(domain: DomainSpec, points: np.ndarray, boundary: Sequence[bool]) -> list:
    out = []
    for p, b in zip(points, boundary):
        if b:
            _, t, _ = domain.boundary_point(domain.boundary_arclength(p))
            out.append(t[0])
        else:
            out.append(None)
    return out


@dataclass(eq=False)
class AnsatzState:
    """Bubbles, projections and the sum of projected bubbles on one mesh."""

    op: EllipticOperator
    epsilon: float
    V: Callable[[np.ndarray], np.ndarray]
    bubbles: list[Bubble]
    greens: list[GreenCache]
    PU: list[Field]
    PPsi: dict[tuple[int, int], Field]
    pu_loads: list[np.ndarray]
    rhs_totals: list[float]
    cache: dict = field(default_factory=dict)

    @property
    def mesh(self) -> Mesh:
        return self.op.mesh

    @property
    def points(self) -> np.ndarray:
        return np.array([b.center for b in self.bubbles])

    @property
    def taus(self) -> np.ndarray:
        return np.array([b.tau for b in self.bubbles])

    @property
    def rhos(self) -> np.ndarray:
        return np.array([b.rho for b in self.bubbles])

    @property
    def mass_number(self) -> int:
        """``m = 2k + l``."""
        return int(round(sum(b.rho for b in self.bubbles) / (4 * math.pi)))

    @property
    def kernel_keys(self) -> list[tuple[int, int]]:
        return [(i, j) for i, b in enumerate(self.bubbles) for j in range(1, b.n_derivatives + 1)]

    def sum_field(self) -> Field:
        return ansatz_sum(self)

    def sum_at_quadrature(self, extra: np.ndarray | None = None) -> np.ndarray:
        """``sum PU (+ extra)`` at quadrature points.

        The singular-looking profiles ``chi (U - log 8 tau^2)`` are evaluated
        exactly; only the smooth remainder is interpolated.
        """
        key = "sum_qp"
        if key not in self.cache:
            q = quadrature(self.mesh)
            flat = q.points.reshape(-1, 2)
            nodes = self.mesh.nodes
            exact_qp = np.zeros(len(flat))
            remainder = ansatz_sum(self).values.copy()
            for b in self.bubbles:
                exact_qp += b.chi(flat) * b.profile(flat)
                remainder -= b.chi(nodes) * b.profile(nodes)
            self.cache[key] = exact_qp.reshape(q.w_flat.shape) + q.interp(self.mesh, remainder)
        out = self.cache[key]
        if extra is not None:
            out = out + quadrature(self.mesh).interp(self.mesh, np.asarray(extra, dtype=float))
        return out

    def weight_at_quadrature(self) -> np.ndarray:
        q = quadrature(self.mesh)
        return np.asarray(self.V(q.points.reshape(-1, 2)), dtype=float).reshape(q.w_flat.shape)

    def nonlinearity_qp(self, extra: np.ndarray | None = None) -> np.ndarray:
        """``eps^2 V e^(sum PU + extra)`` at quadrature points, with the overflow guard."""
        expo = self.sum_at_quadrature(extra)
        top = float(np.max(expo))
        if top > EXP_CLAMP or not np.all(np.isfinite(expo)):
            raise NumericalFailure(f"exponent {top:.1f} exceeds the clamp {EXP_CLAMP}")
        return self.epsilon**2 * self.weight_at_quadrature() * np.exp(expo)

    def bubble_sources_qp(self) -> np.ndarray:
        """``sum eps^2 chi_i e^U_i`` at quadrature points (flat measure)."""
        if "src_qp" not in self.cache:
            q = quadrature(self.mesh)
            flat = q.points.reshape(-1, 2)
            tot = np.zeros(len(flat))
            for b in self.bubbles:
                tot += b.chi(flat) * b.density(flat)
            self.cache["src_qp"] = tot.reshape(q.w_flat.shape)
        return self.cache["src_qp"]


def _projection(op: EllipticOperator, values_qp: np.ndarray) -> tuple[Field, np.ndarray, float]:
    load = load_from_qp(op.mesh, values_qp, metric=False)
    total = float(load.sum())
    u, _ = op.solve_load(load)
    return Field(op.mesh, u, True), load, total


def project_bubble(op: EllipticOperator, b: Bubble) -> tuple[Field, np.ndarray, float]:
    """``PU`` with its load vector and the total source before the mean is removed."""
    q = quadrature(op.mesh)
    flat = q.points.reshape(-1, 2)
    vals = (b.chi(flat) * b.density(flat)).reshape(q.w_flat.shape)
    return _projection(op, vals)


def project_derivative(op: EllipticOperator, b: Bubble, j: int) -> Field:
    q = quadrature(op.mesh)
    flat = q.points.reshape(-1, 2)
    vals = (b.chi(flat) * b.density(flat) * b.psi(j, flat)).reshape(q.w_flat.shape)
    return _projection(op, vals)[0]


def ansatz_sum(state: AnsatzState) -> Field:
    if "sum" not in state.cache:
        total = np.zeros(state.mesh.n_nodes)
        for pu in state.PU:
            if pu.mesh is not state.mesh:
                raise ValidationError("projected bubbles live on different meshes")
            total += pu.values
        state.cache["sum"] = Field(state.mesh, total, True)
    return state.cache["sum"]


def check_resolution(mesh: Mesh, bubbles: Sequence[Bubble]) -> None:
    """Warn when a core is coarser than planned, refuse below two elements across it."""
    for b in bubbles:
        h = mesh.local_h(b.center)
        if h > 0.5 * b.width:
            raise ValidationError(f"mesh size {h:.3g} does not resolve bubble width {b.width:.3g}")
        if h > 2.0 * b.width / CORE_ELEMENTS:
            warnings.warn(f"bubble core under-resolved: h={h:.3g}, width={b.width:.3g}", stacklevel=2)


def build_state(op: EllipticOperator, points, boundary: Sequence[bool], epsilon: float, V: Callable,
                r0: float, derivatives: bool = True) -> AnsatzState:
    """Green caches, scalings and projections for a configuration on a given mesh."""
    domain = op.mesh.domain
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    greens = [regular_part(op, p, r0, bool(bd)) for p, bd in zip(pts, boundary)]
    tangents = _tangents(domain, pts, boundary)
    bubbles = []
    for i, p in enumerate(pts):
        tau = scaling_tau(greens, V, i)
        bubbles.append(Bubble(p, tau, epsilon, greens[i].rho, r0, tangents[i]))
    check_resolution(op.mesh, bubbles)
    PU, loads, totals = [], [], []
    for b in bubbles:
        f, load, total = project_bubble(op, b)
        PU.append(f)
        loads.append(load)
        totals.append(total)
    PPsi = {}
    if derivatives:
        for i, b in enumerate(bubbles):
            for j in range(0, b.n_derivatives + 1):
                PPsi[(i, j)] = project_derivative(op, b, j)
    return AnsatzState(op, float(epsilon), V, bubbles, greens, PU, PPsi, loads, totals)


def classify_points(domain: DomainSpec, points) -> list[bool]:
    return [on_boundary(domain, p, tol=1e-7 * domain.diameter) for p in np.atleast_2d(points)]


def configuration_mesh(domain: DomainSpec, points, epsilon: float, V: Callable, beta: float = 0.0,
                       r0: float | None = None, boundary: Sequence[bool] | None = None) -> tuple[EllipticOperator, float, list[bool]]:
    """Mesh refined for the cutoff annuli and the bubble cores.

    Scalings are estimated on a mesh that only resolves the Green's functions,
    then the cores are refined to ``tau eps / 8`` within ``16 tau eps``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    bd = classify_points(domain, pts) if boundary is None else list(boundary)
    r0 = default_radius(domain, pts, bd) if r0 is None else float(r0)
    gplan = green_plan(domain, pts, [r0] * len(pts))
    coarse = assemble(generate_mesh(domain, gplan), beta)
    greens = [regular_part(coarse, p, r0, b) for p, b in zip(pts, bd)]
    widths = [scaling_tau(greens, V, i, smooth=True) * epsilon for i in range(len(pts))]
    plan = gplan.merge(bubble_plan(pts, widths))
    return assemble(generate_mesh(domain, plan), beta), r0, bd


def build_ansatz(domain: DomainSpec, points, epsilon: float, V: Callable, beta: float = 0.0,
                 r0: float | None = None, derivatives: bool = True) -> AnsatzState:
    op, r0, bd = configuration_mesh(domain, points, epsilon, V, beta, r0)
    return build_state(op, points, bd, epsilon, V, r0, derivatives)


def unit_weight(pts: np.ndarray) -> np.ndarray:
    return np.ones(len(np.atleast_2d(pts)))
