"""Reduced functional over blow-up configurations, its gradient and critical points.

``F(xi) = sum rho_i^2 R(xi_i) + sum_{i != j} rho_i rho_j G(xi_i, xi_j) + sum 2 rho_i log V(xi_i)``

Interior points move in the plane, boundary points in arclength. Every
evaluation uses Green's functions solved on a mesh refined around the
current configuration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericalFailure, ValidationError
from .fem import EllipticOperator, assemble
from .geometry import DomainSpec, generate_mesh
from .green import (GreenCache, concentration_mass, default_cutoff_radius, green_eval, green_plan,
                    grad_green, regular_part)

Weight_fn = Callable[[np.ndarray], np.ndarray]
FD_FRACTION = 0.02


# ---------------------------------------------------------------- configurations

@dataclass(frozen=True)
class Configuration:
    """``k`` interior points and ``l`` boundary arclength parameters."""

    interior: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    boundary_s: np.ndarray = field(default_factory=lambda: np.zeros(0))
    delta: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "interior", np.asarray(self.interior, dtype=float).reshape(-1, 2))
        object.__setattr__(self, "boundary_s", np.asarray(self.boundary_s, dtype=float).reshape(-1))
        if self.k + self.l == 0:
            raise ValidationError("configuration needs at least one point (2k + l >= 1)")
        if self.delta <= 0:
            raise ValidationError("delta must be positive")

    @property
    def k(self) -> int:
        return len(self.interior)

    @property
    def l(self) -> int:
        return len(self.boundary_s)

    @property
    def m(self) -> int:
        return 2 * self.k + self.l

    @property
    def dim(self) -> int:
        return 2 * self.k + self.l

    @property
    def flags(self) -> list[bool]:
        return [False] * self.k + [True] * self.l

    @property
    def rhos(self) -> np.ndarray:
        return np.array([concentration_mass(b) for b in self.flags])

    def points(self, domain: DomainSpec) -> np.ndarray:
        if self.l == 0:
            return self.interior.copy()
        bp, _, _ = domain.boundary_point(np.mod(self.boundary_s, domain.boundary_length))
        return np.vstack([self.interior, bp])

    def vector(self) -> np.ndarray:
        return np.concatenate([self.interior.ravel(), self.boundary_s])

    def with_vector(self, v: np.ndarray) -> "Configuration":
        v = np.asarray(v, dtype=float)
        return Configuration(v[: 2 * self.k].reshape(-1, 2), v[2 * self.k:], self.delta)

    def violations(self, domain: DomainSpec, V: Weight_fn | None = None) -> list[str]:
        """Names of the violated admissibility constraints."""
        out = []
        pts = self.points(domain)
        near = corner_distance(domain, pts[self.k:]) < domain.chart_radius
        for i in np.flatnonzero(near):
            out.append(f"boundary point {i} within the chart radius of a corner")
        if self.k:
            d = -domain.signed_distance(self.interior)
            for i in np.flatnonzero(d < self.delta):
                out.append(f"interior point {i} within {self.delta:g} of the boundary (distance {d[i]:.3g})")
        for a in range(len(pts)):
            for b in range(a + 1, len(pts)):
                dist = float(np.linalg.norm(pts[a] - pts[b]))
                if dist < self.delta:
                    out.append(f"points {a} and {b} closer than {self.delta:g} (distance {dist:.3g})")
        if V is not None:
            vals = np.asarray(V(pts), dtype=float)
            for i in np.flatnonzero(vals < self.delta):
                out.append(f"V at point {i} below {self.delta:g} ({vals[i]:.3g})")
        return out

    def check(self, domain: DomainSpec, V: Weight_fn | None = None) -> None:
        bad = self.violations(domain, V)
        if bad:
            raise ValidationError("configuration outside the admissible set: " + "; ".join(bad))


def corner_distance(domain: DomainSpec, pts: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest polygon vertex (inf for smooth boundaries)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float)).reshape(-1, 2)
    if domain.shape not in ("rectangle", "polygon"):
        return np.full(len(pts), np.inf)
    v = domain.polygon_vertices
    return np.linalg.norm(pts[:, None, :] - v[None, :, :], axis=2).min(axis=1) if len(pts) else np.zeros(0)


def default_delta(domain: DomainSpec) -> float:
    return 0.05 * domain.diameter


# ---------------------------------------------------------------- weights

@dataclass(frozen=True)
class Weight:
    """Positive base weight times zeros of order ``2 n_i`` at the points ``q_i``."""

    base: Weight_fn
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    multiplicities: np.ndarray = field(default_factory=lambda: np.zeros(0))
    base_gradient: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float).reshape(-1, 2))
        object.__setattr__(self, "multiplicities", np.asarray(self.multiplicities, dtype=float).reshape(-1))
        if len(self.points) != len(self.multiplicities):
            raise ValidationError("one multiplicity per singular point")
        if np.any(self.multiplicities <= 0):
            raise ValidationError("multiplicities must be positive")


@dataclass(frozen=True, eq=False)
class EffectiveWeight:
    """``V = V~ exp(-sum (rho(q_i)/2) n_i G(., q_i))`` and its gradient."""

    weight: Weight
    greens: tuple[GreenCache, ...]
    smooth: bool = False

    def log(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        with np.errstate(divide="ignore"):
            out = np.log(np.asarray(self.weight.base(pts), dtype=float))
        hit = np.zeros(len(pts), dtype=bool)
        for g, n in zip(self.greens, self.weight.multiplicities):
            at = np.all(pts == g.source, axis=1)
            hit |= at
            if np.any(~at):
                out[~at] -= 0.5 * g.rho * n * green_eval(g, pts[~at], smooth=self.smooth)
        out[hit] = -np.inf
        return out

    def __call__(self, pts) -> np.ndarray:
        return np.exp(self.log(pts))

    def log_gradient(self, pts, step: float = 1e-6) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return _fd_gradient(self.log, pts, step)


def _fd_gradient(f: Callable, pts: np.ndarray, step: float) -> np.ndarray:
    out = np.zeros_like(pts)
    for d in range(2):
        e = np.zeros(2)
        e[d] = step
        out[:, d] = (f(pts + e) - f(pts - e)) / (2 * step)
    return out


def build_singular_weight(w: Weight, op: EllipticOperator, smooth: bool = False) -> EffectiveWeight:
    """Green caches at the ``q_i`` and the effective weight; ``V = base`` when there are none."""
    domain = op.mesh.domain
    pts = w.points
    for a in range(len(pts)):
        for b in range(a + 1, len(pts)):
            if np.allclose(pts[a], pts[b]):
                raise ValidationError("singular points must be distinct")
    greens = tuple(regular_part(op, q) for q in pts)
    return EffectiveWeight(w, greens, smooth)


# ---------------------------------------------------------------- functional

def reduced_functional(cfg: Configuration, greens: Sequence[GreenCache], V: Weight_fn,
                       domain: DomainSpec | None = None) -> float:
    """``F`` from Green caches at the configuration points (ordered interior, then boundary).

    Terms are summed in a canonical order so that relabelling the points gives
    a bitwise identical value.
    """
    if domain is not None:
        cfg.check(domain, V)
    pts = np.array([g.source for g in greens])
    if len(greens) != cfg.k + cfg.l:
        raise ValidationError("one Green cache per configuration point")
    vals = np.asarray(V(pts), dtype=float)
    if np.any(vals <= 0):
        raise ValidationError("V must be positive at configuration points")
    terms = [g.rho**2 * g.robin + 2 * g.rho * math.log(v) for g, v in zip(greens, vals)]
    for i, gi in enumerate(greens):
        for j, gj in enumerate(greens):
            if i != j:
                terms.append(gi.rho * gj.rho * float(green_eval(gj, gi.source, smooth=True)[0]))
    return math.fsum(sorted(terms))


@dataclass
class ReducedModel:
    """Evaluator for ``F`` and its gradient on one mesh.

    ``fit_radius`` and ``radii`` are fixed for the lifetime of the model so
    that values at nearby configurations are smooth in the points.
    """

    op: EllipticOperator
    V: Weight_fn
    radii: np.ndarray
    fit_radius: float
    log_V_gradient: Callable[[np.ndarray], np.ndarray] | None = None
    fd_step: float | None = None

    @property
    def domain(self) -> DomainSpec:
        return self.op.mesh.domain

    def greens(self, cfg: Configuration) -> list[GreenCache]:
        pts = cfg.points(self.domain)
        return [regular_part(self.op, p, r, b, self.fit_radius) for p, r, b in zip(pts, self.radii, cfg.flags)]

    def value(self, cfg: Configuration, check: bool = True) -> float:
        if check:
            cfg.check(self.domain, self.V)
        return reduced_functional(cfg, self.greens(cfg), self.V)

    def _log_v_derivative(self, cfg: Configuration, i: int, step: float) -> float:
        pts = cfg.points(self.domain)
        p = pts[i]
        if cfg.flags[i]:
            s = cfg.boundary_s[i - cfg.k]
            L = self.domain.boundary_length
            q, t, _ = self.domain.boundary_point(np.array([(s - step) % L, (s + step) % L]))
            if self.log_V_gradient is not None:
                g = np.asarray(self.log_V_gradient(p[None, :]))[0]
                _, tan, _ = self.domain.boundary_point(s % L)
                return np.array([g @ tan[0]])
            lv = np.log(np.asarray(self.V(q), dtype=float))
            return np.array([(lv[1] - lv[0]) / (2 * step)])
        if self.log_V_gradient is not None:
            return np.asarray(self.log_V_gradient(p[None, :]), dtype=float)[0]
        return _fd_gradient(lambda x: np.log(np.asarray(self.V(x), dtype=float)), p[None, :], step)[0]

    def gradient(self, cfg: Configuration, greens: Sequence[GreenCache] | None = None) -> np.ndarray:
        """``dF`` ordered as the configuration vector (2 per interior point, 1 per boundary point).

        Source motion uses Richardson differences of the Green solves, motion
        of the evaluation point uses the same differences on the fitted ``H``.
        """
        domain = self.domain
        pts = cfg.points(domain)
        greens = self.greens(cfg) if greens is None else greens
        rho = cfg.rhos
        out = []
        for h in range(len(pts)):
            others = np.delete(pts, h, axis=0)
            # boundary sources keep the wider mesh-based step: arclength motion crosses
            # the kinks of the polygonal boundary, which a step below the edge length resolves as noise
            step = None if cfg.flags[h] else self.fd_step
            gg = grad_green(self.op, pts[h], others, self.radii[h], step, self.fit_radius, cfg.flags[h])
            step = gg.step
            grad = rho[h] ** 2 * gg.robin
            other_idx = [j for j in range(len(pts)) if j != h]
            for col, j in enumerate(other_idx):
                # source h moves: G(xi_j, xi_h); evaluation point moves: G(xi_h, xi_j)
                grad = grad + rho[h] * rho[j] * gg.cross[col]
                grad = grad + rho[h] * rho[j] * self._eval_point_derivative(greens[j], cfg, h, step)
            grad = grad + 2 * rho[h] * self._log_v_derivative(cfg, h, 1e-6 * domain.diameter)
            out.append(np.atleast_1d(grad))
        return np.concatenate(out)

    def _eval_point_derivative(self, g: GreenCache, cfg: Configuration, h: int, step: float) -> np.ndarray:
        domain = self.domain
        p = cfg.points(domain)[h]

        def diff(st: float) -> np.ndarray:
            if cfg.flags[h]:
                s = cfg.boundary_s[h - cfg.k]
                L = domain.boundary_length
                q, _, _ = domain.boundary_point(np.array([(s - st) % L, (s + st) % L]))
                v = green_eval(g, q, smooth=True)
                return np.array([(v[1] - v[0]) / (2 * st)])
            res = []
            for e in np.eye(2):
                v = green_eval(g, np.array([p - st * e, p + st * e]), smooth=True)
                res.append((v[1] - v[0]) / (2 * st))
            return np.array(res)

        return (4.0 * diff(0.5 * step) - diff(step)) / 3.0


def search_operator(domain: DomainSpec, cfg: Configuration, beta: float = 0.0,
                    resolution: float = 20.0) -> tuple[EllipticOperator, np.ndarray]:
    """Mesh refined around the configuration points; returns the operator and cutoff radii."""
    pts = cfg.points(domain)
    radii = np.array([default_cutoff_radius(domain, p, b) for p, b in zip(pts, cfg.flags)])
    op = assemble(generate_mesh(domain, green_plan(domain, pts, radii, resolution)), beta)
    return op, radii


def model_for(domain: DomainSpec, cfg: Configuration, V: Weight_fn, beta: float = 0.0,
              log_V_gradient=None, resolution: float = 20.0, op: EllipticOperator | None = None) -> ReducedModel:
    if op is None:
        op, radii = search_operator(domain, cfg, beta, resolution)
    else:
        pts = cfg.points(domain)
        radii = np.array([default_cutoff_radius(domain, p, b) for p, b in zip(pts, cfg.flags)])
    mesh = op.mesh
    fit = 2.5 * max(mesh.local_h(p) for p in cfg.points(domain))
    # differences in the source position resolve the cutoff scale, not the mesh scale
    return ReducedModel(op, V, radii, fit, log_V_gradient, FD_FRACTION * float(np.min(radii)))


def reduced_gradient(cfg: Configuration, domain: DomainSpec, V: Weight_fn, beta: float = 0.0,
                     log_V_gradient=None, op: EllipticOperator | None = None) -> np.ndarray:
    cfg.check(domain, V)
    return model_for(domain, cfg, V, beta, log_V_gradient, op=op).gradient(cfg)


# ---------------------------------------------------------------- projection onto the admissible set

def project_configuration(cfg: Configuration, domain: DomainSpec) -> Configuration:
    """Push interior points to distance ``delta`` from the boundary and apart from each other."""
    inner = cfg.interior.copy()
    margin = cfg.delta * (1 + 1e-9)
    for i in range(len(inner)):
        d = -float(domain.signed_distance(inner[i])[0])
        if d < margin:
            foot, nrm = domain.project_to_boundary(inner[i][None, :])
            inner[i] = foot[0] - margin * nrm[0]
    out = Configuration(inner, np.mod(cfg.boundary_s, domain.boundary_length), cfg.delta)
    pts = out.points(domain)
    for a in range(out.k):
        for b in range(len(pts)):
            if a == b:
                continue
            v = pts[a] - pts[b]
            dist = float(np.linalg.norm(v))
            if dist < margin:
                inner[a] = pts[b] + margin * (v / dist if dist > 0 else np.array([1.0, 0.0]))
    return Configuration(inner, out.boundary_s, cfg.delta)


# ---------------------------------------------------------------- critical points

@dataclass
class CriticalResult:
    config: Configuration
    value: float
    gradient: np.ndarray
    hessian_eigenvalues: np.ndarray
    stability: str          # "min", "nondegenerate" or "degenerate" (a proxy for C1-stability)
    iterations: int
    history: list[float]

    @property
    def gradient_norm(self) -> float:
        return float(np.linalg.norm(self.gradient))


def fd_hessian(model: ReducedModel, cfg: Configuration, step: float) -> np.ndarray:
    n = cfg.dim
    v0 = cfg.vector()
    H = np.zeros((n, n))
    for a in range(n):
        e = np.zeros(n)
        e[a] = step
        gp = model.gradient(cfg.with_vector(v0 + e))
        gm = model.gradient(cfg.with_vector(v0 - e))
        H[:, a] = (gp - gm) / (2 * step)
    return 0.5 * (H + H.T)


def stability_label(eigs: np.ndarray, h_tol: float) -> str:
    if np.all(eigs > h_tol):
        return "min"
    if not np.any(np.abs(eigs) < h_tol):
        return "nondegenerate"
    return "degenerate"


def find_critical(domain: DomainSpec, initial: Configuration, V: Weight_fn, mode: str = "minimize",
                  beta: float = 0.0, log_V_gradient=None, tol_g: float | None = None, max_iter: int = 40,
                  resolution: float = 20.0, newton_steps: int = 6,
                  polish_resolution: float | None = None) -> CriticalResult:
    """Projected gradient descent with backtracking, then Newton polish on the FD Hessian.

    Every outer iteration remeshes around the current iterate; all trial
    points of that iteration are evaluated on the same mesh. The polish runs
    on one finer mesh (``polish_resolution``, default twice ``resolution``).
    """
    if mode not in ("minimize", "stationary"):
        raise ValidationError(f"unknown mode {mode!r}")
    initial.check(domain, V)
    cfg = initial
    history: list[float] = []
    scale_len = domain.diameter
    step_len = 0.05 * scale_len
    it = 0
    model = None
    F = 0.0
    grad = np.zeros(cfg.dim)
    tol = None

    def refresh(c: Configuration):
        m = model_for(domain, c, V, beta, log_V_gradient, resolution)
        return m, m.value(c), m.gradient(c)

    if mode == "minimize":
        while it < max_iter:
            it += 1
            model, F, grad = refresh(cfg)
            history.append(F)
            tol = tol_g if tol_g is not None else 1e-6 * max(abs(F), 1.0)
            gn = float(np.linalg.norm(grad))
            if gn <= 1e3 * tol:
                break
            direction = -grad / gn
            t = step_len
            accepted = False
            while t > 1e-6 * scale_len:
                trial = project_configuration(cfg.with_vector(cfg.vector() + t * direction), domain)
                if not trial.violations(domain, V):
                    Ft = model.value(trial, check=False)
                    if Ft <= F - 1e-4 * t * gn:
                        accepted = True
                        break
                t *= 0.5
            if not accepted:
                break
            step_len = min(2 * t, 0.2 * scale_len)
            cfg = trial
    # Newton polish on one mesh: the discrete functional is smooth in the points there.
    # Directions with |curvature| below h_tol (e.g. rotations of a symmetric
    # configuration) form a degenerate critical set; they are left alone.
    fine = 2.0 * resolution if polish_resolution is None else polish_resolution
    model = model_for(domain, cfg, V, beta, log_V_gradient, fine)
    fd = max(1e-3 * scale_len, 4 * model.fit_radius / 2.5)
    F = model.value(cfg, check=False)
    h_tol = 1e-4 * max(abs(F), 1.0) / cfg.delta**2
    eigs, vecs = np.linalg.eigh(fd_hessian(model, cfg, fd))
    live = np.abs(eigs) >= h_tol
    for _ in range(newton_steps + 1):
        F, grad = model.value(cfg, check=False), model.gradient(cfg)
        history.append(F)
        tol = tol_g if tol_g is not None else 1e-6 * max(abs(F), 1.0)
        g_live = vecs[:, live].T @ grad
        if np.linalg.norm(g_live) <= tol:
            break
        if not np.any(live):
            break
        coef = -g_live / eigs[live]
        if mode == "minimize":
            coef = np.where(eigs[live] > 0, coef, -g_live / np.abs(eigs[live]))
        delta = vecs[:, live] @ coef
        lim = 0.05 * scale_len
        if np.linalg.norm(delta) > lim:
            delta *= lim / np.linalg.norm(delta)
        cfg = project_configuration(cfg.with_vector(cfg.vector() + delta), domain)
        it += 1
    bad = cfg.violations(domain, V)
    if bad:
        raise NumericalFailure("search left the admissible set: " + "; ".join(bad))
    eigs, vecs = np.linalg.eigh(fd_hessian(model, cfg, fd))
    live = np.abs(eigs) >= h_tol
    g_live = vecs[:, live].T @ grad
    if np.linalg.norm(g_live) > tol:
        near = _active_constraints(cfg, domain)
        where = f" (active: {', '.join(near)})" if near else ""
        raise NumericalFailure(f"no critical point within {it} iterations: |grad F| = "
                               f"{np.linalg.norm(g_live):.3e} > {tol:.3e}{where}")
    return CriticalResult(cfg, F, grad, eigs, stability_label(eigs, h_tol), it, history)


def _active_constraints(cfg: Configuration, domain: DomainSpec) -> list[str]:
    tight = Configuration(cfg.interior, cfg.boundary_s, cfg.delta * 1.01)
    return tight.violations(domain)


# ---------------------------------------------------------------- scans and probes

def boundary_pair_scan(domain: DomainSpec, V: Weight_fn, n: int = 32, beta: float = 0.0,
                       resolution: float = 12.0) -> tuple[np.ndarray, np.ndarray]:
    """``F`` for two boundary points over an ``n x n`` arclength grid (diagonal = nan).

    Green's functions are solved once per grid point on a shared mesh. Grid
    points whose half-disk cutoff would reach a polygon corner are left as nan.
    """
    L = domain.boundary_length
    s = (np.arange(n) + 0.5) * L / n
    pts, _, _ = domain.boundary_point(s)
    r0 = domain.chart_radius
    usable = corner_distance(domain, pts) >= r0
    op = assemble(generate_mesh(domain, green_plan(domain, pts[usable], [r0] * int(usable.sum()), resolution)), beta)
    fit = 2.5 * max(op.mesh.local_h(p) for p in pts[usable])
    greens = [regular_part(op, p, r0, True, fit) if ok else None for p, ok in zip(pts, usable)]
    logv = np.log(np.asarray(V(pts), dtype=float))
    rho = concentration_mass(True)
    F = np.full((n, n), np.nan)
    for a in range(n):
        for b in range(n):
            if a == b or greens[a] is None or greens[b] is None:
                continue
            gab = float(green_eval(greens[b], pts[a], smooth=True)[0])
            gba = float(green_eval(greens[a], pts[b], smooth=True)[0])
            F[a, b] = (rho**2 * (greens[a].robin + greens[b].robin) + rho**2 * (gab + gba)
                       + 2 * rho * (logv[a] + logv[b]))
    return s, F


def interior_scan(domain: DomainSpec, V: Weight_fn, points: np.ndarray, op: EllipticOperator | None = None,
                  beta: float = 0.0, resolution: float = 12.0) -> np.ndarray:
    """``F`` for a single interior point at each of ``points`` (one Green solve each).

    Without ``op`` each point gets its own mesh refined around the cutoff annulus;
    a shared operator only works when its mesh already resolves every cutoff.
    """
    pts = np.atleast_2d(points)
    vals = np.log(np.asarray(V(pts), dtype=float))
    rho = concentration_mass(False)
    out = np.empty(len(pts))
    for i, p in enumerate(pts):
        r0 = default_cutoff_radius(domain, p, False)
        local = op
        if local is None:
            local = assemble(generate_mesh(domain, green_plan(domain, p[None], [r0], resolution)), beta)
        g = regular_part(local, p, r0)
        out[i] = rho**2 * g.robin + 2 * rho * vals[i]
    return out


@dataclass
class DivergenceReport:
    t: np.ndarray
    values: np.ndarray
    increasing_below: float | None     # parameter below which F is strictly increasing as t decreases
    slope: float                       # fitted dF / d(-log t)
    status: str                        # "diverging", "not monotone" or "indeterminate"


def boundary_divergence_probe(path: Callable[[float], Configuration], ts: Sequence[float], domain: DomainSpec,
                              V: Weight_fn, beta: float = 0.0, weight_vanishes: bool = False) -> DivergenceReport:
    """Evaluate ``F`` along ``path(t)`` for decreasing ``t`` and fit the growth against ``-log t``.

    When the path approaches a zero of ``V`` the competition between ``log V``
    and the Green terms has no definite sign, so the report is "indeterminate".
    """
    ts = np.sort(np.asarray(ts, dtype=float))[::-1]
    vals = []
    for t in ts:
        cfg = path(float(t))
        model = model_for(domain, cfg, V, beta)
        vals.append(model.value(cfg, check=False))
    vals = np.array(vals)
    x = -np.log(ts)
    slope = float(np.polyfit(x, vals, 1)[0]) if len(ts) >= 2 else float("nan")
    if weight_vanishes:
        return DivergenceReport(ts, vals, None, slope, "indeterminate")
    inc = np.diff(vals) > 0
    below = None
    for i in range(len(inc)):
        if np.all(inc[i:]):
            below = float(ts[i])
            break
    status = "diverging" if below is not None else "not monotone"
    return DivergenceReport(ts, vals, below, slope, status)


def write_critical_report(path, results: Sequence[CriticalResult]) -> None:
    with open(path, "w") as fh:
        fh.write("k,l,F,gradnorm,stability,xi_coords\n")
        for r in results:
            coords = " ".join(f"{c:.12g}" for c in r.config.vector())
            fh.write(f"{r.config.k},{r.config.l},{r.value:.12g},{r.gradient_norm:.6e},{r.stability},{coords}\n")


def write_scan_csv(path, s: np.ndarray, F: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("s1,s2,F\n")
        for a in range(len(s)):
            for b in range(len(s)):
                if np.isfinite(F[a, b]):
                    fh.write(f"{s[a]:.12g},{s[b]:.12g},{F[a, b]:.12g}\n")
