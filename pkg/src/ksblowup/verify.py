"""Epsilon sweeps, expansion residuals, rate fits and reports."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .ansatz import AnsatzState, build_state, classify_points, configuration_mesh, d_constants
from .config import RunConfig
from .cutoff import cutoff
from .errors import NumericalFailure, ValidationError
from .fem import assemble, quadrature
from .geometry import morph
from .green import point_source_green
from .plots import loglog_svg
from .reduced import Configuration, reduced_functional, search_operator, model_for
from .reduction import (LinearizedOperator, assemble_solution, energy_norm, expansion_constant, kernel_basis,
                        nonlinear_mass, random_test_fields, reduced_energy, solve_phi_fixed_point)

SLOPE_TOL = 0.3


# ---------------------------------------------------------------- rate fits

@dataclass
class RateFit:
    slope: float
    intercept: float
    fit_residual: float
    half_width: float
    n: int
    log_corrected: bool
    no_decay: bool
    excluded: list = field(default_factory=list)


def rate_fit(epsilons: Sequence[float], residuals: Sequence[float], log_correction: bool = False,
             decay_floor: float = 0.05) -> RateFit:
    """Least squares of ``log r`` against ``log eps``.

    With ``log_correction`` the factor ``|log eps|`` is divided out first.
    Nonpositive residuals are dropped and listed in ``excluded``. The
    ``half_width`` is a 95% interval on the slope.
    """
    eps = np.asarray(epsilons, dtype=float)
    res = np.asarray(residuals, dtype=float)
    keep = np.isfinite(res) & (res > 0)
    excluded = [float(e) for e in eps[~keep]]
    eps, res = eps[keep], res[keep]
    if len(eps) < 3:
        raise ValidationError(f"rate fit needs at least 3 positive residuals (got {len(eps)})")
    x = np.log(eps)
    y = np.log(res)
    if log_correction:
        y = y - np.log(np.abs(np.log(eps)))
    fit = stats.linregress(x, y)
    pred = fit.intercept + fit.slope * x
    rms = float(np.sqrt(np.mean((y - pred) ** 2)))
    half = float(stats.t.ppf(0.975, len(x) - 2) * fit.stderr) if len(x) > 2 else math.inf
    return RateFit(float(fit.slope), float(fit.intercept), rms, half, len(x), log_correction,
                   bool(fit.slope < decay_floor), excluded)


# ---------------------------------------------------------------- spectral probe

def spectral_probe(state: AnsatzState, basis=None, dim: int = 20, seed: int = 0,
                   operator: LinearizedOperator | None = None) -> float:
    """Rayleigh-Ritz estimate of the smallest singular value of ``L`` on ``K_perp``.

    The trial space holds seeded smooth random fields plus the projected
    dilation modes and projected bubbles, where ``L`` is known to be weakest.
    """
    if not 1 <= dim <= 40:
        raise ValidationError("subspace dimension must lie in [1, 40]")
    op = state.op
    basis = kernel_basis(state) if basis is None else basis
    lin = LinearizedOperator(state, basis, state.nonlinearity_qp()) if operator is None else operator
    special = [state.PPsi[(i, 0)].values for i in range(len(state.bubbles)) if (i, 0) in state.PPsi]
    special += [pu.values for pu in state.PU]
    special = special[:dim]
    n_rand = dim - len(special)
    cols = list(special)
    if n_rand > 0:
        cols += list(random_test_fields(op, n_rand, seed).T)
    Z = np.column_stack([basis.project_perp(c) for c in cols])
    A = op.matrix
    M = Z.T @ (A @ Z)
    M = 0.5 * (M + M.T)
    w, U = np.linalg.eigh(M)
    good = w > 1e-12 * w.max()
    if good.sum() < max(1, dim // 2):
        raise NumericalFailure("spectral probe subspace is degenerate")
    Q = Z @ (U[:, good] / np.sqrt(w[good]))
    LQ = np.column_stack([lin.apply(q) for q in Q.T])
    B = LQ.T @ (A @ LQ)
    B = 0.5 * (B + B.T)
    return float(math.sqrt(max(np.linalg.eigvalsh(B)[0], 0.0)))


# ---------------------------------------------------------------- per-epsilon residuals

def pu_at_quadrature(state: AnsatzState, i: int) -> np.ndarray:
    """``PU_i`` at quadrature points with its profile evaluated exactly."""
    b = state.bubbles[i]
    q = quadrature(state.mesh)
    flat = q.points.reshape(-1, 2)
    nodes = state.mesh.nodes
    rem = state.PU[i].values - b.chi(nodes) * b.profile(nodes)
    return (b.chi(flat) * b.profile(flat)).reshape(q.w_flat.shape) + q.interp(state.mesh, rem)


def pu_norm_residuals(state: AnsatzState) -> np.ndarray:
    """``<PU_i, PU_i>`` minus its expansion in ``eps``, ``tau_i`` and ``R(xi_i)``.

    The inner product is evaluated as ``int source_i PU_i`` (weak form tested
    with ``PU_i`` itself), which keeps the bubble core exact.
    """
    q = quadrature(state.mesh)
    flat = q.points.reshape(-1, 2)
    out = []
    eps = state.epsilon
    for i, (b, g) in enumerate(zip(state.bubbles, state.greens)):
        src = (b.chi(flat) * b.density(flat)).reshape(q.w_flat.shape)
        got = float(np.sum(src * pu_at_quadrature(state, i) * q.w_flat))
        pred = b.rho * (6 * math.log(2) - 4 * math.log(eps) - 2 * math.log(8 * b.tau**2) + b.rho * g.robin - 2)
        out.append(got - pred)
    return np.array(out)


def far_field_residual(state: AnsatzState) -> float:
    """``sup |PU_i - rho_i G_i|`` over nodes outside each cutoff support."""
    nodes = state.mesh.nodes
    worst = 0.0
    for b, pu in zip(state.bubbles, state.PU):
        g = point_source_green(state.op, b.center)
        far = np.linalg.norm(nodes - b.center, axis=1) > 2 * b.r0
        if np.any(far):
            worst = max(worst, float(np.max(np.abs(pu.values[far] - b.rho * g.values[far]))))
    return worst


def gram_check(state: AnsatzState, basis) -> tuple[float, float]:
    """Largest relative error of the Gram diagonal against ``8 rho D1/(pi tau^2 eps^2)`` and largest off-diagonal ratio."""
    _, d1 = d_constants()
    G = basis.gram
    diag = np.diag(G)
    pred = np.array([8 * state.bubbles[i].rho * d1 / (math.pi * state.bubbles[i].tau**2 * state.epsilon**2)
                     for i, _ in basis.keys])
    rel = float(np.max(np.abs(diag / pred - 1.0)))
    scale = np.sqrt(np.outer(diag, diag))
    off = np.abs(G) / scale
    np.fill_diagonal(off, 0.0)
    return rel, float(off.max()) if off.size else 0.0


@dataclass
class EpsilonRecord:
    epsilon: float
    nodes: int = 0
    lam: float = math.nan
    lam_ansatz: float = math.nan
    energy: float = math.nan
    F: float = math.nan
    phi_norm: float = math.nan
    first_iterate: float = math.nan
    contraction: float = math.nan
    radius_estimate: float = math.nan
    iterations: int = 0
    far_field: float = math.nan
    gram_diag_error: float = math.nan
    gram_offdiag: float = math.nan
    pu_norm_residual: float = math.nan
    mass_residual: float = math.nan
    energy_residual: float = math.nan
    sigma_min: float = math.nan
    c_norm: float = math.nan
    weak_residual: float = math.nan
    orthogonality: float = math.nan
    concentration: dict = field(default_factory=dict)
    failed: str = ""


def concentration_tests() -> dict:
    return {"1": lambda p: np.ones(len(np.atleast_2d(p))),
            "x1": lambda p: np.atleast_2d(p)[:, 0],
            "x2": lambda p: np.atleast_2d(p)[:, 1]}


def run_epsilon(cfg: RunConfig, epsilon: float, probe_dim: int = 20) -> EpsilonRecord:
    """Build, solve and measure at one ``epsilon``. Failures are recorded, not raised."""
    rec = EpsilonRecord(float(epsilon))
    stage = "ansatz"
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            domain = cfg.domain_spec()
            conf = cfg.configuration()
            pts = conf.points(domain)
            V = cfg.weight_function(search_operator(domain, conf, cfg.beta, cfg.resolution) if cfg.singular else None)
            op, r0, bd = configuration_mesh(domain, pts, epsilon, V, cfg.beta, boundary=conf.flags)
            state = build_state(op, pts, bd, epsilon, V, r0)
        rec.nodes = state.mesh.n_nodes
        m = state.mass_number
        stage = "expansions"
        rec.F = reduced_functional(conf, state.greens, V)
        rec.lam_ansatz = nonlinear_mass(state)
        rec.mass_residual = rec.lam_ansatz / (4 * math.pi * m) - 1.0
        rec.pu_norm_residual = float(np.max(np.abs(pu_norm_residuals(state))))
        rec.far_field = far_field_residual(state)
        basis = kernel_basis(state)
        rec.gram_diag_error, rec.gram_offdiag = gram_check(state, basis)
        stage = "fixed point"
        result = solve_phi_fixed_point(state, basis, p=cfg.p)
        rec.phi_norm = result.phi_norm
        rec.first_iterate = result.first_iterate_norm
        rec.contraction = result.contraction_estimate
        rec.radius_estimate = result.radius_estimate
        rec.iterations = result.iterations
        rec.orthogonality = result.orthogonality
        rec.lam = result.lam
        rec.c_norm = float(sum(abs(v) for v in result.coefficients.values()))
        rec.energy = reduced_energy(state, result.phi.values)
        rec.energy_residual = rec.energy + 8 * math.pi * m * math.log(epsilon) - (expansion_constant(m) - 0.5 * rec.F)
        stage = "assembly"
        sol = assemble_solution(state, result, seed=cfg.seed, tests=concentration_tests())
        rec.weak_residual = sol.weak_residual
        rec.concentration = {k: [float(a), float(b)] for k, (a, b) in sorted(sol.concentration.items())}
        stage = "spectral probe"
        rec.sigma_min = spectral_probe(state, basis, probe_dim, cfg.seed, state.cache.get("linearized"))
    except (NumericalFailure, ValidationError) as exc:
        rec.failed = f"{stage}: {exc}"
    return rec


# ---------------------------------------------------------------- energy gradient

def energy_gradient_check(cfg: RunConfig, epsilon: float = 0.05, step_fraction: float = 0.05) -> dict:
    """Central difference of the reduced energy in the points against ``-dF/2``.

    The mesh is morphed with the points (rigid near each point, blended out
    by the cutoff), so connectivity is fixed and the energy is smooth in the
    displacement.
    """
    domain = cfg.domain_spec()
    conf = cfg.configuration()
    pts = conf.points(domain)
    V = cfg.weight_function(search_operator(domain, conf, cfg.beta, cfg.resolution) if cfg.singular else None)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        op, r0, bd = configuration_mesh(domain, pts, epsilon, V, cfg.beta, boundary=conf.flags)
        model = model_for(domain, conf, V, cfg.beta, resolution=cfg.resolution)
        target = -0.5 * model.gradient(conf)
    step = step_fraction * r0
    radius = 0.5 * r0
    fd = []
    base = conf.vector()
    col = 0
    for i in range(len(pts)):
        dirs = 1 if bd[i] else 2
        for d in range(dirs):
            vals = []
            for sign in (-1.0, 1.0):
                vec = base.copy()
                vec[col] += sign * step
                moved = conf.with_vector(vec)
                new_pts = moved.points(domain)
                shift = new_pts[i] - pts[i]
                centre = pts[i]

                def bump(x, c=centre):
                    return cutoff(np.linalg.norm(x - c, axis=1) / radius)

                bshift = None
                if bd[i]:
                    ds = sign * step
                    bshift = (lambda x, ds=ds, b=bump: ds * b(x))
                mesh = morph(op.mesh, lambda x, s=shift, b=bump: b(x)[:, None] * s[None, :], bshift)
                mop = assemble(mesh, cfg.beta)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    state = build_state(mop, new_pts, bd, epsilon, V, r0)
                res = solve_phi_fixed_point(state, p=cfg.p)
                vals.append(reduced_energy(state, res.phi.values))
            fd.append((vals[1] - vals[0]) / (2 * step))
            col += 1
    fd = np.array(fd)
    rel = float(np.linalg.norm(fd - target) / max(np.linalg.norm(target), 1e-300))
    return {"epsilon": epsilon, "fd": fd.tolist(), "target": target.tolist(), "relative_error": rel, "step": step}


# ---------------------------------------------------------------- sweep

@dataclass
class CriterionRow:
    id: int
    name: str
    passed: bool | None
    value: str
    threshold: str
    detail: str = ""


@dataclass
class SweepReport:
    config: dict
    seed: int
    records: list
    rates: dict
    criteria: list
    extra: dict = field(default_factory=dict)

    @property
    def epsilons(self) -> list[float]:
        return [r.epsilon for r in self.records]


def sweep(cfg: RunConfig, jobs: int = 1, gradient_check: bool = False, probe_dim: int = 20) -> SweepReport:
    """Run every ``epsilon`` of the schedule (in parallel when ``jobs > 1``) and evaluate the criteria."""
    if not cfg.epsilons:
        raise ValidationError("empty schedule")
    eps = sorted(cfg.epsilons, reverse=True)
    if jobs > 1 and len(eps) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(eps))) as pool:
            records = list(pool.map(run_epsilon, [cfg] * len(eps), eps, [probe_dim] * len(eps)))
    else:
        records = [run_epsilon(cfg, e, probe_dim) for e in eps]
    records.sort(key=lambda r: -r.epsilon)
    extra = {}
    if gradient_check:
        try:
            extra["energy_gradient"] = energy_gradient_check(cfg, _nearest(eps, 0.05))
        except (NumericalFailure, ValidationError) as exc:
            extra["energy_gradient"] = {"failed": str(exc)}
    rates = _rates(records)
    criteria = sweep_criteria(cfg, records, rates, extra)
    return SweepReport(cfg.to_dict(), cfg.seed, records, rates, criteria, extra)


def _nearest(values: Sequence[float], target: float) -> float:
    return min(values, key=lambda v: (abs(v - target), v))


def _rates(records: Sequence[EpsilonRecord]) -> dict:
    ok = [r for r in records if not r.failed]
    eps = [r.epsilon for r in ok]
    out = {}
    specs = {
        "far_field": ([r.far_field for r in ok], False),
        "pu_norm": ([r.pu_norm_residual for r in ok], True),
        "energy": ([abs(r.energy_residual) for r in ok], False),
        "first_iterate": ([r.first_iterate for r in ok], True),
        "c_norm": ([r.c_norm for r in ok], False),
        "sigma_min": ([r.sigma_min for r in ok], False),
    }
    for name, (vals, corr) in specs.items():
        try:
            out[name] = asdict(rate_fit(eps, vals, log_correction=corr))
        except ValidationError as exc:
            out[name] = {"failed": str(exc)}
    return out


def _fmt(x) -> str:
    if isinstance(x, (list, tuple)):
        return " ".join(_fmt(v) for v in x)
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def sweep_criteria(cfg: RunConfig, records: Sequence[EpsilonRecord], rates: dict, extra: dict) -> list[CriterionRow]:
    """Rows for the criteria that a single sweep can decide."""
    rows = []
    ok = [r for r in records if not r.failed]
    failed = [f"eps={r.epsilon:g} {r.failed}" for r in records if r.failed]
    note = "; ".join(failed)
    m = 2 * cfg.k + cfg.l
    target = 4 * math.pi * m
    smallest = ok[-1] if ok else None

    ff = rates.get("far_field", {})
    gram_rec = [r for r in ok if abs(r.epsilon - 0.05) < 1e-12] or ok[-1:]
    if "slope" in ff and gram_rec:
        g = gram_rec[0]
        passed = ff["slope"] >= 1.0 and g.gram_diag_error <= 0.1
        rows.append(CriterionRow(5, "bubble projections", passed,
                                 _fmt([ff["slope"], g.gram_diag_error]),
                                 "far-field slope >= 1.0; Gram diagonal error <= 0.1",
                                 f"Gram at eps={g.epsilon:g}, off-diagonal ratio {g.gram_offdiag:.3g}"))
    else:
        rows.append(CriterionRow(5, "bubble projections", False, "", "", note or "too few epsilons"))

    if smallest is not None:
        err = abs(smallest.mass_residual)
        rows.append(CriterionRow(6, f"mass (k,l)=({cfg.k},{cfg.l})", err <= 0.05, _fmt(err),
                                 "relative error <= 0.05", f"eps={smallest.epsilon:g}"))
    else:
        rows.append(CriterionRow(6, "mass", False, "", "", note))

    res = [abs(r.energy_residual) for r in ok]
    decreasing = len(res) >= 2 and all(b < a for a, b in zip(res, res[1:]))
    grad = extra.get("energy_gradient")
    value = [*res]
    passed = decreasing
    thr = "|residual| strictly decreasing"
    if grad is not None:
        thr += "; gradient relative error <= 0.2"
        if "relative_error" in grad:
            value.append(grad["relative_error"])
            passed = passed and grad["relative_error"] <= 0.2
        else:
            passed = False
    rows.append(CriterionRow(7, "energy expansion", passed, _fmt(value), thr, note))

    if len(ok) >= 2:
        contr = [r.contraction for r in ok[-2:]]
        radii = [r.radius_estimate for r in ok]
        ratio = max(radii) / min(radii) if min(radii) > 0 else math.inf
        rows.append(CriterionRow(8, "fixed point", max(contr) <= 0.5 and ratio <= 5, _fmt([*contr, ratio]),
                                 "contraction <= 0.5 at two smallest eps; R ratio <= 5", note))
        sig = [r.sigma_min * abs(math.log(r.epsilon)) for r in ok]
        pos = all(r.sigma_min > 0 for r in ok)
        sratio = max(sig) / min(sig) if min(sig) > 0 else math.inf
        rows.append(CriterionRow(9, "invertibility", pos and sratio <= 5, _fmt([sratio, min(r.sigma_min for r in ok)]),
                                 "sigma*|log eps| ratio <= 5; sigma > 0", note))
    else:
        rows.append(CriterionRow(8, "fixed point", False, "", "", note or "too few epsilons"))
        rows.append(CriterionRow(9, "invertibility", False, "", "", note or "too few epsilons"))

    if smallest is not None:
        lam_err = abs(smallest.lam / target - 1)
        gaps = [abs(r.lam - target) for r in ok]
        monotone = all(b <= a for a, b in zip(gaps, gaps[1:]))
        conc = concentration_errors(smallest.concentration, sum_rho=target, scale=cfg.domain_spec().diameter)
        passed = lam_err <= 0.05 and monotone and max(conc.values()) <= 0.1
        rows.append(CriterionRow(10, "concentration signature", passed,
                                 _fmt([lam_err, *[conc[k] for k in sorted(conc)]]),
                                 "lambda error <= 0.05, monotone; concentration errors <= 0.1",
                                 f"eps={smallest.epsilon:g}; tests {','.join(sorted(conc))}"))
    else:
        rows.append(CriterionRow(10, "concentration signature", False, "", "", note))
    return rows


def concentration_errors(conc: dict, sum_rho: float, scale: float) -> dict:
    """Relative errors of the concentration integrals; a zero target falls back to ``sum rho * scale``."""
    out = {}
    for name, (got, want) in conc.items():
        denom = abs(want) if abs(want) > 1e-8 * sum_rho else sum_rho * scale
        out[name] = abs(got - want) / denom
    return out


# ---------------------------------------------------------------- output

RECORD_FIELDS = ["epsilon", "nodes", "lam", "lam_ansatz", "energy", "F", "phi_norm", "first_iterate", "contraction",
                 "radius_estimate", "iterations", "far_field", "gram_diag_error", "gram_offdiag", "pu_norm_residual",
                 "mass_residual", "energy_residual", "sigma_min", "c_norm", "weak_residual", "orthogonality", "failed"]


def _clean(x):
    if isinstance(x, float):
        if math.isnan(x) or math.isinf(x):
            return None
        return float(f"{x:.10g}")
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return _clean(x.item())
    return x


def criteria_csv(rows: Sequence[CriterionRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["criterion", "name", "status", "value", "threshold", "detail"])
    for r in sorted(rows, key=lambda r: r.id):
        status = "pass" if r.passed else ("n/a" if r.passed is None else "fail")
        w.writerow([r.id, r.name, status, r.value, r.threshold, r.detail])
    return buf.getvalue()


def records_csv(records: Sequence[EpsilonRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_FIELDS)
    for r in records:
        row = []
        for f in RECORD_FIELDS:
            v = getattr(r, f)
            row.append(f"{v:.10g}" if isinstance(v, float) else v)
        w.writerow(row)
    return buf.getvalue()


def report_json(report: SweepReport) -> str:
    data = {
        "config": report.config,
        "seed": report.seed,
        "records": [asdict(r) for r in report.records],
        "rates": report.rates,
        "criteria": [asdict(r) for r in sorted(report.criteria, key=lambda r: r.id)],
        "extra": report.extra,
    }
    return json.dumps(_clean(data), indent=2, sort_keys=True) + "\n"


def write_report(report: SweepReport, outdir: str) -> list[str]:
    """``report.csv`` (one row per criterion), ``sweep.csv``, ``report.json`` and log-log plots."""
    os.makedirs(outdir, exist_ok=True)
    written = []
    for name, text in (("report.csv", criteria_csv(report.criteria)), ("sweep.csv", records_csv(report.records)),
                       ("report.json", report_json(report))):
        path = os.path.join(outdir, name)
        with open(path, "w") as fh:
            fh.write(text)
        written.append(path)
    ok = [r for r in report.records if not r.failed]
    for key, attr in (("far_field", "far_field"), ("energy", "energy_residual"), ("pu_norm", "pu_norm_residual"),
                      ("sigma_min", "sigma_min")):
        pts = [(r.epsilon, abs(getattr(r, attr))) for r in ok if abs(getattr(r, attr)) > 0]
        if len(pts) < 2:
            continue
        fit = report.rates.get(key, {})
        path = os.path.join(outdir, f"{key}.svg")
        with open(path, "w") as fh:
            fh.write(loglog_svg(pts, f"{key} residual vs eps", fit if "slope" in fit else None))
        written.append(path)
    return written
