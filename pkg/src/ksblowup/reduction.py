"""Finite-dimensional reduction: kernel space, linearized operator, fixed point for the correction.

All fields are nodal P1 vectors with zero mean; ``<u, v> = u^T A v`` with
``A = K + beta M``. ``i*`` maps data ``f`` to the zero-mean solution of
``(-Laplace_g + beta) u = f - mean(f)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .ansatz import AnsatzState
from .errors import NumericalFailure, ValidationError
from .fem import EllipticOperator, Field, load_from_qp, load_vector, quadrature, weighted_mass

KRYLOV_RTOL = 1e-10


def istar_load(op: EllipticOperator, load: np.ndarray) -> Field:
    u, _ = op.solve_load(load)
    return Field(op.mesh, u, True)


def istar(op: EllipticOperator, f) -> Field:
    """``i*(f)`` for nodal data (a Field), a pointwise callable, or values at quadrature points."""
    mesh = op.mesh
    if isinstance(f, Field):
        if f.mesh is not mesh:
            raise ValidationError("field lives on another mesh")
        load = op.mass @ f.values
    elif callable(f):
        load = load_vector(mesh, f)
    else:
        arr = np.asarray(f, dtype=float)
        if arr.shape == quadrature(mesh).w_flat.shape:
            load = load_from_qp(mesh, arr)
        elif arr.shape == (mesh.n_nodes,):
            load = op.mass @ arr
        else:
            raise ValidationError("data must be nodal or given at quadrature points")
    return istar_load(op, load)


@dataclass(eq=False)
class KernelBasis:
    """Span of ``PPsi^j_i`` for ``j >= 1`` with its Gram matrix under ``<.,.>``."""

    op: EllipticOperator
    keys: list[tuple[int, int]]
    Z: np.ndarray          # (n, d) nodal values
    AZ: np.ndarray         # A @ Z
    gram: np.ndarray
    factor: tuple = field(repr=False, default=None)

    @property
    def dim(self) -> int:
        return self.Z.shape[1]

    def coefficients(self, v: np.ndarray) -> np.ndarray:
        return sla.cho_solve(self.factor, self.AZ.T @ v)

    def project_perp(self, v) -> np.ndarray:
        vals = v.values if isinstance(v, Field) else np.asarray(v, dtype=float)
        if vals.ndim == 2:
            return vals - self.Z @ sla.cho_solve(self.factor, self.AZ.T @ vals)
        return vals - self.Z @ self.coefficients(vals)


def kernel_basis(state: AnsatzState) -> KernelBasis:
    keys = state.kernel_keys
    missing = [k for k in keys if k not in state.PPsi]
    if missing:
        raise ValidationError(f"projected derivatives missing for {missing}")
    Z = np.column_stack([state.PPsi[k].values for k in keys])
    AZ = state.op.matrix @ Z
    gram = Z.T @ AZ
    gram = 0.5 * (gram + gram.T)
    try:
        factor = sla.cho_factor(gram)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("kernel Gram matrix is singular (degenerate configuration)") from exc
    return KernelBasis(state.op, keys, Z, AZ, gram, factor)


def project_perp(basis: KernelBasis, v) -> Field:
    return Field(basis.op.mesh, basis.project_perp(v), True)


def energy_norm(op: EllipticOperator, v: np.ndarray) -> float:
    return math.sqrt(max(op.energy(v), 0.0))


@dataclass(eq=False)
class LinearizedOperator:
    """``L(phi) = Pi_perp(phi - i*(eps^2 V e^W phi))`` with ``W = sum PU``."""

    state: AnsatzState
    basis: KernelBasis
    potential_qp: np.ndarray
    Q: object = None
    applications: int = 0

    def __post_init__(self):
        if self.Q is None:
            self.Q = weighted_mass(self.state.mesh, self.potential_qp)

    @property
    def op(self) -> EllipticOperator:
        return self.state.op

    def apply(self, phi) -> np.ndarray:
        vals = phi.values if isinstance(phi, Field) else np.asarray(phi, dtype=float)
        self.applications += 1
        coupled, _ = self.op.solve_load(self.Q @ vals)
        return self.basis.project_perp(vals - coupled)

    def solve(self, rhs: np.ndarray, rtol: float = KRYLOV_RTOL, max_iter: int = 400) -> tuple[np.ndarray, int]:
        """Inverse on ``K_perp`` by restarted GMRES; every application re-projects onto ``K_perp``."""
        rhs = self.basis.project_perp(rhs)
        n = len(rhs)
        if not np.any(rhs):
            return np.zeros(n), 0
        count = [0]

        def mv(x):
            count[0] += 1
            return self.apply(self.basis.project_perp(x))

        lin = spla.LinearOperator((n, n), matvec=mv, dtype=float)
        x, info = spla.gmres(lin, rhs, rtol=rtol, atol=0.0, restart=80, maxiter=max_iter)
        if info != 0:
            raise NumericalFailure(f"Krylov solve on the kernel complement did not converge (info={info})")
        x = self.basis.project_perp(x)
        res = energy_norm(self.op, self.apply(x) - rhs) / max(energy_norm(self.op, rhs), 1e-300)
        if res > 1e-6:
            raise NumericalFailure(f"Krylov residual {res:.2e} in the energy norm")
        return x, count[0]


def linearized_operator(state: AnsatzState, basis: KernelBasis) -> LinearizedOperator:
    return LinearizedOperator(state, basis, state.nonlinearity_qp())


def linearized_apply(state: AnsatzState, basis: KernelBasis, phi) -> Field:
    lin = state.cache.get("linearized")
    if lin is None or lin.basis is not basis:
        lin = linearized_operator(state, basis)
        state.cache["linearized"] = lin
    return Field(state.mesh, lin.apply(phi), True)


# ---------------------------------------------------------------- fixed point

@dataclass
class ReductionResult:
    phi: Field
    phi_norm: float
    coefficients: dict[tuple[int, int], float]
    iterations: int
    contraction_estimate: float
    contraction_history: list[float]
    step_norms: list[float]
    first_iterate_norm: float
    lam: float
    u_field: Field
    radius_estimate: float      # phi_norm / (eps^((2-p)/p) |log eps|)
    p: float
    krylov_iterations: int
    orthogonality: float        # max |<phi, PPsi>| / (|phi| |PPsi|)


def _error_load(state: AnsatzState, potential_qp: np.ndarray) -> np.ndarray:
    """Load of ``eps^2 V e^W - sum eps^2 chi_i e^{U_i}``, with the bubble loads exactly as used for ``PU``."""
    load = load_from_qp(state.mesh, potential_qp)
    for l in state.pu_loads:
        load = load - l
    return load


def solve_phi_fixed_point(state: AnsatzState, basis: KernelBasis | None = None, p: float = 1.1,
                          tol: float = 1e-8, max_iter: int = 60) -> ReductionResult:
    """Iterate ``phi <- L^{-1} Pi_perp i*(M(phi))`` from ``phi = 0``.

    ``M(phi) = eps^2 V e^W (e^phi - 1 - phi) + eps^2 V e^W - sum eps^2 chi_i e^{U_i}``.
    Stops when successive iterates differ by ``tol`` relative in the energy norm.
    """
    if not 1.0 < p < 1.2:
        raise ValidationError("p must lie in (1, 6/5)")
    op = state.op
    basis = kernel_basis(state) if basis is None else basis
    pot = state.nonlinearity_qp()
    lin = LinearizedOperator(state, basis, pot)
    state.cache["linearized"] = lin
    err_load = _error_load(state, pot)
    q = quadrature(state.mesh)
    phi = np.zeros(state.mesh.n_nodes)
    steps, ratios = [], []
    krylov = 0
    first = None
    for it in range(1, max_iter + 1):
        if it == 1:
            load = err_load
        else:
            ph = q.interp(state.mesh, phi)
            load = err_load + load_from_qp(state.mesh, pot * (np.expm1(ph) - ph))
        rhs = istar_load(op, load).values
        new, k = lin.solve(basis.project_perp(rhs))
        krylov += k
        step = energy_norm(op, new - phi)
        if first is None:
            first = energy_norm(op, new)
        if steps:
            ratios.append(step / steps[-1] if steps[-1] > 0 else 0.0)
        steps.append(step)
        phi = new
        norm = energy_norm(op, phi)
        if step <= tol * max(norm, 1e-300):
            break
        if len(ratios) >= 2 and ratios[-1] >= 1 and ratios[-2] >= 1:
            raise NumericalFailure(f"fixed-point map is not contracting (ratio {ratios[-1]:.3f}); "
                                   "epsilon too large or mesh too coarse")
    else:
        raise NumericalFailure(f"fixed point not reached in {max_iter} iterations")
    contraction = _contraction(steps, ratios, tol)
    u = state.sum_field().values + phi
    lam = nonlinear_mass(state, phi)
    eps = state.epsilon
    radius = energy_norm(op, phi) / (eps ** ((2 - p) / p) * abs(math.log(eps)))
    coeffs = finite_dim_coefficients(state, basis, phi)
    ortho = max(abs(basis.AZ[:, c] @ phi) / max(energy_norm(op, phi) * math.sqrt(basis.gram[c, c]), 1e-300)
                for c in range(basis.dim)) if basis.dim else 0.0
    return ReductionResult(Field(state.mesh, phi, True), energy_norm(op, phi), coeffs, it, contraction, ratios,
                           steps, first, lam, Field(state.mesh, u, True), radius, p, krylov, ortho)


def _contraction(steps: list[float], ratios: list[float], tol: float) -> float:
    """Largest of the last two step ratios whose step is above the roundoff floor.

    Taking two ratios keeps period-two oscillation from hiding a poor contraction.
    """
    if not ratios:
        return 0.0
    floor = max(1e-6 * steps[0], 1e-3 * tol)
    usable = [r for r, s in zip(ratios, steps[1:]) if s > floor]
    return max(usable[-2:]) if usable else ratios[0]


def nonlinear_mass(state: AnsatzState, phi: np.ndarray | None = None, test=None) -> float:
    """``eps^2 int V e^(W + phi) Psi dv_g`` (``Psi = 1`` by default)."""
    pot = state.nonlinearity_qp(phi)
    q = quadrature(state.mesh)
    if test is not None:
        pot = pot * np.asarray(test(q.points.reshape(-1, 2)), dtype=float).reshape(pot.shape)
    return float(np.sum(pot * q.w_metric))


def full_residual(state: AnsatzState, phi: np.ndarray) -> np.ndarray:
    """``u - i*(eps^2 V e^u)`` for ``u = W + phi`` as a nodal vector."""
    u = state.sum_field().values + phi
    load = load_from_qp(state.mesh, state.nonlinearity_qp(phi))
    return u - istar_load(state.op, load).values


def finite_dim_coefficients(state: AnsatzState, basis: KernelBasis, phi: np.ndarray) -> dict[tuple[int, int], float]:
    """Coefficients of ``u - i*(eps^2 V e^u)`` on the kernel basis."""
    c = basis.coefficients(full_residual(state, phi))
    return {k: float(v) for k, v in zip(basis.keys, c)}


# ---------------------------------------------------------------- energies

def energy(state: AnsatzState, u) -> float:
    """``E(u) = 1/2 <u, u> - eps^2 int V e^u dv_g`` for a nodal field ``u``."""
    vals = u.values if isinstance(u, Field) else np.asarray(u, dtype=float)
    q = quadrature(state.mesh)
    uq = q.interp(state.mesh, vals)
    if np.max(uq) > 60:
        raise NumericalFailure("exponent exceeds the clamp in the energy")
    mass = state.epsilon**2 * float(np.sum(state.weight_at_quadrature() * np.exp(uq) * q.w_metric))
    return 0.5 * state.op.energy(vals) - mass


def reduced_energy(state: AnsatzState, phi) -> float:
    """``E(sum PU + phi)`` with the bubble profiles integrated exactly at quadrature points."""
    vals = phi.values if isinstance(phi, Field) else np.asarray(phi, dtype=float)
    W = state.sum_field().values
    quad = 0.5 * state.op.energy(W + vals)
    return quad - nonlinear_mass(state, vals)


def expansion_constant(m: int) -> float:
    """Limit of ``E + 8 pi m log eps + F/2``."""
    return 4.0 * math.pi * m * (3.0 * math.log(2.0) - 2.0)


# ---------------------------------------------------------------- assembly

@dataclass
class Solution:
    u: Field
    lam: float
    weak_residual: float
    coefficients: dict[tuple[int, int], float]
    concentration: dict[str, tuple[float, float]] = field(default_factory=dict)


def random_test_fields(op: EllipticOperator, count: int, seed: int) -> np.ndarray:
    """Seeded nodal noise smoothed by one elliptic solve; columns are mean-zero fields."""
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((op.mesh.n_nodes, count))
    u, _ = op.solve_load(op.mass @ noise, np.zeros(count))
    return u


def weak_residual(state: AnsatzState, phi: np.ndarray, tests: np.ndarray) -> float:
    """``max_v |<u, v> - int (eps^2 V e^u - mean) v| / (|u| |v|)`` over the test columns."""
    op = state.op
    u = state.sum_field().values + phi
    load = load_from_qp(state.mesh, state.nonlinearity_qp(phi))
    load = load - (load.sum() / op.volume) * op.ones_load
    r = tests.T @ (op.matrix @ u - load)
    norms = np.sqrt(np.maximum(np.einsum("ij,ij->j", tests, op.matrix @ tests), 1e-300))
    return float(np.max(np.abs(r) / (norms * energy_norm(op, u))))


def assemble_solution(state: AnsatzState, result: ReductionResult, n_tests: int = 20, seed: int = 0,
                      tests: dict[str, Callable] | None = None) -> Solution:
    """``u = sum PU + phi``, ``lambda = eps^2 int V e^u``, weak residual and concentration integrals.

    ``tests`` maps names to functions ``Psi``; each entry records
    ``(eps^2 int V e^u Psi, sum rho_i Psi(xi_i))``.
    """
    phi = result.phi.values
    fields = random_test_fields(state.op, n_tests, seed)
    res = weak_residual(state, phi, fields)
    conc = {}
    for name, fn in (tests or {}).items():
        got = nonlinear_mass(state, phi, fn)
        target = float(np.sum(state.rhos * np.asarray(fn(state.points), dtype=float)))
        conc[name] = (got, target)
    return Solution(result.u_field, result.lam, res, result.coefficients, conc)
