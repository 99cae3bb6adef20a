"""Blow-up solutions of the stationary Keller-Segel Neumann problem on planar domains.

Finite elements for the Neumann Green's function, projected Liouville
bubbles, the reduced functional over blow-up locations, the
Lyapunov-Schmidt fixed point and an epsilon-sweep verification harness.
"""
from .ansatz import AnsatzState, Bubble, build_ansatz, cutoff, scaling_tau, unit_weight
from .config import RunConfig
from .errors import NumericalFailure, ValidationError
from .fem import EllipticOperator, Field, assemble, inner, integrate, solve_zero_mean
from .geometry import DomainSpec, Mesh, RefinementPlan, boundary_point, generate_mesh, locate
from .green import GreenCache, disk_oracle_green, gamma_part, grad_green, green_eval, regular_part
from .reduced import (Configuration, Weight, build_singular_weight, find_critical, reduced_functional,
                      reduced_gradient)
from .reduction import assemble_solution, istar, kernel_basis, solve_phi_fixed_point
from .verify import SweepReport, rate_fit, spectral_probe, sweep

__version__ = "0.1.0"
