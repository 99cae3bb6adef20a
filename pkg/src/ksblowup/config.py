"""Run configuration: a JSON document plus command-line overrides."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ValidationError
from .expr import parse_expression
from .geometry import SHAPES, DomainSpec
from .reduced import Configuration, Weight, build_singular_weight, default_delta

DEFAULT_EPSILONS = (0.1, 0.07, 0.05, 0.035)


@dataclass
class RunConfig:
    domain: dict = field(default_factory=lambda: {"shape": "unit_disk"})
    target_h: float = 0.05
    conformal: str | None = None
    weight: str = "1"
    singular: list = field(default_factory=list)
    beta: float = 0.0
    k: int = 1
    l: int = 0
    interior: list | None = None
    boundary_s: list | None = None
    epsilons: list = field(default_factory=lambda: list(DEFAULT_EPSILONS))
    p: float = 1.1
    delta: float | None = None
    seed: int = 0
    resolution: int = 20
    output: str = "out"

    # ------------------------------------------------------------ parsing

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**data)
        cfg.normalize()
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ValidationError("config must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def with_overrides(self, **changes) -> "RunConfig":
        data = self.to_dict()
        data.update({k: v for k, v in changes.items() if v is not None})
        return RunConfig.from_dict(data)

    def normalize(self) -> None:
        self.domain = dict(self.domain)
        self.target_h = float(self.target_h)
        self.beta = float(self.beta)
        self.k, self.l, self.seed, self.resolution = int(self.k), int(self.l), int(self.seed), int(self.resolution)
        self.epsilons = sorted((float(e) for e in self.epsilons), reverse=True)
        self.p = float(self.p)
        if self.delta is not None:
            self.delta = float(self.delta)
        if self.interior is not None:
            self.interior = [[float(a), float(b)] for a, b in self.interior]
        if self.boundary_s is not None:
            self.boundary_s = [float(s) for s in self.boundary_s]
        self.singular = [{"q": [float(s["q"][0]), float(s["q"][1])], "n": int(s["n"])} for s in self.singular]

    def validate(self) -> None:
        if self.k < 0 or self.l < 0 or 2 * self.k + self.l < 1:
            raise ValidationError(f"need k, l >= 0 and 2k + l >= 1 (got k={self.k}, l={self.l})")
        if not self.beta >= 0:
            raise ValidationError("beta must be nonnegative")
        if not 1.0 < self.p < 1.2:
            raise ValidationError("p must lie in (1, 6/5)")
        if any(not (0 < e < 1) for e in self.epsilons):
            raise ValidationError("epsilons must lie in (0, 1)")
        if len(set(self.epsilons)) != len(self.epsilons):
            raise ValidationError("epsilons must be distinct")
        if self.interior is not None and len(self.interior) != self.k:
            raise ValidationError(f"{len(self.interior)} interior points given for k={self.k}")
        if self.boundary_s is not None and len(self.boundary_s) != self.l:
            raise ValidationError(f"{len(self.boundary_s)} boundary parameters given for l={self.l}")
        if self.resolution < 4:
            raise ValidationError("resolution must be at least 4")
        if any(s["n"] < 1 for s in self.singular):
            raise ValidationError("singular multiplicities must be positive")
        self.domain_spec().validate()
        parse_expression(self.weight)
        if self.conformal is not None:
            parse_expression(self.conformal)

    # ------------------------------------------------------------ derived objects

    def domain_spec(self) -> DomainSpec:
        d = dict(self.domain)
        shape = d.pop("shape", None)
        if shape not in SHAPES:
            raise ValidationError(f"unknown shape {shape!r}")
        conformal = parse_expression(self.conformal) if self.conformal else None
        kw = {"target_h": self.target_h, "conformal_factor": conformal}
        try:
            if shape == "unit_disk":
                spec = DomainSpec.unit_disk(**kw)
            elif shape == "rectangle":
                spec = DomainSpec.rectangle(float(d.get("width", 1.0)), float(d.get("height", 1.0)), **kw)
            elif shape == "annulus":
                spec = DomainSpec.annulus(float(d["r_in"]), float(d["r_out"]), **kw)
            else:
                spec = DomainSpec.polygon(d["vertices"], **kw)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad domain parameters: {exc}") from None
        spec.validate()
        return spec

    def configuration(self) -> Configuration:
        spec = self.domain_spec()
        interior = self.interior if self.interior is not None else default_interior(spec, self.k)
        boundary = self.boundary_s if self.boundary_s is not None else [
            spec.boundary_length * (j + 0.25) / self.l for j in range(self.l)]
        delta = self.delta if self.delta is not None else default_delta(spec)
        return Configuration(np.asarray(interior, dtype=float).reshape(-1, 2), np.asarray(boundary, dtype=float), delta)

    def base_weight(self):
        return parse_expression(self.weight)

    def weight_function(self, op=None):
        """``V`` as a callable; with singular points it needs an operator for the Green's functions."""
        base = self.base_weight()
        if not self.singular:
            return base
        if op is None:
            raise ValidationError("singular weights need an operator")
        w = Weight(base, [s["q"] for s in self.singular], [s["n"] for s in self.singular])
        return build_singular_weight(w, op)

    def plan(self) -> dict:
        """Resolved plan for ``--dry-run``."""
        spec = self.domain_spec()
        cfg = self.configuration()
        return {
            "domain": spec.shape,
            "area": spec.area,
            "boundary_length": spec.boundary_length,
            "k": self.k,
            "l": self.l,
            "m": 2 * self.k + self.l,
            "points": cfg.points(spec).tolist(),
            "delta": cfg.delta,
            "violations": cfg.violations(spec),
            "epsilons": self.epsilons,
            "lambda_target": 4 * math.pi * (2 * self.k + self.l),
            "weight": self.weight,
            "singular": self.singular,
            "beta": self.beta,
            "output": self.output,
        }


def default_interior(spec: DomainSpec, k: int) -> list:
    """``k`` points on a ring around the middle of the domain."""
    if k == 0:
        return []
    if spec.shape == "unit_disk":
        c, r = np.zeros(2), 0.3
    elif spec.shape == "annulus":
        c, r = np.zeros(2), 0.5 * (spec.r_in + spec.r_out)
    else:
        v = spec.polygon_vertices
        c = v.mean(axis=0)
        r = 0.15 * spec.diameter
    ang = 0.3 + 2 * math.pi * np.arange(k) / k
    pts = c + r * np.column_stack([np.cos(ang), np.sin(ang)])
    return pts.tolist()
