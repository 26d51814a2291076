"""Scenario configuration: YAML schema, defaults and hypothesis validation.

A config file looks like::

    scenario: transport        # transport | mckendrick | finite_dim
    seed: 7
    dt: 0.015625               # 1/dt must be an integer
    horizon: 1.0
    p: 2
    q: 2
    alpha: 0.3
    ensemble: 200
    levels: 3
    picard: {tol: 1.0e-10, max_iter: 200, beta: null}
    params:                    # scenario-specific, see scenarios.py
      mu: 0.5
      f1: {expr: "0.5*sin(y)", lipschitz: 0.5}
    verify: {n_paths: 4, covariance_paths: 10000}

Every violated hypothesis raises ``HypothesisError`` with a message naming
the condition; malformed input raises ``SchemaError``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .problem import DelayProblem, lipschitz_constant
from .scenarios import (
    BUILDERS,
    ExpressionError,
    TruncationError,
    audit_lipschitz,
    build_problem,
    check_truncation,
    evaluate,
    scalar_map,
)
from .semigroups import ContractionError
from .solver import PicardConfig


class ConfigError(ValueError):
    pass


class SchemaError(ConfigError):
    pass


class HypothesisError(ConfigError):
    pass


@dataclass
class VerifyConfig:
    """Switches and sizes for the verify subcommand."""

    equivalence: bool = True
    lift: bool = True
    covariance: bool = True
    gamma: bool = True
    fault_injection: bool = False
    n_paths: int = 4
    eval_times: list = field(default_factory=lambda: [0.5, 1.0])
    covariance_paths: int = 10000
    covariance_dt: float | None = 2.0 ** -9
    covariance_probes: list = field(default_factory=lambda: [0.2, 0.4, 0.5, 0.7, 0.9])
    gamma_depth: int = 10
    gamma_mc: int = 2000
    gamma_time: float = 2.0
    weighted_depth: int = 6
    weighted_mc: int = 1000
    min_order: float = 0.4


@dataclass
class ScenarioConfig:
    scenario: str
    params: object
    dt: float = 2.0 ** -6
    horizon: float = 1.0
    p: float = 2.0
    q: float = 2.0
    alpha: float = 0.3
    seed: int = 0
    ensemble: int = 1
    levels: int = 3
    threads: int = 1
    picard: PicardConfig = field(default_factory=PicardConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    out: str = "out"

    def problem(self, dt: float | None = None) -> DelayProblem:
        return build_problem(self.scenario, self.params, self.dt if dt is None else dt, self.horizon, self.p, self.q)

    def level_dts(self, levels: int | None = None) -> list[float]:
        return [self.dt / 2 ** k for k in range(levels or self.levels)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("threads")  # affects speed only
        d.pop("out")
        return d

    def digest(self) -> str:
        """sha256 of the canonical JSON form (threads and output dir excluded)."""
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)


_TOP_LEVEL = {f.name for f in fields(ScenarioConfig)} - {"threads"}


def _coerce(value, default, key):
    """Coerce a YAML value to the type of the dataclass default."""
    if value is None:
        return None
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or float(value) != int(float(value)):
                raise TypeError
            return int(float(value))
        if isinstance(default, float):
            return float(value)
    except (TypeError, ValueError):
        raise SchemaError(f"{key}: expected {type(default).__name__}, got {value!r}") from None
    return value


def _fill(cls, data: dict | None, where: str):
    data = dict(data or {})
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise SchemaError(f"{where}: unknown keys {sorted(unknown)}; valid keys: {sorted(known)}")
    proto = cls()
    kw = {}
    for name, val in data.items():
        kw[name] = _coerce(val, getattr(proto, name), f"{where}.{name}")
    return cls(**kw)


def _scenario_params(scenario: str, data: dict | None):
    params_cls, _ = BUILDERS[scenario]
    return _fill(params_cls, data, "params")


def from_dict(raw: dict) -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise SchemaError("config must be a mapping")
    unknown = set(raw) - _TOP_LEVEL
    if unknown:
        raise SchemaError(f"unknown top-level keys {sorted(unknown)}; valid keys: {sorted(_TOP_LEVEL)}")
    scenario = raw.get("scenario")
    if scenario not in BUILDERS:
        raise SchemaError(f"unknown scenario {scenario!r}; valid scenarios: {', '.join(sorted(BUILDERS))}")
    proto = ScenarioConfig(scenario, None)
    kw = {"scenario": scenario, "params": _scenario_params(scenario, raw.get("params"))}
    for name in ("dt", "horizon", "p", "q", "alpha", "seed", "ensemble", "levels", "out"):
        if name in raw:
            kw[name] = _coerce(raw[name], getattr(proto, name), name)
    kw["picard"] = _fill(PicardConfig, raw.get("picard"), "picard")
    kw["verify"] = _fill(VerifyConfig, raw.get("verify"), "verify")
    cfg = ScenarioConfig(**kw)
    validate(cfg)
    return cfg


def parse_config(path) -> ScenarioConfig:
    p = Path(path)
    if not p.is_file():
        raise SchemaError(f"config file {str(p)!r} does not exist")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise SchemaError(f"cannot parse {p}: {exc}") from None
    return from_dict(raw or {})


def default_config(scenario: str, **overrides) -> ScenarioConfig:
    raw = {"scenario": scenario}
    raw.update(overrides)
    return from_dict(raw)


def _check_map(spec, name: str):
    if not spec or spec.get("expr") in (None, 0, "0"):
        return
    if "lipschitz" not in spec or spec["lipschitz"] is None:
        raise HypothesisError(f"{name}: a Lipschitz constant must be declared")
    declared = float(spec["lipschitz"])
    if not np.isfinite(declared) or declared < 0:
        raise HypothesisError(f"{name}: Lipschitz constant must be finite and >= 0")
    try:
        measured = audit_lipschitz(scalar_map(spec))
    except ExpressionError as exc:
        raise SchemaError(f"{name}: {exc}") from None
    if measured > declared * (1 + 1e-6) + 1e-12:
        raise HypothesisError(
            f"{name}: declared Lipschitz constant {declared:g} is below the measured {measured:g}"
        )


def validate(cfg: ScenarioConfig) -> DelayProblem:
    """Check the hypothesis list for the scenario and return the built problem."""
    if not cfg.dt > 0 or abs(1.0 / cfg.dt - round(1.0 / cfg.dt)) > 1e-9:
        raise SchemaError("dt must be positive with 1/dt an integer (history grid = time grid)")
    if cfg.p < 1 or cfg.q < 1:
        raise HypothesisError("p and q must be >= 1")
    if not 0 < cfg.alpha < 0.5:
        raise HypothesisError("alpha must lie in (0, 1/2) for the factorization weight")
    if cfg.levels < 1 or cfg.ensemble < 1:
        raise SchemaError("levels and ensemble must be >= 1")
    pr = cfg.params
    for name in ("f1", "f2"):
        _check_map(getattr(pr, name, None), name)
    try:
        problem = cfg.problem()
    except ContractionError as exc:
        raise HypothesisError(f"w <= sup|b_mu|: contraction condition of the renewal equation fails ({exc})") from None
    except ExpressionError as exc:
        raise HypothesisError(str(exc)) from None
    except ValueError as exc:
        raise SchemaError(str(exc)) from None
    L = lipschitz_constant(problem)
    if not np.isfinite(L):
        raise HypothesisError("drift Lipschitz constant is not finite (kernels must lie in the mixed L^{p'} norm)")
    if cfg.scenario == "mckendrick":
        _validate_mckendrick(cfg, problem)
    return problem


def _validate_mckendrick(cfg: ScenarioConfig, problem: DelayProblem):
    pr = cfg.params
    if not 0 < pr.support <= pr.truncation_length:
        raise HypothesisError("sigma support [0, d] must lie inside the truncated half-line")
    a = np.linspace(0.0, pr.support, 20001)
    sig = evaluate(pr.sigma, a=a)
    if not np.all(np.isfinite(sig)):
        raise HypothesisError("sigma must be square-integrable on [0, d] (non-finite values found)")
    try:
        check_truncation(problem, pr.escape_tol)
    except TruncationError as exc:
        raise HypothesisError(str(exc)) from None


__all__ = [
    "ConfigError", "HypothesisError", "ScenarioConfig", "SchemaError", "VerifyConfig",
    "default_config", "from_dict", "parse_config", "validate",
]
