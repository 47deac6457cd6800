"""Experiment configuration: JSON in, validated dataclass out.

Validation errors carry the path of the offending field, e.g.
``tail.gamma: upper tail needs gamma > E[x] ...``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .asymptotics import Direction, TailSpec, Variant
from .models import Hypothesis, StatModel, model_from_config
from .network import (
    CombinationMatrix,
    Topology,
    build_combination,
    full,
    load_topology,
    path,
    reference_topology,
    ring,
    star,
)

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "build_topology"]

GENERATORS = {"ring": ring, "path": path, "star": star, "full": full}
RULES = ("metropolis", "uniform_averaging", "explicit")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message starts with the field path."""


@dataclass
class ExperimentConfig:
    topology: Topology
    combination: str
    model: StatModel
    tail: TailSpec
    mu_grid: list[float]
    agents: list[int]
    matrix: list | None = None
    compare_rules: tuple[str, str] = ("metropolis", "uniform_averaging")
    samples: int = 100_000
    estimators: tuple[str, ...] = ("mc", "is")
    seed: int | None = None
    trunc_tol: float = 1e-12
    variant: Variant = Variant.REFINED
    workers: int = 1
    raw: dict = field(default_factory=dict, repr=False)

    def combination_matrix(self, rule: str | None = None) -> CombinationMatrix:
        rule = rule or self.combination
        return build_combination(rule, self.topology, self.matrix if rule == "explicit" else None)


def _fail(where: str, msg: str):
    raise ConfigError(f"{where}: {msg}")


def build_topology(spec, base_dir: Path | None = None) -> Topology:
    if isinstance(spec, str):
        spec = {"file": spec}
    if not isinstance(spec, dict):
        _fail("topology", "must be an object")
    try:
        if "file" in spec:
            p = Path(spec["file"])
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            return load_topology(p)
        if "generator" in spec:
            gen = spec["generator"]
            if gen == "reference":
                return reference_topology()
            if gen not in GENERATORS:
                _fail("topology.generator", f"unknown generator {gen!r}; expected one of "
                      f"{sorted([*GENERATORS, 'reference'])}")
            if "S" not in spec:
                _fail("topology.S", "required for generator topologies")
            return GENERATORS[gen](int(spec["S"]))
        if "edges" in spec or "S" in spec:
            return load_topology(spec)
    except ConfigError:
        raise
    except (OSError, ValueError, TypeError) as exc:
        _fail("topology", str(exc))
    _fail("topology", "expected one of 'file', 'generator' or 'S'/'edges'")


def _rule(spec, where: str) -> tuple[str, list | None]:
    if isinstance(spec, str):
        spec = {"rule": spec}
    if not isinstance(spec, dict) or "rule" not in spec:
        _fail(where, "must be a rule name or an object with 'rule'")
    rule = spec["rule"]
    if rule not in RULES:
        _fail(f"{where}.rule", f"unknown rule {rule!r}; expected one of {list(RULES)}")
    matrix = spec.get("matrix")
    if rule == "explicit" and matrix is None:
        _fail(f"{where}.matrix", "required for the explicit rule")
    return rule, matrix


def parse_config(data: dict, base_dir: Path | None = None) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a JSON object")
    for key in ("topology", "model", "tail", "mu_grid"):
        if key not in data:
            _fail(key, "missing required field")

    topology = build_topology(data["topology"], base_dir)
    combination, matrix = _rule(data.get("combination", "metropolis"), "combination")

    try:
        model = model_from_config(data["model"])
    except (KeyError, TypeError, ValueError) as exc:
        _fail("model", str(exc))

    try:
        hypothesis = Hypothesis.parse(data.get("hypothesis", "H0"))
    except ValueError as exc:
        _fail("hypothesis", str(exc))

    tail_spec = data["tail"]
    if isinstance(tail_spec, (int, float)):
        tail_spec = {"gamma": tail_spec}
    if not isinstance(tail_spec, dict) or "gamma" not in tail_spec:
        _fail("tail.gamma", "missing required field")
    try:
        gamma = float(tail_spec["gamma"])
    except (TypeError, ValueError):
        _fail("tail.gamma", f"must be a number, got {tail_spec['gamma']!r}")
    try:
        if "direction" in tail_spec:
            tail = TailSpec(gamma, Direction.parse(tail_spec["direction"]), hypothesis)
        else:
            tail = TailSpec.error_probability(gamma, hypothesis)
    except ValueError as exc:
        _fail("tail.direction", str(exc))
    try:
        tail.validate(model)
    except ValueError as exc:
        _fail("tail.gamma", str(exc))

    mu_grid = data["mu_grid"]
    if not isinstance(mu_grid, list) or not mu_grid:
        _fail("mu_grid", "must be a non-empty list")
    try:
        mu_grid = [float(m) for m in mu_grid]
    except (TypeError, ValueError):
        _fail("mu_grid", "entries must be numbers")
    for i, m in enumerate(mu_grid):
        if not 0.0 < m < 1.0:
            _fail(f"mu_grid[{i}]", f"must lie in (0, 1), got {m!r}")
    for i in range(1, len(mu_grid)):
        if not mu_grid[i] < mu_grid[i - 1]:
            _fail(f"mu_grid[{i}]", "grid must be strictly descending")

    agents = data.get("agents", "all")
    if agents == "all":
        agents = list(range(topology.S))
    elif isinstance(agents, list) and agents:
        for i, a in enumerate(agents):
            if not isinstance(a, int) or not 0 <= a < topology.S:
                _fail(f"agents[{i}]", f"must be an agent index in [0, {topology.S}), got {a!r}")
    else:
        _fail("agents", "must be 'all' or a non-empty list of indices")

    compare = data.get("compare", {}).get("rules", ["metropolis", "uniform_averaging"])
    if not isinstance(compare, list) or len(compare) != 2:
        _fail("compare.rules", "must list exactly two combination rules")
    for i, r in enumerate(compare):
        if r not in RULES:
            _fail(f"compare.rules[{i}]", f"unknown rule {r!r}")

    samples = data.get("samples", 100_000)
    if not isinstance(samples, int) or samples < 100:
        _fail("samples", f"must be an integer >= 100, got {samples!r}")

    estimators = data.get("estimators", ["mc", "is"])
    if not isinstance(estimators, list) or not estimators or any(e not in ("mc", "is") for e in estimators):
        _fail("estimators", "must be a non-empty list drawn from ['mc', 'is']")

    seed = data.get("seed")
    if seed is not None and (not isinstance(seed, int) or not 0 <= seed < 2 ** 64):
        _fail("seed", f"must be an unsigned 64-bit integer, got {seed!r}")

    trunc_tol = data.get("trunc_tol", 1e-12)
    if not isinstance(trunc_tol, (int, float)) or not 0.0 < trunc_tol < 1.0 or math.isnan(trunc_tol):
        _fail("trunc_tol", f"must lie in (0, 1), got {trunc_tol!r}")

    try:
        variant = Variant.parse(data.get("correction", "refined"))
    except ValueError as exc:
        _fail("correction", str(exc))

    workers = data.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        _fail("workers", f"must be a positive integer, got {workers!r}")

    cfg = ExperimentConfig(
        topology=topology,
        combination=combination,
        matrix=matrix,
        model=model,
        tail=tail,
        mu_grid=mu_grid,
        agents=agents,
        compare_rules=tuple(compare),
        samples=samples,
        estimators=tuple(estimators),
        seed=seed,
        trunc_tol=float(trunc_tol),
        variant=variant,
        workers=workers,
        raw=data,
    )
    try:
        cfg.combination_matrix()
    except ValueError as exc:
        _fail("combination", str(exc))
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read and validate a JSON config; JSON syntax errors report line and column."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_config(data, base_dir=path.parent)

