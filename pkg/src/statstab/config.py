"""Strict JSON run configuration.

Every section is a dataclass; unknown keys and wrong types are rejected and
every omitted key takes the default listed in the README.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace

from .errors import AlphaConstraintViolated, ParseError, SchemaError
from .hypotheses import DEFAULT_HYPOTHESES, HypothesisSet, default_hypotheses
from .maps import FAMILIES, make_builtin_family
from .pipeline import InducingSetup
from .stability import DensityBudget


@dataclass(frozen=True)
class PartitionSection:
    r_max: int | None = None


@dataclass(frozen=True)
class ExperimentSection:
    param: str = "a"
    a0: float | None = None  # defaults to the family's default value of ``param``
    eps: float = 0.02
    scales: int = 7
    offsets: tuple | None = None  # explicit offsets override eps/scales
    radius: float = 0.01
    n_points: int = 5
    N_levels: int = 10
    gap: float = 1e-3  # level-set overlap: compare a0 with a0 + gap
    n_clouds: int = 5
    hypotheses_horizon: int = 10_000
    distance_to: dict | None = None  # params of the second map for `distance`


@dataclass(frozen=True)
class RunConfig:
    family: str = "chebyshev"
    params: dict = field(default_factory=dict)
    hypotheses: dict = field(default_factory=dict)  # overrides of the family's default constants
    partition: PartitionSection = PartitionSection()
    inducing: InducingSetup = InducingSetup()
    measure: DensityBudget = DensityBudget()
    experiment: ExperimentSection = ExperimentSection()
    seed: int = 0
    workers: int = 1
    output_dir: str | None = None  # falls back to $STATSTAB_OUT, then ./out

    @property
    def hyp(self) -> HypothesisSet:
        base = asdict(default_hypotheses(self.family))
        base.update(self.hypotheses)
        return HypothesisSet(**base)

    def build_map(self):
        return make_builtin_family(self.family, self.params)

    def setup(self) -> InducingSetup:
        s = self.inducing
        if self.partition.r_max is not None and s.r_max is None:
            s = replace(s, r_max=self.partition.r_max)
        return replace(s, seed=self.seed)

    def budget(self) -> DensityBudget:
        return replace(self.measure, seed=self.seed, workers=self.workers)

    def to_json(self):
        return asdict(self)


SECTIONS = {"partition": PartitionSection, "inducing": InducingSetup, "measure": DensityBudget,
            "experiment": ExperimentSection}


def _check_type(path, value, default):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, dict):
        ok = isinstance(value, dict)
    else:
        ok = True
    if not ok:
        raise SchemaError(f"{path}: expected {type(default).__name__}, got {type(value).__name__}",
                          operation="load_config", field=path)
    return value


def _section(cls, data, path):
    if not isinstance(data, dict):
        raise SchemaError(f"{path}: expected an object", operation="load_config", field=path)
    names = {f.name for f in fields(cls)}
    for key in data:
        if key not in names:
            raise SchemaError(f"unknown key {key!r} in {path}", operation="load_config", field=f"{path}.{key}")
    defaults = cls()
    kw = {}
    for key, value in data.items():
        d = getattr(defaults, key)
        if key == "offsets" and value is not None:
            if not isinstance(value, list) or not all(isinstance(v, (int, float)) for v in value):
                raise SchemaError(f"{path}.offsets: expected a list of numbers", operation="load_config",
                                  field=f"{path}.offsets")
            value = tuple(float(v) for v in value)
        elif key in ("w_min", "r_max", "a0") and value is not None:
            want = int if key == "r_max" else float
            if not isinstance(value, (int, float)) or isinstance(value, bool) or (want is int and not isinstance(value, int)):
                raise SchemaError(f"{path}.{key}: expected {want.__name__}", operation="load_config",
                                  field=f"{path}.{key}")
            value = want(value)
        else:
            value = _check_type(f"{path}.{key}", value, d)
        kw[key] = value
    return cls(**kw)


def _no_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise SchemaError(f"duplicate key {k!r}", operation="load_config", field=k)
        out[k] = v
    return out


def parse_config(text: str, source="<string>") -> RunConfig:
    try:
        data = json.loads(text, object_pairs_hook=_no_duplicates)
    except json.JSONDecodeError as e:
        raise ParseError(f"{source}:{e.lineno}:{e.colno}: {e.msg}", operation="load_config",
                         line=e.lineno, column=e.colno) from None
    return config_from_dict(data)


def config_from_dict(data) -> RunConfig:
    if not isinstance(data, dict):
        raise SchemaError("top level must be an object", operation="load_config", field="")
    names = {f.name for f in fields(RunConfig)}
    for key in data:
        if key not in names:
            raise SchemaError(f"unknown key {key!r}", operation="load_config", field=key)
    defaults = RunConfig()
    kw = {}
    for key, value in data.items():
        if key in SECTIONS:
            kw[key] = _section(SECTIONS[key], value, key)
        elif key == "output_dir":
            if value is not None and not isinstance(value, str):
                raise SchemaError("output_dir: expected str", operation="load_config", field="output_dir")
            kw[key] = value
        else:
            kw[key] = _check_type(key, value, getattr(defaults, key))
    cfg = RunConfig(**kw)
    if cfg.family not in FAMILIES:
        raise SchemaError(f"family {cfg.family!r} is not registered; known: {sorted(FAMILIES)}",
                          operation="load_config", field="family")
    unknown = set(cfg.params) - set(FAMILIES[cfg.family].defaults)
    if unknown:
        raise SchemaError(f"unknown parameters {sorted(unknown)} for {cfg.family}", operation="load_config",
                          field="params")
    hyp_keys = set(DEFAULT_HYPOTHESES["chebyshev"])
    bad = set(cfg.hypotheses) - hyp_keys
    if bad:
        raise SchemaError(f"unknown hypothesis constants {sorted(bad)}", operation="load_config", field="hypotheses")
    hyp = cfg.hyp
    if not hyp.alpha < hyp.alpha_bound:
        raise AlphaConstraintViolated(
            f"alpha = {hyp.alpha} must be below lam / (5 ell_hat) = {hyp.alpha_bound}", operation="load_config",
            alpha=hyp.alpha, bound=hyp.alpha_bound)
    if cfg.workers < 1:
        raise SchemaError("workers must be at least 1", operation="load_config", field="workers")
    if cfg.inducing.rule not in ("central", "largest"):
        raise SchemaError("inducing.rule must be 'central' or 'largest'", operation="load_config",
                          field="inducing.rule")
    if cfg.inducing.mode not in ("exact", "sampled"):
        raise SchemaError("inducing.mode must be 'exact' or 'sampled'", operation="load_config",
                          field="inducing.mode")
    if cfg.inducing.depth_rule not in ("min", "max"):
        raise SchemaError("inducing.depth_rule must be 'min' or 'max'", operation="load_config",
                          field="inducing.depth_rule")
    if cfg.measure.method not in ("ulam", "birkhoff", "tower"):
        raise SchemaError("measure.method must be ulam, birkhoff or tower", operation="load_config",
                          field="measure.method")
    return cfg


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, os.fspath(path))


def default_output_dir():
    return os.environ.get("STATSTAB_OUT", "out")


def a0_of(cfg: RunConfig) -> float:
    e = cfg.experiment
    if e.a0 is not None:
        return e.a0
    full = {**FAMILIES[cfg.family].defaults, **cfg.params}
    if e.param not in full:
        raise SchemaError(f"family {cfg.family} has no parameter {e.param!r}", operation="load_config",
                          field="experiment.param")
    return float(full[e.param])


def offsets_of(cfg: RunConfig):
    from .stability import dyadic_offsets

    e = cfg.experiment
    return list(e.offsets) if e.offsets is not None else dyadic_offsets(e.eps, e.scales)


