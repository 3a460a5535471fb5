"""Glue from a map and a few budget knobs to partition, binding table and induced data."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

from .hypotheses import HypothesisSet, default_hypotheses
from .inducing import InducedMap, ReturnFinderParams, build_induced_map
from .maps import IntervalMap
from .partition import BindingTable, CriticalPartition, binding_table, build_critical_partition
from .tracer import TraceResult, trace_points, uniform_points


@dataclass(frozen=True)
class InducingSetup:
    delta_star: float = math.exp(-3)
    t_star: int = 12
    sidedness: str = "two"
    rule: str = "central"
    N_max: int = 200
    w_min: float | None = None
    r_max: int | None = None
    depth_rule: str = "min"
    branch_cap: int = 10**6
    piece_cap: int = 200_000
    samples: int = 4000  # sampled mode: points followed through the construction
    seed: int = 0
    mode: str = "sampled"  # "exact" enumerates branches, "sampled" follows points

    def params(self) -> ReturnFinderParams:
        return ReturnFinderParams(self.delta_star, self.t_star, self.sidedness, rule=self.rule)

    def to_json(self):
        return asdict(self)


@dataclass
class Prepared:
    m: IntervalMap
    hyp: HypothesisSet
    partition: CriticalPartition
    binding: BindingTable
    setup: InducingSetup


def prepare(m: IntervalMap, setup: InducingSetup, hyp: HypothesisSet | None = None) -> Prepared:
    hyp = hyp or default_hypotheses(m.family)
    part = build_critical_partition(m, hyp, r_max=setup.r_max)
    return Prepared(m, hyp, part, binding_table(m, part, hyp), setup)


def induce_exact(prep: Prepared, N_max=None) -> InducedMap:
    s = prep.setup
    return build_induced_map(prep.m, prep.partition, prep.binding, s.params(),
                             N_max=s.N_max if N_max is None else N_max, w_min=s.w_min,
                             branch_cap=s.branch_cap, depth_rule=s.depth_rule, piece_cap=s.piece_cap)


def induce_sampled(prep: Prepared, samples=None, seed=None) -> TraceResult:
    s = prep.setup
    params = s.params()
    x = uniform_points(params.interval(prep.m), s.samples if samples is None else samples,
                       s.seed if seed is None else seed)
    return trace_points(prep.m, prep.partition, prep.binding, params, x, N_max=s.N_max, depth_rule=s.depth_rule)


def induce(prep: Prepared):
    """Dispatch on ``setup.mode``."""
    if prep.setup.mode == "exact":
        return induce_exact(prep)
    if prep.setup.mode == "sampled":
        return induce_sampled(prep)
    raise ValueError(f"unknown inducing mode {prep.setup.mode!r}")


def with_delta(hyp: HypothesisSet, delta: float) -> HypothesisSet:
    return replace(hyp, delta=delta)
