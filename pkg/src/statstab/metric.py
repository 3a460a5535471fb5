"""Distance between maps whose discontinuities may sit at different places.

d(f, g) is the infimum of eta such that matched critical locations and orders
differ by less than eta and the C^2 distance away from the 2*eta
neighbourhoods of the critical points is also below eta.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import IncompatibleCriticalStructure, NoFiniteEta
from .maps import IntervalMap


@dataclass(frozen=True)
class MapDistanceReport:
    value: float
    achieved_eta: float
    location_term: float
    order_term: float
    c2_term: float  # sampled C^2 distance on I_eta at achieved_eta
    grid_resolution: int

    def to_json(self):
        return dict(self.__dict__)


class _C2Profile:
    """Pointwise C^0, C^1, C^2 deviations on a fixed grid, masked by eta."""

    def __init__(self, f: IntervalMap, g: IntervalMap, grid_n: int):
        a, b = f.domain
        self.x = np.linspace(a, b, grid_n)
        with np.errstate(all="ignore"):
            dev = np.maximum.reduce([
                np.abs(f.apply(self.x) - g.apply(self.x)),
                np.abs(f.apply_derivative(self.x) - g.apply_derivative(self.x)),
                np.abs(f.apply_second_derivative(self.x) - g.apply_second_derivative(self.x)),
            ])
        self.dev = np.where(np.isnan(dev), np.inf, dev)
        self.cf = f.critical_locations
        self.cg = g.critical_locations

    def sup(self, eta):
        if self.cf.size == 0:
            keep = np.ones(self.x.shape, bool)
        else:
            near_f = np.abs(self.x[:, None] - self.cf[None, :]) < 2 * eta
            near_g = np.abs(self.x[:, None] - self.cg[None, :]) < 2 * eta
            keep = ~np.any(near_f & near_g, axis=1)
        return float(self.dev[keep].max()) if np.any(keep) else 0.0


def map_distance(f: IntervalMap, g: IntervalMap, grid_n: int = 4096, rtol: float = 1e-3) -> MapDistanceReport:
    if grid_n < 64:
        raise ValueError("grid_n must be >= 64")
    if tuple(f.domain) != tuple(g.domain):
        raise IncompatibleCriticalStructure("maps live on different domains", operation="map_distance")
    sf, sg = f.ordered_specs(), g.ordered_specs()
    if len(sf) != len(sg) or len(f.critical_locations) != len(g.critical_locations):
        raise IncompatibleCriticalStructure(
            f"critical counts differ: {len(sf)} vs {len(sg)}", operation="map_distance")
    if any(p.side != q.side for p, q in zip(sf, sg)):
        raise IncompatibleCriticalStructure("one-sided structure differs", operation="map_distance")
    loc = max((abs(p.location - q.location) for p, q in zip(sf, sg)), default=0.0)
    order = max((abs(p.order - q.order) for p, q in zip(sf, sg)), default=0.0)
    prof = _C2Profile(f, g, grid_n)

    def holds(eta):
        return loc < eta and order < eta and prof.sup(eta) < eta

    hi = 0.5 * f.length
    if not holds(hi):
        raise NoFiniteEta(f"conditions fail up to eta = {hi}", operation="map_distance")
    lo = 0.0
    while hi - lo > max(rtol * hi, 1e-14):
        mid = 0.5 * (lo + hi)
        if holds(mid):
            hi = mid
        else:
            lo = mid
    # the infimum lies in [max(lo, F(hi)), hi] where F is the largest term at hi
    floor = max(lo, loc, order, prof.sup(hi))
    value = hi
    if floor == 0.0:
        value = 0.0
    elif holds(floor * (1 + 1e-12)):
        value = floor
    return MapDistanceReport(value, hi, loc, order, prof.sup(hi), grid_n)
