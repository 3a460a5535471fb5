"""Piecewise-smooth interval maps with one-sided critical and singular points.

A map is a tuple of monotone branches tiling the domain. Branch boundaries are
exactly the critical locations; each location carries two one-sided
:class:`CriticalPointSpec` entries (``left`` governs ``(c - r, c)``, ``right``
governs ``(c, c + r)``), so the two one-sided limits at a discontinuity are
treated as distinct points.

Branch evaluators are closed-form and vectorized. Arguments are clipped to the
branch closure before evaluation, so a branch can be evaluated at its own
boundary (giving the one-sided limit) and at points that drifted past the
boundary by rounding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from .errors import (
    AmbiguousSide,
    InfiniteDerivative,
    InversionFailure,
    NondegeneracyCheckFailed,
    OutOfDomain,
    ParamOutOfRange,
    UnknownFamily,
    ZeroDerivative,
)

LEFT, RIGHT = -1, +1

ArrayFn = Callable[[np.ndarray], np.ndarray]


def normalize_side(side):
    if side is None:
        return None
    if side in ("left", LEFT, "-"):
        return LEFT
    if side in ("right", RIGHT, "+"):
        return RIGHT
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


def side_name(side):
    return "left" if side == LEFT else "right"


@dataclass(frozen=True)
class CriticalPointSpec:
    location: float
    side: int  # LEFT or RIGHT: which one-sided neighbourhood this spec governs
    order: float
    nondegeneracy_constant: float = 10.0
    neighborhood_radius: float = 0.05

    @property
    def kind(self):
        return "critical" if self.order >= 1 else "singular"

    @property
    def is_critical(self):
        return self.order >= 1


@dataclass(frozen=True, eq=False)
class Branch:
    lo: float
    hi: float
    sign: int
    f: ArrayFn
    df: ArrayFn
    d2f: ArrayFn
    logdf: ArrayFn | None = None
    inv: ArrayFn | None = None

    def clip(self, x):
        return np.clip(x, self.lo, self.hi)

    def value(self, x):
        with np.errstate(all="ignore"):
            return self.f(self.clip(x))

    def derivative(self, x):
        with np.errstate(all="ignore"):
            return self.df(self.clip(x))

    def second_derivative(self, x):
        with np.errstate(all="ignore"):
            return self.d2f(self.clip(x))

    def log_abs_derivative(self, x):
        with np.errstate(all="ignore"):
            x = self.clip(x)
            if self.logdf is not None:
                return self.logdf(x)
            return np.log(np.abs(self.df(x)))

    @property
    def image(self):
        """Closed image interval (min, max) from the one-sided endpoint limits."""
        u = float(self.value(self.lo))
        v = float(self.value(self.hi))
        return (min(u, v), max(u, v))

    def inverse(self, y):
        """Preimage of ``y`` on this branch; NaN where ``y`` is outside the image."""
        y = np.asarray(y, dtype=float)
        lo_img, hi_img = self.image
        inside = (y >= lo_img) & (y <= hi_img)
        yc = np.clip(y, lo_img, hi_img)
        if self.inv is not None:
            with np.errstate(all="ignore"):
                x = np.clip(self.inv(yc), self.lo, self.hi)
        else:
            x = self._bisect(yc)
        return np.where(inside, x, np.nan)

    def _bisect(self, y, steps=200):
        a = np.full(y.shape, self.lo)
        b = np.full(y.shape, self.hi)
        fa = self.value(a) - y
        fb = self.value(b) - y
        if np.any(fa * fb > 0):
            raise InversionFailure("cannot bracket a preimage on a monotone branch",
                                   operation="inverse")
        for _ in range(steps):
            m = 0.5 * (a + b)
            fm = self.value(m) - y
            left = fa * fm <= 0
            b = np.where(left, m, b)
            a = np.where(left, a, m)
            fa = np.where(left, fa, fm)
            if np.all(b - a <= 0):
                break
        return 0.5 * (a + b)


@dataclass(frozen=True, eq=False)
class IntervalMap:
    domain: tuple[float, float]
    branches: tuple[Branch, ...]
    critical_points: tuple[CriticalPointSpec, ...]
    star_index: int | None = 0
    family: str = "custom"
    params: Mapping[str, float] = field(default_factory=dict)

    # --- structure -------------------------------------------------------
    @property
    def edges(self):
        return np.array([b.lo for b in self.branches] + [self.branches[-1].hi])

    @property
    def critical_locations(self):
        return np.array(sorted({c.location for c in self.critical_points}))

    @property
    def n_critical(self):
        return len(self.critical_points)

    @property
    def star(self):
        if self.star_index is None:
            return None
        return self.critical_points[self.star_index]

    @property
    def length(self):
        return self.domain[1] - self.domain[0]

    def ordered_specs(self):
        """Specs in the (location, side) order used to match points between maps."""
        return sorted(self.critical_points, key=lambda c: (c.location, c.side))

    def spec_at(self, location, side):
        for c in self.critical_points:
            if c.location == location and c.side == side:
                return c
        return None

    def branch_index(self, x, side=None):
        a, b = self.domain
        if not (a <= x <= b):
            raise OutOfDomain(f"x={x!r} outside {self.domain}", operation="eval")
        edges = self.edges
        n = len(self.branches)
        k = int(np.searchsorted(edges, x, side="right")) - 1
        if 0 < k < n and x == edges[k]:
            side = normalize_side(side)
            if side is None:
                raise AmbiguousSide(f"x={x!r} is a branch boundary; give side", operation="eval")
            return k - 1 if side == LEFT else k
        return min(max(k, 0), n - 1)

    # --- scalar evaluation -------------------------------------------------
    # 1-element arrays take the same pow kernel as the vectorized path; scalars can differ by an ulp
    def eval(self, x, side=None):
        k = self.branch_index(x, side)
        return float(self.branches[k].value(np.array([x], dtype=float))[0])

    __call__ = eval

    def derivative(self, x, side=None):
        k = self.branch_index(x, side)
        return float(self.branches[k].derivative(np.array([x], dtype=float))[0])

    def second_derivative(self, x, side=None):
        k = self.branch_index(x, side)
        return float(self.branches[k].second_derivative(np.array([x], dtype=float))[0])

    def log_abs_derivative(self, x, side=None):
        k = self.branch_index(x, side)
        if x in set(self.critical_locations.tolist()):
            s = normalize_side(side) if side is not None else None
            for c in self.critical_points:
                if c.location != x or (s is not None and c.side != s):
                    continue
                if c.order < 1:
                    raise InfiniteDerivative(f"singular point at {x}", operation="log_abs_derivative")
                if c.order > 1:
                    raise ZeroDerivative(f"critical point at {x}", operation="log_abs_derivative")
        return float(self.branches[k].log_abs_derivative(np.array([x], dtype=float))[0])

    def critical_distance(self, x):
        locs = self.critical_locations
        if locs.size == 0:
            return np.full(np.shape(x), np.inf) if np.ndim(x) else math.inf
        d = np.min(np.abs(np.asarray(x, dtype=float)[..., None] - locs), axis=-1)
        return float(d) if np.ndim(d) == 0 else d

    def in_delta(self, x, delta):
        return self.critical_distance(x) <= delta

    def in_delta_hat(self, x, delta):
        return self.critical_distance(x) < delta * math.e

    # --- vectorized evaluation (right-continuous at boundaries) ------------
    def locate(self, x):
        inner = self.edges[1:-1]
        return np.searchsorted(inner, x, side="right")

    def apply(self, x):
        return self._apply_method(x, "value")

    def _apply_method(self, x, method):
        x = np.asarray(x, dtype=float)
        k = self.locate(x)
        out = np.empty_like(x)
        for i, br in enumerate(self.branches):
            m = k == i
            if np.any(m):
                out[m] = getattr(br, method)(x[m])
        return out

    def apply_log_derivative(self, x):
        return self._apply_method(x, "log_abs_derivative")

    def apply_derivative(self, x):
        return self._apply_method(x, "derivative")

    def apply_second_derivative(self, x):
        return self._apply_method(x, "second_derivative")

    def apply_along(self, x, path):
        """Iterate ``x`` along a fixed sequence of branch indices."""
        x = np.asarray(x, dtype=float)
        for k in path:
            x = self.branches[k].value(x)
        return x

    def with_params(self, **changes):
        params = dict(self.params)
        params.update(changes)
        return make_builtin_family(self.family, params)

    # --- checks ---------------------------------------------------------------
    def nondegeneracy_ratios(self, spec, n=1024):
        """Sandwich ratios |f-f(c)|/|x-c|^l, |f'|/|x-c|^(l-1), |f''|/|x-c|^(l-2)."""
        c, l = spec.location, spec.order
        t = spec.neighborhood_radius * np.arange(1, n + 1) / n
        x = c + spec.side * t
        br = self.branches[self.branch_index(c, spec.side)]
        fc = br.value(c)
        r0 = np.abs(br.value(x) - fc) / t**l
        r1 = np.exp(br.log_abs_derivative(x) - (l - 1) * np.log(t))
        r2 = np.abs(br.second_derivative(x)) / t ** (l - 2)
        return r0, r1, r2

    def check_nondegeneracy(self, n=1024):
        for i, spec in enumerate(self.critical_points):
            C = spec.nondegeneracy_constant
            for name, r in zip(("f", "f'", "f''"), self.nondegeneracy_ratios(spec, n)):
                if not np.all((r >= 1.0 / C) & (r <= C)):
                    bad = np.flatnonzero(~((r >= 1.0 / C) & (r <= C)))[0]
                    raise NondegeneracyCheckFailed(
                        f"spec {i} at {spec.location} ({side_name(spec.side)}): ratio for {name} "
                        f"= {r[bad]:.4g} outside [1/{C}, {C}]",
                        operation="make_builtin_family", spec_index=i)

    def check_structure(self, n=257):
        a, b = self.domain
        tol = 1e-12 * self.length
        for k, br in enumerate(self.branches):
            x = np.linspace(br.lo, br.hi, n)
            y = br.value(x)
            if np.any(y < a - tol) or np.any(y > b + tol):
                raise ValueError(f"branch {k} leaves the domain")
            dy = np.diff(y)
            if np.any(dy * br.sign < -tol):
                raise ValueError(f"branch {k} is not monotone with sign {br.sign}")
        locs = set(self.critical_locations.tolist())
        inner = set(self.edges[1:-1].tolist())
        if not inner <= locs:
            raise ValueError("branch boundaries must be critical locations")


# ---------------------------------------------------------------------------
# builtin families
# ---------------------------------------------------------------------------

def _quadratic(a):
    def f(x):
        return 1.0 - a * x * x

    def df(x):
        return -2.0 * a * x

    def d2f(x):
        return np.full(np.shape(x), -2.0 * a)

    def logdf(x):
        return math.log(2.0 * a) + np.log(np.abs(x))

    left = Branch(-1.0, 0.0, +1, f, df, d2f, logdf, lambda y: -np.sqrt((1.0 - y) / a))
    right = Branch(0.0, 1.0, -1, f, df, d2f, logdf, lambda y: np.sqrt((1.0 - y) / a))
    C = 1.25 * max(2 * a, 1 / a, 2)
    specs = (
        CriticalPointSpec(0.0, LEFT, 2.0, C, 0.5),
        CriticalPointSpec(0.0, RIGHT, 2.0, C, 0.5),
    )
    return (-1.0, 1.0), (left, right), specs, 1


def _lorenz_singular(a, ell, s):
    wl, wr = 1.0 + s, 1.0 - s

    def f_r(x):
        return a * ((x - s) / wr) ** ell - 1.0

    def df_r(x):
        return a * ell / wr * ((x - s) / wr) ** (ell - 1)

    def d2f_r(x):
        return a * ell * (ell - 1) / wr**2 * ((x - s) / wr) ** (ell - 2)

    def logdf_r(x):
        return math.log(a * ell / wr) + (ell - 1) * np.log((x - s) / wr)

    def inv_r(y):
        return s + wr * ((y + 1.0) / a) ** (1.0 / ell)

    def f_l(x):
        return 1.0 - a * ((s - x) / wl) ** ell

    def df_l(x):
        return a * ell / wl * ((s - x) / wl) ** (ell - 1)

    def d2f_l(x):
        return -a * ell * (ell - 1) / wl**2 * ((s - x) / wl) ** (ell - 2)

    def logdf_l(x):
        return math.log(a * ell / wl) + (ell - 1) * np.log((s - x) / wl)

    def inv_l(y):
        return s - wl * ((1.0 - y) / a) ** (1.0 / ell)

    left = Branch(-1.0, s, +1, f_l, df_l, d2f_l, logdf_l, inv_l)
    right = Branch(s, 1.0, +1, f_r, df_r, d2f_r, logdf_r, inv_r)
    scale = a / min(wl, wr) ** ell
    C = 1.25 * max(scale, 1 / (a * ell * (1 - ell) / max(wl, wr) ** ell), 1 / (a * ell / max(wl, wr) ** ell))
    specs = (
        CriticalPointSpec(s, LEFT, ell, C, 0.5),
        CriticalPointSpec(s, RIGHT, ell, C, 0.5),
    )
    return (-1.0, 1.0), (left, right), specs, 1


def _lorenz_crit_sing(b, ell_s, ell_c):
    """x -> sign(x) * (1 - 4b |2|x|^ell_s - 1|^ell_c): four branches, singular at 0,
    critical at +-(1/2)^(1/ell_s)."""
    xc = 0.5 ** (1.0 / ell_s)
    k = 4.0 * b

    def g(t):
        w = 2.0 * t**ell_s - 1.0
        return 1.0 - k * np.abs(w) ** ell_c

    def dg(t):
        w = 2.0 * t**ell_s - 1.0
        return -k * ell_c * np.abs(w) ** (ell_c - 1) * np.sign(w) * 2.0 * ell_s * t ** (ell_s - 1)

    def d2g(t):
        w = 2.0 * t**ell_s - 1.0
        du = 2.0 * ell_s * t ** (ell_s - 1)
        ddu = 2.0 * ell_s * (ell_s - 1) * t ** (ell_s - 2)
        return -k * ell_c * ((ell_c - 1) * np.abs(w) ** (ell_c - 2) * du**2
                             + np.abs(w) ** (ell_c - 1) * np.sign(w) * ddu)

    def logdg(t):
        w = 2.0 * t**ell_s - 1.0
        return math.log(k * ell_c * 2.0 * ell_s) + (ell_c - 1) * np.log(np.abs(w)) + (ell_s - 1) * np.log(t)

    def ginv(y, sgn):
        aw = ((1.0 - y) / k) ** (1.0 / ell_c)
        u = (1.0 + sgn * aw) / 2.0
        return np.clip(u, 0.0, 1.0) ** (1.0 / ell_s)

    def pos(sgn_w):
        return (g, dg, d2g, logdg, lambda y: ginv(y, sgn_w))

    def neg(sgn_w):
        return (lambda x: -g(-x), lambda x: dg(-x), lambda x: -d2g(-x),
                lambda x: logdg(-x), lambda y: -ginv(-y, sgn_w))

    branches = (
        Branch(-1.0, -xc, -1, *neg(+1)),
        Branch(-xc, 0.0, +1, *neg(-1)),
        Branch(0.0, xc, +1, *pos(-1)),
        Branch(xc, 1.0, -1, *pos(+1)),
    )
    C = 40.0
    specs = (
        CriticalPointSpec(-xc, LEFT, ell_c, C, 0.02),
        CriticalPointSpec(-xc, RIGHT, ell_c, C, 0.02),
        CriticalPointSpec(0.0, LEFT, ell_s, C, 0.02),
        CriticalPointSpec(0.0, RIGHT, ell_s, C, 0.02),
        CriticalPointSpec(xc, LEFT, ell_c, C, 0.02),
        CriticalPointSpec(xc, RIGHT, ell_c, C, 0.02),
    )
    return (-1.0, 1.0), branches, specs, 3


def _affine(slopes_and_offsets, domain, breaks):
    branches = []
    for (lo, hi), (m, q) in zip(zip(breaks[:-1], breaks[1:]), slopes_and_offsets):
        branches.append(Branch(
            lo, hi, 1 if m > 0 else -1,
            lambda x, m=m, q=q: m * x + q,
            lambda x, m=m: np.full(np.shape(x), m),
            lambda x: np.zeros(np.shape(x)),
            lambda x, m=m: np.full(np.shape(x), math.log(abs(m))),
            lambda y, m=m, q=q: (y - q) / m,
        ))
    specs = []
    for c in breaks[1:-1]:
        specs += [CriticalPointSpec(c, LEFT, 1.0, 10.0, 0.01), CriticalPointSpec(c, RIGHT, 1.0, 10.0, 0.01)]
    return domain, tuple(branches), tuple(specs), (1 if specs else None)


def _affine_full(k):
    k = int(k)
    breaks = [i / k for i in range(k + 1)]
    return _affine([(float(k), -float(i)) for i in range(k)], (0.0, 1.0), breaks)


def _two_component():
    # slope 3 rather than 2: doubling in binary floating point collapses in ~53 steps
    breaks = [i / 6 for i in range(7)]
    breaks[0], breaks[3], breaks[6] = 0.0, 0.5, 1.0
    return _affine([(3.0, 0.0), (3.0, -0.5), (3.0, -1.0), (3.0, -1.0), (3.0, -1.5), (3.0, -2.0)],
                   (0.0, 1.0), breaks)


def _contraction():
    br = Branch(-1.0, 1.0, +1, lambda x: 0.5 * x, lambda x: np.full(np.shape(x), 0.5),
                lambda x: np.zeros(np.shape(x)), lambda x: np.full(np.shape(x), math.log(0.5)),
                lambda y: 2.0 * y)
    return (-1.0, 1.0), (br,), (), None


@dataclass(frozen=True)
class FamilyEntry:
    builder: Callable
    defaults: Mapping[str, float]
    box: Mapping[str, tuple[float, float]]
    validate: bool = True
    doc: str = ""


FAMILIES: dict[str, FamilyEntry] = {
    "chebyshev": FamilyEntry(lambda: _quadratic(2.0), {}, {}, doc="x -> 1 - 2x^2 on [-1, 1]"),
    "quadratic": FamilyEntry(_quadratic, {"a": 2.0}, {"a": (1.0, 2.0)}, doc="x -> 1 - a x^2"),
    "lorenz_singular": FamilyEntry(
        _lorenz_singular, {"a": 2.0, "ell": 0.75, "s": 0.0},
        {"a": (1.5, 2.0), "ell": (0.55, 0.95), "s": (-0.1, 0.1)},
        doc="x -> sign(x-s)(a |x-s|^ell - 1), each side rescaled to unit length"),
    "lorenz_crit_sing": FamilyEntry(
        _lorenz_crit_sing, {"b": 0.5, "ell_s": 0.6, "ell_c": 2.0},
        {"b": (0.4, 0.5), "ell_s": (0.5, 0.9), "ell_c": (1.5, 3.0)},
        doc="x -> sign(x)(1 - 4b | 2|x|^ell_s - 1 |^ell_c)"),
    # control fixtures: not in the non-degenerate class, never sandwich-checked
    "affine_full": FamilyEntry(_affine_full, {"k": 3}, {"k": (2, 16)}, validate=False,
                               doc="x -> kx mod 1"),
    "two_component": FamilyEntry(lambda: _two_component(), {}, {}, validate=False,
                                 doc="x -> 3x mod 1/2 on each half of [0, 1] separately"),
    "contraction": FamilyEntry(lambda: _contraction(), {}, {}, validate=False, doc="x -> x/2"),
}


def make_builtin_family(name, params=None, validate=True):
    try:
        entry = FAMILIES[name]
    except KeyError:
        raise UnknownFamily(f"unknown family {name!r}; known: {sorted(FAMILIES)}",
                            operation="make_builtin_family") from None
    params = dict(params or {})
    unknown = set(params) - set(entry.defaults)
    if unknown:
        raise ParamOutOfRange(f"unknown parameters {sorted(unknown)} for {name}",
                              operation="make_builtin_family")
    full = {**entry.defaults, **params}
    for key, (lo, hi) in entry.box.items():
        if not lo <= full[key] <= hi:
            raise ParamOutOfRange(f"{name}.{key}={full[key]} outside [{lo}, {hi}]",
                                  operation="make_builtin_family")
    domain, branches, specs, star = entry.builder(**full)
    m = IntervalMap(domain, branches, specs, star, name, full)
    if validate and entry.validate:
        m.check_structure()
        m.check_nondegeneracy()
    return m


def modified(m: IntervalMap, **changes) -> IntervalMap:
    return replace(m, **changes)
