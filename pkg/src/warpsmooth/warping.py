"""Warping functions with an odd-order inflection of A^2, and the commutator weight.

A profile stores ``g = A^2`` as a list of analytic segments on [0, inf):
Euclidean pieces ``g = x^2`` near the origin and past ``R0``, the local
model ``C1 (x - x*)^(2m+1) + C2`` around the inflection point, an optional
reciprocal-linear piece ``1 / (C3 - C4 x)`` on a window, and polynomial
smoothstep blends between consecutive pieces.  A blend
``g = (1 - phi) g_left + phi g_right`` has derivative
``(1 - phi) g_left' + phi g_right' + phi' (g_right - g_left)``, so it is
monotone as soon as both pieces increase and the right piece dominates the
left one on the blend zone.  The builder fits C1..C4 under exactly those
sampled constraints.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import integrate, optimize

from . import series as ts


class InfeasibleSpec(ValueError):
    pass


class OrderTooHigh(ValueError):
    pass


class NonpositiveBound(ValueError):
    pass


@dataclass(frozen=True)
class WarpingSpec:
    inflection_point: float = 1.0
    inflection_order_m: Optional[int] = 1
    flat_inner_radius: float = 0.25
    flat_outer_radius: float = 4.0
    reciprocal_window: Optional[tuple] = None
    core_halfwidth: float = 0.1

    def __post_init__(self):
        x, r0, R0 = self.inflection_point, self.flat_inner_radius, self.flat_outer_radius
        if not (0 < r0 < x < R0):
            raise InfeasibleSpec(f"need 0 < r0 < x* < R0, got r0={r0}, x*={x}, R0={R0}")
        if self.inflection_order_m is not None and self.inflection_order_m < 1:
            raise InfeasibleSpec(f"inflection order m must be >= 1, got {self.inflection_order_m}")
        if self.reciprocal_window is not None:
            a, b = self.reciprocal_window
            if not (r0 < a < b < R0):
                raise InfeasibleSpec(f"reciprocal window {self.reciprocal_window} must lie in (r0, R0)")
            if a <= x <= b:
                raise InfeasibleSpec("reciprocal window must exclude the inflection point")
        if self.core_halfwidth <= 0:
            raise InfeasibleSpec("core_halfwidth must be positive")

    @property
    def is_flat(self):
        return self.inflection_order_m is None

    def to_dict(self):
        return {
            "inflection_point": self.inflection_point,
            "inflection_order_m": self.inflection_order_m,
            "flat_inner_radius": self.flat_inner_radius,
            "flat_outer_radius": self.flat_outer_radius,
            "reciprocal_window": list(self.reciprocal_window) if self.reciprocal_window else None,
            "core_halfwidth": self.core_halfwidth,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("reciprocal_window") is not None:
            d["reciprocal_window"] = tuple(d["reciprocal_window"])
        return cls(**d)


# --- analytic pieces -------------------------------------------------------

@dataclass(frozen=True)
class Poly:
    center: float
    coeffs: tuple

    def series(self, x, K):
        return ts.poly_series(self.coeffs, self.center, x, K)

    def value(self, x):
        return self.series(x, 0)[0]

    def to_dict(self):
        return {"kind": "poly", "center": self.center, "coeffs": list(self.coeffs)}


@dataclass(frozen=True)
class Reciprocal:
    """g(x) = 1 / (c3 - c4 x)."""
    c3: float
    c4: float

    def series(self, x, K):
        b = self.c3 - self.c4 * np.asarray(x, dtype=float)
        j = np.arange(K + 1).reshape((-1,) + (1,) * b.ndim)
        return self.c4 ** j / b ** (j + 1)

    def value(self, x):
        return 1.0 / (self.c3 - self.c4 * np.asarray(x, dtype=float))

    def to_dict(self):
        return {"kind": "reciprocal", "c3": self.c3, "c4": self.c4}


EUCLIDEAN = Poly(0.0, (0.0, 0.0, 1.0))


@lru_cache(maxsize=None)
def smoothstep(order):
    """Monotone polynomial step on [0, 1] with `order` vanishing derivatives at both ends."""
    bump = np.polynomial.Polynomial([0, 1]) ** order * np.polynomial.Polynomial([1, -1]) ** order
    prim = bump.integ()
    return prim / prim(1.0)


@dataclass(frozen=True)
class Blend:
    start: float
    end: float
    left: object
    right: object
    order: int

    def series(self, x, K):
        L = self.end - self.start
        t = (np.asarray(x, dtype=float) - self.start) / L
        phi = np.empty((K + 1,) + t.shape)
        p = smoothstep(self.order)
        for j in range(K + 1):
            phi[j] = p(t) / (math.factorial(j) * L ** j)
            p = p.deriv()
        gl = self.left.series(x, K)
        gr = self.right.series(x, K)
        return gl + ts.mul(phi, gr - gl)

    def to_dict(self):
        return {"kind": "blend", "order": self.order,
                "left": self.left.to_dict(), "right": self.right.to_dict()}


def _piece_from_dict(d, start=None, end=None):
    kind = d["kind"]
    if kind == "poly":
        return Poly(float(d["center"]), tuple(float(c) for c in d["coeffs"]))
    if kind == "reciprocal":
        return Reciprocal(float(d["c3"]), float(d["c4"]))
    if kind == "blend":
        return Blend(start, end, _piece_from_dict(d["left"]), _piece_from_dict(d["right"]), int(d["order"]))
    raise ValueError(f"unknown segment kind {kind!r}")


@dataclass(frozen=True)
class Segment:
    start: float
    end: float  # math.inf for the last segment
    piece: object


@dataclass(frozen=True)
class WarpingProfile:
    spec: WarpingSpec
    segments: tuple
    solved_constants: dict = field(default_factory=dict)
    smoothness_order: int = 4

    @property
    def breakpoints(self):
        return np.array([s.start for s in self.segments[1:]])

    def g_series(self, x, K):
        """Taylor coefficients of A^2 up to order K, shape (K+1, len(x))."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = np.searchsorted(self.breakpoints, x, side="right")
        out = np.empty((K + 1, x.size))
        for i, seg in enumerate(self.segments):
            mask = idx == i
            if mask.any():
                out[:, mask] = seg.piece.series(x[mask], K)
        return out

    def a_series(self, x, K):
        """Taylor coefficients of A itself; exact (A = x) on the Euclidean ends."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros((K + 1, x.size))
        flat = (x <= self.spec.flat_inner_radius) | (x >= self.spec.flat_outer_radius)
        if self.spec.is_flat:
            flat[:] = True
        out[0, flat] = x[flat]
        if K >= 1:
            out[1, flat] = 1.0
        if (~flat).any():
            out[:, ~flat] = ts.sqrt(self.g_series(x[~flat], K))
        return out

    def to_dict(self):
        segs = []
        for s in self.segments:
            segs.append({"start": s.start, "end": None if math.isinf(s.end) else s.end,
                         "piece": s.piece.to_dict()})
        return {"spec": self.spec.to_dict(), "segments": segs,
                "solved_constants": dict(self.solved_constants),
                "smoothness_order": self.smoothness_order}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        segs = []
        for s in d["segments"]:
            end = math.inf if s["end"] is None else float(s["end"])
            segs.append(Segment(float(s["start"]), end, _piece_from_dict(s["piece"], float(s["start"]), end)))
        return cls(WarpingSpec.from_dict(d["spec"]), tuple(segs),
                   dict(d.get("solved_constants", {})), int(d["smoothness_order"]))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def eval_profile(profile, x, order=0):
    """A^(order)(x); vectorised over x."""
    if order < 0:
        raise ValueError("order must be nonnegative")
    if order > profile.smoothness_order:
        raise OrderTooHigh(f"order {order} exceeds guaranteed smoothness {profile.smoothness_order}")
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0):
        raise ValueError("profile is defined for x >= 0")
    a = profile.a_series(x_arr.ravel(), order)
    val = a[order] * math.factorial(order)
    return val.reshape(x_arr.shape) if x_arr.ndim else float(val[0])


def eval_a_squared(profile, x, order=0):
    x_arr = np.asarray(x, dtype=float)
    g = profile.g_series(x_arr.ravel(), order)
    val = g[order] * math.factorial(order)
    return val.reshape(x_arr.shape) if x_arr.ndim else float(val[0])


# --- construction ------------------------------------------------------------

def _flat_profile(spec):
    return WarpingProfile(spec, (Segment(0.0, math.inf, EUCLIDEAN),), {}, smoothness_order=64)


def _core_layout(spec):
    """Pure intervals in x-order: (kind, start, end)."""
    x, w = spec.inflection_point, spec.core_halfwidth
    items = [("inner", 0.0, spec.flat_inner_radius), ("local", x - w, x + w)]
    if spec.reciprocal_window is not None:
        items.append(("recip",) + tuple(spec.reciprocal_window))
    items.append(("outer", spec.flat_outer_radius, math.inf))
    items.sort(key=lambda it: it[1])
    for (k0, _, e0), (k1, s1, _) in zip(items, items[1:]):
        if e0 >= s1:
            raise InfeasibleSpec(f"pure intervals {k0} and {k1} overlap or touch; widen the gap between them")
    return items


def build_profile(spec, *, require_window=True, margin=0.02, n_constraint_samples=48):
    """Fit C1..C4 so that A^2 is increasing with its only critical point at x*."""
    if spec.is_flat:
        return _flat_profile(spec)
    if spec.reciprocal_window is None and require_window:
        raise InfeasibleSpec("reciprocal_window is required (pass require_window=False to drop it)")
    m = spec.inflection_order_m
    xs = spec.inflection_point
    order = 2 * m + 2
    layout = _core_layout(spec)
    has_recip = spec.reciprocal_window is not None

    def pieces(p):
        out = {"inner": EUCLIDEAN, "outer": EUCLIDEAN}
        coeffs = [0.0] * (2 * m + 2)
        coeffs[0], coeffs[2 * m + 1] = p[1], p[0]
        out["local"] = Poly(xs, tuple(coeffs))
        if has_recip:
            out["recip"] = Reciprocal(p[2], p[3])
        return out

    zones = [(a[0], b[0], a[2], b[1]) for a, b in zip(layout, layout[1:])]
    zone_samples = [np.linspace(s, e, n_constraint_samples) for _, _, s, e in zones]
    pure = [np.linspace(s, e, 16) for k, s, e in layout if k in ("local", "recip")]

    recip_reach = None
    if has_recip:
        # furthest point where the reciprocal piece is evaluated
        ri = [k for k, _, _ in layout].index("recip")
        recip_reach = layout[ri + 1][1]

    def dominance(p):
        pc = pieces(p)
        cons = []
        for (kl, kr, _, _), xz in zip(zones, zone_samples):
            if (kl == "recip" or kr == "recip") and p[2] - p[3] * recip_reach <= 0:
                cons.append(-np.ones_like(xz))
                continue
            cons.append((pc[kr].value(xz) - pc[kl].value(xz)) / xz ** 2 - margin)
        return np.concatenate(cons)

    def objective(p):
        pc = pieces(p)
        tot = 0.0
        for (k, _, _), xp in zip([it for it in layout if it[0] in ("local", "recip")], pure):
            if k == "recip" and p[2] - p[3] * recip_reach <= 0:
                return 1e6
            tot += np.sum((pc[k].value(xp) / xp ** 2 - 1.0) ** 2)
        return tot

    cons = [{"type": "ineq", "fun": dominance}]
    bounds = [(1e-3, None), (1e-3, None)]
    x0 = [1.0, xs ** 2]
    if has_recip:
        c = 0.5 * sum(spec.reciprocal_window)
        # recip through (c, c^2) with its pole just past R0
        pole = spec.flat_outer_radius * 1.25
        c4 = 1.0 / (c ** 2 * (pole - c))
        x0 += [c4 * pole, c4]
        cons.append({"type": "ineq", "fun": lambda p: p[2] - p[3] * recip_reach - 1e-3})
        bounds += [(1e-4, None), (1e-4, None)]
    res = optimize.minimize(objective, np.array(x0), method="SLSQP", bounds=bounds,
                            constraints=cons, options={"maxiter": 500, "ftol": 1e-12})
    p = res.x
    viol = dominance(p)
    if not np.all(viol >= -1e-9) or (has_recip and p[2] - p[3] * recip_reach <= 0):
        k = int(np.argmin(viol)) // n_constraint_samples
        kl, kr, s, e = zones[min(k, len(zones) - 1)]
        raise InfeasibleSpec(
            f"no monotone blend found: piece '{kr}' does not dominate '{kl}' on [{s:g}, {e:g}]; "
            "widen the windows")

    pc = pieces(p)
    segs = []
    for item, nxt in zip(layout, layout[1:] + [None]):
        kind, s, e = item
        segs.append(Segment(s, e, pc[kind]))
        if nxt is not None:
            segs.append(Segment(e, nxt[1], Blend(e, nxt[1], pc[kind], pc[nxt[0]], order)))
    consts = {"C1": float(p[0]), "C2": float(p[1])}
    if has_recip:
        consts.update({"C3": float(p[2]), "C4": float(p[3])})
    return WarpingProfile(spec, tuple(segs), consts, smoothness_order=order)


# --- validation ----------------------------------------------------------------

def fd_weights(deriv, offsets):
    """Finite-difference weights on integer offsets (Vandermonde solve)."""
    offsets = np.asarray(offsets, dtype=float)
    n = offsets.size
    A = np.vander(offsets, n, increasing=True).T
    b = np.zeros(n)
    b[deriv] = math.factorial(deriv)
    return np.linalg.solve(A, b)


def fd_derivative(fun, x, deriv, step, accuracy=2):
    half = (deriv + accuracy - 1) // 2
    offs = np.arange(-half, half + 1)
    w = fd_weights(deriv, offs)
    return sum(wi * fun(x + oi * step) for wi, oi in zip(w, offs)) / step ** deriv


def validate_profile(profile, x_max=None, n_samples=20001):
    """Check the WarpingProfile invariants on a sample grid; returns a dict of results."""
    spec = profile.spec
    x_max = x_max or 2.0 * spec.flat_outer_radius
    x = np.linspace(1e-6, x_max, n_samples)
    A = eval_profile(profile, x, 0)
    dA = eval_profile(profile, x, 1)
    rep = {}
    rep["positive"] = bool(np.all(A > 0))
    flat = (x <= spec.flat_inner_radius) | (x >= spec.flat_outer_radius)
    rep["euclidean_ends"] = bool(np.max(np.abs(A[flat] - x[flat])) <= 1e-12)
    rep["min_dA"] = float(dA.min())
    rep["monotone"] = bool(dA.min() >= -1e-12)
    if spec.is_flat:
        rep["trapping"] = 0.0
        rep["ok"] = rep["positive"] and rep["euclidean_ends"] and rep["monotone"]
        return rep
    m, xs = spec.inflection_order_m, spec.inflection_point
    small = dA < 1e-8
    near = np.abs(x - xs) <= spec.core_halfwidth
    rep["critical_only_near_xstar"] = bool(not np.any(small & ~near))
    # derivatives of A^2 at x*: analytic and finite-difference
    g = profile.g_series(np.array([xs]), 2 * m + 1)[:, 0]
    exact = ts.to_derivatives(g)
    h_fd = 0.15 * spec.core_halfwidth
    g_fun = lambda t: eval_a_squared(profile, t, 0)
    fd = [fd_derivative(g_fun, xs, j, h_fd) for j in range(1, 2 * m + 2)]
    scale = max(1.0, abs(exact[2 * m + 1]))
    rep["a2_derivs_exact"] = [float(v) for v in exact[1:]]
    rep["a2_derivs_fd"] = [float(v) for v in fd]
    rep["vanishing_derivs"] = bool(all(abs(v) <= 1e-6 * scale for v in exact[1:2 * m + 1]))
    rep["vanishing_derivs_fd"] = bool(all(abs(v) <= 10 * h_fd ** 2 * scale for v in fd[:-1]))
    rep["top_deriv_positive"] = bool(exact[2 * m + 1] > 0 and fd[-1] > 0)
    ok = [rep["positive"], rep["euclidean_ends"], rep["monotone"], rep["critical_only_near_xstar"],
          rep["vanishing_derivs"], rep["vanishing_derivs_fd"], rep["top_deriv_positive"]]
    if spec.reciprocal_window is not None:
        a, b = spec.reciprocal_window
        xw = np.linspace(a, b, 101)
        r = profile.g_series(xw, 2)
        inv = ts.to_derivatives(ts.reciprocal(r))
        rep["window_d2_inv_a2"] = float(np.max(np.abs(inv[2])))
        rep["window_linear_decreasing"] = bool(rep["window_d2_inv_a2"] <= 1e-8 and np.all(inv[1] < 0))
        ok.append(rep["window_linear_decreasing"])
    rep["ok"] = bool(all(ok))
    return rep


# --- commutator weight -------------------------------------------------------

def _jbracket(y):
    return np.sqrt(1.0 + y * y)


@dataclass(frozen=True)
class WeightFunction:
    """zeta = 1 on [0, s], smoothstep blend into <x - s>^-3 on [s, s+1]; f = int_0^x zeta."""
    decay_scale: float = 1.0
    blend_order: int = 4
    lower_bound_const: float = field(default=float("nan"), compare=False)

    def zeta(self, x):
        x = np.asarray(x, dtype=float)
        s = self.decay_scale
        t = np.clip(x - s, 0.0, 1.0)
        phi = smoothstep(self.blend_order)(t)
        tail = _jbracket(np.maximum(x - s, 0.0)) ** -3
        return (1.0 - phi) + phi * tail

    def _blend_integral(self, t):
        # int_0^t zeta(s + tau) dtau for t in [0, 1], 40-point Gauss-Legendre
        nodes, weights = np.polynomial.legendre.leggauss(40)
        t = np.asarray(t, dtype=float)
        tau = 0.5 * (nodes[:, None] + 1.0) * t[None, :]
        vals = self.zeta(self.decay_scale + tau)
        return 0.5 * t * np.sum(weights[:, None] * vals, axis=0)

    @property
    def f_blend_end(self):
        val, _ = integrate.quad(lambda t: float(self.zeta(self.decay_scale + t)), 0.0, 1.0,
                                epsabs=1e-14, epsrel=1e-14)
        return self.decay_scale + val

    def f(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        s = self.decay_scale
        out = np.array(x, copy=True)
        mid = (x > s) & (x < s + 1)
        if mid.any():
            out[mid] = s + self._blend_integral(x[mid] - s)
        far = x >= s + 1
        if far.any():
            y = x[far] - s
            out[far] = self.f_blend_end + y / _jbracket(y) - 1.0 / math.sqrt(2.0)
        return out

    def df(self, x):
        return self.zeta(x)


def build_weight(decay_scale=1.0, x_sample_max=100.0, n_samples=100001):
    if decay_scale <= 0:
        raise ValueError("decay_scale must be positive")
    w = WeightFunction(decay_scale)
    x = np.linspace(0.0, x_sample_max, n_samples)
    c = float(np.min(w.zeta(x) * _jbracket(x) ** 3))
    return WeightFunction(decay_scale, w.blend_order, c)


def trapping_lower_bound(profile, weight, x_star=None, m=None, x_min=0.01, x_max=100.0,
                         n_samples=4001, tol=1e-9):
    """Largest C with f A' A^-3 >= C (x - x*)^2m / (x^2 <x>^(1+2m)) on the sampled range."""
    x_star = profile.spec.inflection_point if x_star is None else x_star
    m = (profile.spec.inflection_order_m or 1) if m is None else m

    def ratio(x):
        x = np.atleast_1d(x)
        A = eval_profile(profile, x, 0)
        dA = eval_profile(profile, x, 1)
        lhs = weight.f(x) * dA / A ** 3
        rhs = (x - x_star) ** (2 * m) / (x ** 2 * _jbracket(x) ** (1 + 2 * m))
        with np.errstate(divide="ignore", invalid="ignore"):
            r = lhs / rhs
        return r

    x = np.unique(np.concatenate([np.geomspace(x_min, x_max, n_samples // 2),
                                  np.linspace(x_min, x_max, n_samples // 2)]))
    x = x[x != x_star]
    r = ratio(x)
    i = int(np.nanargmin(r))
    best = float(r[i])
    lo, hi = x[max(i - 1, 0)], x[min(i + 1, x.size - 1)]
    if lo < x_star < hi:
        # the ratio has a finite limit at x*; refine on the side holding the minimum
        lo, hi = (lo, x_star) if x[i] < x_star else (x_star, hi)
    if best > tol:
        res = optimize.minimize_scalar(lambda t: float(ratio(t)[0]), bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-12})
        if np.isfinite(res.fun):
            best = min(best, float(res.fun))
    if not best > tol:
        raise NonpositiveBound(f"sampled infimum {best:.3g} at x={x[i]:.6g}: A' vanishes away from x*")
    return best
