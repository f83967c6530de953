"""Conjugated Laplacian on the two-circle multi-warped product and its radial mode operators.

After conjugating by ``(A1 A2)^(1/2)`` and separating both circle variables,
mode ``(k, n)`` of the Schrodinger flow is governed by

    P_{k,n} = -d^2/dx^2 + k^2 V1 + n^2 V2 - V,    V_j = A_j^-2,

on the half line, discretised here on a uniform interior grid with
Dirichlet ends.  Norms use the quadrature weight ``dx``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import series as ts
from .warping import WarpingProfile, build_profile, WarpingSpec, eval_profile


class GridTooCoarse(ValueError):
    pass


class NegativeOperator(ValueError):
    pass


def default_profiles(m1=1, m2=1, x1=1.0, x2=2.0, r0=0.25, R0=4.0, core_halfwidth=0.1,
                     window1=None, window2=None):
    """The two-circle model: A1 inflects at x1 and is reciprocal-linear around x2, and vice versa."""
    w1 = window1 if window1 is not None else (x2 - 0.2, x2 + 0.2)
    w2 = window2 if window2 is not None else (x1 - 0.2, x1 + 0.2)
    p1 = build_profile(WarpingSpec(x1, m1, r0, R0, tuple(w1) if m1 else None, core_halfwidth))
    p2 = build_profile(WarpingSpec(x2, m2, r0, R0, tuple(w2) if m2 else None, core_halfwidth))
    return p1, p2


def _a_derivs(profile, x, K=2):
    a = profile.a_series(np.atleast_1d(x), K)
    return ts.to_derivatives(a)


def conjugation_potential(p1, p2, x):
    """V(x) produced by conjugating the Laplace-Beltrami operator with (A1 A2)^(1/2)."""
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x_arr <= 0):
        raise ValueError("conjugation potential needs x > 0")
    a1, d1, dd1 = _a_derivs(p1, x_arr)
    a2, d2, dd2 = _a_derivs(p2, x_arr)
    V = (0.25 * d1 ** 2 / a1 ** 2 - 0.5 * dd1 / a1
         + 0.25 * d2 ** 2 / a2 ** 2 - 0.5 * dd2 / a2
         - 0.5 * d1 * d2 / (a1 * a2))
    return V if np.ndim(x) else float(V[0])


def inverse_square(profile, x, order=0):
    """Derivative `order` of A^-2."""
    g = profile.g_series(np.atleast_1d(x), order)
    return ts.to_derivatives(ts.reciprocal(g))[order]


@dataclass(frozen=True)
class RadialGrid:
    x_max: float = 8.0
    n_points: int = 2047

    def __post_init__(self):
        if self.x_max <= 0 or self.n_points < 3:
            raise ValueError("grid needs x_max > 0 and at least 3 interior points")

    @property
    def dx(self):
        return self.x_max / (self.n_points + 1)

    @property
    def x(self):
        return self.dx * np.arange(1, self.n_points + 1)

    @property
    def midpoints(self):
        return self.dx * (np.arange(0, self.n_points + 1) + 0.5)

    def to_dict(self):
        return {"x_max": self.x_max, "n_points": self.n_points}


@dataclass
class ManifoldModel:
    profile_1: WarpingProfile
    profile_2: WarpingProfile
    dims: tuple = (1, 1)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def default(cls, m1=1, m2=1, **kw):
        return cls(*default_profiles(m1, m2, **kw))

    @classmethod
    def flat(cls, x1=1.0, x2=2.0, r0=0.25, R0=4.0):
        p1 = build_profile(WarpingSpec(x1, None, r0, R0))
        p2 = build_profile(WarpingSpec(x2, None, r0, R0))
        return cls(p1, p2)

    @property
    def is_flat(self):
        return self.profile_1.spec.is_flat and self.profile_2.spec.is_flat

    @property
    def m(self):
        ms = [p.spec.inflection_order_m for p in (self.profile_1, self.profile_2)]
        ms = [v for v in ms if v is not None]
        return max(ms) if ms else None

    @property
    def flat_inner(self):
        return min(self.profile_1.spec.flat_inner_radius, self.profile_2.spec.flat_inner_radius)

    @property
    def flat_outer(self):
        return max(self.profile_1.spec.flat_outer_radius, self.profile_2.spec.flat_outer_radius)

    def V(self, x):
        return conjugation_potential(self.profile_1, self.profile_2, x)

    def V1(self, x, order=0):
        return inverse_square(self.profile_1, x, order)

    def V2(self, x, order=0):
        return inverse_square(self.profile_2, x, order)

    def samples(self, grid):
        key = ("samples", grid)
        if key not in self._cache:
            x = grid.x
            self._cache[key] = (self.V(x), self.V1(x), self.V2(x))
        return self._cache[key]

    def trapped_energy(self, which=1):
        p = self.profile_1 if which == 1 else self.profile_2
        return float(inverse_square(p, p.spec.inflection_point)[0])

    def constants(self):
        """C1..C8 in the two-profile numbering (C5, C6 reciprocal and C7, C8 local for A2)."""
        c = dict(self.profile_1.solved_constants)
        c2 = self.profile_2.solved_constants
        if c2:
            c.update({"C5": c2.get("C3"), "C6": c2.get("C4"), "C7": c2["C1"], "C8": c2["C2"]})
        return c

    def to_dict(self):
        return {"profile_1": self.profile_1.to_dict(), "profile_2": self.profile_2.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(WarpingProfile.from_dict(d["profile_1"]), WarpingProfile.from_dict(d["profile_2"]))


def export_snapshot(model, grid, stem):
    """Write <stem>.json (metadata) and <stem>.bin (uint64 count + row-major float64 V, V1, V2)."""
    stem = Path(stem)
    V, V1, V2 = model.samples(grid)
    data = np.ascontiguousarray(np.vstack([V, V1, V2]), dtype="<f8")
    with open(stem.with_suffix(".bin"), "wb") as fh:
        fh.write(struct.pack("<Q", data.size))
        fh.write(data.tobytes(order="C"))
    meta = {"grid": grid.to_dict(), "rows": ["V", "V1", "V2"], "shape": list(data.shape),
            "dtype": "float64-le", "header": "uint64-le value count", "model": model.to_dict()}
    stem.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return stem.with_suffix(".json"), stem.with_suffix(".bin")


def load_snapshot(stem):
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    raw = stem.with_suffix(".bin").read_bytes()
    (count,) = struct.unpack("<Q", raw[:8])
    data = np.frombuffer(raw[8:], dtype="<f8", count=count).reshape(meta["shape"])
    return meta, data


# --- mode operators -------------------------------------------------------------

@dataclass(frozen=True)
class Sponge:
    """Complex absorbing layer sigma0 ((x - xs) / (x_max - xs))^power on the outer fraction."""
    strength: float = 50.0
    fraction: float = 0.2
    power: int = 3

    def profile(self, grid):
        xs = grid.x_max * (1.0 - self.fraction)
        r = np.clip((grid.x - xs) / (grid.x_max - xs), 0.0, None)
        return self.strength * r ** self.power


@dataclass
class ModeOperator:
    k: float
    n: float
    grid: RadialGrid
    potential: np.ndarray
    stencil_order: int = 2
    sponge: Optional[Sponge] = None
    kinetic: float = 1.0

    @property
    def is_selfadjoint(self):
        return self.sponge is None

    def laplacian_bands(self):
        N, dx = self.grid.n_points, self.grid.dx
        if self.stencil_order == 2:
            d = np.full(N, 2.0) / dx ** 2
            return d, [np.full(N - 1, -1.0) / dx ** 2]
        if self.stencil_order == 4:
            d = np.full(N, 30.0)
            # odd reflection through the Dirichlet ends: u_{-1} = -u_1
            d[0] += 1.0
            d[-1] += 1.0
            return d / (12 * dx ** 2), [np.full(N - 1, -16.0) / (12 * dx ** 2),
                                        np.full(N - 2, 1.0) / (12 * dx ** 2)]
        raise ValueError("stencil_order must be 2 or 4")

    def real_bands(self):
        d, offs = self.laplacian_bands()
        return self.kinetic * d + self.potential, [self.kinetic * o for o in offs]

    def matrix(self, fmt="csc"):
        d, offs = self.real_bands()
        diag = d.astype(complex) if self.sponge is not None else d
        if self.sponge is not None:
            diag = diag - 1j * self.sponge.profile(self.grid)
        bands = [diag] + offs + offs
        pos = [0] + [i + 1 for i in range(len(offs))] + [-(i + 1) for i in range(len(offs))]
        return sp.diags(bands, pos, format=fmt)

    def dense(self):
        return self.matrix().toarray()

    def apply(self, u):
        return self.matrix("csr") @ u

    def eigh(self):
        """Eigenpairs of the self-adjoint (sponge-free) operator, ascending."""
        d, offs = self.real_bands()
        if len(offs) == 1:
            return sla.eigh_tridiagonal(d, offs[0])
        ab = np.zeros((len(offs) + 1, d.size))
        ab[0] = d
        for i, o in enumerate(offs):
            ab[i + 1, : o.size] = o
        return sla.eig_banded(ab, lower=True)


def assemble_mode_operator(model, k, n, grid, stencil_order=2, sponge=None, v_sign=-1.0,
                           kinetic=1.0, check=True):
    """P_{k,n} = -d^2 + k^2 V1 + n^2 V2 + v_sign * V on the interior nodes of `grid`."""
    if grid.x_max <= model.flat_outer:
        raise GridTooCoarse(f"x_max={grid.x_max} must exceed the outer flat radius {model.flat_outer}")
    V, V1, V2 = model.samples(grid)
    W = k * k * V1 + n * n * V2 + v_sign * V
    if check:
        # the centrifugal core x < r0 is classically forbidden for every datum used here
        core = grid.x >= model.flat_inner
        worst = grid.dx ** 2 * np.max(np.abs(W[core])) / kinetic
        if worst > 1.0:
            raise GridTooCoarse(
                f"dx^2 * max|W| = {worst:.3g} > 1 for k={k}, n={n}; refine beyond "
                f"n_points={grid.n_points}")
    return ModeOperator(k, n, grid, W, stencil_order, sponge, kinetic)


def min_points_for(model, k, n, x_max, kinetic=1.0, probe=200001):
    """Smallest interior point count passing the dx^2 max|W| <= 1 sampling criterion."""
    x = np.linspace(model.flat_inner, x_max, probe)
    W = k * k * model.V1(x) + n * n * model.V2(x) - model.V(x)
    dx = np.sqrt(kinetic / np.max(np.abs(W)))
    return int(np.ceil(x_max / dx))


# --- norms ---------------------------------------------------------------------------

_EIG_CACHE = {}


def _spectral(model, k, n, grid, stencil_order):
    key = (id(model), k, n, grid, stencil_order)
    if key not in _EIG_CACHE:
        if len(_EIG_CACHE) > 16:
            _EIG_CACHE.clear()
        op = assemble_mode_operator(model, k, n, grid, stencil_order, check=False)
        _EIG_CACHE[key] = op.eigh()
    return _EIG_CACHE[key]


def sobolev_norm(states, s, model, grid, stencil_order=2):
    """sum_{k,n} <(I + P_{k,n})^s u, u>  by spectral calculus of each Dirichlet mode operator.

    `states` maps (k, n) -> complex vector on grid.x.
    """
    total = 0.0
    for (k, n) in sorted(states):
        u = np.asarray(states[(k, n)])
        lam, vecs = _spectral(model, k, n, grid, stencil_order)
        shifted = 1.0 + lam
        if s != 0 and shifted.min() <= 0:
            raise NegativeOperator(f"I + P_({k},{n}) has eigenvalue {shifted.min():.3g} <= 0")
        c = vecs.T @ u
        if s == 0:
            total += float(np.sum(np.abs(u) ** 2) * grid.dx)
        else:
            total += float(np.sum(shifted ** s * np.abs(c) ** 2) * grid.dx)
    return total


def jbracket(x):
    return np.sqrt(1.0 + np.asarray(x) ** 2)


def _grad_sq(u, grid, weight_mid):
    up = np.concatenate([[0.0], u, [0.0]])
    du = np.diff(up) / grid.dx
    return float(np.sum(weight_mid * np.abs(du) ** 2) * grid.dx)


@dataclass(frozen=True)
class LocalWeights:
    """Precomputed spatial weights for the smoothing functionals on one grid."""
    w3: np.ndarray       # <x>^(-2 weight_power) at nodes (<x>^-3 by default)
    w3_mid: np.ndarray   # same at midpoints
    V1: np.ndarray
    V2: np.ndarray
    theta: np.ndarray    # (x - x1)^2m1 <x>^(-1-2m1) V1
    omega: np.ndarray    # (x - x2)^2m2 <x>^(-1-2m2) V2
    dx: float

    @classmethod
    def build(cls, model, grid, weight_power=1.5):
        x = grid.x
        _, V1, V2 = model.samples(grid)
        s1, s2 = model.profile_1.spec, model.profile_2.spec
        m1, m2 = s1.inflection_order_m or 1, s2.inflection_order_m or 1
        theta = (x - s1.inflection_point) ** (2 * m1) * jbracket(x) ** (-1 - 2 * m1) * V1
        omega = (x - s2.inflection_point) ** (2 * m2) * jbracket(x) ** (-1 - 2 * m2) * V2
        p = -2.0 * weight_power
        return cls(jbracket(x) ** p, jbracket(grid.midpoints) ** p, V1, V2, theta, omega, grid.dx)

    def h1(self, u, k, n):
        """<x>^-weight_power-weighted H^1 quantity for one mode: radial + angular + mass terms."""
        a2 = np.abs(u) ** 2
        up = np.concatenate([[0.0], u, [0.0]])
        grad = float(np.sum(self.w3_mid * np.abs(np.diff(up) / self.dx) ** 2) * self.dx)
        ang = float(np.sum(self.w3 * (k * k * self.V1 + n * n * self.V2) * a2) * self.dx)
        mass = float(np.sum(self.w3 * a2) * self.dx)
        return grad + ang + mass

    def lemma_terms(self, u, k, n):
        a2 = np.abs(u) ** 2
        up = np.concatenate([[0.0], u, [0.0]])
        grad = float(np.sum(self.w3_mid * np.abs(np.diff(up) / self.dx) ** 2) * self.dx)
        th = float(k * k * np.sum(self.theta * a2) * self.dx)
        om = float(n * n * np.sum(self.omega * a2) * self.dx)
        return grad, th, om


def weighted_local_h1(states, model, grid, weight_power=1.5):
    """Weighted H^1 functional (a) and the three terms of the initial estimate (b), summed over modes."""
    lw = LocalWeights.build(model, grid, weight_power)
    h1 = 0.0
    terms = np.zeros(3)
    for (k, n) in sorted(states):
        u = np.asarray(states[(k, n)])
        h1 += lw.h1(u, k, n)
        terms += np.array(lw.lemma_terms(u, k, n))
    return {"h1": h1, "dx_term": float(terms[0]), "theta_term": float(terms[1]),
            "omega_term": float(terms[2])}
