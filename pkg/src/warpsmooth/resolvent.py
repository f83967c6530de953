"""Cutoff resolvent norms of the semiclassical radial operator and their h-scaling.

    P_h = (h D_x)^2 + V1 + h^2 n^2 V2 + v_sign h^2 V

is discretised on (0, x_max] with Dirichlet ends and a cubic complex absorbing
potential on the outer layer (outgoing condition).  Norms of
chi psi(hD) (P_h - z - i eta)^-1 psi(hD) chi are found by power iteration on
R R^* with one sparse LU factorisation per (h, z).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, asdict, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import minimize_scalar

from .geometry import GridTooCoarse, RadialGrid
from .microlocal import bump
from .smoothing import PoorFit, loglog_fit


class NotConverged(RuntimeError):
    pass


@dataclass(frozen=True)
class CutoffSpec:
    """chi = 1 on |x - x*| <= delta1 (support 2 delta1); psi = 1 on |r| <= eps (support 2 eps).

    use_psi=False replaces psi(hD) by the identity.
    """
    delta1: float = 0.3
    eps: float = 0.02
    use_psi: bool = False

    def __post_init__(self):
        if not 0 < self.eps < self.delta1 / 4:
            raise ValueError(f"cutoffs need 0 < eps < delta1/4, got eps={self.eps}, delta1={self.delta1}")

    def chi(self, s):
        return bump(s, self.delta1)

    def psi(self, r):
        if not self.use_psi:
            return np.ones_like(np.asarray(r, dtype=float))
        return bump(r, self.eps)


@dataclass(frozen=True)
class Absorber:
    strength: float = 1.0
    fraction: float = 0.2
    power: int = 3

    def profile(self, grid):
        xs = grid.x_max * (1.0 - self.fraction)
        r = np.clip((grid.x - xs) / (grid.x_max - xs), 0.0, None)
        return self.strength * r ** self.power


def semiclassical_grid(h, x_max=6.0, points_per_h=10):
    """Uniform grid on (0, x_max] with spacing <= h / points_per_h."""
    n = int(np.ceil(x_max * points_per_h / h))
    return RadialGrid(x_max, n)


class SandwichedResolvent:
    """R(z) = chi psi (P_h - z - i eta)^-1 psi chi acting on vectors over the padded chi-window."""

    def __init__(self, model, h, n, grid, cutoffs, absorber=Absorber(), v_sign=-1.0, x_star=None):
        if not 0 < h < 1:
            raise ValueError(f"h = {h} must lie in (0, 1)")
        if grid.dx > h / 10 * (1 + 1e-12):
            raise GridTooCoarse(f"dx = {grid.dx:.3g} exceeds h/10 = {h / 10:.3g}")
        self.model, self.h, self.n, self.grid, self.cutoffs = model, h, n, grid, cutoffs
        self.x_star = model.profile_1.spec.inflection_point if x_star is None else x_star
        V, V1, V2 = model.samples(grid)
        N, dx = grid.n_points, grid.dx
        W = V1 + (h * n) ** 2 * V2 + v_sign * h * h * V
        lap = sp.diags([np.full(N - 1, -1.0), np.full(N, 2.0), np.full(N - 1, -1.0)], [-1, 0, 1])
        sigma = absorber.profile(grid) if absorber is not None else np.zeros(N)
        self.P = (lap.astype(complex) * (h * h / dx ** 2) + sp.diags(W - 1j * sigma)).tocsc()
        x = grid.x
        if self.x_star - 2 * cutoffs.delta1 <= 0:
            raise ValueError("chi support extends past x = 0")
        # padded window: twice the chi support, shifted right if it would reach x = 0
        L = 8 * cutoffs.delta1
        left = max(self.x_star - 0.5 * L, 0.0)
        self.win = np.nonzero((x > left) & (x <= left + L))[0]
        if self.win.size < 4:
            raise GridTooCoarse("cutoff window holds fewer than 4 nodes")
        self.chi = cutoffs.chi(x[self.win] - self.x_star)
        xi = h * 2 * np.pi * np.fft.fftfreq(self.win.size, dx)
        self.psi = cutoffs.psi(xi)
        self._lu, self._key = None, None

    @property
    def size(self):
        return self.win.size

    def factor(self, z, eta):
        key = (complex(z), float(eta))
        if self._key != key:
            A = (self.P - (z + 1j * eta) * sp.identity(self.P.shape[0], format="csc")).tocsc()
            self._lu, self._key = spla.splu(A), key
        return self._lu

    def _left(self, w):
        return np.fft.ifft(self.psi * np.fft.fft(self.chi * w))

    def _right(self, w):
        return self.chi * np.fft.ifft(self.psi * np.fft.fft(w))

    def apply(self, w, z, eta, adjoint=False):
        lu = self.factor(z, eta)
        f = np.zeros(self.P.shape[0], dtype=complex)
        f[self.win] = self._left(w)
        y = lu.solve(f, trans="H" if adjoint else "N")
        return self._right(y[self.win])

    def norm(self, z, eta, tol=1e-8, max_iter=5000, seed=0):
        """Largest singular value by power iteration on R R^*."""
        if eta <= 0:
            raise ValueError("eta must be positive")
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(self.size) + 1j * rng.standard_normal(self.size)
        v /= np.linalg.norm(v)
        prev = 0.0
        for _ in range(max_iter):
            w = self.apply(self.apply(v, z, eta, adjoint=True), z, eta)
            lam = np.linalg.norm(w)
            if lam == 0:
                return 0.0
            v = w / lam
            if abs(lam - prev) < tol * lam:
                return float(np.sqrt(lam))
            prev = lam
        raise NotConverged(f"power iteration did not reach {tol:g} in {max_iter} steps "
                           f"(h={self.h}, z={z})")

    def dense(self, z, eta):
        """Dense sandwiched resolvent (oracle for small grids)."""
        cols = [self.apply(e, z, eta) for e in np.eye(self.size)]
        return np.array(cols).T


def cutoff_resolvent_norm(model, h, n, z, eta, cutoffs=None, grid=None, **kw):
    cutoffs = cutoffs or CutoffSpec()
    grid = grid or semiclassical_grid(h)
    return SandwichedResolvent(model, h, n, grid, cutoffs, **kw).norm(z, eta)


def dense_norm(model, h, n, z, eta, cutoffs, grid, **kw):
    R = SandwichedResolvent(model, h, n, grid, cutoffs, **kw).dense(z, eta)
    return float(np.linalg.svd(R, compute_uv=False)[0])


# --- scans ---------------------------------------------------------------------------------

@dataclass(frozen=True)
class ScanConfig:
    h_list: tuple = tuple(2.0 ** -p for p in range(4, 10))
    n: int = 0
    cutoffs: CutoffSpec = CutoffSpec()
    z_halfwidth: float = 0.1
    eta_power: float = 2.0           # eta = h^eta_power
    x_max: float = 6.0
    points_per_h: float = 10.0
    absorber_strength: float = 1.0
    v_sign: float = -1.0
    z_samples_per_h: float = 4.0     # coarse z-grid spacing h / z_samples_per_h
    min_z_samples: int = 41

    def validate(self):
        h = np.asarray(self.h_list, float)
        if h.size < 5:
            raise ValueError("resolvent scan needs at least 5 h values")
        if np.any((h <= 0) | (h >= 1)):
            raise ValueError("h values must lie in (0, 1)")
        r = np.log2(h[:-1] / h[1:])
        if not np.allclose(r, np.round(r)) or np.any(np.round(r) < 1):
            raise ValueError("h_list must be decreasing and dyadic")
        if self.z_halfwidth <= 0:
            raise ValueError("z_halfwidth must be positive")

    def to_dict(self):
        d = asdict(self)
        d["h_list"] = list(self.h_list)
        return d


def trapped_level(model, h, n):
    """Centre C of the z-window: V1(x*) + (h n)^2 V2(x*)."""
    xs = model.profile_1.spec.inflection_point
    return float(model.V1(xs)[0] + (h * n) ** 2 * model.V2(xs)[0])


@dataclass
class HResult:
    h: float
    n: int
    eta: float
    z_best: float
    sup_norm: float
    z: np.ndarray
    norms: np.ndarray


def sup_over_window(op, C, halfwidth, eta, n_coarse, n_refine=3):
    """Coarse z-grid on [C - w, C + w] followed by bounded refinement of the best candidates."""
    zs = np.linspace(C - halfwidth, C + halfwidth, n_coarse)
    vals = np.array([op.norm(z, eta) for z in zs])
    best, zb = float(vals.max()), float(zs[int(np.argmax(vals))])
    for j in np.argsort(vals)[-n_refine:]:
        lo, hi = zs[max(j - 1, 0)], zs[min(j + 1, n_coarse - 1)]
        r = minimize_scalar(lambda z: -op.norm(z, eta), bounds=(lo, hi), method="bounded",
                            options={"xatol": 1e-3 * eta})
        if -r.fun > best:
            best, zb = float(-r.fun), float(r.x)
    return zb, best, zs, vals


def _scan_task(args):
    model, h, cfg = args
    grid = semiclassical_grid(h, cfg.x_max, cfg.points_per_h)
    op = SandwichedResolvent(model, h, cfg.n, grid, cfg.cutoffs,
                             Absorber(cfg.absorber_strength), cfg.v_sign)
    eta = h ** cfg.eta_power
    C = trapped_level(model, h, cfg.n)
    n_coarse = int(max(cfg.min_z_samples, np.ceil(2 * cfg.z_halfwidth * cfg.z_samples_per_h / h)))
    zb, best, zs, vals = sup_over_window(op, C, cfg.z_halfwidth, eta, n_coarse)
    return HResult(h, cfg.n, eta, zb, best, zs, vals)


@dataclass
class ResolventScan:
    config: dict
    results: list
    fitted_slope: float
    r2: float
    residuals: list
    ci95: float
    theory_slope: float
    m: Optional[int]
    notes: dict = field(default_factory=dict)

    @property
    def h_list(self):
        return [r.h for r in self.results]

    @property
    def sup_norms(self):
        return [r.sup_norm for r in self.results]

    def ff_products(self, r=None):
        """h^(2-2r) sup-norm (bounded iff the sup-norm is O(h^-(2-2r)))."""
        r = r if r is not None else (2.0 / (2 * self.m + 3) if self.m else 0.5)
        return [h ** (2 - 2 * r) * s for h, s in zip(self.h_list, self.sup_norms)]

    def to_dict(self):
        return {"config": self.config, "m": self.m, "theory_slope": self.theory_slope,
                "fitted_slope": self.fitted_slope, "r2": self.r2, "residuals": self.residuals,
                "slope_ci95": self.ci95,
                "h": self.h_list, "sup_norm": self.sup_norms,
                "z_best": [r.z_best for r in self.results],
                "eta": [r.eta for r in self.results],
                "ff_products": self.ff_products(), "notes": self.notes}

    def to_json(self, path=None):
        txt = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(txt)
        return txt

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["h", "z", "n", "norm"])
            for r in self.results:
                for z, v in zip(r.z, r.norms):
                    w.writerow([format(r.h, ".17g"), format(z, ".17g"), r.n, format(v, ".17g")])
                w.writerow([format(r.h, ".17g"), format(r.z_best, ".17g"), r.n,
                            format(r.sup_norm, ".17g")])

    def plot_series(self):
        lx = np.log(1 / np.asarray(self.h_list))
        ly = np.log(self.sup_norms)
        icpt = ly.mean() - self.fitted_slope * lx.mean()
        mid = ly.mean() - self.theory_slope * lx.mean()
        return {"data": (lx, ly), "fit": (lx, icpt + self.fitted_slope * lx),
                "theory": (lx, mid + self.theory_slope * lx)}


def theory_slope(m):
    return (4 * m + 2) / (2 * m + 3) if m else 1.0


def fit_norms(h_list, norms, min_r2=0.9):
    """Slope of log(norm) against log(1/h)."""
    return loglog_fit(1.0 / np.asarray(h_list, float), norms, min_r2)


def resolvent_scan_fit(model, cfg=None, mapper=map, min_r2=0.9):
    cfg = cfg or ScanConfig()
    cfg.validate()
    results = list(mapper(_scan_task, [(model, h, cfg) for h in cfg.h_list]))
    slope, _, r2, resid, half = fit_norms([r.h for r in results], [r.sup_norm for r in results],
                                          min_r2)
    return ResolventScan(cfg.to_dict(), results, slope, r2, [float(v) for v in resid], half,
                         theory_slope(model.m), model.m)


# --- quasimode residual --------------------------------------------------------------------

def quasimode_residual(model, h, n, z_window, cutoffs=None, grid=None, eta=None, n_coarse=41,
                       **kw):
    """(z_best, residual): residual = 1 / sup_z ||R(z)|| over the window."""
    cutoffs = cutoffs or CutoffSpec()
    grid = grid or semiclassical_grid(h)
    eta = h * h if eta is None else eta
    op = SandwichedResolvent(model, h, n, grid, cutoffs, **kw)
    lo, hi = z_window
    zb, best, _, _ = sup_over_window(op, 0.5 * (lo + hi), 0.5 * (hi - lo), eta, n_coarse)
    return zb, 1.0 / best


def dense_quasimode_residual(model, h, n, z_window, cutoffs, grid, eta=None, n_coarse=41, **kw):
    """Oracle: smallest singular value of R(z)^-1 restricted to ran(R), by dense SVD."""
    eta = h * h if eta is None else eta
    op = SandwichedResolvent(model, h, n, grid, cutoffs, **kw)

    def smin(z):
        return 1.0 / float(np.linalg.svd(op.dense(z, eta), compute_uv=False)[0])

    zs = np.linspace(z_window[0], z_window[1], n_coarse)
    vals = np.array([smin(z) for z in zs])
    j = int(np.argmin(vals))
    r = minimize_scalar(smin, bounds=(zs[max(j - 1, 0)], zs[min(j + 1, zs.size - 1)]),
                        method="bounded", options={"xatol": 1e-3 * eta})
    return (float(r.x), float(r.fun)) if r.fun < vals[j] else (float(zs[j]), float(vals[j]))
