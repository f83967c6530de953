"""Local-smoothing quotients, loss-exponent regression and the three-term weighted estimate.

For unit-L^2 data concentrated at angular frequency k, the weighted space-time
quantity

    LHS(k) = int_0^T || <x>^-3/2 u ||_{H^1}^2 dt

scales like k^(2s) when the estimate LHS <= C ||u_0||_{H^s}^2 is sharp, so the
required regularity is read off as half the log-log slope of LHS against k.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .evolve import InitialDataSpec, evolve_mode, make_initial_data
from .geometry import (LocalWeights, RadialGrid, Sponge, assemble_mode_operator,
                       sobolev_norm)


class PoorFit(RuntimeError):
    pass


def theory_exponent(m):
    """Regularity (2m+1)/(2m+3) needed on the data; m=None means no trapping (1/2)."""
    if m is None:
        return 0.5
    return (2 * m + 1) / (2 * m + 3)


@dataclass(frozen=True)
class EvolveConfig:
    T: float = 1.0
    dt: float = 1e-3
    sponge: bool = True
    sponge_strength: float = 50.0
    # scale sigma0 and dt with the data energy E = <P u0, u0> so that fast
    # waves are absorbed and resolved: sigma0 = max(strength, 30 sqrt(E)), dt <= 0.05 / E
    energy_scaled: bool = True
    stop_below: float = 1e-10
    stencil_order: int = 2
    weight_power: float = 1.5       # local weight <x>^-weight_power in the smoothing functional

    def validate(self):
        if self.T < 0:
            raise ValueError("evolve.T must be nonnegative")
        if self.dt <= 0:
            raise ValueError("evolve.dt must be positive")
        if self.T > 0 and self.dt > self.T:
            raise ValueError("evolve.dt must not exceed evolve.T")
        if self.stencil_order not in (2, 4):
            raise ValueError("stencil_order must be 2 or 4")
        if self.weight_power <= 0:
            raise ValueError("weight_power must be positive")


@dataclass
class SmoothingRecord:
    k: float
    n: float
    s_used: float
    lhs: float
    rhs: float
    quotient: float
    energy: float = float("nan")
    h_half: float = float("nan")    # ||u0||^2_{H^1/2}
    t_final: float = float("nan")


def _evolve_functionals(model, state, grid, cfg, functionals):
    """Evolve one mode with the configured sponge/time step; returns (summary, energy)."""
    k, n = state.k, state.n
    op0 = assemble_mode_operator(model, k, n, grid, cfg.stencil_order)
    u = state.amplitudes
    E = float(np.vdot(u, op0.apply(u)).real * grid.dx)
    dt, sponge = cfg.dt, None
    if cfg.sponge:
        strength = cfg.sponge_strength
        if cfg.energy_scaled:
            strength = max(strength, 30.0 * math.sqrt(max(E, 0.0)))
        sponge = Sponge(strength)
    if cfg.energy_scaled and E > 0:
        dt = min(dt, 0.05 / E)
    op = assemble_mode_operator(model, k, n, grid, cfg.stencil_order, sponge=sponge)
    summ = evolve_mode(op, state, cfg.T, dt, functionals,
                       stop_below=cfg.stop_below if cfg.sponge else 0.0)
    return summ, E


def smoothing_quotient(model, data_spec, T, s, grid, cfg=None):
    """Evolve `data_spec` for time T and compare the weighted H^1 integral with ||u0||^2_{H^s}."""
    if not 0 <= s <= 1:
        raise ValueError(f"s = {s} must lie in [0, 1]")
    if T <= 0:
        raise ValueError("T must be positive")
    cfg = replace(cfg or EvolveConfig(), T=T)
    return _quotients(model, data_spec, grid, cfg, [s])[0]


def _quotients(model, data_spec, grid, cfg, s_list):
    state = make_initial_data(data_spec, model, grid, cfg.stencil_order)
    lw = LocalWeights.build(model, grid, cfg.weight_power)
    k, n = state.k, state.n
    summ, E = _evolve_functionals(model, state, grid, cfg, {"h1": lambda u: lw.h1(u, k, n)})
    lhs = summ.integrals["h1"]
    modes = {(k, n): state.amplitudes}
    h_half = sobolev_norm(modes, 0.5, model, grid, cfg.stencil_order)
    out = []
    for s in s_list:
        rhs = sobolev_norm(modes, s, model, grid, cfg.stencil_order)
        out.append(SmoothingRecord(k, n, s, lhs, rhs, lhs / rhs, E, h_half, summ.final.time))
    return out


# --- data families -----------------------------------------------------------------

@dataclass(frozen=True)
class DataFamily:
    """Unit-L^2 initial data parametrised by the angular frequency k.

    coherent: Gaussian at x0 with radial momentum xi_ratio * k / x0 (outgoing);
    quasimode: windowed eigenvector at the trapped energy of the theta-circle.
    """
    kind: str = "quasimode"
    x0: float = 2.0
    width: float = 0.3
    xi_ratio: float = 1.0
    n_ratio: float = 0.0         # n = round(n_ratio * k)
    window_scale: float = 1.0

    def spec(self, k):
        n = float(round(self.n_ratio * k))
        if self.kind == "quasimode":
            return InitialDataSpec("quasimode", k=k, n=n, window_scale=self.window_scale)
        if self.kind == "coherent":
            return InitialDataSpec("gaussian_coherent", self.x0, self.width, k, n,
                                   xi0=self.xi_ratio * k / self.x0)
        raise ValueError(f"unknown data family {self.kind!r}")


FLAT_FAMILY = DataFamily("coherent", x0=2.0, width=0.3, xi_ratio=1.0)
QUASIMODE_FAMILY = DataFamily("quasimode")


def _sweep_task(args):
    model, spec, grid, cfg, s_list = args
    return _quotients(model, spec, grid, cfg, s_list)


def sweep(model, family, k_list, grid, cfg=None, s_list=(0.5,), mapper=map):
    """Quotient records for every k (outer list) and s (inner list).

    `mapper` is any map-like callable (e.g. an executor's map); results are
    gathered in k order so the output does not depend on scheduling.
    """
    cfg = cfg or EvolveConfig()
    tasks = [(model, family.spec(k), grid, cfg, tuple(s_list)) for k in k_list]
    return list(mapper(_sweep_task, tasks))


# --- regression --------------------------------------------------------------------

@dataclass
class ExponentFit:
    k: np.ndarray
    G: np.ndarray
    slope: float
    intercept: float
    r2: float
    residuals: np.ndarray
    ci_halfwidth: float       # 95% half-width on the slope
    fitted_exponent: float    # slope / 2
    ci_exponent: float

    def to_dict(self):
        return {"k": [float(v) for v in self.k], "G": [float(v) for v in self.G],
                "slope": self.slope, "intercept": self.intercept, "r2": self.r2,
                "residuals": [float(v) for v in self.residuals],
                "slope_ci95": self.ci_halfwidth, "fitted_exponent": self.fitted_exponent,
                "fitted_exponent_ci95": self.ci_exponent}


def loglog_fit(x, y, min_r2=0.9):
    """Least squares of log y on log x: (slope, intercept, r2, residuals, 95% half-width)."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    if lx.size < 3:
        raise ValueError("need at least three points for a slope with an error bar")
    res = stats.linregress(lx, ly)
    resid = ly - (res.intercept + res.slope * lx)
    sst = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / sst if sst > 0 else 1.0
    half = float(stats.t.ppf(0.975, lx.size - 2) * res.stderr)
    if r2 < min_r2:
        raise PoorFit(f"log-log regression R^2 = {r2:.3f} < {min_r2} "
                      f"(T too small or grid too coarse?)")
    return float(res.slope), float(res.intercept), r2, resid, half


def exponent_fit_values(k_list, G, min_r2=0.9):
    """Regularity exponent from LHS values G(k) of unit-L^2 data: half the log-log slope."""
    k = np.asarray(k_list, float)
    G = np.asarray(G, float)
    if k.size < 4:
        raise ValueError("exponent_fit needs at least four frequencies")
    if np.any(G <= 0):
        raise ValueError("G(k) must be positive")
    slope, icpt, r2, resid, half = loglog_fit(k, G, min_r2)
    return ExponentFit(k, G, slope, icpt, r2, resid, half, 0.5 * slope, 0.5 * half)


def _check_dyadic(k_list):
    k = np.asarray(k_list, float)
    if k.size < 4:
        raise ValueError("k_list needs at least four entries")
    r = np.log2(k[1:] / k[:-1])
    if np.any(k <= 0) or not np.allclose(r, np.round(r)) or np.any(np.round(r) < 1):
        raise ValueError(f"k_list {list(k_list)} must be increasing and dyadic")


# --- reports -------------------------------------------------------------------------

@dataclass
class SmoothingReport:
    model: dict
    family: dict
    T: float
    records: list
    fit: Optional[ExponentFit]
    theory_exponent: float
    m: Optional[int]
    notes: dict = field(default_factory=dict)

    @property
    def fitted_exponent(self):
        return self.fit.fitted_exponent if self.fit else float("nan")

    @property
    def gain(self):
        return 1.0 - self.fitted_exponent

    @property
    def theory_gain(self):
        return 1.0 - self.theory_exponent

    def to_dict(self):
        return {"model": self.model, "family": self.family, "T": self.T, "m": self.m,
                "records": [asdict(r) for r in self.records],
                "fit": self.fit.to_dict() if self.fit else None,
                "fitted_exponent": self.fitted_exponent, "gain": self.gain,
                "theory_exponent": self.theory_exponent, "theory_gain": self.theory_gain,
                "notes": self.notes}

    def to_json(self, path=None):
        txt = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(txt)
        return txt

    def write_csv(self, path):
        cols = ["k", "n", "s_used", "lhs", "rhs", "quotient", "energy", "h_half", "t_final"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.records:
                w.writerow([format(getattr(r, c), ".17g") for c in cols])

    def plot_series(self):
        """(log k, log G) pairs plus the fitted and theory lines through the data mean."""
        if not self.fit:
            return {}
        lk, lg = np.log(self.fit.k), np.log(self.fit.G)
        mid = lg.mean() - 2 * self.theory_exponent * lk.mean()
        return {"data": (lk, lg),
                "fit": (lk, self.fit.intercept + self.fit.slope * lk),
                "theory": (lk, mid + 2 * self.theory_exponent * lk)}


def exponent_fit(model, family, k_list, T, grid, cfg=None, mapper=map, min_r2=0.9,
                 s_list=None):
    """Sweep `family` over k_list, fit the exponent, and collect a SmoothingReport.

    Quotients are stored at s = 1/2 and at the theory exponent unless `s_list` is given.
    """
    _check_dyadic(k_list)
    cfg = replace(cfg or EvolveConfig(), T=T)
    th = theory_exponent(model.m)
    s_list = tuple(s_list) if s_list is not None else tuple(sorted({0.5, th}))
    per_k = sweep(model, family, k_list, grid, cfg, s_list, mapper)
    records = [r for rows in per_k for r in rows]
    G = [rows[0].lhs for rows in per_k]
    fit = exponent_fit_values(k_list, G, min_r2)
    # same slope measured against the data's own frequency ||u0||^2_{H^1/2}
    lam = [rows[0].h_half for rows in per_k]
    alt = loglog_fit(lam, G, min_r2=-np.inf)
    notes = {"slope_vs_h_half_norm": alt[0], "fitted_exponent_vs_h_half_norm": 0.5 * alt[0],
             "r2_vs_h_half_norm": alt[2]}
    return SmoothingReport(model.to_dict(), asdict(family), T, records, fit, th, model.m, notes)


# --- three-term estimate -------------------------------------------------------------

@dataclass
class LemmaRecord:
    k: float
    n: float
    dx_term: float
    theta_term: float
    omega_term: float
    h_half: float

    @property
    def constant(self):
        return (self.dx_term + self.theta_term + self.omega_term) / self.h_half


@dataclass
class LemmaReport:
    records: list
    T: float

    @property
    def constants(self):
        return [r.constant for r in self.records]

    @property
    def spread(self):
        c = self.constants
        return max(c) / min(c)

    def to_dict(self):
        return {"T": self.T, "records": [dict(asdict(r), constant=r.constant) for r in self.records],
                "constant_spread": self.spread}


def _lemma_task(args):
    model, spec, grid, cfg = args
    state = make_initial_data(spec, model, grid, cfg.stencil_order)
    lw = LocalWeights.build(model, grid)
    k, n = state.k, state.n
    funcs = {name: (lambda u, j=j: lw.lemma_terms(u, k, n)[j])
             for j, name in enumerate(("dx", "theta", "omega"))}
    summ, _ = _evolve_functionals(model, state, grid, cfg, funcs)
    h_half = sobolev_norm({(k, n): state.amplitudes}, 0.5, model, grid, cfg.stencil_order)
    I = summ.integrals
    return LemmaRecord(k, n, I["dx"], I["theta"], I["omega"], h_half)


def lemma_initial_check(model, data_specs, T, grid, cfg=None, mapper=map):
    """Time-integrated three-term weighted estimate and its realised constants.

    `data_specs` is a single InitialDataSpec or a sequence of them (e.g. a k-sweep).
    """
    if isinstance(data_specs, InitialDataSpec):
        data_specs = [data_specs]
    cfg = replace(cfg or EvolveConfig(), T=T)
    recs = list(mapper(_lemma_task, [(model, s, grid, cfg) for s in data_specs]))
    return LemmaReport(recs, T)
