"""Crank-Nicolson evolution of single radial modes and time-integrated functionals."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import ModeOperator, assemble_mode_operator, Sponge


class NoEigenpair(RuntimeError):
    pass


class SolveFailure(RuntimeError):
    pass


class BoundaryContamination(UserWarning):
    pass


@dataclass
class ModeState:
    k: float
    n: float
    amplitudes: np.ndarray
    time: float = 0.0

    def norm(self, dx):
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2) * dx))


@dataclass(frozen=True)
class InitialDataSpec:
    kind: str = "gaussian_coherent"  # gaussian_coherent | quasimode | band_limited_random
    x0: float = 1.0
    width: float = 0.1
    k: float = 0
    n: float = 0
    seed: int = 0
    xi0: float = 0.0            # radial momentum of the coherent state
    window_scale: float = 1.0   # quasimode window half-width in units of k^(-2/(2m+3))
    band: float = 20.0          # radial frequency band of the random kind
    n_waves: int = 16

    def validate(self, grid):
        if self.kind not in ("gaussian_coherent", "quasimode", "band_limited_random"):
            raise ValueError(f"unknown initial data kind {self.kind!r}")
        if self.kind != "quasimode" and self.width <= 2 * grid.dx:
            raise ValueError(f"width {self.width} must exceed 2 dx = {2 * grid.dx:.3g}")
        if not 0 < self.x0 < grid.x_max:
            raise ValueError(f"x0 = {self.x0} must lie inside (0, {grid.x_max})")


def _normalise(u, dx):
    return u / np.sqrt(np.sum(np.abs(u) ** 2) * dx)


def quasimode_window(model, k, n, grid, window_scale=1.0):
    """Node indices of the rescaled window |x - x*| <= window_scale * freq^(-2/(2m+3))."""
    prof = model.profile_1 if k >= n else model.profile_2
    xs = prof.spec.inflection_point
    m = prof.spec.inflection_order_m or 1
    freq = max(abs(k), abs(n), 1)
    half = window_scale * freq ** (-2.0 / (2 * m + 3))
    idx = np.nonzero(np.abs(grid.x - xs) <= half)[0]
    return idx, xs


def make_initial_data(spec, model, grid, stencil_order=2):
    spec.validate(grid)
    x, dx = grid.x, grid.dx
    if spec.kind == "gaussian_coherent":
        u = np.exp(-((x - spec.x0) ** 2) / (2 * spec.width ** 2) + 1j * spec.xi0 * x)
    elif spec.kind == "band_limited_random":
        rng = np.random.default_rng(spec.seed)
        xi = rng.uniform(-spec.band, spec.band, spec.n_waves)
        c = rng.standard_normal(spec.n_waves) + 1j * rng.standard_normal(spec.n_waves)
        env = np.exp(-((x - spec.x0) ** 2) / (2 * spec.width ** 2))
        u = env * (np.exp(1j * np.outer(x, xi)) @ c)
    else:
        idx, xs = quasimode_window(model, spec.k, spec.n, grid, spec.window_scale)
        if idx.size < 3:
            raise NoEigenpair(f"quasimode window holds {idx.size} nodes; refine the grid")
        op = assemble_mode_operator(model, spec.k, spec.n, grid, stencil_order, check=False)
        d, offs = op.real_bands()
        lo, hi = idx[0], idx[-1] + 1
        try:
            if len(offs) == 1:
                lam, vec = sla.eigh_tridiagonal(d[lo:hi], offs[0][lo:hi - 1])
            else:
                lam, vec = np.linalg.eigh(op.dense()[lo:hi, lo:hi])
        except (np.linalg.LinAlgError, sla.LinAlgError) as exc:
            raise NoEigenpair(str(exc)) from exc
        target = spec.k ** 2 * float(model.V1(xs)[0]) + spec.n ** 2 * float(model.V2(xs)[0])
        j = int(np.argmin(np.abs(lam - target)))
        u = np.zeros(grid.n_points, dtype=complex)
        u[lo:hi] = vec[:, j]
        # fix the sign so the state is reproducible
        u *= np.sign(u[lo + int(np.argmax(np.abs(vec[:, j])))].real)
    u = _normalise(u.astype(complex), dx)
    return ModeState(spec.k, spec.n, u, 0.0)


class CrankNicolson:
    """(I + i dt/2 P) u+ = (I - i dt/2 P) u with one sparse LU factorisation reused per step."""

    def __init__(self, op, dt):
        if dt == 0:
            raise ValueError("dt must be nonzero")
        self.op, self.dt = op, dt
        P = op.matrix("csc").astype(complex)
        I = sp.identity(P.shape[0], dtype=complex, format="csc")
        self.plus = (I + 0.5j * dt * P).tocsc()
        self.minus = (I - 0.5j * dt * P).tocsr()
        try:
            self.lu = spla.splu(self.plus)
        except RuntimeError as exc:
            raise SolveFailure(f"Crank-Nicolson matrix is singular: {exc}") from exc

    def __call__(self, u):
        return self.lu.solve(self.minus @ u)


def step_crank_nicolson(op, state, dt):
    stepper = CrankNicolson(op, dt)
    return ModeState(state.k, state.n, stepper(np.asarray(state.amplitudes, dtype=complex)),
                     state.time + dt)


@dataclass
class TrajectorySummary:
    final: ModeState
    integrals: dict
    max_boundary: float
    times: np.ndarray
    norms: np.ndarray
    values: dict = field(default_factory=dict)
    stopped_early: bool = False

    def write_csv(self, path):
        names = sorted(self.values)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "norm"] + names)
            for i, t in enumerate(self.times):
                w.writerow([format(t, ".17g"), format(self.norms[i], ".17g")]
                           + [format(self.values[nm][i], ".17g") for nm in names])


def evolve_mode(op, u0, T, dt, functionals=None, record_every=None, stop_below=0.0,
                boundary_fraction=0.02):
    """Step to time T, accumulating each functional by the trapezoid rule in t.

    `functionals` maps a name to a callable u -> float.  With `stop_below > 0`,
    stepping ends once ||u||^2 drops under stop_below * ||u0||^2 (all functionals
    used here are quadratic in u, so the remaining contribution is negligible).
    """
    if T < 0:
        raise ValueError("T must be nonnegative")
    functionals = functionals or {}
    dx = op.grid.dx
    u = np.asarray(u0.amplitudes, dtype=complex).copy()
    n0 = np.sum(np.abs(u) ** 2) * dx
    nb = max(1, int(boundary_fraction * u.size))
    if T == 0:
        zeros = {k: 0.0 for k in functionals}
        return TrajectorySummary(ModeState(u0.k, u0.n, u, u0.time), zeros, 0.0,
                                 np.array([u0.time]), np.array([np.sqrt(n0)]))
    nsteps = max(1, int(np.ceil(T / dt - 1e-9)))
    dt = T / nsteps
    stepper = CrankNicolson(op, dt)
    record_every = record_every or max(1, nsteps // 200)
    prev = {k: f(u) for k, f in functionals.items()}
    acc = {k: 0.0 for k in functionals}
    times, norms = [u0.time], [np.sqrt(n0)]
    values = {k: [v] for k, v in prev.items()}
    max_b = float(np.max(np.abs(u[-nb:])) / np.sqrt(n0)) if n0 > 0 else 0.0
    stopped = False
    t = u0.time
    for i in range(1, nsteps + 1):
        u = stepper(u)
        t = u0.time + i * dt
        cur = {k: f(u) for k, f in functionals.items()}
        for k in acc:
            acc[k] += 0.5 * dt * (prev[k] + cur[k])
        prev = cur
        max_b = max(max_b, float(np.max(np.abs(u[-nb:])) / np.sqrt(n0)))
        nrm2 = np.sum(np.abs(u) ** 2) * dx
        if i % record_every == 0 or i == nsteps:
            times.append(t)
            norms.append(np.sqrt(nrm2))
            for k in values:
                values[k].append(cur[k])
        if stop_below > 0 and nrm2 < stop_below * n0:
            stopped = True
            break
    if op.sponge is None and max_b > 1e-6:
        warnings.warn(f"outer-boundary amplitude reached {max_b:.3g} |u0| without a sponge",
                      BoundaryContamination, stacklevel=2)
    return TrajectorySummary(ModeState(u0.k, u0.n, u, t), acc, max_b, np.array(times),
                             np.array(norms), {k: np.array(v) for k, v in values.items()}, stopped)


# --- dense diagonalisation oracle ----------------------------------------------------

def exact_integrals(op, u0, T, weights_fn):
    """Oracle: int_0^T <W u(t), u(t)> dt for u(t) = exp(-i t P) u0 by full diagonalisation.

    `weights_fn` returns the Hermitian matrix Q of the quadratic form (u^H Q u dx).
    """
    P = op.dense()
    lam, R = np.linalg.eig(P)
    c = np.linalg.solve(R, np.asarray(u0.amplitudes, dtype=complex))
    Q = weights_fn()
    G = R.conj().T @ Q @ R
    dl = np.conj(lam)[:, None] - lam[None, :]
    # int_0^T exp(i t (conj(l_i) - l_j)) dt
    with np.errstate(divide="ignore", invalid="ignore"):
        E = np.where(np.abs(dl) * T < 1e-8, T + 0.5j * dl * T ** 2, (np.exp(1j * dl * T) - 1) / (1j * dl))
    val = np.conj(c) @ (G * E) @ c
    return float(val.real) * op.grid.dx
