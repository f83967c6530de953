"""Second-microlocal commutant, discrete Weyl quantisation and commutator positivity checks.

The commutant lives near the degenerate trapped point (x*, 0) and is built from

    Lambda(r)   = int_0^r <t>^(-1-eps0) dt          (odd, bounded)
    Lambda_2(r) = int_-inf^r <t>^(-1-eps0) dt       (= Lambda(r) + Lambda(inf))

in the rescaled coordinates X - 1 = (x - x*) / mu^alpha, Xi = xi / mu^beta with
mu = h / h_tilde, alpha = 2 / (2 m + 3), beta = 1 - alpha.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, special

from .smoothing import PoorFit, loglog_fit


class ScaleViolation(ValueError):
    pass


class NyquistViolation(ValueError):
    pass


class SignViolation(RuntimeError):
    pass


# --- Lambda functions ------------------------------------------------------------------

def lambda_inf(epsilon0):
    """Lambda(inf) = B(1/2, eps0/2) / 2."""
    if epsilon0 <= 0:
        raise ValueError("epsilon0 must be positive")
    return 0.5 * special.beta(0.5, 0.5 * epsilon0)


def _lambda_closed(r, e):
    r = np.asarray(r, dtype=float)
    a, b = 0.5, 0.5 * e
    r2 = r * r
    u = r2 / (1.0 + r2)
    linf = lambda_inf(e)
    # I_u(a, b) loses digits as u -> 1; use the reflected tail there
    with np.errstate(divide="ignore", invalid="ignore"):
        head = linf * special.betainc(a, b, u)
        tail = linf * (1.0 - special.betainc(b, a, 1.0 / (1.0 + r2)))
    val = np.where(u < 0.5, head, tail)
    return np.sign(r) * val


def _lambda_quad(r, e):
    f = lambda t: (1.0 + t * t) ** (-0.5 - 0.5 * e)
    out = []
    for v in np.atleast_1d(r).ravel():
        val, _ = integrate.quad(f, 0.0, abs(v), epsabs=1e-13, epsrel=1e-13, limit=200)
        out.append(np.sign(v) * val)
    return np.reshape(out, np.shape(r))


def lambda_functions(r, epsilon0=1.0, method="closed"):
    """(Lambda(r), Lambda_2(r)).

    method="closed" uses the regularised incomplete beta function
    (Lambda(r) = sign(r) Lambda(inf) I_{r^2/(1+r^2)}(1/2, eps0/2)); "quad" integrates
    adaptively.  Both agree to ~1e-13.
    """
    if epsilon0 <= 0:
        raise ValueError("epsilon0 must be positive")
    if method == "closed":
        L = _lambda_closed(r, epsilon0)
    elif method == "quad":
        L = _lambda_quad(r, epsilon0)
    else:
        raise ValueError(f"unknown method {method!r}")
    L2 = L + lambda_inf(epsilon0)
    if np.ndim(r) == 0:
        return float(L), float(L2)
    return L, L2


def lambda_prime(r, epsilon0=1.0):
    return (1.0 + np.asarray(r, dtype=float) ** 2) ** (-0.5 - 0.5 * epsilon0)


# --- smooth cutoffs ---------------------------------------------------------------------

def _psi0(t):
    t = np.asarray(t, dtype=float)
    return np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)


def _dpsi0(t):
    t = np.asarray(t, dtype=float)
    tt = np.where(t > 0, t, 1.0)
    return np.where(t > 0, np.exp(-1.0 / tt) / tt ** 2, 0.0)


def bump(s, a):
    """Smooth even cutoff: 1 on |s| <= a, 0 on |s| >= 2a."""
    t = np.clip((np.abs(np.asarray(s, dtype=float)) - a) / a, 0.0, 1.0)
    p, q = _psi0(1.0 - t), _psi0(t)
    return p / (p + q)


def bump_prime(s, a):
    s = np.asarray(s, dtype=float)
    t = (np.abs(s) - a) / a
    inside = (t > 0) & (t < 1)
    # exp(-1/t) underflows to 0 well before t = 1e-3, so clipping there is exact in double
    tc = np.clip(t, 1e-3, 1 - 1e-3)
    p, q = _psi0(1.0 - tc), _psi0(tc)
    dp, dq = -_dpsi0(1.0 - tc), _dpsi0(tc)
    dt = (dp * q - p * dq) / (p + q) ** 2
    return np.where(inside, dt * np.sign(s) / a, 0.0)


# --- symbol ------------------------------------------------------------------------------

@dataclass
class CommutantSymbol:
    h: float
    h_tilde: float
    epsilon0: float = 1.0
    delta1: float = 0.3
    m1: int = 1
    x_star: float = 1.0
    alpha: float = field(init=False)
    beta: float = field(init=False)

    def __post_init__(self):
        if not 0 < self.h < 1:
            raise ScaleViolation(f"h = {self.h} must lie in (0, 1)")
        if self.h_tilde <= self.h:
            raise ScaleViolation(f"h_tilde = {self.h_tilde} must exceed h = {self.h}")
        self.alpha = 2.0 / (2 * self.m1 + 3)
        self.beta = 1.0 - self.alpha

    @property
    def mu(self):
        return self.h / self.h_tilde

    @property
    def sx(self):
        return self.mu ** self.alpha

    @property
    def sxi(self):
        return self.mu ** self.beta

    @property
    def bound(self):
        li = lambda_inf(self.epsilon0)
        return li * 2 * li

    def _parts(self, x, xi):
        X = (np.asarray(x) - self.x_star) / self.sx
        Xi = np.asarray(xi) / self.sxi
        L, _ = lambda_functions(Xi, self.epsilon0)
        _, L2 = lambda_functions(X, self.epsilon0)
        cx = bump(np.asarray(x) - self.x_star, self.delta1)
        cxi = bump(xi, self.delta1)
        return X, Xi, L, L2, cx, cxi

    def __call__(self, x, xi):
        x, xi = np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float))
        _, _, L, L2, cx, cxi = self._parts(x, xi)
        return L * L2 * cx * cxi

    def d_xi(self, x, xi):
        x, xi = np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float))
        X, Xi, L, L2, cx, cxi = self._parts(x, xi)
        return (lambda_prime(Xi, self.epsilon0) / self.sxi * L2 * cx * cxi
                + L * L2 * cx * bump_prime(xi, self.delta1))

    def d_x(self, x, xi):
        x, xi = np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float))
        X, Xi, L, L2, cx, cxi = self._parts(x, xi)
        return (L * lambda_prime(X, self.epsilon0) / self.sx * cx * cxi
                + L * L2 * bump_prime(x - self.x_star, self.delta1) * cxi)

    def to_dict(self):
        return {"h": self.h, "h_tilde": self.h_tilde, "epsilon0": self.epsilon0,
                "delta1": self.delta1, "m1": self.m1, "x_star": self.x_star,
                "alpha": self.alpha, "beta": self.beta}


def build_commutant(h, h_tilde=None, epsilon0=1.0, delta1=0.3, m1=1, x_star=1.0, eps=None,
                    h_tilde_rule="fixed"):
    """Commutant symbol; h_tilde defaults to a fixed 1/2 ("fixed") or sqrt(h) ("sqrt")."""
    if h_tilde is None:
        h_tilde = np.sqrt(h) if h_tilde_rule == "sqrt" else 0.5
    if h_tilde <= h:
        raise ScaleViolation(f"h_tilde = {h_tilde} must exceed h = {h}")
    if h_tilde / h < 8:
        raise ScaleViolation(f"h_tilde / h = {h_tilde / h:.3g} < 8")
    if eps is not None and delta1 < 4 * eps:
        raise ValueError(f"delta1 = {delta1} must be at least 4 eps = {4 * eps}")
    return CommutantSymbol(h, h_tilde, epsilon0, delta1, m1, x_star)


# --- phase-space lattice and quantisation ----------------------------------------------

@dataclass(frozen=True)
class PhaseGrid:
    """Periodic x-lattice on [x_c - L/2, x_c + L/2) with its dual xi-lattice at scale h."""
    h: float
    x_center: float
    length: float
    n: int

    @classmethod
    def for_symbol(cls, h, x_center=1.0, delta1=0.3, nyquist_factor=3.0, pad=2.0, x_min=0.05):
        """Lattice for symbols supported in |x - x_center| <= 2 delta1.

        The period is pad * 4 delta1 and the spacing gives max|xi| = nyquist_factor * 4 delta1.
        The window is shifted right when it would reach below x_min (the periodisation
        gap around the support is unchanged by the shift).
        """
        length = pad * 4 * delta1
        dx_max = np.pi * h / (nyquist_factor * 4 * delta1)
        n = int(np.ceil(length / dx_max))
        n += n % 2
        left = max(x_center - 0.5 * length, x_min)
        if left > x_center - 2 * delta1:
            raise ValueError("symbol support reaches below x_min")
        return cls(h, left + 0.5 * length, length, n)

    @property
    def dx(self):
        return self.length / self.n

    @property
    def x(self):
        return self.x_center - 0.5 * self.length + self.dx * np.arange(self.n)

    @property
    def xi(self):
        return self.h * 2 * np.pi * np.fft.fftfreq(self.n, self.dx)

    @property
    def xi_max(self):
        return np.pi * self.h / self.dx

    def check_nyquist(self, delta1):
        if self.xi_max < 4 * delta1:
            raise NyquistViolation(f"max|xi| = {self.xi_max:.3g} < 4 delta1 = {4 * delta1:.3g}")

    def to_dict(self):
        return {"h": self.h, "x_center": self.x_center, "length": self.length, "n": self.n}

    # spectral operators on the periodic lattice
    def fourier_multiplier(self, m):
        """Matrix of m(hD) for a callable or array m on the xi-lattice."""
        vals = m(self.xi) if callable(m) else np.asarray(m)
        F = np.fft.fft(np.eye(self.n), axis=0)
        return np.fft.ifft(vals[:, None] * F, axis=0)

    def apply_multiplier(self, m, u):
        vals = m(self.xi) if callable(m) else np.asarray(m)
        return np.fft.ifft(vals * np.fft.fft(u))


def weyl_quantize(symbol, grid, h=None, delta1=None):
    """Weyl matrix M[i, j] = N^-1 sum_l a((x_i + x_j)/2, xi_l) exp(2 pi i l (i - j) / N).

    With the quadrature weight dx this is the midpoint-rule discretisation of
    (2 pi h)^-1 int a((x+y)/2, xi) exp(i (x - y) xi / h) dxi.  `symbol` is a
    vectorised callable a(x, xi).
    """
    if h is not None and not np.isclose(h, grid.h):
        raise ValueError("grid and quantisation use different h")
    if delta1 is not None:
        grid.check_nyquist(delta1)
    N, x0, dx = grid.n, grid.x[0], grid.dx
    # torus midpoints x0 + s dx / 2, s = 0 .. 2N-1; pairs more than half a period apart take
    # the midpoint along the shorter arc (s + N), otherwise the two window edges couple
    mids = x0 + 0.5 * dx * np.arange(2 * N)
    A = symbol(mids[:, None], grid.xi[None, :])
    K = np.fft.ifft(A, axis=1)                     # K[s, d], d = (i - j) mod N
    i, j = np.indices((N, N))
    d, s = i - j, i + j
    far = np.abs(d) > N // 2
    M = K[np.where(far, (s + N) % (2 * N), s), d % N]
    if N % 2 == 0:
        tie = np.abs(d) == N // 2
        M[tie] = 0.5 * (K[s[tie], d[tie] % N] + K[(s[tie] + N) % (2 * N), d[tie] % N])
    return M


def hermitian_part(M):
    return 0.5 * (M + M.conj().T)


# --- sign and Garding checks --------------------------------------------------------------

@dataclass
class SignReport:
    max_product: float          # max of V2' d_xi a over {|xi| <= delta1} within supp a
    argmax: tuple
    garding_min_eig: float      # smallest eigenvalue of (-V2' d_xi a)^w on band-limited states
    garding_C: float            # max(0, -min_eig) / h
    literal_min_eig: float      # same for the opposite sign, -(-V2' d_xi a)^w
    h: float

    def to_dict(self):
        return dict(self.__dict__, argmax=list(self.argmax))


def omega_symbol(model, symbol):
    """Nonnegative symbol -V2'(x) d_xi a on {|xi| <= delta1}: the sign of the omega-term."""
    def b(x, xi):
        return -model.V2(np.asarray(x).ravel(), 1).reshape(np.shape(x)) * symbol.d_xi(x, xi)
    return b


def _band_projector(grid, eps):
    keep = np.nonzero(np.abs(grid.xi) <= eps)[0]
    F = np.fft.fft(np.eye(grid.n), axis=0, norm="ortho")
    return F.conj().T[:, keep]     # orthonormal columns = plane waves with |xi| <= eps


def commutant_sign_check(model, symbol, grid=None, eps=0.02, n_x=401, n_xi=401, tol=1e-12,
                         raise_on_violation=True):
    """Pointwise sign of V2' d_xi a where chi(xi) = 1, plus the quantised (Garding) check."""
    d1 = symbol.delta1
    xs = np.linspace(symbol.x_star - 2 * d1, symbol.x_star + 2 * d1, n_x)
    xis = np.linspace(-d1, d1, n_xi)
    X, XI = np.meshgrid(xs, xis, indexing="ij")
    prod = model.V2(xs, 1)[:, None] * symbol.d_xi(X, XI)
    idx = np.unravel_index(int(np.argmax(prod)), prod.shape)
    mx = float(prod[idx])
    where = (float(xs[idx[0]]), float(xis[idx[1]]))
    if mx > tol and raise_on_violation:
        raise SignViolation(f"V2' d_xi a = {mx:.3g} > 0 at (x, xi) = {where}")
    grid = grid or PhaseGrid.for_symbol(symbol.h, symbol.x_star, d1)
    B = weyl_quantize(omega_symbol(model, symbol), grid, delta1=d1)
    Q = _band_projector(grid, eps)
    Hb = hermitian_part(B)
    lam = np.linalg.eigvalsh(Q.conj().T @ Hb @ Q)
    return SignReport(mx, where, float(lam[0]), max(0.0, -float(lam[0])) / symbol.h,
                      float(-lam[-1]), symbol.h)


def garding_sweep(model, h_list, eps=0.02, **kw):
    reps = [commutant_sign_check(model, build_commutant(h, **kw), eps=eps) for h in h_list]
    C = [r.garding_C for r in reps]
    pos = [c for c in C if c > 0]
    spread = max(pos) / min(pos) if pos else 1.0
    return reps, spread


# --- commutator scaling -------------------------------------------------------------------

def semiclassical_hamiltonian(model, grid, which=1):
    """(hD)^2 + V_which on the periodic phase lattice."""
    V = model.V1(grid.x) if which == 1 else model.V2(grid.x)
    return grid.fourier_multiplier(lambda xi: xi ** 2) + np.diag(V)


def local_quasimode(model, grid, window_scale=1.0, m=1):
    """Dirichlet eigenvector of (hD)^2 + V1 on |x - x*| <= window_scale h^(2/(2m+3)) nearest V1(x*)."""
    from scipy.linalg import eigh_tridiagonal
    xs = model.profile_1.spec.inflection_point
    half = window_scale * grid.h ** (2.0 / (2 * m + 3))
    idx = np.nonzero(np.abs(grid.x - xs) <= half)[0]
    if idx.size < 3:
        raise ValueError("quasimode window holds fewer than 3 lattice points")
    h2 = grid.h ** 2 / grid.dx ** 2
    d = 2 * h2 + model.V1(grid.x[idx])
    lam, vec = eigh_tridiagonal(d, np.full(idx.size - 1, -h2))
    j = int(np.argmin(np.abs(lam - model.trapped_energy(1))))
    v = np.zeros(grid.n, dtype=complex)
    v[idx] = vec[:, j] * np.sign(vec[np.argmax(np.abs(vec[:, j])), j])
    return v / np.linalg.norm(v)


def coherent_state(grid, x0=1.0, width=None, xi0=0.0, m=1):
    width = width if width is not None else grid.h ** (2.0 / (2 * m + 3))
    v = np.exp(-((grid.x - x0) ** 2) / (2 * width ** 2) + 1j * xi0 * grid.x / grid.h)
    return v / np.linalg.norm(v)


@dataclass
class CommutatorRecord:
    h: float
    h_tilde: float
    Q: float                  # <i[P, a^w] v, v> / ||v||^2
    Q_alt: float              # <i P a^w v, v> - <i a^w P v, v>, same normalisation
    omega: float              # <(-V2' d_xi a)^w v, v> / ||v||^2
    n: int

    @property
    def omega_term(self):
        return self.n ** 2 * self.omega


@dataclass
class CommutatorReport:
    records: list
    slope: float
    r2: float
    ci95: float
    theory_slope: float
    omega_C: float            # max(0, -omega) / h over the sweep

    def to_dict(self):
        return {"records": [dict(r.__dict__, omega_term=r.omega_term) for r in self.records],
                "slope": self.slope, "r2": self.r2, "slope_ci95": self.ci95,
                "theory_slope": self.theory_slope, "omega_C": self.omega_C}


def commutator_values(model, symbol, grid, v, n=0):
    P = semiclassical_hamiltonian(model, grid)
    A = weyl_quantize(symbol, grid, delta1=symbol.delta1)
    nv = np.vdot(v, v).real
    Cm = 1j * (P @ A - A @ P)
    Q = np.vdot(v, Cm @ v) / nv
    Q_alt = (np.vdot(v, 1j * (P @ (A @ v))) - np.vdot(v, 1j * (A @ (P @ v)))) / nv
    B = weyl_quantize(omega_symbol(model, symbol), grid)
    om = np.vdot(v, B @ v) / nv
    return Q, Q_alt, om


def commutator_scaling_test(model, h_list, n=0, states="quasimode", h_tilde_rule="fixed",
                            h_tilde=None, delta1=0.3, epsilon0=1.0, min_r2=0.9, mapper=map):
    """Q(v_h, h) over an h-sweep and its log-log slope against h."""
    m1 = model.profile_1.spec.inflection_order_m or 1
    xs = model.profile_1.spec.inflection_point
    tasks = [(model, h, n, states, h_tilde_rule, h_tilde, delta1, epsilon0, m1, xs) for h in h_list]
    recs = list(mapper(_commutator_task, tasks))
    for r in recs:
        if not r.Q > 0:
            raise SignViolation(f"commutator Q = {r.Q:.3g} <= 0 at h = {r.h}")
    slope, _, r2, _, half = loglog_fit([r.h for r in recs], [r.Q for r in recs], min_r2)
    omega_C = max(max(0.0, -r.omega) / r.h for r in recs)
    return CommutatorReport(recs, slope, r2, half, (4 * m1 + 2) / (2 * m1 + 3), omega_C)


def _commutator_task(args):
    model, h, n, states, rule, h_tilde, delta1, epsilon0, m1, xs = args
    sym = build_commutant(h, h_tilde, epsilon0, delta1, m1, xs, h_tilde_rule=rule)
    grid = PhaseGrid.for_symbol(h, xs, delta1)
    if callable(states):
        v = states(model, grid)
    elif states == "quasimode":
        v = local_quasimode(model, grid, m=m1)
    elif states == "coherent":
        v = coherent_state(grid, xs, m=m1)
    else:
        raise ValueError(f"unknown state family {states!r}")
    Q, Qa, om = commutator_values(model, sym, grid, v, n)
    return CommutatorRecord(h, sym.h_tilde, float(Q.real), float(Qa.real), float(om.real), n)


# --- dumps --------------------------------------------------------------------------------

def dump_symbol(symbol, grid, stem):
    """<stem>.bin: uint64 LE count then row-major float64 LE samples a(x_i, xi_l); <stem>.json."""
    import struct
    stem = Path(stem)
    xi = np.fft.fftshift(grid.xi)
    S = np.ascontiguousarray(symbol(grid.x[:, None], xi[None, :]), dtype="<f8")
    with open(stem.with_suffix(".bin"), "wb") as fh:
        fh.write(struct.pack("<Q", S.size))
        fh.write(S.tobytes())
    meta = {"symbol": symbol.to_dict(), "grid": grid.to_dict(), "shape": list(S.shape),
            "axes": ["x (ascending)", "xi (ascending, fftshifted)"], "dtype": "float64-le"}
    stem.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return stem.with_suffix(".json"), stem.with_suffix(".bin")
