import warnings

import numpy as np
import pytest
import scipy.fft as sfft
import scipy.sparse as sp
from hypothesis import given, strategies as st

from warpsmooth import evolve as ev
from warpsmooth.evolve import InitialDataSpec, make_initial_data, evolve_mode, CrankNicolson
from warpsmooth.geometry import RadialGrid, assemble_mode_operator, LocalWeights


def test_coherent_data_unit_norm(model, grid):
    s = make_initial_data(InitialDataSpec("gaussian_coherent", 1.0, 0.1, 32, 0), model, grid)
    assert s.norm(grid.dx) == pytest.approx(1.0, abs=1e-14)


def test_quasimode_energy_window(model):
    g = RadialGrid(8.0, 2303)
    k = 64
    s = make_initial_data(InitialDataSpec("quasimode", k=k), model, g)
    op = assemble_mode_operator(model, k, 0, g)
    E = np.vdot(s.amplitudes, op.apply(s.amplitudes)).real * g.dx
    assert abs(E - k * k * model.V1(1.0)[0]) <= 0.05 * k * k


def test_random_data_reproducible(model, grid):
    spec = InitialDataSpec("band_limited_random", 3.0, 0.4, seed=7)
    a = make_initial_data(spec, model, grid).amplitudes
    b = make_initial_data(spec, model, grid).amplitudes
    assert a.tobytes() == b.tobytes()


def test_quasimode_window_too_small(model):
    with pytest.raises(ev.NoEigenpair):
        make_initial_data(InitialDataSpec("quasimode", k=64), model, RadialGrid(8.0, 15))


def test_bad_spec_rejected(grid, model):
    with pytest.raises(ValueError):
        make_initial_data(InitialDataSpec("gaussian_coherent", 1.0, grid.dx), model, grid)
    with pytest.raises(ValueError):
        make_initial_data(InitialDataSpec("gaussian_coherent", 9.0, 0.1), model, grid)


def test_eigenvector_rational_phase(model, grid):
    op = assemble_mode_operator(model, 4, 1, grid)
    lam, vec = op.eigh()
    u0 = ev.ModeState(4, 1, vec[:, 5].astype(complex))
    dt = 1e-3
    u1 = ev.step_crank_nicolson(op, u0, dt)
    phase = (1 - 0.5j * dt * lam[5]) / (1 + 0.5j * dt * lam[5])
    assert np.max(np.abs(u1.amplitudes - phase * u0.amplitudes)) <= 1e-12
    assert u1.time == dt


def test_norm_drift_10k_steps(model):
    g = RadialGrid(8.0, 2048)
    op = assemble_mode_operator(model, 8, 0, g)
    u0 = make_initial_data(InitialDataSpec("gaussian_coherent", 2.0, 0.2, 8, 0, xi0=5.0), model, g)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ev.BoundaryContamination)
        out = evolve_mode(op, u0, 10.0, 1e-3)
    drift = abs(out.final.norm(g.dx) - 1.0)
    assert drift <= 1e-10


def _sine_oracle(u, dx, t, dt):
    """Crank-Nicolson propagator of the Dirichlet Laplacian applied in its sine eigenbasis."""
    N = u.size
    j = np.arange(1, N + 1)
    lam = (2 - 2 * np.cos(np.pi * j / (N + 1))) / dx ** 2
    steps = int(round(t / dt))
    mult = ((1 - 0.5j * dt * lam) / (1 + 0.5j * dt * lam)) ** steps
    c = sfft.dst(u, type=1)
    return sfft.idst(mult * c, type=1)


@pytest.mark.filterwarnings("ignore::warpsmooth.evolve.BoundaryContamination")
def test_flat_free_evolution_matches_sine_series(flat_model):
    g = RadialGrid(8.0, 1023)
    u0 = make_initial_data(InitialDataSpec("gaussian_coherent", 4.0, 0.3, 0, 0, xi0=3.0), flat_model, g)
    op = assemble_mode_operator(flat_model, 0, 0, g)
    out = evolve_mode(op, u0, 0.5, 1e-3)
    ref = _sine_oracle(u0.amplitudes, g.dx, 0.5, 1e-3)
    assert np.max(np.abs(out.final.amplitudes - ref)) <= 1e-8


def test_zero_time():
    g = RadialGrid(4.0, 63)
    from warpsmooth.geometry import ManifoldModel
    m = ManifoldModel.flat(R0=3.0)
    op = assemble_mode_operator(m, 1, 0, g)
    u0 = make_initial_data(InitialDataSpec("gaussian_coherent", 2.0, 0.3), m, g)
    out = evolve_mode(op, u0, 0.0, 1e-3, {"mass": lambda u: 1.0})
    assert out.integrals == {"mass": 0.0}
    assert np.array_equal(out.final.amplitudes, u0.amplitudes)


@pytest.mark.filterwarnings("ignore::warpsmooth.evolve.BoundaryContamination")
def test_eigenvector_stationary_modulus(model, grid):
    op = assemble_mode_operator(model, 3, 0, grid)
    lam, vec = op.eigh()
    u0 = ev.ModeState(3, 0, vec[:, 0] / np.sqrt(grid.dx) + 0j)
    w = (1 + grid.x ** 2) ** -1.5
    f = lambda u: float(np.sum(w * np.abs(u) ** 2) * grid.dx)
    T = 0.3
    out = evolve_mode(op, u0, T, 1e-3, {"w": f})
    assert out.integrals["w"] == pytest.approx(T * f(u0.amplitudes), rel=1e-10)


def _h1_matrix(lw, k, n, N, dx):
    D = sp.diags([np.ones(N), -np.ones(N)], [0, -1], shape=(N + 1, N)) / dx
    Q = D.T @ sp.diags(lw.w3_mid) @ D + sp.diags(lw.w3 * (k * k * lw.V1 + n * n * lw.V2 + 1))
    return Q.toarray()


def test_weighted_h1_against_diagonalisation(flat_model):
    g = RadialGrid(8.0, 299)
    k = 16
    u0 = make_initial_data(InitialDataSpec("gaussian_coherent", 3.0, 0.3, k, 0, xi0=2.0), flat_model, g)
    # the centrifugal core x < r0 is under-resolved here, but the data never reach it
    op = assemble_mode_operator(flat_model, k, 0, g, check=False)
    lw = LocalWeights.build(flat_model, g)
    T = 0.05
    out = evolve_mode(op, u0, T, 1e-5, {"h1": lambda u: lw.h1(u, k, 0)})
    exact = ev.exact_integrals(op, u0, T, lambda: _h1_matrix(lw, k, 0, g.n_points, g.dx))
    assert out.integrals["h1"] == pytest.approx(exact, rel=1e-6)


def test_time_reversal(model, grid):
    op = assemble_mode_operator(model, 5, 2, grid)
    u = make_initial_data(InitialDataSpec("gaussian_coherent", 1.5, 0.2, 5, 2, xi0=4.0), model, grid).amplitudes
    back = CrankNicolson(op, -1e-3)(CrankNicolson(op, 1e-3)(u))
    assert np.max(np.abs(back - u)) <= 1e-10


@given(st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False),
       st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False))
def test_linearity(model, a, b):
    g = RadialGrid(8.0, 255)
    op = assemble_mode_operator(model, 2, 1, g)
    u = np.exp(-((g.x - 2) ** 2) / 0.2) + 0j
    v = np.exp(-((g.x - 3) ** 2) / 0.3) * np.exp(2j * g.x)
    step = CrankNicolson(op, 1e-2)
    lhs = step(a * u + b * v)
    rhs = a * step(u) + b * step(v)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * (1 + abs(a) + abs(b))


def test_boundary_contamination_warning(flat_model):
    g = RadialGrid(6.0, 255)
    op = assemble_mode_operator(flat_model, 0, 0, g)
    u0 = make_initial_data(InitialDataSpec("gaussian_coherent", 5.0, 0.3, xi0=10.0), flat_model, g)
    with pytest.warns(ev.BoundaryContamination):
        evolve_mode(op, u0, 0.5, 1e-2)


def test_trajectory_csv(model, grid, tmp_path):
    op = assemble_mode_operator(model, 1, 0, grid)
    u0 = make_initial_data(InitialDataSpec("gaussian_coherent", 2.0, 0.2), model, grid)
    out = evolve_mode(op, u0, 0.01, 1e-3, {"m": lambda u: 1.0})
    out.write_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,norm,m" and len(lines) == out.times.size + 1
