import math

import numpy as np
import pytest

from chaoslab import vp1d
from chaoslab.density import DensityGrid, histogram
from chaoslab.dynamics import (NOISE_LABEL, CoupledConfig, SdeParams, brownian_increment,
                               brownian_increments, characteristics_vp, default_dt, em_step,
                               integrate_characteristics, meanfield_force, pairwise_force,
                               run_coupled, simulate)
from chaoslab.errors import BlowUpError, ConfigurationError, DensitySupportError
from chaoslab.initial_data import InitialDensitySpec, PhaseState
from chaoslab.kernels import KernelSpec, coulomb_kernel, kernel_lp

INIT3 = InitialDensitySpec(d=3)


# --- Brownian increments ------------------------------------------------------

def test_increment_rows_agree_and_repeat():
    rows = brownian_increments(4, NOISE_LABEL, 50, 7, 3, 0.01)
    np.testing.assert_array_equal(rows[17], brownian_increment(4, NOISE_LABEL, 17, 7, 3, 0.01))
    np.testing.assert_array_equal(rows, brownian_increments(4, NOISE_LABEL, 50, 7, 3, 0.01))


def test_increment_variance_and_step_independence():
    dt = 0.02
    a = brownian_increments(1, NOISE_LABEL, 1_000_000, 0, 1, dt)[:, 0]
    b = brownian_increments(1, NOISE_LABEL, 1_000_000, 1, 1, dt)[:, 0]
    assert a.var() == pytest.approx(dt, rel=0.01)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.01
    with pytest.raises(ValueError):
        brownian_increment(1, NOISE_LABEL, 0, 0, 1, 0.0)


# --- pairwise and mean-field forces --------------------------------------------

def test_two_body_antisymmetric():
    spec = KernelSpec(family="lp", d=3, delta=0.25, n_particles=2)
    x = np.array([0.7, -0.2, 0.4])
    a = pairwise_force(PhaseState(0, np.stack([x / 2, -x / 2]), np.zeros((2, 3))), spec)
    np.testing.assert_allclose(a[0], kernel_lp(x, spec), rtol=1e-14)
    np.testing.assert_array_equal(a[0], -a[1])


def test_pairwise_force_rejects_exact():
    with pytest.raises(ConfigurationError):
        pairwise_force(PhaseState(0, np.eye(3), np.eye(3)), KernelSpec(family="exact"))


def _uniform_1d(cells=400):
    return DensityGrid(np.array([-1.0]), np.array([2.0 / cells]), np.full(cells, 1.0 / cells))


def test_meanfield_uniform_1d_is_linear():
    spec = KernelSpec(family="exact", d=1, c_d=0.5, sign=1)
    x = np.array([-0.73, -0.3, 0.0012, 0.41, 0.9])[:, None]
    got = meanfield_force(x, _uniform_1d(), spec)[:, 0]
    # int sign(x - y) / 2 dy/2 over [-1, 1] = x / 2, up to one cell of quadrature error
    np.testing.assert_allclose(got, x[:, 0] / 2, atol=1.0 / 400)


def test_meanfield_symmetric_density_zero_at_origin():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(5000, 3))
    g = histogram(np.vstack([pts, -pts]), [-5] * 3, [5] * 3, 10)
    spec = KernelSpec(family="lp", d=3, n_particles=1000)
    assert np.max(np.abs(meanfield_force(np.zeros(3), g, spec))) < 1e-14


def test_meanfield_single_far_cell():
    m = np.zeros((5, 5, 5))
    m[4, 4, 4] = 1.0
    g = DensityGrid(np.zeros(3), np.full(3, 0.1), m)
    c = np.full(3, 0.45)
    p = np.array([0.02, 0.05, 0.01])
    spec = KernelSpec(family="lp", d=3, delta=0.5, n_particles=10_000)
    np.testing.assert_allclose(meanfield_force(p, g, spec)[0],
                               coulomb_kernel(p - c, KernelSpec(family="exact")), rtol=1e-13)


def test_meanfield_preconditions():
    spec = KernelSpec(family="exact", d=1, c_d=0.5)
    with pytest.raises(DensitySupportError):
        meanfield_force([[3.5]], _uniform_1d(), spec)
    half = DensityGrid(np.array([-1.0]), np.array([0.5]), np.full(4, 0.125))
    with pytest.raises(ValueError):
        meanfield_force([[0.0]], half, spec)


# --- Euler-Maruyama -----------------------------------------------------------

def test_em_free_streaming_and_constant_force():
    rng = np.random.default_rng(3)
    s = PhaseState(0.0, rng.normal(size=(10, 2)), rng.normal(size=(10, 2)))
    s1 = em_step(s, np.zeros((10, 2)), 0.0, 0.1, None)
    np.testing.assert_array_equal(s1.X, s.X + s.V * 0.1)
    np.testing.assert_array_equal(s1.V, s.V)
    a = np.tile([0.5, -2.0], (10, 1))
    t = s
    for k in range(40):
        t = em_step(t, a, 0.0, 0.025, None, k)
    np.testing.assert_allclose(t.V, s.V + 40 * 0.025 * a, atol=1e-13)


def test_em_variance_one_step():
    n, sigma, dt = 100_000, 0.5, 0.01
    s = PhaseState(0.0, np.zeros((n, 2)), np.zeros((n, 2)))
    s1 = em_step(s, np.zeros((n, 2)), sigma, dt, brownian_increments(0, "t", n, 0, 2, dt))
    np.testing.assert_allclose(s1.V.var(axis=0), 2 * sigma * dt, rtol=0.02)


def test_em_blow_up_diagnostic():
    s = PhaseState(0.0, np.zeros((3, 1)), np.zeros((3, 1)))
    a = np.array([[0.0], [np.inf], [0.0]])
    with pytest.raises(BlowUpError) as info:
        em_step(s, a, 0.0, 0.1, None, step=12)
    assert info.value.step == 12 and info.value.particle == 1


def test_sde_params_grid():
    p = SdeParams(0.1, 0.3, 1.0)
    assert p.n_steps == 4
    np.testing.assert_allclose(p.times(), [0, 0.3, 0.6, 0.9, 1.0])
    with pytest.raises(ConfigurationError):
        SdeParams(-1, 0.1, 1.0)
    with pytest.raises(ConfigurationError):
        SdeParams(0.1, 0.1, 1.0, force_path="tree")


def test_default_dt():
    assert default_dt(KernelSpec(family="lp", d=3, delta=0.25, n_particles=4096)) == 0.01
    hlp = KernelSpec(family="hlp", d=3, delta=1 / 3, n_particles=4096)
    assert 0.002 < default_dt(hlp) < 0.003


# --- interacting system -------------------------------------------------------

def test_momentum_conserved_without_noise():
    spec = KernelSpec(family="lp", d=3, delta=0.25)
    s0, s1 = simulate(128, spec, INIT3, 0.0, 0.5, output_times=(0.0, 0.5))
    assert np.max(np.abs(s1.V.sum(axis=0) - s0.V.sum(axis=0))) < 1e-10 * 128


def test_simulate_paths_agree():
    spec = KernelSpec(family="lp", d=3, delta=0.25)
    a = simulate(200, spec, INIT3, 0.3, 0.1, seed=2)[-1]
    b = simulate(200, spec, INIT3, 0.3, 0.1, seed=2, force_path="cell_list")[-1]
    np.testing.assert_allclose(a.X, b.X, atol=1e-12)


# --- coupled runs ---------------------------------------------------------------

def _cfg(**kw):
    base = dict(n=64, kernel=KernelSpec(family="lp", d=3, delta=0.25), initial=INIT3,
                sigma=0.5, t_end=0.1, grid_cells=16)
    base.update(kw)
    return CoupledConfig(**base)


def test_coupling_identity_zero_deviation():
    run = run_coupled(_cfg(phi_uses_meanfield=True))
    assert np.all(run.deviation == 0.0)
    for _, phi, psi in run.snapshots:
        np.testing.assert_array_equal(phi.X, psi.X)


def test_coupled_run_records():
    run = run_coupled(_cfg(n_copies=256))
    assert run.times.size == run.deviation.size == 11
    assert run.deviation[0] == 0.0 and np.all(np.isfinite(run.deviation))
    assert [t for t, _, _ in run.snapshots] == pytest.approx([0, 0.025, 0.05, 0.075, 0.1], abs=0.006)
    assert run.snapshots[-1][2].n == 64 and run.ensembles[-1].n == 256
    assert run.sup_until(0.1) == pytest.approx(run.sup_deviation[-1])
    assert run.meta["n_copies"] == 256 and isinstance(run.meta["increment_crc"], int)
    # Phi starts from the first n draws of the Psi ensemble
    np.testing.assert_array_equal(run.snapshots[0][1].X, run.ensembles[0].X[:64])


def test_coupled_run_is_deterministic():
    a, b = run_coupled(_cfg()), run_coupled(_cfg())
    np.testing.assert_array_equal(a.deviation, b.deviation)
    assert a.meta["increment_crc"] == b.meta["increment_crc"]


def test_two_particle_smoke():
    init = InitialDensitySpec(d=3, s_x=2.0)
    run = run_coupled(_cfg(n=2, sigma=0.0, initial=init, grid_cells=12))
    assert np.all(np.isfinite(run.deviation))


def test_refresh_cadence_consistent():
    a = run_coupled(_cfg(n=128, n_copies=2048, t_end=0.2, grid_cells=24))
    b = run_coupled(_cfg(n=128, n_copies=2048, t_end=0.2, grid_cells=24, refresh_every=4))
    edge = max(max(e) for _, e in a.meta["edges"])
    assert np.max(np.abs(a.ensembles[-1].X - b.ensembles[-1].X)) < edge


def test_coupled_config_validation():
    with pytest.raises(ConfigurationError):
        _cfg(n=1)
    with pytest.raises(ConfigurationError):
        _cfg(n_copies=10)
    with pytest.raises(ConfigurationError):
        _cfg(kernel=KernelSpec(family="exact", d=3))
    with pytest.raises(ConfigurationError):
        _cfg(grid_cells=8)
    assert _cfg().kernel.n_particles == 64


# --- characteristics ------------------------------------------------------------

def test_frozen_linear_field_closed_form():
    x0, v0 = np.array([[0.4], [-0.7]]), np.array([[0.1], [0.3]])
    w = 1 / math.sqrt(2)
    exact = x0 * math.cosh(w) + v0 / w * math.sinh(w)
    errs = []
    for dt in (2e-3, 1e-3):
        _, out = integrate_characteristics(x0, v0, lambda X, t, k: X / 2, dt, 1.0)
        errs.append(np.max(np.abs(out[-1].X - exact)))
    assert errs[1] < 2e-3
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)


def _vp_grid(sigma, n=96):
    init = InitialDensitySpec(d=1)
    return vp1d.grid_from_initial(init, n_x=n, n_v=n, sigma=sigma)


def test_vp_characteristic_at_symmetry_center_stays():
    g = _vp_grid(0.0)
    dt = 0.5 * vp1d.max_stable_dt(g)
    _, out, _ = characteristics_vp([[0.0]], [[0.0]], g, dt, 0.3)
    assert abs(out[-1].X[0, 0]) < 1e-12 and abs(out[-1].V[0, 0]) < 1e-12


def test_vanishing_noise_trajectories_converge():
    rng = np.random.default_rng(5)
    x0, v0 = rng.normal(size=(200, 1)), rng.normal(size=(200, 1)) * 0.5
    dt, T = 0.01, 0.5
    _, ref, _ = characteristics_vp(x0, v0, _vp_grid(0.0), dt, T)
    devs = []
    for s in (1e-1, 1e-2, 1e-3):
        _, out, _ = characteristics_vp(x0, v0, _vp_grid(s), dt, T, sigma=s, seed=1)
        devs.append(np.max(np.abs(out[-1].X - ref[-1].X)) + np.max(np.abs(out[-1].V - ref[-1].V)))
    assert devs[0] > devs[1] > devs[2]
