import math

import numpy as np
import pytest

from anmloc.denoiser import (ConvergenceWarning, SolverSettings, assemble_j, default_epsilon, epsilon_multiplier,
                             solve_denoiser)
from anmloc.geometry import ChannelParams, PathParams
from anmloc.signal import SystemConfig, make_pilots, noiseless_signal
from anmloc.virtual import build_virtual, virtual_gains

from conftest import small_system


def test_epsilon_multiplier_reference_sizes(sys_cfg):
    # sqrt(16384 * ln 16384) evaluated independently
    assert epsilon_multiplier(sys_cfg) == pytest.approx(398.7373, abs=1e-3)
    assert epsilon_multiplier(sys_cfg) == pytest.approx(399.0, abs=0.5)


def test_default_epsilon_linear_in_sigma(sys_cfg):
    assert default_epsilon(0.0, sys_cfg) == 0.0
    assert default_epsilon(2e-3, sys_cfg, 0.5) == pytest.approx(2 * default_epsilon(1e-3, sys_cfg, 0.5), rel=1e-15)
    with pytest.raises(ValueError):
        default_epsilon(-1.0, sys_cfg)


@pytest.mark.parametrize("kw", [dict(epsilon=-1.0), dict(epsilon=1.0, rho=0.0), dict(epsilon=1.0, max_iter=0),
                                dict(epsilon=1.0, tol_abs=-1.0)])
def test_settings_validation(kw):
    with pytest.raises(ValueError):
        SolverSettings(**kw)


def test_zero_data_gives_zero_solution(sys_cfg, pilots):
    sol = solve_denoiser(np.zeros((15, 16, 16), complex), pilots, sys_cfg, SolverSettings(epsilon=1.0))
    assert not np.any(sol.h_v_hat.blocks)
    assert not np.any(sol.u_hat.values) and not np.any(sol.v_hat.values)


def test_shape_mismatch(sys_cfg, pilots):
    with pytest.raises(ValueError):
        solve_denoiser(np.zeros((15, 16, 8), complex), pilots, sys_cfg, SolverSettings(epsilon=1.0))


def test_max_iter_warns(sys_cfg, truth, pilots):
    y = noiseless_signal(truth, pilots, sys_cfg)
    with pytest.warns(ConvergenceWarning):
        sol = solve_denoiser(y, pilots, sys_cfg, SolverSettings(epsilon=1e-8, max_iter=3))
    assert not sol.diagnostics.converged
    assert sol.diagnostics.iterations == 3


@pytest.fixture(scope="module")
def single_path_solution():
    sys = SystemConfig(n_nlos=0)
    params = ChannelParams([PathParams(60e-9, 0.3, -0.4)], np.array([1e-4 * np.exp(0.7j)]))
    pilots = make_pilots(sys, np.random.default_rng(5))
    y = noiseless_signal(params, pilots, sys)
    return sys, params, pilots, y, solve_denoiser(y, pilots, sys, SolverSettings(epsilon=1e-8))


def test_single_path_noiseless_recovery(single_path_solution):
    sys, params, _, _, sol = single_path_solution
    hv = build_virtual(params, sys).materialize()
    assert sol.diagnostics.converged
    assert np.linalg.norm(sol.h_v_hat.materialize() - hv) / np.linalg.norm(hv) < 1e-4


def test_feasibility_and_trace_bound(single_path_solution):
    sys, params, pilots, y, sol = single_path_solution
    w = np.linalg.eigvalsh(sol.j_matrix())
    assert w[0] >= -1e-6 * w[-1]
    atomic = np.abs(virtual_gains(params.gains, sys)).sum()
    assert np.trace(sol.j_matrix()).real / 2 <= atomic * (1 + 1e-3)
    resid = y - sol.h_v_hat.blocks @ pilots
    assert np.linalg.norm(resid) / np.linalg.norm(y) < 1e-3


def test_j_is_block_hankel_by_construction(single_path_solution):
    _, _, _, _, sol = single_path_solution
    hv = sol.h_v_hat.materialize()
    j = assemble_j(sol.u_hat, sol.v_hat, hv)
    d1 = hv.shape[0]
    assert np.array_equal(j[:d1, d1:], hv)
    assert np.allclose(j, j.conj().T)


def test_deterministic_and_scale_covariant():
    sys = small_system()
    rng = np.random.default_rng(3)
    params = ChannelParams([PathParams(10e-9, 0.2, 0.5), PathParams(27e-9, -0.6, 1.0)],
                           np.array([1.0, 0.4j]))
    pilots = make_pilots(sys, rng)
    y = noiseless_signal(params, pilots, sys) + 0.01 * (rng.standard_normal((5, 4, 6)) + 1j * rng.standard_normal((5, 4, 6)))
    st = SolverSettings(epsilon=0.05)
    a = solve_denoiser(y, pilots, sys, st)
    b = solve_denoiser(y, pilots, sys, st)
    assert np.array_equal(a.h_v_hat.blocks, b.h_v_hat.blocks)
    # the problem is homogeneous: scaling Y and eps together scales the solution
    c = solve_denoiser(3 * y, pilots, sys, SolverSettings(epsilon=0.15))
    assert np.allclose(c.h_v_hat.blocks, 3 * a.h_v_hat.blocks, rtol=1e-6, atol=1e-6 * np.abs(a.h_v_hat.blocks).max())


def test_noisy_solution_shrinks_toward_zero():
    sys = small_system()
    rng = np.random.default_rng(8)
    pilots = make_pilots(sys, rng)
    noise = rng.standard_normal((5, 4, 6)) + 1j * rng.standard_normal((5, 4, 6))
    big = solve_denoiser(noise, pilots, sys, SolverSettings(epsilon=1e3))
    assert np.abs(big.h_v_hat.blocks).max() < 1e-6 * math.sqrt(np.mean(np.abs(noise) ** 2))
