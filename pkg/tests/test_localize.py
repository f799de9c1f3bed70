import math

import numpy as np
import pytest

from anmloc.geometry import ChannelParams, PathParams, Point2D, fold_angle, forward_map
from anmloc.localize import (WeightMatrix, eta_residual, eta_steps, fd_hessian, hessian_weight, initial_guesses,
                             lm_fletcher, localize, objective_L, predicted_eta, psd_clip)
from anmloc.signal import DelayRangeError, noiseless_signal


@pytest.fixture
def data(truth, pilots, sys_cfg):
    return noiseless_signal(truth, pilots, sys_cfg)


def test_objective_zero_at_truth(truth, pilots, sys_cfg, data):
    assert objective_L(truth, truth.gains, data, pilots, sys_cfg) == pytest.approx(0.0, abs=1e-30)
    eta = truth.eta()
    eta[3:] += 1e-3
    assert objective_L(eta, truth.gains, data, pilots, sys_cfg) > 0


def test_objective_rejects_out_of_range_delay(truth, pilots, sys_cfg, data):
    eta = truth.eta()
    eta[0] = -1e-9
    with pytest.raises(DelayRangeError):
        objective_L(eta, truth.gains, data, pilots, sys_cfg)


def test_objective_quadratic_in_delay(truth, pilots, sys_cfg, data):
    deltas = np.linspace(-1, 1, 21) * 1e-3 * sys_cfg.delay_span
    vals = []
    for d in deltas:
        eta = truth.eta()
        eta[0] += d
        vals.append(objective_L(eta, truth.gains, data, pilots, sys_cfg))
    vals = np.array(vals)
    c = np.sum(vals * deltas ** 2) / np.sum(deltas ** 4)
    r2 = 1 - np.sum((vals - c * deltas ** 2) ** 2) / np.sum((vals - vals.mean()) ** 2)
    assert r2 > 0.99


def test_fd_hessian_exact_on_quadratic(rng):
    a = rng.standard_normal((5, 5))
    a = a @ a.T
    b = rng.standard_normal(5)
    hess = fd_hessian(lambda x: 0.5 * x @ a @ x + b @ x, rng.standard_normal(5), np.full(5, 1e-3))
    assert np.allclose(hess, a, rtol=1e-6, atol=1e-6 * np.abs(a).max())


def test_fd_hessian_non_finite():
    with pytest.raises(FloatingPointError):
        fd_hessian(lambda x: math.inf if x[0] > 0 else 0.0, np.zeros(2), np.full(2, 1e-3))


def test_psd_clip():
    d, clipped = psd_clip(np.diag([2.0, -1.0, 0.5]))
    assert clipped == 1
    assert np.allclose(d, np.diag([2.0, 0.0, 0.5]))


def test_hessian_psd_at_noiseless_minimum(truth, pilots, sys_cfg, data):
    raw = fd_hessian(lambda e: objective_L(e, truth.gains, data, pilots, sys_cfg), truth.eta(),
                     eta_steps(truth.n_paths, sys_cfg))
    w = np.linalg.eigvalsh(0.5 * (raw + raw.T))
    assert w[0] >= -1e-6 * w[-1]


def test_hessian_scales_quadratically(truth, pilots, sys_cfg, data):
    d1 = hessian_weight(truth, truth.gains, data, pilots, sys_cfg).d
    d2 = hessian_weight(truth, 2 * truth.gains, 2 * data, pilots, sys_cfg).d
    assert np.allclose(d2, 4 * d1, rtol=1e-5, atol=1e-6 * np.abs(d1).max())


def test_hessian_richardson_consistency(truth, pilots, sys_cfg, data):
    d1 = hessian_weight(truth, truth.gains, data, pilots, sys_cfg, rel_step=1e-5).d
    d2 = hessian_weight(truth, truth.gains, data, pilots, sys_cfg, rel_step=2e-5).d
    assert np.linalg.norm(d2 - d1) / np.linalg.norm(d1) < 1e-3


def test_weight_shape_validation():
    with pytest.raises(ValueError):
        WeightMatrix(np.eye(4))


def test_predicted_eta_matches_forward_map(scene):
    ref = forward_map(scene, 3e8)
    n = ref.n_paths
    pred = predicted_eta(scene.to_vector(), scene.bs, 3e8)
    assert np.allclose(pred[:n], ref.toas, rtol=1e-14)
    assert np.allclose(pred[n:2 * n], fold_angle(ref.aods), atol=1e-12)
    assert np.allclose(pred[2 * n:], fold_angle(ref.aoas), atol=1e-12)


def _folded_truth(scene, c=3e8):
    ref = forward_map(scene, c)
    paths = [PathParams(p.toa, float(fold_angle(p.aod)), float(fold_angle(p.aoa))) for p in ref.paths]
    return ChannelParams(paths)


def test_localize_exact_truth(scene, sys_cfg):
    eta_hat = _folded_truth(scene)
    res = localize(eta_hat, WeightMatrix.identity(3), scene.bs, sys_cfg)
    assert res.position.distance(scene.target) < 1e-9
    assert res.orientation == pytest.approx(0.2, abs=1e-12)
    assert res.scatterers[0].distance(Point2D(7.45, 8.54)) < 1e-9
    assert res.scatterers[1].distance(Point2D(19.89, -6.05)) < 1e-9
    assert res.objective <= res.initial_objective


def test_fixed_point_any_psd_weight(scene, sys_cfg, rng):
    a = rng.standard_normal((9, 9))
    res = localize(_folded_truth(scene), WeightMatrix(a @ a.T), scene.bs, sys_cfg)
    assert res.position.distance(scene.target) < 1e-9
    assert res.objective < 1e-20


def test_perturbed_identity_weight_improves(scene, sys_cfg, rng):
    eta = _folded_truth(scene).eta()
    eta[:3] += 1e-11 * rng.standard_normal(3)
    eta[3:] += 1e-3 * rng.standard_normal(6)
    res = localize(ChannelParams.from_eta(eta), WeightMatrix.identity(3), scene.bs, sys_cfg)
    assert res.objective <= res.initial_objective
    assert res.position.distance(scene.target) < 0.5


def test_lm_history_monotone():
    target = np.array([1.0, 2.0, 0.5])
    res = lm_fletcher(lambda x: np.array([x[0] ** 2, x[1] * x[0], np.sin(x[2])]) - target, np.eye(3),
                      np.array([0.5, 0.5, 0.1]))
    assert np.all(np.diff(res.history) <= 0)
    assert res.objective < 1e-20
    assert res.converged


def test_lm_respects_iteration_cap():
    res = lm_fletcher(lambda x: np.array([x[0] - 1.0, 10 * (x[1] - x[0] ** 2)]), np.eye(2), np.array([-1.2, 1.0]),
                      max_iter=2)
    assert res.iterations == 2
    assert not res.converged


def test_unsorted_input_rejected(scene, sys_cfg):
    eta = _folded_truth(scene)
    flipped = ChannelParams(eta.paths[::-1])
    with pytest.raises(ValueError):
        localize(flipped, WeightMatrix.identity(3), scene.bs, sys_cfg)


def test_parallel_rays_fall_back_to_midpoint():
    q = Point2D(0.0, 0.0)
    eta = ChannelParams([PathParams(10 / 3e8, 0.0, 0.0), PathParams(30 / 3e8, math.pi / 2, math.pi / 2)])
    for _, fallback in initial_guesses(eta, q, 3e8):
        assert fallback == [1]
    x0, _ = initial_guesses(eta, q, 3e8)[0]
    assert x0[3:5] == pytest.approx([5.0, 0.0])


def test_residual_wraps_angles(scene):
    x = scene.to_vector()
    eta = predicted_eta(x, scene.bs, 3e8)
    eta[4] += 2 * math.pi
    assert np.allclose(eta_residual(eta, x, scene.bs, 3e8), 0.0, atol=1e-12)
