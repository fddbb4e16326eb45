import numpy as np
import pytest
from _builders import INTR, random_problem

from otfsfm.association import FIXED
from otfsfm.bundle import (BACamera, BAPoint, BAProblem, LmConfig, dense_normal_equations,
                           evaluate, lm_step_schur, residual_norms, solve, solve_weighted_local)
from otfsfm.errors import InvalidArgumentError
from otfsfm.geometry import Pose, project_batch
from otfsfm.rotation import exp_so3


def fd_jacobians(kp, R, t, X, h=1e-6):
    """Central differences of the projection under the left pose increment."""
    Jc = np.zeros((2, 6))
    for k in range(6):
        d = np.zeros(6)
        d[k] = h
        up, _ = project_batch(kp, exp_so3(d[:3]) @ R, t + d[3:], X[None])
        dn, _ = project_batch(kp, exp_so3(-d[:3]) @ R, t - d[3:], X[None])
        Jc[:, k] = (up[0] - dn[0]) / (2 * h)
    Jp = np.zeros((2, 3))
    for k in range(3):
        d = np.zeros(3)
        d[k] = h
        up, _ = project_batch(kp, R, t, (X + d)[None])
        dn, _ = project_batch(kp, R, t, (X - d)[None])
        Jp[:, k] = (up[0] - dn[0]) / (2 * h)
    return Jc, Jp


def test_jacobians_match_finite_differences():
    rng = np.random.default_rng(0)
    prob = random_problem(rng, 4, 25, perturb=1.0)
    ev = evaluate(prob)
    for k in range(prob.n_residuals):
        cam = prob.cameras[prob.cam_index[k]]
        X = prob.points[prob.point_index[k]].xyz
        Jc, Jp = fd_jacobians(INTR.params, cam.pose.R, cam.pose.t, X)
        assert np.linalg.norm(ev.J_c[k] - Jc) / np.linalg.norm(Jc) < 1e-6
        assert np.linalg.norm(ev.J_p[k] - Jp) / np.linalg.norm(Jp) < 1e-6


def _flat(step):
    return np.concatenate([step.delta_c.ravel(), step.delta_p.ravel()])


@pytest.mark.parametrize("weighted", [False, True])
def test_schur_step_equals_dense_solve(weighted):
    rng = np.random.default_rng(1)
    weights = [FIXED, 1.0, 0.3, 0.05]
    prob = random_problem(rng, 4, 12, sigma=1.0, perturb=1.0, weights=weights)
    for lam in (1e-4, 1e-1, 10.0):
        A, b = dense_normal_equations(prob, lam, weighted)
        x = np.linalg.solve(A, b)
        s = _flat(lm_step_schur(prob, lam, weighted))
        assert np.linalg.norm(s - x) / np.linalg.norm(x) < 1e-9


def test_unit_weights_reduce_to_plain_step():
    rng = np.random.default_rng(2)
    prob = random_problem(rng, 3, 10, sigma=0.5, perturb=1.0)
    a = _flat(lm_step_schur(prob, 1e-3, weighted=True))
    b = _flat(lm_step_schur(prob, 1e-3, weighted=False))
    assert np.max(np.abs(a - b)) <= 1e-10 * max(1.0, np.max(np.abs(b)))


def test_small_weight_damps_camera_update():
    rng = np.random.default_rng(3)
    base = random_problem(rng, 3, 10, sigma=0.5, perturb=1.0, weights=[FIXED, 1.0, 1.0])
    low = base.copy()
    low.cameras[2].weight = 1e-4
    s_base = lm_step_schur(base, 1e-2, weighted=True)
    s_low = lm_step_schur(low, 1e-2, weighted=True)
    assert np.linalg.norm(s_low.delta_c[1]) < 0.5 * np.linalg.norm(s_base.delta_c[1])


def test_fixed_cameras_are_bit_exact_after_weighted_solve():
    rng = np.random.default_rng(4)
    prob = random_problem(rng, 4, 15, sigma=0.5, perturb=1.0, weights=[FIXED, 1.0, 0.2, FIXED])
    out, rep = solve_weighted_local(prob, LmConfig(max_iterations=20))
    for j in (0, 3):
        assert out.cameras[j].pose.rotation.tobytes() == prob.cameras[j].pose.rotation.tobytes()
        assert out.cameras[j].pose.translation.tobytes() == \
            prob.cameras[j].pose.translation.tobytes()
    assert rep.final_cost < rep.initial_cost


def test_all_fixed_is_rejected():
    rng = np.random.default_rng(5)
    prob = random_problem(rng, 2, 5, weights=[FIXED, FIXED])
    with pytest.raises(InvalidArgumentError):
        solve_weighted_local(prob)


def test_lm_cost_is_monotone_and_converges_to_noise_level():
    rng = np.random.default_rng(6)
    prob = random_problem(rng, 6, 60, sigma=0.5, perturb=1.0, weights=[FIXED] + [1.0] * 5)
    out, rep = solve(prob, LmConfig(max_iterations=50))
    costs = rep.accepted_costs()
    assert all(b < a for a, b in zip(costs, costs[1:]))
    # Per-block squared error of 2 coordinates at sigma 0.5, less the fitted dof.
    assert 0.3 < rep.rms() < 0.8
    assert np.isfinite(residual_norms(out)).all()


def test_noiseless_problem_reaches_zero_cost():
    rng = np.random.default_rng(7)
    prob = random_problem(rng, 3, 20, perturb=0.5, weights=[FIXED, 1.0, 1.0])
    _, rep = solve(prob, LmConfig(max_iterations=100))
    assert rep.final_cost < 1e-12


def test_huber_downweights_gross_outlier():
    rng = np.random.default_rng(8)
    prob = random_problem(rng, 4, 30, sigma=0.3, weights=[FIXED, 1.0, 1.0, 1.0], huber=2.0)
    prob.measured[5] += 80.0
    out, _ = solve(prob)
    err = residual_norms(out)
    assert err[5] > 40.0
    assert np.median(np.delete(err, 5)) < 1.0


def test_points_behind_camera_are_dropped_not_fatal():
    cams = [BACamera(0, Pose.identity(), INTR, FIXED),
            BACamera(1, Pose(np.array([1.0, 0, 0, 0]), np.array([-1.0, 0, 0])), INTR)]
    pts = [BAPoint(0, np.array([0.0, 0.0, 5.0])), BAPoint(1, np.array([0.0, 0.0, -5.0]))]
    meas = [[320, 240], [220, 240], [320, 240], [320, 240]]
    prob = BAProblem(cams, pts, [0, 1, 0, 1], [0, 0, 1, 1], meas)
    ev = evaluate(prob)
    assert ev.n_dropped == 2
    assert np.isinf(residual_norms(prob)[2:]).all()


def test_validate_rules():
    cams = [BACamera(0, Pose.identity(), INTR, FIXED), BACamera(1, Pose.identity(), INTR)]
    prob = BAProblem(cams, [BAPoint(0, np.array([0, 0, 5.0]))], [0], [0], [[320, 240]])
    with pytest.raises(InvalidArgumentError):
        prob.validate()
    prob = BAProblem(cams, [BAPoint(0, np.array([0, 0, 5.0]))], [0, 5], [0, 0],
                     [[320, 240], [320, 240]])
    with pytest.raises(InvalidArgumentError):
        prob.validate()
    with pytest.raises(InvalidArgumentError):
        BAProblem(cams, [], [0, 1], [0], [[1, 2]])
    with pytest.raises(InvalidArgumentError):
        LmConfig(lambda_up=0.5)
    with pytest.raises(InvalidArgumentError):
        lm_step_schur(random_problem(np.random.default_rng(0), 2, 5), 0.0)
