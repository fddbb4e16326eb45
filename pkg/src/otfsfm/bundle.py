"""Sparse Levenberg-Marquardt bundle adjustment with Schur elimination.

The parameter vector stacks a 6-vector increment (rotation, translation)
per free camera followed by a 3-vector per free point. Points are always
eliminated first, leaving a dense camera-only system.

Per-camera weights enter through the damping: the camera block of the
reduced system uses U_jj + (lambda / p_j) diag(U_jj). A weight of 1 gives
the ordinary step, smaller weights shrink the update and FIXED cameras are
dropped from the parameter vector while their observations still constrain
the points.
"""
from __future__ import annotations

import copy
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .association import FIXED, is_fixed
from .errors import InvalidArgumentError
from .geometry import CameraIntrinsics, Pose, project_batch
from .rotation import exp_so3_batch, matrix_to_quat


class StepRejected(Exception):
    """The damped reduced system was not positive definite."""


@dataclass
class BACamera:
    image_id: object
    pose: Pose
    intrinsics: CameraIntrinsics
    weight: object = 1.0


@dataclass
class BAPoint:
    point_id: object
    xyz: np.ndarray
    fixed: bool = False


@dataclass
class BAProblem:
    cameras: list
    points: list
    cam_index: np.ndarray
    point_index: np.ndarray
    measured: np.ndarray
    huber_delta: float | None = None

    def __post_init__(self):
        self.cam_index = np.asarray(self.cam_index, dtype=np.int64).reshape(-1)
        self.point_index = np.asarray(self.point_index, dtype=np.int64).reshape(-1)
        self.measured = np.asarray(self.measured, dtype=float).reshape(-1, 2)
        if not (len(self.cam_index) == len(self.point_index) == len(self.measured)):
            raise InvalidArgumentError("residual block arrays differ in length")

    @property
    def n_residuals(self) -> int:
        return len(self.measured)

    def validate(self):
        nc, npt = len(self.cameras), len(self.points)
        if len(self.cam_index) and (self.cam_index.min() < 0 or self.cam_index.max() >= nc):
            raise InvalidArgumentError("residual references a missing camera")
        if len(self.point_index) and (self.point_index.min() < 0
                                      or self.point_index.max() >= npt):
            raise InvalidArgumentError("residual references a missing point")
        cam_fixed = np.array([is_fixed(c.weight) for c in self.cameras], bool)
        for j, p in enumerate(self.points):
            if p.fixed:
                continue
            cams = set(self.cam_index[self.point_index == j].tolist())
            if len(cams) < 2:
                raise InvalidArgumentError(f"free point {p.point_id} seen by < 2 cameras")
            if all(cam_fixed[c] for c in cams):
                raise InvalidArgumentError(f"free point {p.point_id} seen only by FIXED cameras")

    def copy(self) -> "BAProblem":
        return copy.deepcopy(self)


@dataclass
class LmConfig:
    lambda_init: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 0.1
    max_iterations: int = 100
    cost_tolerance: float = 1e-8
    parameter_tolerance: float = 1e-10
    lambda_max: float = 1e16

    def __post_init__(self):
        vals = (self.lambda_init, self.lambda_up, self.lambda_down, self.max_iterations,
                self.cost_tolerance, self.parameter_tolerance)
        if min(vals) <= 0 or not (self.lambda_up > 1 > self.lambda_down > 0):
            raise InvalidArgumentError("invalid LM configuration")


@dataclass
class IterationRecord:
    iteration: int
    cost: float
    lam: float
    step_norm: float
    accepted: bool
    wall_time: float


@dataclass
class LmReport:
    initial_cost: float
    final_cost: float
    iterations: list = field(default_factory=list)
    termination: str = ""
    n_dropped: int = 0
    n_residuals: int = 0

    @property
    def n_iterations(self) -> int:
        return len(self.iterations)

    def accepted_costs(self) -> list:
        return [self.initial_cost] + [r.cost for r in self.iterations if r.accepted]

    def rms(self) -> float:
        return float(np.sqrt(self.final_cost / max(self.n_residuals, 1)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_iterations"] = self.n_iterations
        return d


class _State:
    """Array view of a problem used inside the solver."""

    def __init__(self, problem: BAProblem, weighted: bool):
        cams = problem.cameras
        self.R = np.array([c.pose.R for c in cams]).reshape(-1, 3, 3)
        self.t = np.array([c.pose.t for c in cams]).reshape(-1, 3)
        self.K = np.array([c.intrinsics.params for c in cams]).reshape(-1, 4)
        self.X = np.array([p.xyz for p in problem.points], dtype=float).reshape(-1, 3)
        cam_fixed = np.array([is_fixed(c.weight) for c in cams], bool)
        pt_fixed = np.array([p.fixed for p in problem.points], bool)
        self.cam_param = np.full(len(cams), -1, np.int64)
        self.cam_param[~cam_fixed] = np.arange((~cam_fixed).sum())
        self.pt_param = np.full(len(problem.points), -1, np.int64)
        self.pt_param[~pt_fixed] = np.arange((~pt_fixed).sum())
        self.n_cam = int((~cam_fixed).sum())
        self.n_pt = int((~pt_fixed).sum())
        w = np.ones(self.n_cam)
        if weighted:
            free = [c for c in cams if not is_fixed(c.weight)]
            w = np.array([float(c.weight) for c in free]) if free else w
            if np.any(~(w > 0)):
                raise InvalidArgumentError("camera weights must be positive or FIXED")
        self.cam_weight = w
        self.ci = problem.cam_index
        self.pi = problem.point_index
        self.measured = problem.measured
        self.huber = problem.huber_delta

    def copy(self):
        s = copy.copy(self)
        s.R, s.t, s.X = self.R.copy(), self.t.copy(), self.X.copy()
        return s

    def x_norm(self) -> float:
        return float(np.sqrt(np.sum(self.t**2) + np.sum(self.X**2)))


def _robust(sq, delta):
    """Huber cost and IRLS weight per residual block given squared norms."""
    if delta is None:
        return sq, np.ones_like(sq)
    s = np.sqrt(sq)
    inlier = s <= delta
    cost = np.where(inlier, sq, 2.0 * delta * s - delta**2)
    w = np.where(inlier, 1.0, delta / np.maximum(s, 1e-300))
    return cost, w


@dataclass
class Evaluation:
    cost: float
    residuals: np.ndarray
    J_c: np.ndarray | None
    J_p: np.ndarray | None
    valid: np.ndarray
    robust_weight: np.ndarray

    @property
    def n_dropped(self) -> int:
        return int((~self.valid).sum())


def _evaluate_state(st: _State, jacobians: bool = True) -> Evaluation:
    R, t, K = st.R[st.ci], st.t[st.ci], st.K[st.ci]
    X = st.X[st.pi]
    if jacobians:
        uv, z, Jc, Jp = project_batch(K, R, t, X, jacobians=True)
    else:
        uv, z = project_batch(K, R, t, X)
        Jc = Jp = None
    r = uv - st.measured
    valid = z > 1e-9
    sq = np.where(valid, np.sum(r**2, axis=1), 0.0)
    cost, w = _robust(sq, st.huber)
    w = np.where(valid, w, 0.0)
    return Evaluation(float(np.sum(np.where(valid, cost, 0.0))), r, Jc, Jp, valid, w)


def evaluate(problem: BAProblem) -> Evaluation:
    """Cost E, residuals f (m, 2) and Jacobian blocks J_c (m, 2, 6), J_p (m, 2, 3).

    Blocks whose point is at or behind the camera are marked invalid and
    contribute nothing; `n_dropped` counts them.
    """
    return _evaluate_state(_State(problem, weighted=False))


@dataclass
class Step:
    delta_c: np.ndarray
    delta_p: np.ndarray
    predicted_cost: float

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.delta_c**2) + np.sum(self.delta_p**2)))


def _normal_blocks(st: _State, ev: Evaluation):
    """Blocks of J^T J and J^T f with robust weights applied."""
    sw = np.sqrt(ev.robust_weight)[:, None, None]
    Jc = ev.J_c * sw
    Jp = ev.J_p * sw
    r = ev.residuals * sw[:, :, 0]
    cp = st.cam_param[st.ci]
    pp = st.pt_param[st.pi]
    use_c = (cp >= 0) & ev.valid
    use_p = (pp >= 0) & ev.valid
    U = np.zeros((st.n_cam, 6, 6))
    V = np.zeros((st.n_pt, 3, 3))
    bc = np.zeros((st.n_cam, 6))
    bp = np.zeros((st.n_pt, 3))
    np.add.at(U, cp[use_c], np.einsum("nki,nkj->nij", Jc[use_c], Jc[use_c]))
    np.add.at(bc, cp[use_c], np.einsum("nki,nk->ni", Jc[use_c], r[use_c]))
    np.add.at(V, pp[use_p], np.einsum("nki,nkj->nij", Jp[use_p], Jp[use_p]))
    np.add.at(bp, pp[use_p], np.einsum("nki,nk->ni", Jp[use_p], r[use_p]))
    both = use_c & use_p
    Wb = np.einsum("nki,nkj->nij", Jc[both], Jp[both])
    return U, V, bc, bp, Wb, cp[both], pp[both], (Jc, Jp, r, cp, pp, use_c, use_p)


def _block_sparse(blocks, rows, cols, nrow, ncol, br, bc_):
    """Assemble (nrow*br) x (ncol*bc_) sparse matrix from dense blocks."""
    if len(blocks) == 0:
        return sp.csr_matrix((nrow * br, ncol * bc_))
    ri = (rows[:, None, None] * br + np.arange(br)[None, :, None])
    ci = (cols[:, None, None] * bc_ + np.arange(bc_)[None, None, :])
    ri = np.broadcast_to(ri, blocks.shape).ravel()
    ci = np.broadcast_to(ci, blocks.shape).ravel()
    return sp.csr_matrix((blocks.ravel(), (ri, ci)), shape=(nrow * br, ncol * bc_))


def _step_from_state(st: _State, ev: Evaluation, lam: float) -> Step:
    U, V, bc, bp, Wb, wc, wp, extra = _normal_blocks(st, ev)
    Jc, Jp, r, cp, pp, use_c, use_p = extra
    nc, npt = st.n_cam, st.n_pt
    dU = np.einsum("nii->ni", U)
    dV = np.einsum("nii->ni", V)
    U_l = U.copy()
    idx6 = np.arange(6)
    U_l[:, idx6, idx6] += (lam / st.cam_weight)[:, None] * dU
    V_l = V.copy()
    idx3 = np.arange(3)
    V_l[:, idx3, idx3] += lam * dV
    try:
        V_inv = np.linalg.inv(V_l) if npt else V_l
    except np.linalg.LinAlgError as exc:
        raise StepRejected("singular point block") from exc
    if not np.all(np.isfinite(V_inv)):
        raise StepRejected("singular point block")

    if nc:
        W = _block_sparse(Wb, wc, wp, nc, npt, 6, 3)
        Y = _block_sparse(np.einsum("nij,njk->nik", Wb, V_inv[wp]) if len(wp) else Wb,
                          wc, wp, nc, npt, 6, 3)
        S = sp.block_diag(list(U_l), format="csr") if nc > 1 else sp.csr_matrix(U_l[0])
        S = (S - Y @ W.T).toarray()
        S = 0.5 * (S + S.T)
        Vb = np.einsum("nij,nj->ni", V_inv, bp).ravel()
        rhs = -bc.ravel() + W @ Vb
        try:
            cho = scipy.linalg.cho_factor(S, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise StepRejected("reduced camera system not positive definite") from exc
        dc = scipy.linalg.cho_solve(cho, rhs).reshape(nc, 6)
        Wt_dc = np.zeros((npt, 3))
        if len(wp):
            np.add.at(Wt_dc, wp, np.einsum("nij,ni->nj", Wb, dc[wc]))
    else:
        dc = np.zeros((0, 6))
        Wt_dc = np.zeros((npt, 3))
    dp = -np.einsum("nij,nj->ni", V_inv, bp + Wt_dc) if npt else np.zeros((0, 3))

    # Linearized cost at the step (robust weights held fixed).
    lin = r.copy()
    lin[use_c] += np.einsum("nkj,nj->nk", Jc[use_c], dc[cp[use_c]])
    lin[use_p] += np.einsum("nkj,nj->nk", Jp[use_p], dp[pp[use_p]])
    predicted = float(np.sum(lin[ev.valid] ** 2))
    return Step(dc, dp, predicted)


def lm_step_schur(problem: BAProblem, lam: float, weighted: bool = False) -> Step:
    """One damped Gauss-Newton step via the reduced camera system."""
    if lam <= 0:
        raise InvalidArgumentError("damping must be positive")
    st = _State(problem, weighted)
    return _step_from_state(st, _evaluate_state(st), lam)


def dense_normal_equations(problem: BAProblem, lam: float, weighted: bool = False):
    """Full damped system (J^T J + lambda D) and right-hand side -J^T f.

    Independent dense assembly used to check the Schur path.
    """
    st = _State(problem, weighted)
    ev = _evaluate_state(st)
    nc, npt = st.n_cam, st.n_pt
    m = problem.n_residuals
    J = np.zeros((2 * m, 6 * nc + 3 * npt))
    sw = np.sqrt(ev.robust_weight)
    for k in range(m):
        if not ev.valid[k]:
            continue
        c, p = st.cam_param[st.ci[k]], st.pt_param[st.pi[k]]
        if c >= 0:
            J[2 * k:2 * k + 2, 6 * c:6 * c + 6] = ev.J_c[k] * sw[k]
        if p >= 0:
            J[2 * k:2 * k + 2, 6 * nc + 3 * p:6 * nc + 3 * p + 3] = ev.J_p[k] * sw[k]
    f = (ev.residuals * sw[:, None]).ravel()
    f[np.repeat(~ev.valid, 2)] = 0.0
    A = J.T @ J
    damp = np.concatenate([np.repeat(lam / st.cam_weight, 6), np.full(3 * npt, lam)])
    A = A + np.diag(damp * np.diag(A))
    return A, -J.T @ f


def _apply_step(st: _State, step: Step) -> _State:
    new = st.copy()
    free_c = st.cam_param >= 0
    if step.delta_c.size:
        d = step.delta_c[st.cam_param[free_c]]
        new.R[free_c] = exp_so3_batch(d[:, :3]) @ st.R[free_c]
        new.t[free_c] = st.t[free_c] + d[:, 3:]
    free_p = st.pt_param >= 0
    if step.delta_p.size:
        new.X[free_p] = st.X[free_p] + step.delta_p[st.pt_param[free_p]]
    return new


def _write_back(problem: BAProblem, st: _State) -> BAProblem:
    out = problem.copy()
    for j, cam in enumerate(out.cameras):
        if st.cam_param[j] >= 0:
            cam.pose = Pose(matrix_to_quat(st.R[j]), st.t[j])
    for j, pt in enumerate(out.points):
        if st.pt_param[j] >= 0:
            pt.xyz = st.X[j].copy()
    return out


def _run_lm(problem: BAProblem, config: LmConfig, weighted: bool):
    st = _State(problem, weighted)
    ev = _evaluate_state(st)
    cost = ev.cost
    report = LmReport(cost, cost, n_dropped=ev.n_dropped,
                      n_residuals=int(ev.valid.sum()))
    lam = config.lambda_init
    t0 = time.perf_counter()
    if st.n_cam + st.n_pt == 0:
        report.termination = "no_parameters"
        return _write_back(problem, st), report
    for it in range(config.max_iterations):
        if cost <= 1e-24 * max(problem.n_residuals, 1):
            report.termination = "zero_cost"
            break
        try:
            step = _step_from_state(st, ev, lam)
        except StepRejected:
            lam *= config.lambda_up
            report.iterations.append(IterationRecord(it, cost, lam, 0.0, False,
                                                     time.perf_counter() - t0))
            if lam > config.lambda_max:
                report.termination = "lambda_overflow"
                break
            continue
        cand = _apply_step(st, step)
        cand_ev = _evaluate_state(cand)
        ok = cand_ev.cost < cost and cand_ev.n_dropped <= ev.n_dropped
        if ok:
            rel = (cost - cand_ev.cost) / max(cost, 1e-300)
            st = cand
            ev = cand_ev
            cost = cand_ev.cost
            lam = max(lam * config.lambda_down, 1e-15)
            report.iterations.append(IterationRecord(it, cost, lam, step.norm, True,
                                                     time.perf_counter() - t0))
            if rel < config.cost_tolerance:
                report.termination = "cost_tolerance"
                break
            if step.norm < config.parameter_tolerance * (st.x_norm() + config.parameter_tolerance):
                report.termination = "parameter_tolerance"
                break
        else:
            lam *= config.lambda_up
            report.iterations.append(IterationRecord(it, cost, lam, step.norm, False,
                                                     time.perf_counter() - t0))
            if abs(cost - cand_ev.cost) <= config.cost_tolerance * cost:
                report.termination = "cost_tolerance"
                break
            if lam > config.lambda_max:
                report.termination = "lambda_overflow"
                break
    else:
        report.termination = "max_iterations"
    report.final_cost = cost
    report.n_dropped = ev.n_dropped
    report.n_residuals = int(ev.valid.sum())
    return _write_back(problem, st), report


def solve(problem: BAProblem, config: LmConfig | None = None):
    """Standard LM; FIXED cameras stay constant, all other weights count as 1."""
    return _run_lm(problem, config or LmConfig(), weighted=False)


def solve_weighted_local(problem: BAProblem, config: LmConfig | None = None):
    """LM with per-camera damping scaled by the inverse association weight."""
    if all(is_fixed(c.weight) for c in problem.cameras):
        raise InvalidArgumentError("every camera is FIXED")
    return _run_lm(problem, config or LmConfig(max_iterations=25), weighted=True)


def residual_norms(problem: BAProblem) -> np.ndarray:
    """Per-block reprojection error in pixels (inf where depth <= 0)."""
    ev = _evaluate_state(_State(problem, weighted=False), jacobians=False)
    return np.where(ev.valid, np.linalg.norm(ev.residuals, axis=1), np.inf)


__all__ = ["FIXED", "BACamera", "BAPoint", "BAProblem", "LmConfig", "LmReport",
           "StepRejected", "evaluate", "lm_step_schur", "dense_normal_equations",
           "solve", "solve_weighted_local", "residual_norms"]
