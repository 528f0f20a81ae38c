"""Joint reprojection-error refinement of all non-reference poses.

Every observed corner X of pattern p, seen by camera c at time t, predicts
the pixel ``project(K_c, C T^-1 P^-1 X)``. The sum of squared pixel
residuals is minimized with Levenberg-Marquardt over a 6-parameter
increment per pose: ``R <- exp([w]x) R`` and ``t <- t + tau``. Increments
are folded into the poses after every accepted step, so the parameter
vector is always zero at linearization and never approaches the pi branch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .connectivity import fr_variables
from .errors import NonPositiveDepth, NumericalFailure
from .geometry import MIN_DEPTH, Pose, compose, inverse, project_camera_points, project_points, rodrigues, skew

log = logging.getLogger(__name__)

ORTHO_REPAIR_TOL = 1e-12


@dataclass
class LMOptions:
    lambda0: float = 1e-4
    max_iters: int = 200
    rel_tol: float = 1e-12
    grad_tol: float = 1e-12
    step_tol: float = 1e-12
    lambda_max: float = 1e16


@dataclass
class RefineReport:
    re_initial: float
    re_final: float
    rrmse_initial: float
    rrmse_final: float
    iterations: int
    termination: str
    re_history: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "re_initial": self.re_initial,
            "re_final": self.re_final,
            "rrmse_initial": self.rrmse_initial,
            "rrmse_final": self.rrmse_final,
            "iterations": self.iterations,
            "termination": self.termination,
        }


@dataclass(frozen=True)
class ResidualRecord:
    key: tuple  # (camera, pattern, time)
    corner: int
    predicted: np.ndarray
    observed: np.ndarray
    residual: np.ndarray


def chain_residuals(params, RC, tC, RT, tT, RP, tP, X, uv, with_jacobian=False):
    """Pixel residuals of X through C T^-1 P^-1, per observation.

    All pose arrays are per observation: R* (N, 3, 3), t* (N, 3). Returns
    (residual (N, 2), depth (N,)) and, with ``with_jacobian``, the (N, 2, 18)
    derivative with respect to the increments of C, T and P, in that order,
    each ordered (w, tau).
    """
    d = X - tP
    y = np.einsum("nji,nj->ni", RP, d)  # P^-1 X
    u = y - tT
    w = np.einsum("nji,nj->ni", RT, u)  # T^-1 y
    xc = np.einsum("nij,nj->ni", RC, w) + tC
    if not with_jacobian:
        return project_camera_points(params, xc) - uv, xc[:, 2]

    pix, Jp = project_camera_points(params, xc, with_jacobian=True)
    RCT = np.einsum("nij,nkj->nik", RC, RT)  # R_C R_T^T
    RCTP = np.einsum("nij,nkj->nik", RCT, RP)  # R_C R_T^T R_P^T
    n = len(X)
    D = np.empty((n, 3, 18))
    D[:, :, 0:3] = -skew(xc - tC)
    D[:, :, 3:6] = np.eye(3)
    D[:, :, 6:9] = RCT @ skew(u)
    D[:, :, 9:12] = -RCT
    D[:, :, 12:15] = RCTP @ skew(d)
    D[:, :, 15:18] = -RCTP
    return pix - uv, xc[:, 2], Jp @ D


def fr_block_jacobian(fr, C: Pose, P: Pose, T: Pose):
    """Residuals (n, 2) and Jacobian (n, 2, 18) of one FR w.r.t. its C, T, P increments."""
    n = len(fr.points3d)
    rep = lambda a: np.broadcast_to(a, (n,) + a.shape)  # noqa: E731
    r, _, J = chain_residuals(fr.K.params(), rep(C.R), rep(C.t), rep(T.R), rep(T.t), rep(P.R), rep(P.t),
                              fr.points3d, fr.pixels, with_jacobian=True)
    return r, J


def apply_increment(pose: Pose, delta) -> Pose:
    """Left-multiplied rotation increment plus additive translation."""
    E = rodrigues(delta[:3])
    return Pose(E @ pose.R, pose.t + delta[3:])


class ReprojectionProblem:
    """Flattened observations of a set of FRs, indexed against a variable list."""

    def __init__(self, frs, variables, fixed=()):
        self.frs = list(frs)
        self.variables = sorted(variables)
        self.index = {v: i for i, v in enumerate(self.variables)}
        fixed = set(fixed)
        self.free = [v for v in self.variables if v not in fixed]
        block = {v: j for j, v in enumerate(self.free)}
        self.block_of_var = np.array([block.get(v, -1) for v in self.variables], dtype=int)

        counts = [len(fr.points3d) for fr in self.frs]
        self.n_points = int(sum(counts))
        self.fr_of_obs = np.repeat(np.arange(len(self.frs)), counts)
        idx = np.array([[self.index[v] for v in fr_variables(fr)] for fr in self.frs], dtype=int).reshape(-1, 3)
        self.ic, self.ip, self.it = (np.repeat(idx[:, k], counts) for k in range(3))
        self.X = np.concatenate([fr.points3d for fr in self.frs]) if self.frs else np.zeros((0, 3))
        self.uv = np.concatenate([fr.pixels for fr in self.frs]) if self.frs else np.zeros((0, 2))
        self.corner = np.concatenate([fr.corner_ids for fr in self.frs]) if self.frs else np.zeros(0, int)
        self.params = np.repeat(np.array([fr.K.params() for fr in self.frs]).reshape(-1, 10), counts, axis=0)

    @property
    def n_params(self) -> int:
        return 6 * len(self.free)

    def stack(self, values: dict):
        Rs = np.array([values[v].R for v in self.variables])
        ts = np.array([values[v].t for v in self.variables])
        return Rs, ts

    def evaluate(self, Rs, ts, with_jacobian=False):
        args = (self.params, Rs[self.ic], ts[self.ic], Rs[self.it], ts[self.it], Rs[self.ip], ts[self.ip],
                self.X, self.uv)
        return chain_residuals(*args, with_jacobian=with_jacobian)

    def sparse_jacobian(self, Jd) -> sparse.csr_matrix:
        """Assemble per-observation (2, 18) blocks into a (2N, 6B) matrix."""
        n = self.n_points
        rows, cols, vals = [], [], []
        row_idx = np.repeat(np.arange(2 * n).reshape(n, 2, 1), 6, axis=2)
        for k, var_idx in enumerate((self.ic, self.it, self.ip)):
            blk = self.block_of_var[var_idx]
            keep = blk >= 0
            if not np.any(keep):
                continue
            col_idx = (6 * blk[keep])[:, None, None] + np.arange(6)[None, None, :]
            col_idx = np.broadcast_to(col_idx, (int(keep.sum()), 2, 6))
            rows.append(row_idx[keep].ravel())
            cols.append(col_idx.ravel())
            vals.append(Jd[keep][:, :, 6 * k:6 * k + 6].ravel())
        if not rows:
            return sparse.csr_matrix((2 * n, self.n_params))
        return sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(2 * n, self.n_params)
        )

    def offending(self, depth) -> tuple:
        k = int(np.flatnonzero(depth <= MIN_DEPTH)[0])
        return self.frs[self.fr_of_obs[k]].key + (int(self.corner[k]),)


def total_reprojection_error(pool, frs) -> float:
    """Sum of squared pixel residuals over every observed corner (px^2)."""
    values = pool if isinstance(pool, dict) else pool.values
    frs = list(frs)
    variables = {v for fr in frs for v in fr_variables(fr)}
    prob = ReprojectionProblem(frs, variables)
    r, depth = prob.evaluate(*prob.stack(values))
    if np.any(depth <= MIN_DEPTH):
        c, p, t, corner = prob.offending(depth)
        raise NonPositiveDepth(f"camera {c}, pattern {p}, time {t}, corner {corner} is behind the camera")
    return float(np.sum(r**2))


def point_count(frs) -> int:
    return int(sum(len(fr.points3d) for fr in frs))


def residual_records(pool, frs) -> list[ResidualRecord]:
    """Per-corner residuals, computed FR by FR with the composed projection pose."""
    values = pool if isinstance(pool, dict) else pool.values
    out = []
    for fr in frs:
        c, p, t = fr_variables(fr)
        M = compose(compose(values[c], inverse(values[t])), inverse(values[p]))
        pred = project_points(fr.K, M, fr.points3d)
        for corner, x_hat, x in zip(fr.corner_ids, pred, fr.pixels):
            out.append(ResidualRecord(fr.key, int(corner), x_hat, x.copy(), x_hat - x))
    return out


def refine(pool, frs, options: LMOptions | None = None):
    """Levenberg-Marquardt on total reprojection error; returns (pool, report).

    The reference pattern and time stay fixed at identity. The input pool is
    not modified.
    """
    opts = options or LMOptions()
    frs = list(frs)
    out = pool.copy()
    prob = ReprojectionProblem(frs, out.variables, fixed=out.reference_ids)
    n_pts = max(prob.n_points, 1)

    def state_dump():
        return {str(v): out.values[v].matrix.tolist() for v in prob.variables}

    Rs, ts = prob.stack(out.values)
    r, depth = prob.evaluate(Rs, ts)
    if np.any(depth <= MIN_DEPTH):
        c, p, t, corner = prob.offending(depth)
        raise NonPositiveDepth(f"initial solution puts camera {c}, pattern {p}, time {t}, corner {corner} "
                               "behind the camera")
    cost = float(np.sum(r**2))
    if not np.isfinite(cost):
        raise NumericalFailure("non-finite initial residual", iterate=state_dump())
    re0 = cost
    history = [cost]
    lam = opts.lambda0
    iterations = 0
    termination = "max_iterations"
    free_idx = np.array([prob.index[v] for v in prob.free], dtype=int)

    if prob.n_params == 0:
        termination = "no_free_variables"
    while prob.n_params and iterations < opts.max_iters:
        r, _, Jd = prob.evaluate(Rs, ts, with_jacobian=True)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(Jd))):
            raise NumericalFailure(f"non-finite residual or Jacobian at iteration {iterations}",
                                   iterate=state_dump())
        J = prob.sparse_jacobian(Jd)
        g = J.T @ r.ravel()
        if np.max(np.abs(g)) < opts.grad_tol:
            termination = "gradient"
            break
        H = (J.T @ J).toarray()
        diag = np.maximum(np.diag(H), 1e-12 * max(np.max(np.diag(H)), 1e-300))

        theta_norm = np.sqrt(np.sum(ts[free_idx] ** 2) + len(free_idx) * np.pi**2)
        accepted = converged = False
        while not accepted:
            iterations += 1
            try:
                step = -cho_solve(cho_factor(H + lam * np.diag(diag)), g)
            except LinAlgError:
                lam *= 10.0
                if lam > opts.lambda_max:
                    break
                continue
            if np.linalg.norm(step) <= opts.step_tol * theta_norm:
                converged = True
                break
            blocks = step.reshape(-1, 6)
            E = np.array([rodrigues(b[:3]) for b in blocks])
            Rs_new, ts_new = Rs.copy(), ts.copy()
            Rs_new[free_idx] = E @ Rs[free_idx]
            ts_new[free_idx] = ts[free_idx] + blocks[:, 3:]
            r_new, depth_new = prob.evaluate(Rs_new, ts_new)
            new_cost = float(np.sum(r_new**2)) if np.all(depth_new > MIN_DEPTH) else np.inf
            if new_cost < cost:
                accepted = True
                lam = max(lam / 10.0, 1e-15)
            else:
                lam *= 10.0
                if lam > opts.lambda_max or iterations >= opts.max_iters:
                    break
        if converged:
            termination = "step"
            break
        if not accepted:
            termination = "damping" if lam > opts.lambda_max else "max_iterations"
            break

        decrease = cost - new_cost
        Rs, ts, cost = Rs_new, ts_new, new_cost
        history.append(cost)
        if decrease <= opts.rel_tol * history[-2]:
            termination = "relative_decrease"
            break
        if np.linalg.norm(step) <= opts.step_tol * theta_norm:
            termination = "step"
            break
        if cost == 0.0:
            termination = "zero_residual"
            break

    for v in prob.free:
        i = prob.index[v]
        R = Rs[i]
        if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHO_REPAIR_TOL:
            # many small updates can drift off SO(3)
            U, _, Vt = np.linalg.svd(R)
            R = U @ Vt
        out.values[v] = Pose(R, ts[i])
    report = RefineReport(re0, cost, float(np.sqrt(re0 / n_pts)), float(np.sqrt(cost / n_pts)),
                          iterations, termination, history)
    log.info("refinement: re %.6g -> %.6g px^2 in %d iterations (%s)", re0, cost, iterations, termination)
    return out, report
