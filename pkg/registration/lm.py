"""
Levenberg-Marquardt registration of a point cloud against a signed-distance field.

A camera-frame point p lands at q = R p + t in the local frame and should lie
on the surface, so its residual is r = F(q). Under a left perturbation
exp(xi) T the residual changes by J . xi with J = [q x g, g], g = dF/dq.
"""
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from core.exceptions import (
    ConfigError,
    DivergenceError,
    InsufficientOverlapError,
    SingularSystemError,
)
from core.geometry import Pose, exp_map, orthonormalize

logger = logging.getLogger(__name__)

MIN_POINTS = 6
MAX_DAMPING_RAISES = 5
MAX_REJECTIONS = 5


@dataclass(frozen=True)
class RegistrationConfig:
    max_iters: int = 30
    lambda_reg: float = 0.001  # lambda_reg
    convergence_eps: float = 1e-5
    subsample_n: int = 4096
    outlier_sdf_cap: float = 0.3

    def __post_init__(self):
        if self.max_iters < 1 or self.subsample_n < MIN_POINTS:
            raise ConfigError(f'max_iters must be positive and subsample_n at least {MIN_POINTS}')
        if self.lambda_reg <= 0 or self.convergence_eps <= 0 or self.outlier_sdf_cap <= 0:
            raise ConfigError('lambda_reg, convergence_eps and outlier_sdf_cap must be positive')


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    pose: Pose
    iterations: int
    final_rmse: float
    inlier_fraction: float
    converged: bool
    rmse_history: tuple = ()


class Residuals(NamedTuple):
    """Per-point residuals and Jacobian rows; ``usable`` marks rows fit for the normal equations."""
    residuals: np.ndarray
    jacobians: np.ndarray
    usable: np.ndarray
    out_of_map: int

    @property
    def count(self):
        return int(np.count_nonzero(self.usable))

    def rmse(self):
        if not self.usable.any():
            return np.inf
        return float(np.sqrt(np.mean(self.residuals[self.usable] ** 2)))


def residual_and_jacobian(points, field, pose=None, colors=None, cap=None):
    """Residuals r = F(R p + t) and rows J = [q x g, g] for every point."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    moved = points if pose is None else pose.apply(points)
    answer = field.query(moved, colors)
    valid = np.asarray(answer.valid, dtype=bool)
    residuals = np.where(valid, answer.sdf, 0.0)
    grads = np.where(valid[:, None], answer.grad, 0.0)
    jacobians = np.concatenate([np.cross(moved, grads), grads], axis=1)
    usable = valid & np.isfinite(residuals)
    if cap is not None:
        usable &= np.abs(residuals) <= cap
    return Residuals(residuals, jacobians, usable, int(np.count_nonzero(~valid)))


def lm_step(residuals, jacobians, lambda_reg):
    """Solve (H + lambda I) dxi = -b with H = sum J J^T and b = sum J r."""
    residuals = np.asarray(residuals, dtype=np.float64).reshape(-1)
    jacobians = np.asarray(jacobians, dtype=np.float64).reshape(-1, 6)
    if residuals.shape[0] < MIN_POINTS:
        raise InsufficientOverlapError(
            f'Need at least {MIN_POINTS} points for a pose update, got {residuals.shape[0]}'
        )
    hessian = jacobians.T @ jacobians
    gradient = jacobians.T @ residuals
    try:
        factor = cho_factor(hessian + lambda_reg * np.eye(6))
    except LinAlgError as exc:
        raise SingularSystemError(f'Normal equations are not positive definite (lambda={lambda_reg})') from exc
    step = -cho_solve(factor, gradient)
    if not np.all(np.isfinite(step)):
        raise SingularSystemError(f'Pose update is not finite (lambda={lambda_reg})')
    return step


def damped_step(rows, damping):
    """lm_step, raising the damping tenfold while the system stays singular."""
    for _ in range(MAX_DAMPING_RAISES + 1):
        try:
            return lm_step(rows.residuals[rows.usable], rows.jacobians[rows.usable], damping), damping
        except SingularSystemError:
            damping *= 10.0
    raise SingularSystemError(f'Normal equations stayed singular up to lambda={damping / 10.0}')


def register(cloud, field, init, cfg, seed=0):
    """Refine ``init`` so the cloud sits on the zero level set of ``field``."""
    positions, colors = cloud.positions, cloud.colors
    if len(cloud) > cfg.subsample_n:
        keep = np.sort(np.random.default_rng(seed).choice(len(cloud), size=cfg.subsample_n, replace=False))
        positions, colors = positions[keep], colors[keep]
    total = positions.shape[0]

    pose = init
    rows = residual_and_jacobian(positions, field, pose, colors, cfg.outlier_sdf_cap)
    if rows.count < MIN_POINTS:
        raise InsufficientOverlapError(f'Only {rows.count} of {total} points overlap the map')
    rmse = rows.rmse()
    history = [rmse]
    damping = cfg.lambda_reg
    rejections = 0
    converged = False
    iteration = 0

    for iteration in range(1, cfg.max_iters + 1):
        step, damping = damped_step(rows, damping)
        candidate = exp_map(step) @ pose
        candidate = Pose(orthonormalize(candidate.rotation), candidate.translation)
        trial = residual_and_jacobian(positions, field, candidate, colors, cfg.outlier_sdf_cap)
        trial_rmse = trial.rmse() if trial.count >= MIN_POINTS else np.inf
        if trial_rmse <= rmse:
            pose, rows, rmse = candidate, trial, trial_rmse
            history.append(rmse)
            damping *= 0.5
            rejections = 0
        else:
            damping *= 10.0
            rejections += 1
        logger.debug(
            f'LM iteration {iteration}: rmse {rmse:.6f}, |dxi| {np.linalg.norm(step):.2e}, lambda {damping:.1e}'
        )
        if np.linalg.norm(step) < cfg.convergence_eps:
            converged = True
            break
        if rejections >= MAX_REJECTIONS:
            raise DivergenceError(f'Registration rejected {rejections} consecutive steps (rmse {rmse:.4f})')

    return RegistrationResult(
        pose=pose,
        iterations=iteration,
        final_rmse=rmse,
        inlier_fraction=rows.count / total,
        converged=converged,
        rmse_history=tuple(history),
    )


def constant_velocity(previous, before_previous=None):
    """Initial guess pose_{t-1} (pose_{t-2}^-1 pose_{t-1}); the last pose when no velocity is known."""
    if before_previous is None:
        return previous
    return previous @ (before_previous.inverse() @ previous)
