"""Absolute trajectory error after rigid (rotation + translation, no scale) alignment."""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from core.exceptions import InsufficientDataError
from core.geometry import Pose

from .tum import MAX_TIME_DIFFERENCE, associate

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class AteResult:
    rmse: float
    errors: np.ndarray
    timestamps: np.ndarray
    alignment: Pose
    per_frame: dict = field(default_factory=dict)

    @property
    def matched(self):
        return int(self.errors.size)

    def as_record(self):
        return {
            'rmse': round(self.rmse, 9),
            'matched': self.matched,
            'per_frame_rmse': {int(k): round(v, 9) for k, v in sorted(self.per_frame.items())},
        }


def translational_rmse(errors):
    errors = np.asarray(errors, dtype=np.float64)
    return float(np.sqrt(np.mean(errors ** 2)))


def rigid_alignment(source, target):
    """Pose T minimizing sum |target - T(source)|^2."""
    source_mean = source.mean(axis=0)
    target_mean = target.mean(axis=0)
    centered_source = source - source_mean
    centered_target = target - target_mean
    if np.allclose(centered_source, 0.0) or np.allclose(centered_target, 0.0):
        rotation = np.eye(3)
    else:
        rotation = Rotation.align_vectors(centered_target, centered_source)[0].as_matrix()
    return Pose(rotation, target_mean - rotation @ source_mean)


def evaluate_ate(timestamps, positions, truth_timestamps, truth_positions, frame_ids=None,
                 max_difference=MAX_TIME_DIFFERENCE):
    """
    Associate the estimate with ground truth by timestamp, align it rigidly and
    return the RMSE of the translational residuals, overall and per frame id.
    """
    pairs = associate(timestamps, truth_timestamps, max_difference)
    if len(pairs) < 2:
        raise InsufficientDataError(f'ATE needs at least 2 timestamp matches, got {len(pairs)}')
    estimate_index = np.array([a for a, _ in pairs])
    truth_index = np.array([b for _, b in pairs])
    estimate = np.asarray(positions, dtype=np.float64)[estimate_index]
    truth = np.asarray(truth_positions, dtype=np.float64)[truth_index]

    alignment = rigid_alignment(estimate, truth)
    errors = np.linalg.norm(alignment.apply(estimate) - truth, axis=1)
    per_frame = {}
    if frame_ids is not None:
        ids = np.asarray(frame_ids)[estimate_index]
        per_frame = {int(i): translational_rmse(errors[ids == i]) for i in np.unique(ids)}
    rmse = translational_rmse(errors)
    logger.info(f'ATE RMSE {rmse * 100.0:.2f} cm over {len(pairs)} matched poses')
    return AteResult(rmse, errors, np.asarray(timestamps, dtype=np.float64)[estimate_index], alignment, per_frame)


def evaluate_estimate(estimate, truth_timestamps, truth_poses):
    """ATE of a mapping run's trajectory estimate."""
    truth_positions = np.array([pose.translation for pose in truth_poses]).reshape(-1, 3)
    return evaluate_ate(estimate.timestamps, estimate.positions(), truth_timestamps, truth_positions,
                        estimate.frame_ids)
