"""Keypoint similarity between frames and revisit detection."""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from core.exceptions import ConfigError, UndefinedSimilarityError

from .graph import EdgeKind, TopoEdge

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LoopConfig:
    threshold: float = 0.6
    search_radius: float = 5.0
    min_cosine: float = 0.8
    enabled: bool = True

    def __post_init__(self):
        if self.search_radius <= 0:
            raise ConfigError('search_radius must be positive')
        if not -1.0 <= self.min_cosine <= 1.0:
            raise ConfigError('min_cosine must lie in [-1, 1]')


@dataclass(frozen=True)
class LoopMatch:
    frame_id: int
    score: float


def _cosine(a, b):
    norms = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    dots = np.sum(a * b, axis=1)
    return np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0)


def similarity(a, b, radius, min_cosine=0.8):
    """
    Fraction of ``a``'s keypoints whose nearest keypoint of ``b`` (both in
    world coordinates) lies within ``radius`` and carries a feature with
    cosine similarity above ``min_cosine``.
    """
    if a is None or b is None or len(a) == 0 or len(b) == 0:
        raise UndefinedSimilarityError('Similarity needs keypoints on both sides')
    tree = cKDTree(b.world_positions())
    distances, ids = tree.query(a.world_positions(), k=1)
    close = distances <= radius
    matched = np.zeros(len(a), dtype=bool)
    if close.any():
        matched[close] = _cosine(a.features[close], b.features[ids[close]]) > min_cosine
    return float(np.mean(matched))


def symmetric_similarity(a, b, radius, min_cosine=0.8):
    return min(similarity(a, b, radius, min_cosine), similarity(b, a, radius, min_cosine))


def loop_check(candidate, topo_map, cfg, radius):
    """
    Best earlier frame that ``candidate`` revisits, or None.

    Frames already adjacent to the candidate are skipped. A match adds a loop
    edge candidate -> match to the map; the candidate stays a node.
    """
    if not cfg.enabled or len(topo_map) < 2:
        return None
    if candidate.keypoints is None or len(candidate.keypoints) == 0:
        if not len(candidate.field.store):
            return None
        candidate.refresh_keypoints()
    adjacent = set(topo_map.neighbors(candidate.id))
    origin = candidate.anchor_pose.translation

    best = None
    for frame in topo_map.frames.values():
        if frame.id == candidate.id or frame.id in adjacent:
            continue
        if frame.keypoints is None or len(frame.keypoints) == 0:
            continue
        if np.linalg.norm(frame.anchor_pose.translation - origin) > cfg.search_radius:
            continue
        score = symmetric_similarity(candidate.keypoints, frame.keypoints, radius, cfg.min_cosine)
        logger.debug(f'Similarity of frame {candidate.id} to frame {frame.id}: {score:.3f}')
        if score >= cfg.threshold and (best is None or score > best.score):
            best = LoopMatch(frame.id, score)

    if best is not None:
        match = topo_map.frame(best.frame_id)
        topo_map.add_edge(TopoEdge(
            candidate.id, match.id, candidate.anchor_pose.inverse() @ match.anchor_pose,
            (candidate.t_start, candidate.t_end), EdgeKind.LOOP,
        ))
        logger.info(f'Frame {candidate.id} revisits frame {match.id} (similarity {best.score:.2f})')
    return best
