"""Replay buffer of past samples, stratified by observation index."""
import logging

import numpy as np

from core.exceptions import EmptyInputError

from .sampler import SampleSet

logger = logging.getLogger(__name__)

DEFAULT_CAPACITY = 2_000_000


class ReplayBuffer:
    """
    Bounded store of samples grouped per observation.

    When full, the oldest observations are thinned first (halved, never below
    ``min_per_frame`` samples); an observation is dropped entirely only when it
    is not protected and thinning everything else did not free enough room.
    """

    def __init__(self, capacity=DEFAULT_CAPACITY, min_per_frame=64, seed=0):
        if capacity < 1:
            raise ValueError('capacity must be positive')
        self.capacity = capacity
        self.min_per_frame = min_per_frame
        self._frames = {}
        self._size = 0
        self._rng = np.random.default_rng(seed)

    def __len__(self):
        return self._size

    @property
    def frame_indices(self):
        return sorted(self._frames)

    def frame_samples(self, frame_index):
        return self._frames[frame_index]

    def add(self, samples, protected=()):
        """Store samples, splitting them by their frame index."""
        if len(samples) == 0:
            return
        for index in np.unique(samples.frame_index):
            chunk = samples.subset(samples.frame_index == index)
            previous = self._frames.get(int(index))
            if previous is not None:
                self._size -= len(previous)
                chunk = SampleSet.concatenate([previous, chunk])
            self._frames[int(index)] = chunk
            self._size += len(chunk)
        self._evict(set(protected))

    def _evict(self, protected):
        for index in self.frame_indices:
            if self._size <= self.capacity:
                return
            chunk = self._frames[index]
            target = max(self.min_per_frame, len(chunk) // 2)
            if target < len(chunk):
                keep = np.sort(self._rng.choice(len(chunk), size=target, replace=False))
                self._frames[index] = chunk.subset(keep)
                self._size -= len(chunk) - target
        for index in self.frame_indices:
            if self._size <= self.capacity:
                return
            if index in protected:
                continue
            self._size -= len(self._frames.pop(index))
            logger.debug(f'Evicted replay samples of observation {index}')
        if self._size > self.capacity:
            # Only protected frames remain; thin them oldest first.
            self._evict_protected()

    def _evict_protected(self):
        for index in self.frame_indices:
            excess = self._size - self.capacity
            if excess <= 0:
                return
            chunk = self._frames[index]
            target = max(1, len(chunk) - excess)
            keep = np.sort(self._rng.choice(len(chunk), size=target, replace=False))
            self._frames[index] = chunk.subset(keep)
            self._size -= len(chunk) - target


def mix_replay(buffer, new_samples, new_fraction, batch_size, rng_seed):
    """
    Draw a training batch: ``new_fraction`` of it from the new samples and the
    rest spread uniformly across the observations stored in the buffer.
    """
    if not 0.0 < new_fraction <= 1.0:
        raise ValueError('new_fraction must lie in (0, 1]')
    new_samples = new_samples if new_samples is not None else SampleSet.empty()
    stored = buffer.frame_indices if buffer is not None else []
    if len(new_samples) == 0 and not stored:
        raise EmptyInputError('Both the replay buffer and the new samples are empty')
    rng = np.random.default_rng(rng_seed)

    if not stored:
        n_new = batch_size
    elif len(new_samples) == 0:
        n_new = 0
    else:
        n_new = int(round(batch_size * new_fraction))
    n_new = min(n_new, len(new_samples))
    # a short supply of new samples is made up from replay
    n_replay = batch_size - n_new if new_fraction < 1.0 or n_new == 0 else 0

    parts = []
    if n_new:
        parts.append(new_samples.subset(rng.choice(len(new_samples), size=n_new, replace=False)))
    if n_replay and stored:
        chunks = [buffer.frame_samples(index) for index in stored]
        per_frame = _stratified_counts(n_replay, np.array([len(c) for c in chunks]), rng)
        for chunk, count in zip(chunks, per_frame):
            if count:
                parts.append(chunk.subset(rng.choice(len(chunk), size=int(count), replace=False)))
    return SampleSet.concatenate(parts)


def _stratified_counts(total, available, rng):
    """Multinomial split of ``total`` over frames; overflow moves to frames with room."""
    counts = np.zeros(len(available), dtype=np.int64)
    remaining = min(int(total), int(available.sum()))
    while remaining > 0:
        room = available - counts
        open_frames = np.flatnonzero(room > 0)
        draw = rng.multinomial(remaining, np.full(open_frames.size, 1.0 / open_frames.size))
        taken = np.minimum(draw, room[open_frames])
        counts[open_frames] += taken
        remaining -= int(taken.sum())
    return counts
