"""
TUM RGB-D sequences.

A sequence directory holds ``rgb.txt``, ``depth.txt`` and ``groundtruth.txt``
(lines ``timestamp field...``, ``#`` starts a comment) plus the images they
list. Depth PNGs are 16-bit with 5000 units per meter. Trajectory files use the
TUM pose format ``timestamp tx ty tz qx qy qz qw``.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from core.exceptions import EmptySequenceError, IngestionError
from core.geometry import CameraIntrinsics, Pose, RGBDFrame

logger = logging.getLogger(__name__)

MAX_TIME_DIFFERENCE = 0.02
DEPTH_SCALE = 5000.0

SENSORS = {
    'freiburg1': (517.3, 516.5, 318.6, 255.3),
    'freiburg2': (520.9, 521.0, 325.1, 249.7),
    'freiburg3': (535.4, 539.2, 320.1, 247.6),
    'default': (525.0, 525.0, 319.5, 239.5),
}


def sensor_intrinsics(name, width=640, height=480):
    """Intrinsics of the sensor named in a sequence directory, e.g. ``rgbd_dataset_freiburg1_desk``."""
    sensor = next((key for key in SENSORS if key in str(name)), 'default')
    fx, fy, cx, cy = SENSORS[sensor]
    return CameraIntrinsics(fx, fy, cx, cy, width, height, DEPTH_SCALE)


def read_file_list(path):
    """Entries of a TUM list file as (timestamp, [fields])."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f'Missing file: {path}')
    entries = []
    with open(path, encoding='utf-8') as f:
        for number, line in enumerate(f, start=1):
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            parts = line.replace(',', ' ').split()
            try:
                entries.append((float(parts[0]), parts[1:]))
            except ValueError as exc:
                raise IngestionError(f'{path}:{number}: bad timestamp {parts[0]!r}') from exc
    return entries


def associate(first, second, max_difference=MAX_TIME_DIFFERENCE):
    """
    Greedy one-to-one association of two timestamp lists: closest pairs first,
    only pairs closer than ``max_difference``. Returns index pairs sorted by
    the first list's timestamps.
    """
    first = np.asarray(first, dtype=np.float64)
    second = np.asarray(second, dtype=np.float64)
    if first.size == 0 or second.size == 0:
        return []
    gaps = np.abs(first[:, None] - second[None, :])
    i, j = np.nonzero(gaps <= max_difference)
    order = np.lexsort((j, i, gaps[i, j]))
    used_first, used_second, pairs = set(), set(), []
    for a, b in zip(i[order], j[order]):
        if a in used_first or b in used_second:
            continue
        used_first.add(a)
        used_second.add(b)
        pairs.append((int(a), int(b)))
    return sorted(pairs, key=lambda pair: first[pair[0]])


@dataclass(frozen=True)
class TumEntry:
    timestamp: float
    color_path: Path
    depth_path: Path


@dataclass(eq=False)
class TumSequence:
    root: Path
    entries: list
    ground_truth: dict = field(default_factory=dict)
    intrinsics: CameraIntrinsics = None

    def __len__(self):
        return len(self.entries)

    @property
    def timestamps(self):
        return [entry.timestamp for entry in self.entries]

    def frames(self):
        for entry in self.entries:
            yield load_frame(entry, self.intrinsics.depth_scale)

    def ground_truth_poses(self):
        return [self.ground_truth[entry.timestamp] for entry in self.entries]


def load_frame(entry, depth_scale=DEPTH_SCALE):
    try:
        with Image.open(entry.color_path) as image:
            color = np.asarray(image.convert('RGB'), dtype=np.float64) / 255.0
        with Image.open(entry.depth_path) as image:
            depth = np.asarray(image, dtype=np.float64) / depth_scale
    except OSError as exc:
        raise IngestionError(f'Cannot read images for t={entry.timestamp}: {exc}') from exc
    return RGBDFrame(color, depth, entry.timestamp)


def _pose(fields):
    values = [float(x) for x in fields[:7]]
    return Pose.from_quaternion(values[:3], values[3:7])


def load_tum(directory, max_frames=None):
    """Associated color/depth/ground-truth triples of a TUM sequence directory."""
    root = Path(directory)
    if not root.is_dir():
        raise IngestionError(f'Not a directory: {root}')
    rgb = read_file_list(root / 'rgb.txt')
    depth = read_file_list(root / 'depth.txt')
    truth = read_file_list(root / 'groundtruth.txt')

    pairs = associate([t for t, _ in rgb], [t for t, _ in depth])
    truth_times = [t for t, _ in truth]
    entries, ground_truth = [], {}
    matched = dict(associate([rgb[a][0] for a, _ in pairs], truth_times))
    for k, (a, b) in enumerate(pairs):
        if k not in matched:
            continue
        timestamp = rgb[a][0]
        entries.append(TumEntry(timestamp, root / rgb[a][1][0], root / depth[b][1][0]))
        ground_truth[timestamp] = _pose(truth[matched[k]][1])
        if max_frames and len(entries) >= max_frames:
            break
    if not entries:
        raise EmptySequenceError(f'No associated color/depth/ground-truth triples in {root}')

    camera_file = root / 'camera.yaml'
    if camera_file.exists():
        with open(camera_file, encoding='utf-8') as f:
            intrinsics = CameraIntrinsics(**yaml.safe_load(f))
    else:
        intrinsics = sensor_intrinsics(root.name)
    logger.info(f'Loaded {len(entries)} observations from {root}')
    return TumSequence(root, entries, ground_truth, intrinsics)


def read_trajectory(path):
    """Timestamps and poses of a TUM trajectory file."""
    entries = read_file_list(path)
    if any(len(fields) < 7 for _, fields in entries):
        raise IngestionError(f'{path}: trajectory lines need 8 values')
    return [t for t, _ in entries], [_pose(fields) for _, fields in entries]


def format_pose(timestamp, pose):
    values = list(pose.translation) + list(pose.quaternion())
    return f'{timestamp:.6f} ' + ' '.join(f'{v:.9f}' for v in values)


def write_trajectory(path, timestamps, poses):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ['# timestamp tx ty tz qx qy qz qw']
    lines += [format_pose(t, pose) for t, pose in zip(timestamps, poses)]
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return path
