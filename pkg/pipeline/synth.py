"""
Synthetic RGB-D sequences rendered from analytic scenes.

Every world couples a ``core.shapes.Scene`` (the exact signed-distance
oracle) with a scripted camera trajectory. Depth is rendered by closed-form
ray/shape intersection; ``sphere_trace`` renders the same image by marching
the distance field and serves as an independent check. Colors are constant
per object.
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from core.exceptions import ConfigError
from core.geometry import CameraIntrinsics, Pose, RGBDFrame, look_at
from core.shapes import Box, Room, Scene, Sphere

from .tum import DEPTH_SCALE, format_pose

logger = logging.getLogger(__name__)

FRAME_RATE = 30.0
MAX_DEPTH = 20.0


def default_intrinsics():
    return CameraIntrinsics(60.0, 60.0, 40.0, 30.0, 81, 61, DEPTH_SCALE)


@dataclass(eq=False)
class SyntheticSequence:
    name: str
    scene: Scene
    poses: list
    intrinsics: CameraIntrinsics

    def __len__(self):
        return len(self.poses)

    @property
    def timestamps(self):
        return [i / FRAME_RATE for i in range(len(self.poses))]

    def frames(self):
        for timestamp, pose in zip(self.timestamps, self.poses):
            depth, owner = render_depth(self.scene, pose, self.intrinsics)
            yield RGBDFrame(colors_for(self.scene, owner), depth, timestamp)

    def ground_truth_poses(self):
        return list(self.poses)


def pixel_rays(intrinsics):
    """Camera-frame ray directions with unit z, one per pixel in row-major order."""
    v, u = np.meshgrid(np.arange(intrinsics.height), np.arange(intrinsics.width), indexing='ij')
    return np.stack([
        (u.ravel() - intrinsics.center_x) / intrinsics.focal_x,
        (v.ravel() - intrinsics.center_y) / intrinsics.focal_y,
        np.ones(u.size),
    ], axis=1)


def render_depth(scene, pose, intrinsics):
    """Depth image (0 where nothing is hit) and the index of the shape seen at each pixel."""
    rays = pixel_rays(intrinsics)
    directions = rays @ pose.rotation.T
    origins = np.broadcast_to(pose.translation, directions.shape)
    t, owner = scene.intersect(origins, directions)
    # unit-z directions make the ray parameter the depth
    depth = np.where(np.isfinite(t) & (t < MAX_DEPTH), t, 0.0)
    owner = np.where(depth > 0, owner, -1)
    shape = (intrinsics.height, intrinsics.width)
    return depth.reshape(shape), owner.reshape(shape)


def sphere_trace(scene, pose, intrinsics, max_steps=2000, tolerance=1e-10):
    """Depth image obtained by marching the scene's distance field along every pixel ray."""
    rays = pixel_rays(intrinsics)
    lengths = np.linalg.norm(rays, axis=1)
    directions = (rays / lengths[:, None]) @ pose.rotation.T
    t = np.zeros(rays.shape[0])
    active = np.ones(rays.shape[0], dtype=bool)
    hit = np.zeros(rays.shape[0], dtype=bool)
    for _ in range(max_steps):
        if not active.any():
            break
        points = pose.translation + t[active, None] * directions[active]
        distance = scene.distance(points)
        index = np.flatnonzero(active)
        done = distance < tolerance
        hit[index[done]] = True
        t[index[~done]] += distance[~done]
        far = t[index] > MAX_DEPTH * lengths[index]
        active[index[done | far]] = False
    depth = np.where(hit, t / lengths, 0.0)
    return depth.reshape(intrinsics.height, intrinsics.width)


def colors_for(scene, owner):
    return scene.colors_of(owner.ravel()).reshape(owner.shape + (3,))


def _orbit(radius, count, arc):
    poses = []
    for i in range(count):
        angle = arc * i / max(count - 1, 1)
        eye = np.array([radius * math.sin(angle), 0.0, -radius * math.cos(angle)])
        poses.append(look_at(eye, np.zeros(3)))
    return poses


def sphere_orbit(count=150):
    """Camera on a 3 m orbit around a 2 m sphere, always facing its center."""
    scene = Scene([Sphere(np.zeros(3), 2.0, color=(0.8, 0.3, 0.3))])
    return SyntheticSequence('sphere-orbit', scene, _orbit(3.0, count, math.radians(90.0)), default_intrinsics())


def box_room(count=60):
    scene = Scene([
        Room(np.zeros(3), [2.0, 1.5, 2.5]),
        Box([0.6, 0.9, 1.2], [0.3, 0.6, 0.3], color=(0.2, 0.5, 0.8)),
        Sphere([-0.8, 0.7, 1.5], 0.4, color=(0.8, 0.6, 0.2)),
    ])
    poses = []
    for i in range(count):
        s = i / max(count - 1, 1)
        eye = np.array([-0.6 + 1.2 * s, -0.2, -1.5])
        poses.append(look_at(eye, eye + np.array([math.sin(0.4 * (s - 0.5)), 0.2, math.cos(0.4 * (s - 0.5))])))
    return SyntheticSequence('box-room', scene, poses, default_intrinsics())


def corridor(count=120):
    scene = Scene([
        Room([0.0, 0.0, 0.0], [1.5, 1.2, 7.0]),
        Box([-1.2, 0.0, -3.0], [0.3, 1.2, 0.3], color=(0.3, 0.6, 0.3)),
        Box([1.2, 0.0, 0.0], [0.3, 1.2, 0.3], color=(0.3, 0.3, 0.6)),
        Box([-1.2, 0.0, 3.0], [0.3, 1.2, 0.3], color=(0.6, 0.3, 0.3)),
    ])
    poses = []
    for i in range(count):
        z = -5.0 + 9.0 * i / max(count - 1, 1)
        eye = np.array([0.0, 0.0, z])
        poses.append(look_at(eye, eye + np.array([0.1, 0.05, 1.0])))
    return SyntheticSequence('corridor', scene, poses, default_intrinsics())


def two_rooms(count=120):
    """Two rooms joined by a door in the wall z = 2; the camera walks through the door."""
    scene = Scene([
        Room([0.0, 0.0, 2.0], [2.0, 1.5, 4.0]),
        Box([-1.4, 0.0, 2.0], [0.8, 1.5, 0.1], color=(0.5, 0.4, 0.3)),
        Box([1.4, 0.0, 2.0], [0.8, 1.5, 0.1], color=(0.5, 0.4, 0.3)),
        Box([1.2, 1.0, -0.5], [0.4, 0.5, 0.4], color=(0.2, 0.5, 0.8)),
        Sphere([-1.0, 1.0, 4.5], 0.4, color=(0.8, 0.6, 0.2)),
    ])
    poses = []
    for i in range(count):
        z = -1.0 + 6.0 * i / max(count - 1, 1)
        eye = np.array([0.0, 0.0, z])
        poses.append(look_at(eye, eye + np.array([0.05, 0.1, 1.0])))
    return SyntheticSequence('two-rooms', scene, poses, default_intrinsics())


def loop_square(count=120):
    """A 2 m square walked once; the last pose is the first one."""
    scene = Scene([
        Room(np.zeros(3), [4.0, 1.5, 4.0]),
        Box([0.0, 0.8, 0.0], [0.5, 0.7, 0.5], color=(0.2, 0.5, 0.8)),
        Sphere([2.5, 1.0, 2.5], 0.5, color=(0.8, 0.3, 0.3)),
        Box([-2.5, 0.5, -2.5], [0.4, 1.0, 0.4], color=(0.3, 0.6, 0.3)),
    ])
    corners = np.array([[-1.0, 0.0, -1.0], [1.0, 0.0, -1.0], [1.0, 0.0, 1.0], [-1.0, 0.0, 1.0]])
    poses = []
    for i in range(count - 1):
        s = 4.0 * i / (count - 1)
        side = int(s)
        eye = corners[side] + (s - side) * (corners[(side + 1) % 4] - corners[side])
        # look outwards from the square's center towards the walls
        poses.append(look_at(eye, eye * 3.0 + np.array([0.0, 0.3, 0.0])))
    poses.append(poses[0])
    return SyntheticSequence('loop-square', scene, poses, default_intrinsics())


WORLDS = {
    'sphere-orbit': sphere_orbit,
    'box-room': box_room,
    'corridor': corridor,
    'two-rooms': two_rooms,
    'loop-square': loop_square,
}


def synth_world(name, count=None):
    if name not in WORLDS:
        raise ConfigError(f'Unknown synthetic world {name!r}; choose from {sorted(WORLDS)}')
    return WORLDS[name]() if count is None else WORLDS[name](count)


def write_dataset(sequence, out_dir):
    """Write the sequence in the TUM layout (16-bit depth PNGs, 5000 units per meter)."""
    out_dir = Path(out_dir)
    (out_dir / 'rgb').mkdir(parents=True, exist_ok=True)
    (out_dir / 'depth').mkdir(parents=True, exist_ok=True)
    rgb_lines, depth_lines, truth_lines = ['# color images'], ['# depth images'], ['# timestamp tx ty tz qx qy qz qw']
    for frame, pose in zip(sequence.frames(), sequence.poses):
        name = f'{frame.timestamp:.6f}.png'
        Image.fromarray(np.round(frame.color * 255.0).astype(np.uint8)).save(out_dir / 'rgb' / name)
        units = np.round(frame.depth * sequence.intrinsics.depth_scale)
        Image.fromarray(np.clip(units, 0, 65535).astype(np.uint16)).save(out_dir / 'depth' / name)
        rgb_lines.append(f'{frame.timestamp:.6f} rgb/{name}')
        depth_lines.append(f'{frame.timestamp:.6f} depth/{name}')
        truth_lines.append(format_pose(frame.timestamp, pose))
    for filename, lines in (('rgb.txt', rgb_lines), ('depth.txt', depth_lines), ('groundtruth.txt', truth_lines)):
        (out_dir / filename).write_text('\n'.join(lines) + '\n', encoding='utf-8')
    intrinsics = sequence.intrinsics
    with open(out_dir / 'camera.yaml', 'w', encoding='utf-8') as f:
        yaml.safe_dump({
            'focal_x': intrinsics.focal_x, 'focal_y': intrinsics.focal_y,
            'center_x': intrinsics.center_x, 'center_y': intrinsics.center_y,
            'width': intrinsics.width, 'height': intrinsics.height, 'depth_scale': intrinsics.depth_scale,
        }, f, sort_keys=False)
    logger.info(f'Wrote {len(sequence)} observations of {sequence.name} to {out_dir}')
    return out_dir
