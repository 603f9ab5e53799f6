"""Simulated depth + semantic sensor on an azimuth-only camera mount."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from ._accel import USE_NUMBA
from .errors import ConfigError, PoseInObstacleError
from .scene import GroundTruth, Pose, footprint_free


@dataclass(frozen=True)
class CameraModel:
    range_min: float = 0.5
    range_max: float = 4.5
    depth_noise_sigma: float = 0.03
    h_fov: float = math.radians(57.0)
    v_fov: float = math.radians(43.0)
    h_rays: int = 80
    v_rays: int = 60
    height: float = 1.0  # optical center above the floor plane, meters

    def __post_init__(self):
        if not 0 < self.range_min < self.range_max:
            raise ConfigError("camera needs 0 < range_min < range_max")
        if not (0 < self.h_fov < math.pi and 0 < self.v_fov < math.pi):
            raise ConfigError("camera field of view must lie in (0, pi)")
        if self.h_rays < 8 or self.v_rays < 8:
            raise ConfigError("camera needs at least 8 rays per axis")
        if self.depth_noise_sigma < 0:
            raise ConfigError("depth noise must be non-negative")

    def ray_directions(self, theta: float) -> np.ndarray:
        az = theta + np.linspace(-self.h_fov / 2, self.h_fov / 2, self.h_rays)
        el = np.linspace(-self.v_fov / 2, self.v_fov / 2, self.v_rays)
        return directions(az, el)

    def origin(self, pose: Pose) -> np.ndarray:
        return np.array([pose.x, pose.y, self.height])


@dataclass(frozen=True)
class ScoringFan:
    """Sparse ray fan used to evaluate hypothetical views.

    Each ray stands for a sector of the field of view and sits at the sector's
    center, so no scoring ray grazes the frustum boundary. Azimuths are
    multiples of ``az_step`` around the view heading whose whole sector fits
    inside the horizontal field of view; ``el_rays`` elevations split the
    vertical field of view evenly. ``az_step`` must divide the lattice heading
    step so that a node can share one panoramic fan across all its headings.
    """

    az_step: float = 2 * math.pi / 32
    el_rays: int = 5

    def az_offsets(self, camera: CameraModel) -> np.ndarray:
        kmax = int(math.floor(camera.h_fov / 2 / self.az_step - 0.5 + 1e-9))
        if kmax < 0:
            raise ConfigError("scoring azimuth step is wider than the camera field of view")
        return np.arange(-kmax, kmax + 1) * self.az_step

    def el_offsets(self, camera: CameraModel) -> np.ndarray:
        return ((np.arange(self.el_rays) + 0.5) / self.el_rays - 0.5) * camera.v_fov

    def view_directions(self, camera: CameraModel, theta: float) -> np.ndarray:
        return directions(theta + self.az_offsets(camera), self.el_offsets(camera))


def directions(azimuths, elevations) -> np.ndarray:
    """Unit vectors for the azimuth x elevation grid, azimuth-major."""
    az = np.asarray(azimuths, dtype=np.float64)[:, None]
    el = np.asarray(elevations, dtype=np.float64)[None, :]
    ce = np.cos(el)
    d = np.stack(
        [np.broadcast_to(ce * np.cos(az), (az.size, el.size)),
         np.broadcast_to(ce * np.sin(az), (az.size, el.size)),
         np.broadcast_to(np.sin(el), (az.size, el.size))],
        axis=-1,
    )
    return d.reshape(-1, 3)


@dataclass(frozen=True)
class SemanticOracle:
    """Stand-in for the segmentation network's per-voxel label scores."""

    q_min: float = 0.35
    q_max: float = 0.95
    swap_eps: float = 0.25

    def quality(self, depth, camera: CameraModel):
        span = camera.range_max - camera.range_min
        return np.clip(1.0 - (np.asarray(depth) - camera.range_min) / span, 0.0, 1.0)


@dataclass(eq=False)
class SensorFrame:
    """One capture. Voxels are flat indices into the scene grid (C order).

    ``hit_voxels``/``hit_depth`` are sorted by voxel; ``miss_voxels`` is sorted
    and disjoint from the hits; ``sem_dist`` holds one categorical row per
    ``sem_voxels`` entry.
    """

    pose: Pose
    hit_voxels: np.ndarray
    hit_depth: np.ndarray
    miss_voxels: np.ndarray
    sem_voxels: np.ndarray
    sem_dist: np.ndarray

    @classmethod
    def empty(cls, pose: Pose, label_count: int) -> "SensorFrame":
        e = np.zeros(0, np.int64)
        return cls(pose, e, np.zeros(0), e.copy(), e.copy(), np.zeros((0, label_count)))

    @property
    def hits(self):
        return list(zip(self.hit_voxels.tolist(), self.hit_depth.tolist()))

    @property
    def misses(self):
        return self.miss_voxels.tolist()

    def __eq__(self, other):
        if not isinstance(other, SensorFrame):
            return NotImplemented
        return self.pose == other.pose and all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("hit_voxels", "hit_depth", "miss_voxels", "sem_voxels", "sem_dist")
        )


def frame_rng(seed: int, frame_index: int, pose: Pose) -> np.random.Generator:
    """Independent stream per (episode seed, frame index, pose)."""
    key = [int(seed), int(frame_index), int(round(pose.x * 1000)), int(round(pose.y * 1000)),
           int(round(pose.theta * 1e6))]
    return np.random.default_rng(np.random.SeedSequence([k & 0xFFFFFFFF for k in key]))


def semantic_oracle_batch(labels, quality, K: int, rng, oracle: SemanticOracle = SemanticOracle()):
    """Vectorized :func:`semantic_oracle`; consumes the stream in the same order."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    quality = np.clip(np.asarray(quality, dtype=np.float64).reshape(-1), 0.0, 1.0)
    m = labels.size
    if K == 1:
        rng.random(m)
        return np.ones((m, 1))
    u = rng.random(m)
    wrong = rng.integers(0, K - 1, size=m)
    q = oracle.q_min + (oracle.q_max - oracle.q_min) * quality
    # the true label always carries the peak, even when q drops below the even split (K == 2)
    peak = np.maximum(q, (1.0 - q) / (K - 1))
    rest = (1.0 - peak) / (K - 1)
    dist = np.repeat(rest[:, None], K, axis=1)
    true_idx = labels - 1
    rows = np.arange(m)
    swap = u < oracle.swap_eps * (1.0 - quality)
    wrong_idx = wrong + (wrong >= true_idx)
    peak_idx = np.where(swap, wrong_idx, true_idx)
    dist[rows, peak_idx] = peak
    return dist


def semantic_oracle(gt_label: int, obs_quality: float, K: int, rng,
                    oracle: SemanticOracle = SemanticOracle()) -> np.ndarray:
    """Categorical label scores for one voxel with ground-truth label ``gt_label`` (1..K)."""
    if not 1 <= gt_label <= K:
        raise ValueError(f"label {gt_label} outside 1..{K}")
    return semantic_oracle_batch([gt_label], [obs_quality], K, rng, oracle)[0]


def cast_ray(gt: GroundTruth, origin, direction, camera: CameraModel, rng):
    """Walk one ray through the ground truth.

    Returns ``(misses, hit)`` where ``misses`` lists the free voxels traversed
    within range in geometric order and ``hit`` is ``(voxel, noisy depth)`` or
    None.
    """
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    o = np.asarray(origin, dtype=np.float64)
    cap = kernels.max_ray_steps(gt.resolution, camera.range_max)
    vox = np.full(cap, -1, np.int64)
    kind = np.zeros(cap, np.int8)
    t0 = np.zeros(cap)
    trace = kernels.trace_ray_nb if USE_NUMBA else kernels.trace_ray_py
    n = trace(gt.codes, o[0], o[1], o[2], d[0], d[1], d[2], gt.resolution,
              camera.range_min, camera.range_max, vox, kind, t0)
    vox, kind, t0 = vox[:n], kind[:n], t0[:n]
    misses = vox[kind == kernels.KIND_PASS]
    hit = None
    if n and kind[-1] == kernels.KIND_HIT:
        depth = t0[-1] + camera.depth_noise_sigma * rng.standard_normal()
        hit = (int(vox[-1]), float(np.clip(depth, camera.range_min, camera.range_max)))
    return misses, hit


def capture(gt: GroundTruth, pose: Pose, camera: CameraModel, rng,
            oracle: SemanticOracle = SemanticOracle(), pose_jitter=None) -> SensorFrame:
    """Render one depth + semantic frame from ``pose``.

    ``pose_jitter`` is an optional ``(sigma_xy, sigma_theta)`` pair; when set
    the frame is taken from a perturbed pose while still being reported at
    ``pose`` (simulated localization error).
    """
    if not footprint_free(gt, pose.x, pose.y):
        raise PoseInObstacleError(f"pose ({pose.x:.3f}, {pose.y:.3f}) is not in free space", field="pose")
    n_rays = camera.h_rays * camera.v_rays
    noise = rng.standard_normal(n_rays)
    true_pose = pose
    if pose_jitter is not None and (pose_jitter[0] > 0 or pose_jitter[1] > 0):
        jx, jy, jt = rng.standard_normal(3)
        true_pose = Pose(pose.x + pose_jitter[0] * jx, pose.y + pose_jitter[0] * jy,
                         pose.theta + pose_jitter[1] * jt)
    dirs = camera.ray_directions(true_pose.theta)
    vox, kind, t0, cnt = kernels.trace_rays(gt.codes, camera.origin(true_pose), dirs, gt.resolution,
                                            camera.range_min, camera.range_max)
    valid = vox >= 0
    miss = np.unique(vox[valid & (kind == kernels.KIND_PASS)])

    rays = np.nonzero(cnt > 0)[0]
    last = cnt[rays] - 1
    is_hit = kind[rays, last] == kernels.KIND_HIT
    rays, last = rays[is_hit], last[is_hit]
    hv = vox[rays, last]
    depth = np.clip(t0[rays, last] + camera.depth_noise_sigma * noise[rays], camera.range_min, camera.range_max)
    hit_vox, first = np.unique(hv, return_index=True)
    hit_depth = depth[first]

    flat_labels = gt.label.reshape(-1)[hit_vox]
    labeled = flat_labels > 0
    sem_vox = hit_vox[labeled]
    sem = semantic_oracle_batch(flat_labels[labeled], oracle.quality(hit_depth[labeled], camera),
                                gt.label_count, rng, oracle)
    return SensorFrame(pose, hit_vox.astype(np.int64), hit_depth, miss.astype(np.int64),
                       sem_vox.astype(np.int64), sem)
