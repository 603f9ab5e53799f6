"""Geometric and semantic entropy, the combined information gain, and the entropy map.

All entropies are in bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError, PoseInObstacleError
from .fusion import FREE, OCCUPIED, SIGMA_HIT, UNKNOWN, WorldMap
from .scene import Pose
from .sensor import CameraModel, ScoringFan

LN2 = math.log(2.0)
# belief state -> tracer code
_STATE_CODES = np.array([kernels.CODE_UNKNOWN, kernels.CODE_FREE, kernels.CODE_SOLID], np.int8)


@dataclass(frozen=True)
class GainWeights:
    alpha: float = 1.0  # semantic
    beta: float = 0.3  # geometry

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("gain weights must be non-negative")
        if self.alpha == 0 and self.beta == 0:
            raise ConfigError("at least one gain weight must be positive")

    @classmethod
    def for_mode(cls, mode: str) -> "GainWeights":
        """Weights for an entropy mode: combined, geometry or semantic."""
        base = cls()
        if mode == "combined":
            return base
        if mode in ("geometry", "geometry-only"):
            return cls(0.0, base.beta)
        if mode in ("semantic", "semantic-only"):
            return cls(base.alpha, 0.0)
        raise ConfigError(f"unknown entropy mode {mode!r}")


def p_g(sigma):
    """Occupancy probability from support: e^{s^2} / (1 + e^{s^2}), evaluated stably."""
    s2 = np.square(np.asarray(sigma, dtype=np.float64))
    out = 1.0 / (1.0 + np.exp(-s2))
    return float(out) if out.ndim == 0 else out


def h_geometry(sigma):
    """Binary entropy of p_g(sigma) in bits.

    With z = sigma^2 the entropy in nats is log1p(e^-z) + z / (1 + e^z), which
    stays finite (and tends to 0) for large z.
    """
    z = np.square(np.asarray(sigma, dtype=np.float64))
    ez = np.exp(-z)
    q = ez / (1.0 + ez)
    out = (np.log1p(ez) + q * z) / LN2
    return float(out) if out.ndim == 0 else out


def i_geometry(old_sigma, new_sigma):
    return h_geometry(old_sigma) - h_geometry(new_sigma)


def entropy_bits(dist) -> float:
    p = np.asarray(dist, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def row_entropy(rows: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(rows > 0, rows * np.log2(np.where(rows > 0, rows, 1.0)), 0.0)
    return -t.sum(axis=1)


def i_semantic(old, new, case2: str = "literal", label_count: int | None = None) -> float:
    """Semantic information change of one voxel between two label distributions.

    ``old``/``new`` are categorical arrays or None (no evidence, read as
    uniform). With labels taken as argmax and confidences as max:

    * same label: sum p_new log p_new - sum p_old log p_old, i.e. H(old) - H(new)
    * label changed and confidence rose: -sum p_new log p_new (``case2="zero"`` gives 0)
    * otherwise 0
    """
    if old is None and new is None:
        return 0.0
    k = label_count or len(old if old is not None else new)
    old = np.full(k, 1.0 / k) if old is None else np.asarray(old, dtype=np.float64)
    new = np.full(k, 1.0 / k) if new is None else np.asarray(new, dtype=np.float64)
    lo, ln = int(np.argmax(old)), int(np.argmax(new))
    if lo == ln:
        return entropy_bits(old) - entropy_bits(new)
    if old[lo] < new[ln]:
        if case2 == "zero":
            return 0.0
        return entropy_bits(new)
    return 0.0


def combine(i_sem: float, i_geo: float, w: GainWeights = GainWeights()) -> float:
    return w.alpha * i_sem + w.beta * i_geo


def i_combined(old, new, w: GainWeights = GainWeights(), case2: str = "literal") -> float:
    """Weighted gain between two voxel beliefs (anything with ``sigma`` and ``sem``)."""
    return combine(i_semantic(old.sem, new.sem, case2), i_geometry(old.sigma, new.sigma), w)


@dataclass(frozen=True)
class GainModel:
    """How a hypothetical extra observation is predicted for each voxel.

    Observed voxels receive one more consistent observation: a miss for Free,
    a hit plus a ``q_max`` label score on the current argmax for Occupied.
    Unknown voxels get the full ignorance of both terms, discounted by
    ``gamma``.
    """

    gamma: float = 0.5
    w_unknown: float = 8.0
    w_unknown_sem: float = 0.1
    q_max: float = 0.95


def unknown_voxel_gain(label_count: int, w: GainWeights, model: GainModel = GainModel()) -> float:
    """Predicted gain of one never-observed voxel."""
    log_k = math.log2(label_count) if label_count > 1 else 0.0
    return model.gamma * (w.beta * model.w_unknown + w.alpha * log_k * model.w_unknown_sem)


def voxel_terms(state, sigma, has_sem, sem_rows, label_count: int,
                w: GainWeights, model: GainModel = GainModel(), observed=None):
    """Per-voxel (h_geo, h_sem, combined h, expected gain) for aligned arrays.

    ``sem_rows`` holds one distribution per ``True`` entry of ``has_sem``, in order.
    ``observed`` defaults to ``state != UNKNOWN``. Every observed voxel is
    credited with one more hit; on Free voxels that raises entropy, so after
    clamping at zero free space never attracts views.
    """
    k = label_count
    log_k = math.log2(k) if k > 1 else 0.0
    hg = h_geometry(sigma)
    hg = np.atleast_1d(hg)
    hs = np.full(hg.shape, log_k)
    if has_sem.any():
        hs[has_sem] = row_entropy(sem_rows)
    hs[state == FREE] = 0.0
    h = w.alpha * hs + w.beta * hg

    gain = np.zeros(hg.shape)
    if observed is None:
        observed = state != UNKNOWN
    gain[~observed] = unknown_voxel_gain(k, w, model)
    if w.beta > 0 and observed.any():
        gain[observed] = w.beta * (hg[observed] - h_geometry(sigma[observed] + SIGMA_HIT))
    surf = observed & (state != FREE)
    if surf.any() and w.alpha > 0 and k > 1:
        rows = np.full((int(surf.sum()), k), 1.0 / k)
        rows[has_sem[surf]] = sem_rows[(np.cumsum(has_sem) - 1)[surf & has_sem]]
        top = np.argmax(rows, axis=1)
        obs = np.full(rows.shape, (1.0 - model.q_max) / (k - 1))
        obs[np.arange(len(top)), top] = model.q_max
        prod = rows * obs
        fused = prod / prod.sum(axis=1, keepdims=True)
        gain[surf] += w.alpha * (hs[surf] - row_entropy(fused))
    return hg, hs, h, np.maximum(gain, 0.0)


class EntropyField:
    """Entropy map over the belief grid plus the per-voxel expected gain.

    Arrays are flat (C order, like voxel indices). Global sums are kept
    incrementally; :meth:`audit` checks them against a fresh summation.
    """

    def __init__(self, world: WorldMap, weights: GainWeights = GainWeights(),
                 model: GainModel = GainModel()):
        self.weights = weights
        self.model = model
        self.label_count = world.label_count
        self.shape = world.shape
        idx = np.arange(world.size)
        self.h_geo, self.h_sem, self.h, self.gain = self._terms(world, idx)
        self.sum_geo = math.fsum(self.h_geo)
        self.sum_sem = math.fsum(self.h_sem)
        self.sum_h = math.fsum(self.h)

    def _terms(self, world: WorldMap, idx):
        slots = world.sem_slot.reshape(-1)[idx]
        has = slots >= 0
        rows = world._sem[slots[has]]
        return voxel_terms(world.state.reshape(-1)[idx], world.sigma.reshape(-1)[idx], has, rows,
                           self.label_count, self.weights, self.model,
                           (world.pos.reshape(-1)[idx] > 0) | (world.neg.reshape(-1)[idx] > 0))

    def update(self, world: WorldMap, changes) -> np.ndarray:
        """Refresh the voxels listed in ``changes``; returns those whose gain changed."""
        idx = changes.voxels
        if not idx.size:
            return idx
        hg, hs, h, gain = self._terms(world, idx)
        self.sum_geo += float(np.sum(hg - self.h_geo[idx]))
        self.sum_sem += float(np.sum(hs - self.h_sem[idx]))
        self.sum_h += float(np.sum(h - self.h[idx]))
        moved = idx[gain != self.gain[idx]]
        self.h_geo[idx], self.h_sem[idx], self.h[idx], self.gain[idx] = hg, hs, h, gain
        return moved

    def audit(self, world: WorldMap | None = None, tol: float = 1e-6) -> None:
        for name in ("geo", "sem", "h"):
            arr = self.h if name == "h" else getattr(self, "h_" + name)
            total = getattr(self, "sum_" + name)
            assert abs(total - math.fsum(arr)) <= tol, f"entropy sum drift in {name}"
        if world is not None:
            fresh = EntropyField(world, self.weights, self.model)
            for name in ("h_geo", "h_sem", "h", "gain"):
                assert np.allclose(getattr(self, name), getattr(fresh, name), rtol=0, atol=1e-9), name

    def domain_sum(self, world: WorldMap) -> float:
        """Sum of h over observed voxels and the Unknown voxels bordering a frontier."""
        mask = world.observed.copy()
        fr = world.frontier
        nx, ny, nz = world.shape
        padded = np.pad(fr, 1)
        for a, b, c in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            mask |= padded[1 + a:1 + a + nx, 1 + b:1 + b + ny, 1 + c:1 + c + nz]
        return float(np.sum(self.h[mask.reshape(-1)]))

    def layer(self, name: str, z_index: int) -> np.ndarray:
        return getattr(self, name).reshape(self.shape)[:, :, z_index]

    def export_layers(self, out_dir, z_indices, names=("h", "h_geo", "h_sem", "gain")) -> list[Path]:
        """Write one CSV per (quantity, z slice); rows are x, columns are y, values in bits."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for name in names:
            for k in z_indices:
                p = out / f"{name}_z{k:03d}.csv"
                np.savetxt(p, self.layer(name, k), fmt="%.6g", delimiter=",")
                paths.append(p)
        return paths


def belief_codes(world: WorldMap) -> np.ndarray:
    """Tracer codes for raycasting against the believed map."""
    return _STATE_CODES[world.state]


def expected_gain(world: WorldMap, view: Pose, camera: CameraModel = CameraModel(),
                  weights: GainWeights = GainWeights(), model: GainModel = GainModel(),
                  fan: ScoringFan = ScoringFan(), field: EntropyField | None = None) -> float:
    """Predicted information gain of capturing from ``view``, summed over the visible voxels."""
    from .vsf import view_sums  # shares the scoring fan with the view field

    if world.state.reshape(-1)[_column_voxel(world, view, camera)] == OCCUPIED:
        raise PoseInObstacleError("view origin is inside a believed obstacle", field="view")
    if field is None:
        field = EntropyField(world, weights, model)
    _, g = view_sums(world, field.gain, view, camera, fan)
    return g


def _column_voxel(world: WorldMap, pose: Pose, camera: CameraModel) -> int:
    res = world.resolution
    i = min(max(int(math.floor(pose.x / res)), 0), world.shape[0] - 1)
    j = min(max(int(math.floor(pose.y / res)), 0), world.shape[1] - 1)
    k = min(max(int(math.floor(camera.height / res)), 0), world.shape[2] - 1)
    return (i * world.shape[1] + j) * world.shape[2] + k
