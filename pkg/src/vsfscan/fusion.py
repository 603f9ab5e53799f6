"""Robot belief map: occupancy support, semantic label fusion, voxel states, frontiers.

Support per voxel is ``0.85 * hits - 0.4 * misses``. It is always derived
from the integer counts (in hundredths) so the value is reproducible to the
last bit whatever order frames arrive in.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from ._accel import USE_NUMBA
from .scene import RobotBody, _index_range
from .sensor import SensorFrame

log = logging.getLogger(__name__)

UNKNOWN, FREE, OCCUPIED = 0, 1, 2
STATE_NAMES = ("unknown", "free", "occupied")

SIGMA_HIT = 0.85
SIGMA_MISS = -0.4
_HIT_CENTI, _MISS_CENTI = 85, 40
TAU_OCC = 0.85
TAU_FREE = -0.4
COUNT_CAP = 10**6
UNDERFLOW = 1e-300

_OFFSETS_6 = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], np.int64)
_OFFSETS_26 = np.array(
    [[a, b, c] for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1) if (a, b, c) != (0, 0, 0)],
    np.int64,
)


def support(pos_count, neg_count):
    """Occupancy support from hit/miss counts."""
    return (_HIT_CENTI * np.asarray(pos_count, np.int64) - _MISS_CENTI * np.asarray(neg_count, np.int64)) / 100.0


def classify(sigma, observed):
    """Voxel state from its support; works elementwise on arrays."""
    sigma = np.asarray(sigma, dtype=np.float64)
    observed = np.asarray(observed, dtype=bool)
    state = np.where(sigma >= TAU_OCC, OCCUPIED, np.where(sigma <= TAU_FREE, FREE, UNKNOWN))
    state = np.where(observed, state, UNKNOWN).astype(np.int8)
    return int(state) if state.ndim == 0 else state


def _fuse_rows(prior: np.ndarray, obs: np.ndarray) -> np.ndarray:
    prod = prior * obs
    tot = prod.sum(axis=1)
    bad = tot < UNDERFLOW
    if bad.any():
        log.debug("semantic fusion underflow on %d voxel(s); averaging instead", int(bad.sum()))
        prod[bad] = 0.5 * (prior[bad] + obs[bad])
        tot[bad] = prod[bad].sum(axis=1)
    return prod / tot[:, None]


def fuse_semantic(prior, obs) -> np.ndarray:
    """Naive-Bayes product of two categorical distributions, renormalized.

    A missing prior returns the observation unchanged.
    """
    obs = np.asarray(obs, dtype=np.float64)
    if prior is None:
        return obs.copy()
    return _fuse_rows(np.asarray(prior, dtype=np.float64)[None, :], obs[None, :])[0]


@dataclass(frozen=True)
class VoxelBelief:
    sigma: float
    pos_count: int
    neg_count: int
    sem: np.ndarray | None
    label: int  # 1..K, or 0 without semantic evidence
    confidence: float


@dataclass(eq=False)
class ChangeSet:
    """What one integration changed. Arrays are aligned with ``voxels`` (sorted)."""

    voxels: np.ndarray
    old_sigma: np.ndarray
    new_sigma: np.ndarray
    old_state: np.ndarray
    new_state: np.ndarray
    old_label: np.ndarray
    new_label: np.ndarray
    old_conf: np.ndarray
    new_conf: np.ndarray
    frontier_added: np.ndarray
    frontier_removed: np.ndarray
    cleared_columns: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    contact_columns: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    @classmethod
    def empty(cls) -> "ChangeSet":
        e = np.zeros(0, np.int64)
        f = np.zeros(0)
        s = np.zeros(0, np.int8)
        return cls(e, f, f, s, s, e, e, f, f, e, e, e)

    @property
    def is_empty(self) -> bool:
        return not (self.voxels.size or self.frontier_added.size or self.frontier_removed.size
                    or self.cleared_columns.size or self.contact_columns.size)

    def touched(self) -> np.ndarray:
        """Voxels whose belief or frontier flag changed."""
        return np.union1d(np.union1d(self.voxels, self.frontier_added), self.frontier_removed)


class WorldMap:
    """Dense belief grid over the scene extents.

    Per-voxel arrays are dense; semantic distributions are stored sparsely
    (``sem_slot`` maps a voxel to a row of the growable distribution table).
    """

    def __init__(self, shape, resolution: float, label_count: int,
                 body: RobotBody = RobotBody(), connectivity: int = 6):
        if connectivity not in (6, 26):
            raise ValueError("connectivity must be 6 or 26")
        self.shape = tuple(int(n) for n in shape)
        self.resolution = float(resolution)
        self.label_count = int(label_count)
        self.body = body
        self.connectivity = connectivity
        self._offsets = _OFFSETS_6 if connectivity == 6 else _OFFSETS_26
        self.pos = np.zeros(self.shape, np.int32)
        self.neg = np.zeros(self.shape, np.int32)
        self.sigma = np.zeros(self.shape, np.float64)
        self.state = np.zeros(self.shape, np.int8)
        self.frontier = np.zeros(self.shape, bool)
        self.label = np.zeros(self.shape, np.int16)
        self.confidence = np.zeros(self.shape, np.float64)
        self.sem_slot = np.full(self.shape, -1, np.int32)
        self._sem = np.zeros((1024, self.label_count))
        self._sem_n = 0
        k0, k1 = _index_range(body.z_min, body.z_max, self.resolution, self.shape[2])
        self.band = (k0, k1)
        self.col_occ = np.zeros(self.shape[:2], np.int32)
        self.col_free = np.zeros(self.shape[:2], np.int32)
        self.cleared = np.zeros(self.shape[:2], bool)
        self.contact = np.zeros(self.shape[:2], bool)  # columns the robot has bumped into
        self.frames_integrated = 0
        self._seen = None  # scratch marks for the compiled frontier update

    # --- queries ---------------------------------------------------------

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def observed(self) -> np.ndarray:
        return (self.pos > 0) | (self.neg > 0)

    def sem_of(self, voxel: int):
        slot = self.sem_slot.reshape(-1)[voxel]
        return None if slot < 0 else self._sem[slot].copy()

    def sem_rows(self, voxels) -> tuple[np.ndarray, np.ndarray]:
        """(has-evidence mask, distribution rows; uniform where absent)."""
        slots = self.sem_slot.reshape(-1)[voxels]
        has = slots >= 0
        rows = np.full((len(slots), self.label_count), 1.0 / self.label_count)
        rows[has] = self._sem[slots[has]]
        return has, rows

    def belief(self, voxel) -> VoxelBelief:
        v = self.flat_index(voxel)
        return VoxelBelief(
            float(self.sigma.flat[v]), int(self.pos.flat[v]), int(self.neg.flat[v]),
            self.sem_of(v), int(self.label.flat[v]), float(self.confidence.flat[v]),
        )

    def flat_index(self, voxel) -> int:
        if np.ndim(voxel) == 0:
            return int(voxel)
        return int(np.ravel_multi_index(tuple(int(c) for c in voxel), self.shape))

    def column_obstacles(self) -> tuple[np.ndarray, np.ndarray]:
        """2D projection of the body band: (occupied columns, unknown columns).

        A column is occupied when any band voxel is Occupied or the robot has
        touched it, unknown when none is Free or Occupied and the robot has not
        cleared it by being nearby.
        """
        occ = (self.col_occ > 0) | self.contact
        unknown = (~occ) & (self.col_free == 0) & ~self.cleared
        return occ, unknown

    # --- updates ---------------------------------------------------------

    def integrate(self, frame: SensorFrame) -> ChangeSet:
        hits = np.asarray(frame.hit_voxels, np.int64)
        misses = np.asarray(frame.miss_voxels, np.int64)
        sem_vox = np.asarray(frame.sem_voxels, np.int64)
        self.frames_integrated += 1
        if hits.size == 0 and misses.size == 0 and sem_vox.size == 0:
            return ChangeSet.empty()
        idx = np.union1d(np.union1d(hits, misses), sem_vox)
        pos, neg, sigma = self.pos.reshape(-1), self.neg.reshape(-1), self.sigma.reshape(-1)
        state, label, conf = self.state.reshape(-1), self.label.reshape(-1), self.confidence.reshape(-1)
        old_pos, old_neg = pos[idx].copy(), neg[idx].copy()
        old_sigma, old_state = sigma[idx].copy(), state[idx].copy()
        old_label, old_conf = label[idx].copy(), conf[idx].copy()

        pos[hits] = np.minimum(pos[hits] + 1, COUNT_CAP)
        neg[misses] = np.minimum(neg[misses] + 1, COUNT_CAP)
        sigma[idx] = support(pos[idx], neg[idx])
        state[idx] = classify(sigma[idx], True)

        sem_changed = np.zeros(idx.size, bool)
        if sem_vox.size:
            sem_changed[np.searchsorted(idx, sem_vox)] = self._fuse(sem_vox, np.asarray(frame.sem_dist))

        changed = (pos[idx] != old_pos) | (neg[idx] != old_neg) | sem_changed
        idx = idx[changed]
        old_sigma, old_state = old_sigma[changed], old_state[changed]
        old_label, old_conf = old_label[changed], old_conf[changed]
        new_state = state[idx].copy()

        self._update_columns(idx, old_state, new_state)
        added, removed = self._update_frontier(idx)
        return ChangeSet(idx, old_sigma, sigma[idx].copy(), old_state, new_state,
                         old_label, label[idx].copy(), old_conf, conf[idx].copy(), added, removed)

    def _fuse(self, voxels: np.ndarray, obs: np.ndarray) -> np.ndarray:
        slot = self.sem_slot.reshape(-1)
        slots = slot[voxels]
        fresh = slots < 0
        n_new = int(fresh.sum())
        if self._sem_n + n_new > self._sem.shape[0]:
            cap = max(self._sem.shape[0] * 2, self._sem_n + n_new)
            grown = np.zeros((cap, self.label_count))
            grown[: self._sem_n] = self._sem[: self._sem_n]
            self._sem = grown
        new_slots = np.arange(self._sem_n, self._sem_n + n_new, dtype=np.int32)
        slot[voxels[fresh]] = new_slots
        self._sem_n += n_new
        slots = slot[voxels]

        out = np.empty_like(obs, dtype=np.float64)
        out[fresh] = obs[fresh]
        old = ~fresh
        if old.any():
            out[old] = _fuse_rows(self._sem[slots[old]], obs[old])
        changed = fresh.copy()
        changed[old] = np.any(out[old] != self._sem[slots[old]], axis=1)
        self._sem[slots] = out
        self.label.reshape(-1)[voxels] = np.argmax(out, axis=1) + 1
        self.confidence.reshape(-1)[voxels] = out.max(axis=1)
        return changed

    def _update_columns(self, idx, old_state, new_state):
        if not idx.size:
            return
        i, j, k = np.unravel_index(idx, self.shape)
        inband = (k >= self.band[0]) & (k < self.band[1])
        if not inband.any():
            return
        col = i[inband] * self.shape[1] + j[inband]
        o, n = old_state[inband], new_state[inband]
        d_occ = (n == OCCUPIED).astype(np.int32) - (o == OCCUPIED)
        d_free = (n == FREE).astype(np.int32) - (o == FREE)
        np.add.at(self.col_occ.reshape(-1), col, d_occ)
        np.add.at(self.col_free.reshape(-1), col, d_free)

    def neighbors(self, idx: np.ndarray) -> np.ndarray:
        """Unique in-bounds neighbors of ``idx`` (plus ``idx`` itself)."""
        coords = np.stack(np.unravel_index(idx, self.shape), axis=1)
        out = [idx]
        dims = np.array(self.shape)
        for off in self._offsets:
            nb = coords + off
            ok = np.all((nb >= 0) & (nb < dims), axis=1)
            out.append(np.ravel_multi_index(tuple(nb[ok].T), self.shape))
        return np.unique(np.concatenate(out))

    def _frontier_at(self, cand: np.ndarray) -> np.ndarray:
        state = self.state.reshape(-1)
        coords = np.stack(np.unravel_index(cand, self.shape), axis=1)
        dims = np.array(self.shape)
        touch_unknown = np.zeros(cand.size, bool)
        for off in self._offsets:
            nb = coords + off
            ok = np.all((nb >= 0) & (nb < dims), axis=1)
            flat = np.ravel_multi_index(tuple(np.where(ok[:, None], nb, 0).T), self.shape)
            touch_unknown |= ok & (state[flat] == UNKNOWN)
        return (state[cand] == FREE) & touch_unknown

    def _update_frontier(self, idx):
        if not idx.size:
            e = np.zeros(0, np.int64)
            return e, e.copy()
        if USE_NUMBA:
            if self._seen is None:
                self._seen = np.zeros(self.size, bool)
            cap = idx.size * (len(self._offsets) + 1)
            add = np.empty(cap, np.int64)
            rem = np.empty(cap, np.int64)
            na, nr = kernels.frontier_update_nb(self.state, self.frontier, idx, self._offsets,
                                                self._seen, add, rem)
            return np.sort(add[:na]), np.sort(rem[:nr])
        cand = self.neighbors(idx)
        new = self._frontier_at(cand)
        fr = self.frontier.reshape(-1)
        old = fr[cand]
        fr[cand] = new
        return cand[new & ~old], cand[old & ~new]

    def clear_near_field(self, x: float, y: float, radius: float) -> ChangeSet:
        """Mark 2D columns within ``radius`` of the robot as traversable.

        The depth camera is blind inside ``range_min``; a robot standing at
        (x, y) vouches for its immediate surroundings instead. Only the 2D
        safety projection reads this; voxel beliefs are untouched.
        """
        res = self.resolution
        nx, ny = self.shape[:2]
        i0, i1 = _index_range(x - radius, x + radius, res, nx)
        j0, j1 = _index_range(y - radius, y + radius, res, ny)
        ii, jj = np.meshgrid(np.arange(i0, i1), np.arange(j0, j1), indexing="ij")
        inside = ((ii + 0.5) * res - x) ** 2 + ((jj + 0.5) * res - y) ** 2 <= radius * radius
        ii, jj = ii[inside], jj[inside]
        fresh = ~self.cleared[ii, jj]
        self.cleared[ii[fresh], jj[fresh]] = True
        cs = ChangeSet.empty()
        cs.cleared_columns = (ii[fresh] * ny + jj[fresh]).astype(np.int64)
        return cs

    def mark_contact(self, ii, jj) -> ChangeSet:
        """Record columns found blocked by physical contact as obstacles.

        Contact outranks both the camera and near-field clearing: a column the
        robot bumped into stays an obstacle in the 2D projection for good.
        """
        ii, jj = np.asarray(ii, np.int64), np.asarray(jj, np.int64)
        fresh = ~self.contact[ii, jj]
        self.contact[ii[fresh], jj[fresh]] = True
        cs = ChangeSet.empty()
        cs.contact_columns = np.unique(ii[fresh] * self.shape[1] + jj[fresh])
        return cs

    # --- audits & copies --------------------------------------------------

    def recompute_frontiers(self) -> np.ndarray:
        """Frontier flags from scratch (reference for the incremental path)."""
        unknown = self.state == UNKNOWN
        touch = np.zeros(self.shape, bool)
        nx, ny, nz = self.shape
        padded = np.pad(unknown, 1, constant_values=False)
        for a, b, c in self._offsets:
            touch |= padded[1 + a:1 + a + nx, 1 + b:1 + b + ny, 1 + c:1 + c + nz]
        return (self.state == FREE) & touch

    def audit(self) -> None:
        """Raise AssertionError when a derived field disagrees with its definition."""
        assert np.array_equal(self.sigma, support(self.pos, self.neg)), "support accounting"
        assert np.array_equal(self.state, classify(self.sigma, self.observed)), "state classification"
        assert np.array_equal(self.frontier, self.recompute_frontiers()), "frontier flags"
        k0, k1 = self.band
        band = self.state[:, :, k0:k1]
        assert np.array_equal(self.col_occ, (band == OCCUPIED).sum(axis=2)), "column occupancy"
        assert np.array_equal(self.col_free, (band == FREE).sum(axis=2)), "column free counts"
        has = self.sem_slot >= 0
        if has.any():
            rows = self._sem[self.sem_slot[has]]
            assert np.allclose(rows.sum(axis=1), 1.0, atol=1e-9) and (rows >= 0).all(), "semantic rows"
            assert np.array_equal(self.label[has], np.argmax(rows, axis=1) + 1), "semantic labels"

    def copy(self) -> "WorldMap":
        """Independent snapshot for readers that must not see later writes."""
        m = WorldMap.__new__(WorldMap)
        for k, v in self.__dict__.items():
            m.__dict__[k] = v.copy() if isinstance(v, np.ndarray) else v
        return m

    def equals(self, other: "WorldMap") -> bool:
        names = ("pos", "neg", "sigma", "state", "frontier", "label", "confidence", "col_occ", "col_free", "cleared",
                 "contact")
        if self.shape != other.shape or any(not np.array_equal(getattr(self, n), getattr(other, n)) for n in names):
            return False
        a, b = self.sem_slot >= 0, other.sem_slot >= 0
        if not np.array_equal(a, b):
            return False
        return np.array_equal(self._sem[self.sem_slot[a]], other._sem[other.sem_slot[b]])

    @classmethod
    def replay(cls, shape, resolution, label_count, frames, **kw) -> "WorldMap":
        m = cls(shape, resolution, label_count, **kw)
        for f in frames:
            m.integrate(f)
        return m

    def snapshot_dict(self) -> dict:
        """Observed voxels only: flat index, support, state, label and confidence."""
        obs = np.nonzero(self.observed.reshape(-1))[0]
        return {
            "resolution": self.resolution,
            "extents": list(self.shape),
            "label_count": self.label_count,
            "voxels": {
                "index": obs.tolist(),
                "sigma": self.sigma.reshape(-1)[obs].tolist(),
                "state": self.state.reshape(-1)[obs].tolist(),
                "label": self.label.reshape(-1)[obs].tolist(),
                "confidence": self.confidence.reshape(-1)[obs].tolist(),
            },
        }

    def export_snapshot(self, path) -> None:
        Path(path).write_text(json.dumps(self.snapshot_dict()))


def integrate_frame(world: WorldMap, frame: SensorFrame) -> ChangeSet:
    return world.integrate(frame)


def frontiers(world: WorldMap) -> np.ndarray:
    """Flat indices of current frontier voxels (sorted)."""
    return np.nonzero(world.frontier.reshape(-1))[0]


def load_snapshot(path) -> dict:
    return json.loads(Path(path).read_text())
