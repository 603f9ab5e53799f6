"""Ground-truth scenes: the JSON format, rasterization and a procedural generator.

Scene JSON::

    {"resolution": 0.05,
     "extents": [nx, ny, nz],
     "labels": ["wall", "floor", "sofa"],
     "boxes": [{"min": [x, y, z], "max": [x, y, z], "label": 2, "structure": false}],
     "start": {"x": 1.0, "y": 1.0, "theta": 0.0}}

Box ``label`` indexes ``labels`` (0-based); in the rasterized grid that label
has id ``label + 1`` so that id 0 stays "free / unlabeled". Units are meters
and radians.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import GenerationInfeasibleError, SceneParseError, SceneValidationError

TWO_PI = 2.0 * math.pi


def normalize_angle(theta: float) -> float:
    t = math.fmod(theta, TWO_PI)
    if t < 0.0:
        t += TWO_PI
    # fmod of tiny negatives can round up to exactly 2*pi
    return 0.0 if t >= TWO_PI else t


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    label: int
    structure: bool = False


@dataclass(frozen=True)
class RobotBody:
    """Footprint of the ground robot and the height band it collides in."""

    radius: float = 0.15
    z_min: float = 0.1
    z_max: float = 1.1


@dataclass(frozen=True)
class SceneSpec:
    resolution: float
    extents: tuple[int, int, int]
    labels: tuple[str, ...]
    boxes: tuple[Box, ...]
    start: Pose

    @property
    def size(self) -> tuple[float, float, float]:
        return tuple(n * self.resolution for n in self.extents)

    def to_dict(self) -> dict:
        return {
            "resolution": self.resolution,
            "extents": list(self.extents),
            "labels": list(self.labels),
            "boxes": [
                {"min": list(b.lo), "max": list(b.hi), "label": b.label, "structure": b.structure}
                for b in self.boxes
            ],
            "start": {"x": self.start.x, "y": self.start.y, "theta": self.start.theta},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        try:
            boxes = []
            for i, b in enumerate(d["boxes"]):
                try:
                    lo = tuple(float(v) for v in b["min"])
                    hi = tuple(float(v) for v in b["max"])
                    if len(lo) != 3 or len(hi) != 3:
                        raise ValueError("corners need three coordinates")
                    boxes.append(Box(lo, hi, int(b["label"]), bool(b.get("structure", False))))
                except (KeyError, TypeError, ValueError) as exc:
                    raise SceneParseError(f"boxes[{i}]: {exc}", field=f"boxes[{i}]") from exc
            extents = tuple(int(v) for v in d["extents"])
            if len(extents) != 3:
                raise SceneParseError("extents must have three entries", field="extents")
            s = d["start"]
            return cls(
                resolution=float(d["resolution"]),
                extents=extents,
                labels=tuple(str(x) for x in d["labels"]),
                boxes=tuple(boxes),
                start=Pose(float(s["x"]), float(s["y"]), float(s.get("theta", 0.0))),
            )
        except SceneParseError:
            raise
        except KeyError as exc:
            raise SceneParseError(f"missing key {exc.args[0]!r}", field=str(exc.args[0])) from exc
        except (TypeError, ValueError) as exc:
            raise SceneParseError(f"bad scene document: {exc}") from exc


@dataclass(frozen=True, eq=False)
class GroundTruth:
    occupancy: np.ndarray  # bool (nx, ny, nz)
    label: np.ndarray  # int16 (nx, ny, nz), 0 = free/unlabeled
    label_count: int
    object_mask: np.ndarray  # bool, voxels labeled by a non-structure box
    resolution: float
    labels: tuple[str, ...] = field(default=())

    @property
    def shape(self):
        return self.occupancy.shape

    @property
    def codes(self) -> np.ndarray:
        """Tracer codes: 1 for occupied, 0 for free (int8 view, no copy)."""
        return self.occupancy.view(np.int8)

    @cached_property
    def blocked_columns(self) -> np.ndarray:
        return body_columns(self.occupancy, self.resolution)

    def __eq__(self, other):
        if not isinstance(other, GroundTruth):
            return NotImplemented
        return (
            self.label_count == other.label_count
            and self.resolution == other.resolution
            and np.array_equal(self.occupancy, other.occupancy)
            and np.array_equal(self.label, other.label)
            and np.array_equal(self.object_mask, other.object_mask)
        )


def _index_range(lo: float, hi: float, res: float, n: int) -> tuple[int, int]:
    # voxels whose centers (i + 0.5) * res fall in [lo, hi)
    a = math.ceil(round(lo / res - 0.5, 9))
    b = math.ceil(round(hi / res - 0.5, 9))
    return max(a, 0), min(b, n)


def rasterize(spec: SceneSpec) -> GroundTruth:
    nx, ny, nz = spec.extents
    res = spec.resolution
    occ = np.zeros((nx, ny, nz), dtype=bool)
    label = np.zeros((nx, ny, nz), dtype=np.int16)
    objects = np.zeros((nx, ny, nz), dtype=bool)
    # structure first so that any covering furniture box overrides it
    ordered = [b for b in spec.boxes if b.structure] + [b for b in spec.boxes if not b.structure]
    for b in ordered:
        i0, i1 = _index_range(b.lo[0], b.hi[0], res, nx)
        j0, j1 = _index_range(b.lo[1], b.hi[1], res, ny)
        k0, k1 = _index_range(b.lo[2], b.hi[2], res, nz)
        if i0 >= i1 or j0 >= j1 or k0 >= k1:
            continue
        sl = np.s_[i0:i1, j0:j1, k0:k1]
        occ[sl] = True
        label[sl] = b.label + 1
        objects[sl] = not b.structure
    return GroundTruth(occ, label, len(spec.labels), objects, res, spec.labels)


def body_columns(gt_occ: np.ndarray, res: float, body: RobotBody = RobotBody()) -> np.ndarray:
    """2D mask of columns with any occupied voxel inside the robot's height band."""
    nz = gt_occ.shape[2]
    k0, k1 = _index_range(body.z_min, body.z_max, res, nz)
    if k0 >= k1:
        return np.zeros(gt_occ.shape[:2], dtype=bool)
    return gt_occ[:, :, k0:k1].any(axis=2)


def footprint_columns(gt: GroundTruth, x: float, y: float, body: RobotBody = RobotBody()):
    """(i, j) indices of blocked columns under a footprint centred at (x, y)."""
    if body == RobotBody():
        blocked = gt.blocked_columns
    else:
        blocked = body_columns(gt.occupancy, gt.resolution, body)
    res = gt.resolution
    nx, ny = blocked.shape
    r = body.radius
    i0, i1 = _index_range(x - r, x + r, res, nx)
    j0, j1 = _index_range(y - r, y + r, res, ny)
    ii, jj = np.meshgrid(np.arange(i0, i1), np.arange(j0, j1), indexing="ij")
    inside = ((ii + 0.5) * res - x) ** 2 + ((jj + 0.5) * res - y) ** 2 <= r * r
    ci, cj = min(max(int(x // res), 0), nx - 1), min(max(int(y // res), 0), ny - 1)
    ii = np.append(ii[inside], ci)
    jj = np.append(jj[inside], cj)
    hit = blocked[ii, jj]
    return ii[hit], jj[hit]


def footprint_free(gt: GroundTruth, x: float, y: float, body: RobotBody = RobotBody()) -> bool:
    nx, ny = gt.shape[:2]
    res = gt.resolution
    if not (0.0 <= x < nx * res and 0.0 <= y < ny * res):
        return False
    return footprint_columns(gt, x, y, body)[0].size == 0


def validate(spec: SceneSpec, require_objects: bool = True, body: RobotBody = RobotBody()) -> GroundTruth:
    """Check every SceneSpec invariant; returns the rasterized grid on success."""
    if not spec.resolution > 0:
        raise SceneValidationError("resolution must be positive", field="resolution")
    if any(n <= 0 for n in spec.extents):
        raise SceneValidationError("extents must be positive voxel counts", field="extents")
    size = spec.size
    tol = 1e-9
    for i, b in enumerate(spec.boxes):
        name = f"boxes[{i}]"
        if not 0 <= b.label < len(spec.labels):
            raise SceneValidationError(f"{name}: label {b.label} not in labels", field=name)
        for ax in range(3):
            if b.lo[ax] >= b.hi[ax]:
                raise SceneValidationError(f"{name}: min must be below max", field=name)
            if b.lo[ax] < -tol or b.hi[ax] > size[ax] + tol:
                raise SceneValidationError(f"{name}: box exceeds scene extents", field=name)
    if require_objects and not any(not b.structure for b in spec.boxes):
        raise SceneValidationError("scene needs at least one non-structure box", field="boxes")
    gt = rasterize(spec)
    if not footprint_free(gt, spec.start.x, spec.start.y, body):
        raise SceneValidationError("start pose footprint is not in free space", field="start_pose")
    return gt


def load_scene(path) -> SceneSpec:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SceneParseError(f"{path}: invalid JSON ({exc})") from exc
    except OSError as exc:
        raise SceneParseError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise SceneParseError(f"{path}: top level must be an object")
    spec = SceneSpec.from_dict(doc)
    validate(spec)
    return spec


def save_scene(spec: SceneSpec, path) -> None:
    Path(path).write_text(spec.dumps() + "\n")


# --- procedural generation -------------------------------------------------

FURNITURE = {
    # label: (width range, depth range, height range) in meters
    "sofa": ((1.6, 2.2), (0.8, 1.0), (0.7, 0.9)),
    "bed": ((1.8, 2.0), (1.4, 1.6), (0.5, 0.6)),
    "table": ((1.0, 1.6), (0.7, 1.0), (0.7, 0.8)),
    "chair": ((0.5, 0.6), (0.5, 0.6), (0.8, 1.0)),
    "cabinet": ((0.8, 1.2), (0.4, 0.6), (1.2, 1.8)),
    "desk": ((1.2, 1.4), (0.6, 0.8), (0.72, 0.76)),
    "shelf": ((0.8, 1.0), (0.3, 0.4), (1.6, 2.0)),
}
GEN_LABELS = ("wall", "floor") + tuple(FURNITURE)


def node_coordinate(index, resolution: float, xy_resolution: float):
    """Metric position of view-lattice node ``index`` along one axis.

    Nodes sit on voxel-column centers: stride ``xy_resolution / resolution``
    columns, offset by half a stride.
    """
    stride = lattice_stride(resolution, xy_resolution)
    return (stride // 2 + stride * np.asarray(index) + 0.5) * resolution


def lattice_stride(resolution: float, xy_resolution: float) -> int:
    s = xy_resolution / resolution
    stride = int(round(s))
    if stride < 1 or abs(s - stride) > 1e-6:
        raise ValueError("xy_resolution must be an integer multiple of the voxel resolution")
    return stride


@dataclass
class _Rect:
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def area(self):
        return (self.x1 - self.x0) * (self.y1 - self.y0)


def _snap(v, res):
    return round(round(v / res) * res, 9)


def gen_scene(
    rooms: int,
    density: float,
    extents: tuple[float, float],
    seed: int,
    resolution: float = 0.05,
    height: float = 2.6,
    xy_resolution: float = 0.4,
    clearance: float = 0.35,
    max_retries: int = 25,
) -> SceneSpec:
    """Procedural multi-room scene; deterministic for a fixed argument tuple.

    Rooms come from binary space partitioning of the footprint, each split
    wall carrying a 1.2 m door aligned with the view lattice. Furniture is
    either flush with a wall or at least 1.2 m from walls and other furniture,
    and every placement keeps the robot-reachable lattice connected.
    """
    width, depth = float(extents[0]), float(extents[1])
    if rooms < 1 or density < 0 or density >= 1:
        raise GenerationInfeasibleError(
            f"bad params rooms={rooms} density={density} (seed={seed})", field="params"
        )
    if width < 4.0 or depth < 4.0:
        raise GenerationInfeasibleError(
            f"extents must be at least 4 m per side, got {width}x{depth} (seed={seed})", field="extents"
        )
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        spec = _try_layout(rng, rooms, density, width, depth, resolution, height, xy_resolution, clearance)
        if spec is not None:
            return spec
    raise GenerationInfeasibleError(
        f"no feasible layout after {max_retries} retries (rooms={rooms}, density={density}, "
        f"extents={width}x{depth}, seed={seed})",
        field="params",
    )


def _try_layout(rng, rooms, density, width, depth, res, height, xy_res, clearance):
    t = 0.1  # wall thickness
    door = 1.2
    nx, ny, nz = int(round(width / res)), int(round(depth / res)), int(round(height / res))
    width, depth, height = nx * res, ny * res, nz * res
    labels = GEN_LABELS
    wall, floor = 0, 1
    boxes = [
        Box((0.0, 0.0, 0.0), (width, t, height), wall, True),
        Box((0.0, depth - t, 0.0), (width, depth, height), wall, True),
        Box((0.0, t, 0.0), (t, depth - t, height), wall, True),
        Box((width - t, t, 0.0), (width, depth - t, height), wall, True),
        Box((0.0, 0.0, 0.0), (width, depth, res), floor, True),
    ]
    rects = [_Rect(t, t, width - t, depth - t)]
    doors = []  # (x0, y0, x1, y1) footprints kept clear of furniture
    node_x = node_coordinate(np.arange(int(width / xy_res) + 1), res, xy_res)
    node_y = node_coordinate(np.arange(int(depth / xy_res) + 1), res, xy_res)
    min_room = 2.0
    while len(rects) < rooms:
        k = max(range(len(rects)), key=lambda i: (rects[i].area, -i))
        r = rects.pop(k)
        vertical = (r.x1 - r.x0) >= (r.y1 - r.y0)  # wall parallel to y when splitting along x
        lo, hi = (r.x0, r.x1) if vertical else (r.y0, r.y1)
        if hi - lo < 2 * min_room + t:
            return None
        c = _snap(lo + (hi - lo) * rng.uniform(0.4, 0.6), res)
        c = min(max(c, lo + min_room + t / 2), hi - min_room - t / 2)
        a0, a1 = (r.y0, r.y1) if vertical else (r.x0, r.x1)
        along = node_y if vertical else node_x
        cand = along[(along - door / 2 >= a0 + 0.3) & (along + door / 2 <= a1 - 0.3)]
        if cand.size == 0:
            return None
        g = float(cand[rng.integers(cand.size)])
        g0, g1 = round(g - door / 2, 9), round(g + door / 2, 9)
        segs = [(a0, g0), (g1, a1)]
        for s0, s1 in segs:
            if s1 - s0 <= 1e-9:
                continue
            if vertical:
                boxes.append(Box((c - t / 2, s0, 0.0), (c + t / 2, s1, height), wall, True))
            else:
                boxes.append(Box((s0, c - t / 2, 0.0), (s1, c + t / 2, height), wall, True))
        if vertical:
            doors.append((c - 1.0, g0, c + 1.0, g1))
            rects += [_Rect(r.x0, r.y0, c - t / 2, r.y1), _Rect(c + t / 2, r.y0, r.x1, r.y1)]
        else:
            doors.append((g0, c - 1.0, g1, c + 1.0))
            rects += [_Rect(r.x0, r.y0, r.x1, c - t / 2), _Rect(r.x0, c + t / 2, r.x1, r.y1)]

    base = SceneSpec(res, (nx, ny, nz), labels, tuple(boxes), Pose(0.0, 0.0, 0.0))
    if _reachable_nodes(base, xy_res, clearance) is None:
        return None

    furniture: list[Box] = []
    names = list(FURNITURE)
    gap = 1.2
    for room in rects:
        target = density * room.area
        covered = 0.0
        attempts = 0
        while covered < target and attempts < 60:
            attempts += 1
            name = names[rng.integers(len(names))]
            (w0, w1), (d0, d1), (h0, h1) = FURNITURE[name]
            w, d, h = (_snap(rng.uniform(a, b), res) for a, b in ((w0, w1), (d0, d1), (h0, h1)))
            if rng.random() < 0.5:
                w, d = d, w
            if w > room.x1 - room.x0 - gap or d > room.y1 - room.y0 - gap:
                continue
            side = rng.integers(5)  # 0..3 flush with a wall, 4 free-standing
            if side == 0:
                x0, y0 = room.x0, rng.uniform(room.y0, room.y1 - d)
            elif side == 1:
                x0, y0 = room.x1 - w, rng.uniform(room.y0, room.y1 - d)
            elif side == 2:
                x0, y0 = rng.uniform(room.x0, room.x1 - w), room.y0
            elif side == 3:
                x0, y0 = rng.uniform(room.x0, room.x1 - w), room.y1 - d
            else:
                if room.x1 - room.x0 - w < 2 * gap or room.y1 - room.y0 - d < 2 * gap:
                    continue
                x0 = rng.uniform(room.x0 + gap, room.x1 - gap - w)
                y0 = rng.uniform(room.y0 + gap, room.y1 - gap - d)
            x0, y0 = _snap(x0, res), _snap(y0, res)
            cand = Box((x0, y0, res), (round(x0 + w, 9), round(y0 + d, 9), round(res + h, 9)),
                       labels.index(name), False)
            if not _placement_ok(cand, room, furniture, doors, gap):
                continue
            trial = SceneSpec(res, (nx, ny, nz), labels, tuple(boxes + furniture + [cand]), Pose(0.0, 0.0))
            if _reachable_nodes(trial, xy_res, clearance) is None:
                continue
            furniture.append(cand)
            covered += w * d

    spec = SceneSpec(res, (nx, ny, nz), labels, tuple(boxes + furniture), Pose(0.0, 0.0))
    nodes = _reachable_nodes(spec, xy_res, clearance)
    if nodes is None:
        return None
    reach, dist = nodes
    # start: the most open reachable node inside the first room
    r0 = rects[0]
    ax = node_coordinate(np.arange(reach.shape[0]), res, xy_res)
    ay = node_coordinate(np.arange(reach.shape[1]), res, xy_res)
    inroom = ((ax[:, None] > r0.x0) & (ax[:, None] < r0.x1)) & ((ay[None, :] > r0.y0) & (ay[None, :] < r0.y1))
    score = np.where(reach & inroom, dist, -1.0)
    if score.max() <= 0:
        return None
    a, b = np.unravel_index(int(np.argmax(score)), score.shape)
    start = Pose(float(ax[a]), float(ay[b]), 0.0)
    return SceneSpec(res, (nx, ny, nz), labels, tuple(boxes + furniture), start)


def _placement_ok(cand: Box, room: _Rect, others: list[Box], doors, gap) -> bool:
    x0, y0 = cand.lo[0], cand.lo[1]
    x1, y1 = cand.hi[0], cand.hi[1]
    eps = 1e-9
    if x0 < room.x0 - eps or y0 < room.y0 - eps or x1 > room.x1 + eps or y1 > room.y1 + eps:
        return False
    # against a wall or well away from it, per axis
    for lo_gap, hi_gap in ((x0 - room.x0, room.x1 - x1), (y0 - room.y0, room.y1 - y1)):
        for g in (lo_gap, hi_gap):
            if eps < g < gap:
                return False
    for dx0, dy0, dx1, dy1 in doors:
        if x0 < dx1 and x1 > dx0 and y0 < dy1 and y1 > dy0:
            return False
    for o in others:
        ox = max(o.lo[0] - x1, x0 - o.hi[0], 0.0)
        oy = max(o.lo[1] - y1, y0 - o.hi[1], 0.0)
        if math.hypot(ox, oy) < gap:
            return False
    return True


def _reachable_nodes(spec: SceneSpec, xy_res: float, clearance: float):
    """Lattice nodes with clearance in the ground truth, if they form one 4-connected component.

    Also requires the raw 2D free space to be a single component. Returns
    ``(mask, distance)`` or None.
    """
    gt = rasterize(spec)
    blocked = body_columns(gt.occupancy, gt.resolution)
    free_lab, nfree = ndimage.label(~blocked)
    if nfree != 1:
        return None
    dist = ndimage.distance_transform_edt(~blocked, sampling=gt.resolution)
    stride = lattice_stride(gt.resolution, xy_res)
    ci = np.arange(stride // 2, blocked.shape[0], stride)
    cj = np.arange(stride // 2, blocked.shape[1], stride)
    d_nodes = dist[np.ix_(ci, cj)]
    ok = d_nodes >= clearance
    lab, n = ndimage.label(ok)
    if n != 1:
        return None
    return ok, d_nodes


def free_space_components(gt: GroundTruth, body: RobotBody = RobotBody()) -> int:
    """Number of 4-connected components of 2D free space in the robot's height band."""
    blocked = body_columns(gt.occupancy, gt.resolution, body)
    _, n = ndimage.label(~blocked)
    return int(n)
