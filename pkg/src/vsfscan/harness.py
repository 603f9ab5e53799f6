"""Episode runner, metrics, ablations and planner comparisons."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import kernels
from .entropy import EntropyField, GainModel, GainWeights, belief_codes, unknown_voxel_gain
from .errors import ConfigError, ExplorationComplete, NoPathError, PoseInObstacleError, VsfError
from .fusion import WorldMap
from .planner import PathPlan, PlannerConfig, dijkstra_baseline, plan_path, select_nbv
from .scene import (GroundTruth, Pose, SceneSpec, footprint_columns, footprint_free, gen_scene, load_scene, rasterize,
                    validate)
from .sensor import CameraModel, ScoringFan, SemanticOracle, capture, frame_rng
from .vsf import ViewLattice, ViewScoreField, VsfParams, build_field, combine_score, safety_mask, update_field

log = logging.getLogger(__name__)

PLANNERS = ("field", "dijkstra")
ENTROPY_MODES = ("combined", "geometry", "semantic")
METRIC_COLUMNS = ("step", "cycle", "sim_time", "distance", "rotation", "observed_voxels",
                  "correct_voxels", "labeled_accuracy", "identified_objects", "sum_h")
_NESTED = {"weights": GainWeights, "gain_model": GainModel, "params": VsfParams,
           "camera": CameraModel, "fan": ScoringFan, "oracle": SemanticOracle}


@dataclass
class EpisodeConfig:
    scene: SceneSpec | None = None
    scene_path: str | None = None
    gen: dict | None = None  # keyword arguments for gen_scene
    seed: int = 0
    planner: str = "field"
    entropy: str = "combined"
    weights: GainWeights | None = None  # None: derived from the entropy mode
    gain_model: GainModel = GainModel()
    params: VsfParams = VsfParams()
    camera: CameraModel = CameraModel()
    fan: ScoringFan = ScoringFan()
    oracle: SemanticOracle = SemanticOracle()
    xy_resolution: float = 0.4
    theta_bins: int = 16
    termination_threshold: float = 0.05  # fraction of the initial domain entropy
    # NBV score at or below which exploration counts as complete; None: what a view
    # revealing a single Unknown voxel through a single frontier would score
    min_score: float | None = None
    step_budget: int = 300  # lattice moves
    cadence: int = 1  # frames per lattice move
    target_fraction: float | None = None  # stop once this share of object surface is correctly labeled
    replan_drop: float = 0.5
    pose_jitter: tuple | None = None
    audit: bool = False
    name: str = ""

    def __post_init__(self):
        if self.planner not in PLANNERS:
            raise ConfigError(f"planner must be one of {PLANNERS}, got {self.planner!r}")
        if self.entropy not in ENTROPY_MODES:
            raise ConfigError(f"entropy must be one of {ENTROPY_MODES}, got {self.entropy!r}")
        if self.step_budget < 1 or self.cadence < 1:
            raise ConfigError("step_budget and cadence must be at least 1")
        if sum(x is not None for x in (self.scene, self.scene_path, self.gen)) != 1:
            raise ConfigError("give exactly one of scene, scene_path, gen")
        if self.weights is None:
            self.weights = GainWeights.for_mode(self.entropy)

    def resolve_scene(self) -> SceneSpec:
        if self.scene is not None:
            return self.scene
        if self.scene_path is not None:
            return load_scene(self.scene_path)
        return gen_scene(**self.gen)

    def label(self) -> str:
        return self.name or f"{self.planner}-{self.entropy}"

    def to_dict(self) -> dict:
        d = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "scene":
                v = None if v is None else v.to_dict()
            elif dataclasses.is_dataclass(v):
                v = dataclasses.asdict(v)
            elif isinstance(v, tuple):
                v = list(v)
            d[f.name] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        try:
            for k, typ in _NESTED.items():
                if isinstance(kw.get(k), dict):
                    kw[k] = typ(**kw[k])
            if isinstance(kw.get("scene"), dict):
                kw["scene"] = SceneSpec.from_dict(kw["scene"])
            if kw.get("gen") is not None and "extents" in kw["gen"]:
                kw["gen"] = dict(kw["gen"], extents=tuple(kw["gen"]["extents"]))
            if kw.get("pose_jitter") is not None:
                kw["pose_jitter"] = tuple(kw["pose_jitter"])
        except TypeError as e:
            raise ConfigError(f"bad nested config: {e}") from None
        return cls(**kw)


@dataclass
class MetricsTimeline:
    rows: list = field(default_factory=list)

    def append(self, **row):
        self.rows.append(row)

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def __len__(self):
        return len(self.rows)

    @property
    def final(self) -> dict:
        return self.rows[-1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in self.rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in METRIC_COLUMNS])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    def first_reaching(self, column: str, value: float):
        """First row whose ``column`` is at least ``value``, or None."""
        for r in self.rows:
            if r[column] >= value:
                return r
        return None


@dataclass(eq=False)
class EpisodeResult:
    config: EpisodeConfig
    timeline: MetricsTimeline
    world: WorldMap
    entropy: EntropyField
    field: ViewScoreField | None
    plans: list
    reason: str
    collisions: int
    surface_count: int
    object_count: int
    initial_domain_h: float


def surface_voxels(gt: GroundTruth, camera_height: float | None = None) -> np.ndarray:
    """Flat indices of object voxels a camera can see in principle.

    An object voxel (non-structure label) qualifies when a horizontal
    6-neighbor is empty, or its upper neighbor is empty and it lies below the
    camera height (the camera only tilts within its vertical field of view).
    """
    occ = gt.occupancy
    obj = gt.object_mask
    free = np.pad(~occ, 1, constant_values=False)
    nx, ny, nz = occ.shape
    side = np.zeros(occ.shape, bool)
    for a, b in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        side |= free[1 + a:1 + a + nx, 1 + b:1 + b + ny, 1:1 + nz]
    up = free[1:1 + nx, 1:1 + ny, 2:2 + nz]
    if camera_height is not None:
        z = (np.arange(nz) + 0.5) * gt.resolution
        up = up & (z < camera_height)[None, None, :]
    return np.nonzero((obj & (side | up)).reshape(-1))[0]


def object_components(gt: GroundTruth):
    """(component id per voxel, count): connected regions of one non-structure label."""
    comp = np.zeros(gt.occupancy.shape, np.int32)
    n = 0
    for lab in np.unique(gt.label[gt.object_mask]):
        lab_comp, k = ndimage.label(gt.object_mask & (gt.label == lab))
        comp[lab_comp > 0] = lab_comp[lab_comp > 0] + n
        n += k
    return comp, n


def identified_objects(world: WorldMap, gt: GroundTruth, surface: np.ndarray | None = None,
                       components=None) -> int:
    """Objects with at least half of their visible surface observed and correctly labeled."""
    if surface is None:
        surface = surface_voxels(gt)
    comp, n = components if components is not None else object_components(gt)
    if n == 0 or surface.size == 0:
        return 0
    cid = comp.reshape(-1)[surface]
    correct = world.label.reshape(-1)[surface] == gt.label.reshape(-1)[surface]
    tot = np.bincount(cid, minlength=n + 1)[1:]
    good = np.bincount(cid, weights=correct, minlength=n + 1)[1:]
    return int(np.sum((tot > 0) & (2 * good >= tot)))


class _Tracker:
    """Metric bookkeeping against the ground truth."""

    def __init__(self, gt: GroundTruth, camera: CameraModel):
        self.gt = gt
        self.surface = surface_voxels(gt, camera.height)
        self.surface_labels = gt.label.reshape(-1)[self.surface]
        self.components = object_components(gt)

    def row(self, world: WorldMap, ent: EntropyField):
        lab = world.label.reshape(-1)[self.surface]
        labeled = lab > 0
        correct = int(np.sum(lab == self.surface_labels))
        n_lab = int(labeled.sum())
        return dict(
            observed_voxels=int(np.count_nonzero(world.observed)),
            correct_voxels=correct,
            labeled_accuracy=correct / n_lab if n_lab else 0.0,
            identified_objects=identified_objects(world, self.gt, self.surface, self.components),
            sum_h=float(ent.sum_h),
        )


def _goal_numerator(world, ent, fld: ViewScoreField, cell) -> float:
    """alpha V + G for one lattice state, raycast against the current belief."""
    lat, cam = fld.lattice, fld.camera
    a, b, t = cell
    origin = np.array([[lat.x(a), lat.x(b), cam.height]])
    v, g = kernels.score_nodes(belief_codes(world), world.frontier.reshape(-1).astype(np.float64), ent.gain,
                               origin, fld._dirs, fld._bin_rays[t:t + 1], world.resolution,
                               cam.range_min, cam.range_max)
    if fld.params.score_mode == "legacy-nbv":
        return float(g[0, 0])
    return float(fld.params.alpha_frontier * v[0, 0] + g[0, 0])


def _field_numerator(fld: ViewScoreField, cell) -> float:
    if fld.params.score_mode == "legacy-nbv":
        return float(fld.G[cell])
    return float(fld.params.alpha_frontier * fld.V[cell] + fld.G[cell])


def run_episode(cfg: EpisodeConfig, stop_at_cycle: int | None = None) -> EpisodeResult:
    """Explore one scene until the entropy threshold, the completion signal or the move budget.

    With ``stop_at_cycle`` the run halts right after building the field of
    that planning cycle (used to replay an episode for field export).
    """
    spec = cfg.resolve_scene()
    gt = validate(spec, require_objects=False)
    lattice = ViewLattice(gt.shape, gt.resolution, cfg.xy_resolution, cfg.theta_bins)
    pcfg = PlannerConfig.for_lattice(lattice, eta=cfg.params.eta)
    cam, p = cfg.camera, cfg.params
    a0, b0, _ = lattice.cell_of(spec.start)
    robot = Pose(float(lattice.x(a0)), float(lattice.x(b0)), 0.0)
    if not footprint_free(gt, robot.x, robot.y):
        raise PoseInObstacleError("start pose snapped to the view lattice is not free", field="start_pose")

    world = WorldMap(gt.shape, gt.resolution, gt.label_count)
    ent = EntropyField(world, cfg.weights, cfg.gain_model)
    track = _Tracker(gt, cam)
    timeline = MetricsTimeline()
    frame_idx = 0
    distance = 0.0
    rotation = 0.0
    collisions = 0
    moves = 0

    def observe(pose: Pose):
        nonlocal frame_idx
        out = []
        for _ in range(cfg.cadence):
            frame = capture(gt, pose, cam, frame_rng(cfg.seed, frame_idx, pose), cfg.oracle, cfg.pose_jitter)
            frame_idx += 1
            cs = world.integrate(frame)
            ent.update(world, cs)
            out.append(cs)
        out.append(world.clear_near_field(pose.x, pose.y, p.near_field_radius))
        if cfg.audit:
            world.audit()
            ent.audit(world)
        return out

    def record(cycle):
        timeline.append(step=moves, cycle=cycle, sim_time=distance / pcfg.linear_speed + rotation / pcfg.angular_speed,
                        distance=distance, rotation=rotation, **track.row(world, ent))

    for deg in (0.0, 120.0, 240.0):
        observe(Pose(robot.x, robot.y, math.radians(deg)))
    record(0)
    h0 = ent.domain_sum(world)
    target = None if cfg.target_fraction is None else cfg.target_fraction * track.surface.size

    fld = build_field(world, ent, robot, p, lattice, cam, cfg.fan)
    min_score = cfg.min_score
    if min_score is None:
        min_score = unknown_voxel_gain(gt.label_count, cfg.weights, cfg.gain_model)
        if p.score_mode != "legacy-nbv":
            min_score += p.alpha_frontier
        min_score *= p.score_scale
    plans: list = []
    reason = "budget"
    cycle = 0
    pending: list = []
    stale: dict = {}  # goal state -> numerator left after capturing there
    while True:
        if pending:
            fld = update_field(fld, world, ent, pending, robot)
            pending = []
            if cfg.audit:
                _audit_field(fld, world, ent, robot, lattice, cfg)
        cycle += 1
        if stop_at_cycle is not None and cycle >= stop_at_cycle:
            reason = "stopped"
            break
        if target is not None and timeline.final["correct_voxels"] >= target:
            reason = "target"
            break
        if moves >= cfg.step_budget:
            reason = "budget"
            break
        if ent.domain_sum(world) < cfg.termination_threshold * h0:
            reason = "entropy"
            break
        plan = None
        for g, left in list(stale.items()):
            if _field_numerator(fld, g) > left + 1e-9:
                del stale[g]
        excluded = set(stale)
        while plan is None:
            try:
                goal = select_nbv(fld, robot, min_score, exclude=excluded)
            except ExplorationComplete:
                break
            try:
                if cfg.planner == "field":
                    plan = plan_path(fld, None, lattice.cell_of(robot), goal, pcfg)
                else:
                    plan = dijkstra_baseline(fld, lattice.cell_of(robot), goal, pcfg)
            except NoPathError:
                excluded.add(goal)
        if plan is None:
            reason = "complete"
            break
        plans.append(plan.to_dict())
        goal_num = _goal_numerator(world, ent, fld, plan.goal)
        path = plan.lattice_path
        for i in range(1, len(path)):
            prev, cur = path[i - 1], path[i]
            safe = safety_mask(world, lattice, p.safety_clearance, robot)
            if not all(safe[c[0], c[1]] for c in path[i:]):
                break
            nxt = lattice.pose(*cur)
            if prev[:2] != cur[:2]:
                hit = sweep_contact(gt, robot, nxt)
                if hit is not None:
                    # the bumper stops the robot short; the map learns the obstacle and we replan
                    collisions += 1
                    pending.append(world.mark_contact(*hit))
                    break
                distance += pcfg.xy_resolution
            dt = (cur[2] - prev[2]) % lattice.theta_bins
            dt = min(dt, lattice.theta_bins - dt)
            rotation += dt * lattice.theta_step
            robot = nxt
            pending.extend(observe(robot))
            moves += 1
            record(cycle)
            if moves >= cfg.step_budget or (target is not None and timeline.final["correct_voxels"] >= target):
                break
            left = _goal_numerator(world, ent, fld, plan.goal)
            if cur == plan.goal:
                # the view did not resolve what it promised (unreachable voxels); set it aside
                if left >= (1.0 - cfg.replan_drop) * goal_num:
                    stale[plan.goal] = left
            elif left < (1.0 - cfg.replan_drop) * goal_num:
                break
    return EpisodeResult(cfg, timeline, world, ent, fld, plans, reason, collisions,
                         int(track.surface.size), int(track.components[1]), h0)


def sweep_contact(gt: GroundTruth, a: Pose, b: Pose):
    """Blocked columns met first when sliding the footprint from ``a`` to ``b``, else None.

    The segment is sampled at half the voxel size, which is finer than any
    obstacle column.
    """
    n = max(1, math.ceil(math.hypot(b.x - a.x, b.y - a.y) / (0.5 * gt.resolution)))
    for t in np.linspace(0.0, 1.0, n + 1)[1:]:
        ii, jj = footprint_columns(gt, a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
        if ii.size:
            return ii, jj
    return None


def _audit_field(fld, world, ent, robot, lattice, cfg):
    fresh = build_field(world, ent, robot, cfg.params, lattice, cfg.camera, cfg.fan)
    assert np.array_equal(fld.safe, fresh.safe), "safety mask"
    fin = np.isfinite(fresh.F)
    assert np.array_equal(np.isfinite(fld.F), fin), "field support"
    assert np.allclose(fld.F[fin], fresh.F[fin], rtol=0, atol=1e-9), "field scores"


def spiral_poses(gt: GroundTruth, n: int = 40, turn: float = math.radians(47.0), margin: float = 0.6):
    """Deterministic outward spiral of robot poses over the free floor.

    The camera faces the room centre so each frame looks across the room
    (facing a nearby wall leaves its top and the floor out of the vertical
    field of view). Poses whose footprint is blocked are skipped.
    """
    sx, sy = gt.shape[0] * gt.resolution, gt.shape[1] * gt.resolution
    cx, cy = sx / 2, sy / 2
    r_max = max(0.0, min(sx, sy) / 2 - margin)
    out = []
    k = 0
    while len(out) < n and k < 20 * n:
        r = r_max * k / max(n - 1, 1)
        r = min(r, r_max)
        phi = k * turn
        x, y = cx + r * math.cos(phi), cy + r * math.sin(phi)
        if footprint_free(gt, x, y):
            out.append(Pose(x, y, phi + math.pi if r > 0 else phi))
        k += 1
    return out


def spiral_scan(gt: GroundTruth, n: int = 40, seed: int = 0, camera: CameraModel = CameraModel(),
                weights: GainWeights = GainWeights(), oracle: SemanticOracle = SemanticOracle()):
    """Integrate frames along :func:`spiral_poses`; returns global entropy before and after every frame."""
    world = WorldMap(gt.shape, gt.resolution, gt.label_count)
    ent = EntropyField(world, weights)
    sums = [ent.sum_h]
    for i, pose in enumerate(spiral_poses(gt, n)):
        cs = world.integrate(capture(gt, pose, camera, frame_rng(seed, i, pose), oracle))
        ent.update(world, cs)
        sums.append(ent.sum_h)
    return np.array(sums), world, ent


# --- comparisons ------------------------------------------------------------

def _summary(res: EpisodeResult, target_fraction: float | None) -> dict:
    tl = res.timeline
    fin = tl.final
    row = dict(method=res.config.label(), seed=res.config.seed, reason=res.reason,
               steps=fin["step"], time=fin["sim_time"], distance=fin["distance"],
               correct=fin["correct_voxels"], accuracy=fin["labeled_accuracy"],
               identified=fin["identified_objects"], objects=res.object_count,
               surface=res.surface_count, collisions=res.collisions)
    if target_fraction is not None:
        hit = tl.first_reaching("correct_voxels", target_fraction * res.surface_count)
        row["target_time"] = hit["sim_time"] if hit else math.inf
        row["target_distance"] = hit["distance"] if hit else math.inf
    return row


def compare(cfgs, seeds, scenes=None, target_fraction: float | None = 0.8, on_result=None):
    """Run every (config, scene, seed) cell and summarize.

    ``scenes`` maps a scene name to a dict of EpisodeConfig overrides (e.g.
    ``{"gen": {...}}``); when omitted each config keeps its own scene.
    Failures are recorded per cell without aborting the sweep. Returns
    ``(rows, table, curves)``.
    """
    scenes = scenes or {"": {}}
    rows, curves = [], []
    for sname, over in scenes.items():
        for cfg in cfgs:
            for seed in seeds:
                d = cfg.to_dict()
                if over:
                    d.update(scene=None, scene_path=None, gen=None)
                    d.update(over)
                d["seed"] = seed
                c = EpisodeConfig.from_dict(d)
                try:
                    res = run_episode(c)
                except VsfError as e:
                    rows.append(dict(method=c.label(), scene=sname, seed=seed, reason=f"failed: {e}"))
                    continue
                row = _summary(res, target_fraction)
                row["scene"] = sname
                rows.append(row)
                for r in res.timeline.rows:
                    curves.append(dict(method=c.label(), scene=sname, seed=seed, **r))
                if on_result:
                    on_result(row, res)
    return rows, table(rows), curves


def table(rows) -> list:
    """Per-(method, scene) means plus an overall average row per method (mean of scene means)."""
    ok = [r for r in rows if not str(r.get("reason", "")).startswith("failed")]
    keys = ("time", "distance", "accuracy", "correct", "target_time", "target_distance")
    out = []
    methods = list(dict.fromkeys(r["method"] for r in ok))
    scene_names = list(dict.fromkeys(r["scene"] for r in ok))
    for m in methods:
        per_scene = []
        for s in scene_names:
            sel = [r for r in ok if r["method"] == m and r["scene"] == s]
            if not sel:
                continue
            ent = dict(method=m, scene=s, runs=len(sel))
            for k in keys:
                vals = [r[k] for r in sel if k in r]
                if vals:
                    ent[k] = float(np.mean(vals))
            per_scene.append(ent)
            out.append(ent)
        avg = dict(method=m, scene="Average", runs=sum(e["runs"] for e in per_scene))
        for k in keys:
            vals = [e[k] for e in per_scene if k in e]
            if vals:
                avg[k] = float(np.mean(vals))
        out.append(avg)
    return out


def write_rows(path, rows, columns=None) -> None:
    columns = columns or list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in columns})


def write_episode(res: EpisodeResult, out_dir) -> Path:
    """metrics.csv, per-cycle plan JSON, sparse final map, config echo and a summary."""
    out = Path(out_dir)
    (out / "plans").mkdir(parents=True, exist_ok=True)
    res.timeline.write_csv(out / "metrics.csv")
    for i, pl in enumerate(res.plans, start=1):
        (out / "plans" / f"plan_{i:04d}.json").write_text(json.dumps(pl, indent=1))
    res.world.export_snapshot(out / "map_final.json")
    (out / "config.json").write_text(json.dumps(res.config.to_dict(), indent=1))
    summary = dict(reason=res.reason, collisions=res.collisions, cycles=len(res.plans),
                   surface_voxels=res.surface_count, objects=res.object_count, **res.timeline.final)
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    return out
