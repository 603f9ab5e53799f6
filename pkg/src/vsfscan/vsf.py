"""View scoring field over the (x, y, theta) lattice.

Each lattice node traces one panoramic fan against the believed map; the
heading bins of that node read their frustum out of the shared fan. The field
keeps the raw components (frontier visibility V, summed expected gain G,
safety, obstacle cost, movement discount) so updates can recombine them
without re-raycasting.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import distance_transform_edt

from . import kernels
from .entropy import EntropyField, belief_codes
from .errors import ConfigError, UnsafeViewError
from .fusion import WorldMap
from .scene import Pose, lattice_stride, node_coordinate, normalize_angle
from .sensor import CameraModel, ScoringFan, directions

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class VsfParams:
    alpha_frontier: float = 1.0
    movement_sigma: float = 3.0
    safety_clearance: float = 0.35
    obstacle_sigma: float = 0.35
    eta: float = 500.0
    movement_cost_mode: str = "multiply"  # or "divide-as-printed"
    score_mode: str = "vsf"  # or "legacy-nbv": gain sum only, no frontier term or movement discount
    near_field_radius: float = 0.7
    # the scoring fan samples a small share of the frustum; numerators are scaled by this
    # factor so F sits on a scale comparable to eta (max F stays below it)
    score_scale: float = 6.0

    def __post_init__(self):
        for name in ("movement_sigma", "safety_clearance", "obstacle_sigma", "eta", "score_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.alpha_frontier < 0 or self.near_field_radius < 0:
            raise ConfigError("alpha_frontier and near_field_radius must be non-negative")
        if self.movement_cost_mode not in ("multiply", "divide-as-printed"):
            raise ConfigError(f"unknown movement_cost_mode {self.movement_cost_mode!r}")
        if self.score_mode not in ("vsf", "legacy-nbv"):
            raise ConfigError(f"unknown score_mode {self.score_mode!r}")


@dataclass(frozen=True)
class ViewLattice:
    """Nodes on voxel-column centers every ``stride`` columns, ``theta_bins`` headings each.

    State index of (a, b, t) is ``(a * nb + b) * theta_bins + t``.
    """

    grid_shape: tuple
    resolution: float
    xy_resolution: float = 0.4
    theta_bins: int = 16

    def __post_init__(self):
        if self.theta_bins < 4:
            raise ConfigError("theta_bins must be at least 4")
        try:
            lattice_stride(self.resolution, self.xy_resolution)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if self.dims[0] < 1 or self.dims[1] < 1:
            raise ConfigError("scene is smaller than one lattice cell")

    @property
    def stride(self) -> int:
        return lattice_stride(self.resolution, self.xy_resolution)

    @property
    def dims(self) -> tuple[int, int]:
        s = self.stride
        return self.grid_shape[0] // s, self.grid_shape[1] // s

    @property
    def n_cells(self) -> int:
        return self.dims[0] * self.dims[1]

    @property
    def n_states(self) -> int:
        return self.n_cells * self.theta_bins

    @property
    def theta_step(self) -> float:
        return TWO_PI / self.theta_bins

    def x(self, a):
        return node_coordinate(a, self.resolution, self.xy_resolution)

    def columns(self, a):
        """Voxel column index of node ``a`` along one axis."""
        s = self.stride
        return s // 2 + s * np.asarray(a)

    def theta(self, t) -> float:
        return float(t) * self.theta_step

    def index(self, a: int, b: int, t: int) -> int:
        return (a * self.dims[1] + b) * self.theta_bins + t

    def unravel(self, idx: int) -> tuple[int, int, int]:
        c, t = divmod(int(idx), self.theta_bins)
        a, b = divmod(c, self.dims[1])
        return a, b, t

    def pose(self, a: int, b: int, t: int) -> Pose:
        return Pose(float(self.x(a)), float(self.x(b)), self.theta(t))

    def pose_of(self, idx: int) -> Pose:
        return self.pose(*self.unravel(idx))

    def cell_of(self, pose: Pose) -> tuple[int, int, int]:
        """Nearest lattice state to a metric pose."""
        s = self.stride
        na, nb = self.dims
        a = min(max(int(round((pose.x / self.resolution - 0.5 - s // 2) / s)), 0), na - 1)
        b = min(max(int(round((pose.y / self.resolution - 0.5 - s // 2) / s)), 0), nb - 1)
        t = int(round(normalize_angle(pose.theta) / self.theta_step)) % self.theta_bins
        return a, b, t

    def node_xy(self) -> tuple[np.ndarray, np.ndarray]:
        na, nb = self.dims
        xs, ys = self.x(np.arange(na)), self.x(np.arange(nb))
        return np.meshgrid(xs, ys, indexing="ij")


def movement_cost(view_xy, robot_xy, sigma: float):
    """exp(-d^2 / 2 sigma^2) with d the Euclidean 2D distance."""
    v = np.asarray(view_xy, dtype=np.float64)
    r = np.asarray(robot_xy, dtype=np.float64)
    d2 = np.sum(np.square(v - r), axis=-1)
    out = np.exp(-d2 / (2.0 * sigma * sigma))
    return float(out) if np.ndim(out) == 0 else out


def gaussian_cost(dist, sigma: float):
    """Gaussian of a distance, exactly 0 beyond 6 sigma."""
    d = np.asarray(dist, dtype=np.float64)
    out = np.where(d <= 6.0 * sigma, np.exp(-np.square(d) / (2.0 * sigma * sigma)), 0.0)
    return float(out) if out.ndim == 0 else out


def _edt(obstacle: np.ndarray, res: float) -> np.ndarray:
    if not obstacle.any():
        return np.full(obstacle.shape, np.inf)
    return distance_transform_edt(~obstacle, sampling=res)


def _at_nodes(grid2d: np.ndarray, lattice: ViewLattice) -> np.ndarray:
    na, nb = lattice.dims
    return grid2d[np.ix_(lattice.columns(np.arange(na)), lattice.columns(np.arange(nb)))]


def safety_mask(world: WorldMap, lattice: ViewLattice, clearance: float = 0.35,
                robot: Pose | None = None) -> np.ndarray:
    """2D (na, nb) flags: node center at least ``clearance`` from every obstacle column.

    Obstacle columns are Occupied in the robot's height band, or Unknown there
    and not cleared by the robot's presence. The robot's own node is always safe.
    """
    occ, unknown = world.column_obstacles()
    dist = _at_nodes(_edt(occ | unknown, world.resolution), lattice)
    safe = dist >= clearance
    if robot is not None:
        a, b, _ = lattice.cell_of(robot)
        safe[a, b] = True
    return safe


def obstacle_costmap(world: WorldMap, lattice: ViewLattice, sigma: float = 0.35) -> np.ndarray:
    """f_o at lattice nodes: Gaussian of the distance to the nearest Occupied column."""
    occ, _ = world.column_obstacles()
    return gaussian_cost(_at_nodes(_edt(occ, world.resolution), lattice), sigma)


def panoramic_fan(lattice: ViewLattice, camera: CameraModel, fan: ScoringFan):
    """Directions of one full-circle fan and the ray indices each heading bin uses."""
    per_turn = TWO_PI / fan.az_step
    n_az = int(round(per_turn))
    if abs(per_turn - n_az) > 1e-9 or n_az % lattice.theta_bins:
        raise ConfigError("scoring azimuth step must divide the lattice heading step")
    n_el = fan.el_rays
    dirs = directions(np.arange(n_az) * fan.az_step, fan.el_offsets(camera))
    kmax = (fan.az_offsets(camera).size - 1) // 2
    per = n_az // lattice.theta_bins
    az_idx = (np.arange(lattice.theta_bins)[:, None] * per + np.arange(-kmax, kmax + 1)[None, :]) % n_az
    bin_rays = (az_idx[:, :, None] * n_el + np.arange(n_el)[None, None, :]).reshape(lattice.theta_bins, -1)
    return dirs, bin_rays


def view_sums(world: WorldMap, gain: np.ndarray, view: Pose, camera: CameraModel = CameraModel(),
              fan: ScoringFan = ScoringFan(), codes=None):
    """(frontier count, gain sum) over the voxels visible from one arbitrary view."""
    codes = belief_codes(world) if codes is None else codes
    dirs = fan.view_directions(camera, view.theta)
    bins = np.arange(dirs.shape[0], dtype=np.int64)[None, :]
    v, g = kernels.score_nodes(codes, world.frontier.reshape(-1).astype(np.float64), gain,
                               camera.origin(view)[None, :], dirs, bins, world.resolution,
                               camera.range_min, camera.range_max)
    return float(v[0, 0]), float(g[0, 0])


def frontier_visibility(world: WorldMap, view: Pose, camera: CameraModel = CameraModel(),
                        fan: ScoringFan = ScoringFan()) -> float:
    """Frontier voxels through which the view's (sampled) rays look into Unknown space."""
    return view_sums(world, np.zeros(world.size), view, camera, fan)[0]


def combine_score(numerator, L, mode: str = "multiply"):
    if mode == "multiply":
        return numerator * L
    return numerator / L


@dataclass(eq=False)
class ViewScoreField:
    lattice: ViewLattice
    params: VsfParams
    camera: CameraModel
    fan: ScoringFan
    robot: Pose
    V: np.ndarray  # (na, nb, T) visible frontier voxels
    G: np.ndarray  # (na, nb, T) summed expected gain
    scored: np.ndarray  # (na, nb) V/G are current for this node
    safe: np.ndarray  # (na, nb)
    fo: np.ndarray  # (na, nb)
    L: np.ndarray  # (na, nb)
    F: np.ndarray = None  # (na, nb, T), -inf where unsafe
    rescored: int = 0  # nodes raycast by the most recent build/update
    _dirs: np.ndarray = field(default=None, repr=False)
    _bin_rays: np.ndarray = field(default=None, repr=False)

    def recombine(self) -> None:
        p = self.params
        if p.score_mode == "legacy-nbv":
            F = p.score_scale * self.G
        else:
            num = p.score_scale * (p.alpha_frontier * self.V + self.G)
            F = combine_score(num, self.L[:, :, None], p.movement_cost_mode)
        F[~self.safe] = -np.inf
        self.F = F
        top = F[np.isfinite(F)]
        if top.size and top.max() >= p.eta:
            log.warning("max view score %.1f reaches eta %.1f; path costs get clamped", top.max(), p.eta)

    def score(self, pose: Pose) -> float:
        a, b, t = self.lattice.cell_of(pose)
        return float(self.F[a, b, t])

    def flat_scores(self) -> np.ndarray:
        return self.F.reshape(-1)

    def export(self, out_dir, layers=("F",)) -> list[Path]:
        """One CSV per heading bin and layer; rows are x nodes, columns are y nodes."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for name in layers:
            arr = getattr(self, name)
            for t in range(self.lattice.theta_bins):
                p = out / f"{name}_theta{t:02d}.csv"
                np.savetxt(p, arr[:, :, t], fmt="%.6g", delimiter=",")
                paths.append(p)
        return paths


def _score(fld: ViewScoreField, world: WorldMap, gain: np.ndarray, nodes: np.ndarray, codes) -> None:
    """Raycast the given (a, b) nodes and store their V and G."""
    fld.rescored += len(nodes)
    if not len(nodes):
        return
    lat, cam = fld.lattice, fld.camera
    xs = lat.x(nodes[:, 0])
    ys = lat.x(nodes[:, 1])
    origins = np.stack([xs, ys, np.full(len(nodes), cam.height)], axis=1)
    v, g = kernels.score_nodes(codes, world.frontier.reshape(-1).astype(np.float64), gain, origins,
                               fld._dirs, fld._bin_rays, world.resolution, cam.range_min, cam.range_max)
    fld.V[nodes[:, 0], nodes[:, 1]] = v
    fld.G[nodes[:, 0], nodes[:, 1]] = g
    fld.scored[nodes[:, 0], nodes[:, 1]] = True


def _movement(lattice: ViewLattice, robot: Pose, sigma: float) -> np.ndarray:
    gx, gy = lattice.node_xy()
    return movement_cost(np.stack([gx, gy], axis=-1), (robot.x, robot.y), sigma)


def build_field(world: WorldMap, entropy: EntropyField, robot: Pose, params: VsfParams = VsfParams(),
                lattice: ViewLattice | None = None, camera: CameraModel = CameraModel(),
                fan: ScoringFan = ScoringFan()) -> ViewScoreField:
    """Score every safe lattice node from scratch."""
    lattice = lattice or ViewLattice(world.shape, world.resolution)
    na, nb = lattice.dims
    T = lattice.theta_bins
    dirs, bin_rays = panoramic_fan(lattice, camera, fan)
    fld = ViewScoreField(
        lattice, params, camera, fan, robot,
        V=np.zeros((na, nb, T)), G=np.zeros((na, nb, T)), scored=np.zeros((na, nb), bool),
        safe=safety_mask(world, lattice, params.safety_clearance, robot),
        fo=obstacle_costmap(world, lattice, params.obstacle_sigma),
        L=_movement(lattice, robot, params.movement_sigma),
        _dirs=dirs, _bin_rays=bin_rays,
    )
    _score(fld, world, entropy.gain, np.argwhere(fld.safe), belief_codes(world))
    fld.recombine()
    return fld


def affected_nodes(lattice: ViewLattice, world: WorldMap, voxels: np.ndarray, reach: float) -> np.ndarray:
    """(na, nb) mask of nodes within ``reach`` (2D) of any listed voxel's column."""
    cols = np.zeros(world.shape[:2], bool)
    if voxels.size:
        i, j, _ = np.unravel_index(voxels, world.shape)
        cols[i, j] = True
    if not cols.any():
        return np.zeros(lattice.dims, bool)
    return _at_nodes(_edt(cols, world.resolution), lattice) <= reach


def update_field(fld: ViewScoreField, world: WorldMap, entropy: EntropyField, changes, robot: Pose) -> ViewScoreField:
    """Bring ``fld`` in line with ``world`` after the given change sets.

    Only safe nodes within sensor reach of a touched voxel (or newly safe
    nodes with stale components) are raycast again; safety, obstacle cost
    and the movement discount are cheap 2D passes redone every time.
    """
    if not isinstance(changes, (list, tuple)):
        changes = [changes]
    touched = [c.touched() for c in changes if not c.is_empty]
    voxels = np.unique(np.concatenate(touched)) if touched else np.zeros(0, np.int64)
    p = fld.params
    fld.rescored = 0
    fld.safe = safety_mask(world, fld.lattice, p.safety_clearance, robot)
    fld.fo = obstacle_costmap(world, fld.lattice, p.obstacle_sigma)
    if robot != fld.robot:
        fld.L = _movement(fld.lattice, robot, p.movement_sigma)
        fld.robot = robot
    reach = fld.camera.range_max + math.sqrt(3.0) * world.resolution
    stale = affected_nodes(fld.lattice, world, voxels, reach)
    fld.scored &= ~stale
    todo = np.argwhere(fld.safe & ~fld.scored)
    _score(fld, world, entropy.gain, todo, belief_codes(world))
    # unscored nodes keep no components, matching a fresh build
    fld.V[~fld.scored] = 0.0
    fld.G[~fld.scored] = 0.0
    fld.recombine()
    return fld


def score_view(view: Pose, world: WorldMap, entropy: EntropyField, robot: Pose,
               params: VsfParams = VsfParams(), camera: CameraModel = CameraModel(),
               fan: ScoringFan = ScoringFan(), lattice: ViewLattice | None = None) -> float:
    """F for one arbitrary view; raises UnsafeViewError when the view is not in safe space."""
    lattice = lattice or ViewLattice(world.shape, world.resolution)
    occ, unknown = world.column_obstacles()
    dist = _edt(occ | unknown, world.resolution)
    i = min(max(int(view.x / world.resolution), 0), world.shape[0] - 1)
    j = min(max(int(view.y / world.resolution), 0), world.shape[1] - 1)
    own = (view.x - robot.x) ** 2 + (view.y - robot.y) ** 2 < 1e-12
    if dist[i, j] < params.safety_clearance and not own:
        raise UnsafeViewError(f"view ({view.x:.2f}, {view.y:.2f}) is within {params.safety_clearance} m of an obstacle")
    v, g = view_sums(world, entropy.gain, view, camera, fan)
    if params.score_mode == "legacy-nbv":
        return params.score_scale * g
    L = movement_cost((view.x, view.y), (robot.x, robot.y), params.movement_sigma)
    return float(combine_score(params.score_scale * (params.alpha_frontier * v + g), L, params.movement_cost_mode))
