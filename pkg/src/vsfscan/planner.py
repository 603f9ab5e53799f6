"""Next-best-view selection and joint path / camera-heading planning on the view lattice."""

from __future__ import annotations

import heapq
import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ExplorationComplete, NoPathError
from .scene import Pose
from .vsf import ViewLattice, ViewScoreField

log = logging.getLogger(__name__)

# 4-connected xy moves, fixed order (determinism)
XY_MOVES = ((1, 0), (-1, 0), (0, 1), (0, -1))


@dataclass(frozen=True)
class PlannerConfig:
    linear_speed: float = 0.3  # m/s
    angular_speed: float = math.radians(40.0)  # rad/s
    xy_resolution: float = 0.4
    theta_bins: int = 16
    eta: float = 500.0
    eps_cost: float = 1e-3

    def __post_init__(self):
        if self.linear_speed <= 0 or self.angular_speed <= 0:
            raise ConfigError("speeds must be positive")
        if self.eps_cost <= 0 or self.eta <= 0:
            raise ConfigError("eta and eps_cost must be positive")
        if self.max_bins_per_move < 1:
            raise ConfigError("rotation limit is below one heading bin")

    @property
    def rotation_limit(self) -> float:
        """Largest heading change the camera can make while the base moves one cell."""
        return self.angular_speed * (self.xy_resolution / self.linear_speed)

    @property
    def theta_step(self) -> float:
        return 2.0 * math.pi / self.theta_bins

    @property
    def max_bins_per_move(self) -> int:
        return int(math.floor(self.rotation_limit / self.theta_step + 1e-9))

    @property
    def rotation_step_length(self) -> float:
        return self.xy_resolution / 2.0

    @classmethod
    def for_lattice(cls, lattice: ViewLattice, eta: float = 500.0, **kw) -> "PlannerConfig":
        return cls(xy_resolution=lattice.xy_resolution, theta_bins=lattice.theta_bins, eta=eta, **kw)


@dataclass(eq=False)
class PathPlan:
    lattice_path: list  # [(a, b, t), ...]
    robot_waypoints: np.ndarray  # (n, 2) meters, one row per lattice cell
    camera_schedule: np.ndarray  # (n,) unwrapped headings, radians
    total_cost: float
    total_length: float
    total_rotation: float
    edge_costs: list = field(default_factory=list)

    def __len__(self):
        return len(self.lattice_path)

    @property
    def goal(self):
        return self.lattice_path[-1]

    def to_dict(self) -> dict:
        wp, sched = project(self)
        return {
            "lattice_path": [list(map(int, c)) for c in self.lattice_path],
            "waypoints": wp.tolist(),
            "camera_schedule": [[int(i), float(th)] for i, th in sched],
            "edge_costs": [float(c) for c in self.edge_costs],
            "total_cost": float(self.total_cost),
            "total_length": float(self.total_length),
            "total_rotation": float(self.total_rotation),
        }

    def export(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def edge_cost(F_dest: float, fo_dest: float, step: float, cfg: PlannerConfig) -> float:
    """Cost of entering a state: step * max(eps, eta - F) + eta * f_o * step."""
    return step * max(cfg.eps_cost, cfg.eta - F_dest) + cfg.eta * fo_dest * step


def _unpack(fld, fo):
    if isinstance(fld, ViewScoreField):
        F = fld.F
        fo = fld.fo if fo is None else fo
    else:
        F = np.asarray(fld, dtype=np.float64)
        fo = np.zeros(F.shape[:2]) if fo is None else np.asarray(fo, dtype=np.float64)
    return F, fo


def _state(cell, dims, T):
    a, b, t = cell
    return (a * dims[1] + b) * T + t


def _cell(idx, dims, T):
    c, t = divmod(idx, T)
    a, b = divmod(c, dims[1])
    return a, b, t


def neighbors(cell, dims, T, max_bins):
    """Successors of a lattice state with their step kind ('xy' or 'rot'), in fixed order."""
    a, b, t = cell
    out = []
    for da, db in XY_MOVES:
        na, nb = a + da, b + db
        if 0 <= na < dims[0] and 0 <= nb < dims[1]:
            for dt in range(-max_bins, max_bins + 1):
                out.append(((na, nb, (t + dt) % T), "xy"))
    for dt in (-1, 1):
        out.append(((a, b, (t + dt) % T), "rot"))
    return out


def plan_path(fld, f_o=None, start: Pose | tuple = None, goal: Pose | tuple = None,
              cfg: PlannerConfig | None = None, lattice: ViewLattice | None = None) -> PathPlan:
    """Minimum-cost lattice path from ``start`` to ``goal`` (A*).

    ``fld`` is a :class:`ViewScoreField` or an (na, nb, T) array of scores with
    -inf marking unsafe states; ``start``/``goal`` are poses or (a, b, t)
    cells.
    """
    F, fo = _unpack(fld, f_o)
    if lattice is None and isinstance(fld, ViewScoreField):
        lattice = fld.lattice
    dims, T = F.shape[:2], F.shape[2]
    cfg = cfg or (PlannerConfig.for_lattice(lattice) if lattice else PlannerConfig(theta_bins=T))
    if cfg.theta_bins != T:
        raise ConfigError("planner theta_bins does not match the field")
    s = _as_cell(start, lattice, T)
    g = _as_cell(goal, lattice, T)
    safe2d = np.isfinite(F).all(axis=2)
    if not safe2d[g[0], g[1]]:
        raise NoPathError(f"goal cell {g} is not safe")
    m = cfg.max_bins_per_move
    xy_step, rot_step = cfg.xy_resolution, cfg.rotation_step_length
    # per-state entry costs for both step kinds
    with np.errstate(invalid="ignore"):
        clamp = np.maximum(cfg.eps_cost, cfg.eta - F)
    if np.any(safe2d[:, :, None] & (cfg.eta - F < cfg.eps_cost)):
        log.info("eta - F fell below eps_cost on some states; costs clamped")
    enter_xy = (xy_step * clamp + cfg.eta * fo[:, :, None] * xy_step).reshape(-1)
    enter_rot = (rot_step * clamp + cfg.eta * fo[:, :, None] * rot_step).reshape(-1)
    safe_state = np.repeat(safe2d.reshape(-1), T)
    safe_state[_state(s, dims, T)] = True

    h_unit = cfg.eps_cost * xy_step
    src, dst = _state(s, dims, T), _state(g, dims, T)
    dist = {src: 0.0}
    parent = {src: -1}
    closed = set()
    heap = [(h_unit * (abs(s[0] - g[0]) + abs(s[1] - g[1])), src)]
    while heap:
        f, u = heapq.heappop(heap)
        if u in closed:
            continue
        if u == dst:
            break
        closed.add(u)
        du = dist[u]
        cu = _cell(u, dims, T)
        for nc, kind in neighbors(cu, dims, T, m):
            v = _state(nc, dims, T)
            if not safe_state[v]:
                continue
            nd = du + (enter_xy[v] if kind == "xy" else enter_rot[v])
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                parent[v] = u
                closed.discard(v)
                heapq.heappush(heap, (nd + h_unit * (abs(nc[0] - g[0]) + abs(nc[1] - g[1])), v))
    if dst not in dist:
        raise NoPathError(f"no safe path from {s} to {g}")
    seq = []
    v = dst
    while v != -1:
        seq.append(_cell(v, dims, T))
        v = parent[v]
    seq.reverse()
    return make_plan(seq, F, fo, cfg, lattice)


def _as_cell(p, lattice, T):
    if isinstance(p, Pose):
        if lattice is None:
            raise ConfigError("metric poses need a lattice")
        return lattice.cell_of(p)
    a, b, t = p
    return int(a), int(b), int(t) % T


def path_cost(cells, F, fo, cfg: PlannerConfig) -> tuple[float, list]:
    """Integrated cost of a lattice path (sum of per-edge entry costs) and the edge costs."""
    costs = []
    total = 0.0
    for prev, cur in zip(cells[:-1], cells[1:]):
        step = cfg.rotation_step_length if prev[:2] == cur[:2] else cfg.xy_resolution
        c = float(step * max(cfg.eps_cost, cfg.eta - F[cur]) + cfg.eta * fo[cur[:2]] * step)
        costs.append(c)
        total += c
    return total, costs


def _theta_delta(t0, t1, T):
    d = (t1 - t0) % T
    return d - T if d > T // 2 else d


def make_plan(cells, F, fo, cfg: PlannerConfig, lattice: ViewLattice | None = None) -> PathPlan:
    T = F.shape[2]
    cells = [tuple(int(x) for x in c) for c in cells]
    total, costs = path_cost(cells, F, fo, cfg)
    step = cfg.theta_step
    theta = [cells[0][2] * step]
    length = 0.0
    rot = 0.0
    for prev, cur in zip(cells[:-1], cells[1:]):
        dt = _theta_delta(prev[2], cur[2], T)
        if prev[:2] != cur[:2]:
            length += cfg.xy_resolution
            if abs(dt) > cfg.max_bins_per_move:
                raise AssertionError(f"rotation bound violated between {prev} and {cur}")
        elif abs(dt) != 1:
            raise AssertionError(f"invalid pure rotation between {prev} and {cur}")
        theta.append(theta[-1] + dt * step)
        rot += abs(dt) * step
    if lattice is not None:
        xy = np.array([[lattice.x(c[0]), lattice.x(c[1])] for c in cells], dtype=np.float64)
    else:
        xy = np.array([[c[0] * cfg.xy_resolution, c[1] * cfg.xy_resolution] for c in cells], dtype=np.float64)
    return PathPlan(cells, xy, np.array(theta), total, length, rot, costs)


def project(plan: PathPlan):
    """(robot waypoints with repeats collapsed, camera schedule of (waypoint index, heading))."""
    wps = []
    sched = []
    for xy, th in zip(plan.robot_waypoints, plan.camera_schedule):
        if not wps or not np.array_equal(wps[-1], xy):
            wps.append(np.asarray(xy))
        sched.append((len(wps) - 1, float(th)))
    return np.array(wps).reshape(-1, 2), sched


def select_nbv(fld: ViewScoreField, robot: Pose | None = None, min_score: float = 0.0,
               exclude_current: bool = True, exclude=()) -> tuple[int, int, int]:
    """Lattice state with the highest finite score.

    Ties go to the state nearer the robot (2D), then the lowest index. The
    robot's own state and any (a, b, t) states in ``exclude`` are skipped.
    Raises ExplorationComplete when nothing finite scores above ``min_score``.
    """
    lat = fld.lattice
    robot = robot or fld.robot
    F = fld.F.reshape(-1).copy()
    if exclude_current:
        F[lat.index(*lat.cell_of(robot))] = -np.inf
    for c in exclude:
        F[lat.index(*c)] = -np.inf
    finite = np.isfinite(F)
    if not finite.any():
        raise ExplorationComplete("no safe candidate view")
    best = F[finite].max()
    if not best > min_score:
        raise ExplorationComplete(f"best view score {best:.4g} is not above {min_score:.4g}")
    cand = np.nonzero(F == best)[0]
    if cand.size == 1:
        return lat.unravel(int(cand[0]))
    cells = np.array([lat.unravel(int(i)) for i in cand])
    d2 = (lat.x(cells[:, 0]) - robot.x) ** 2 + (lat.x(cells[:, 1]) - robot.y) ** 2
    order = np.lexsort((cand, d2))
    return lat.unravel(int(cand[order[0]]))


def _bfs_xy(safe2d: np.ndarray, s, g):
    dims = safe2d.shape
    prev = {s: None}
    q = deque([s])
    while q:
        u = q.popleft()
        if u == g:
            break
        for da, db in XY_MOVES:
            v = (u[0] + da, u[1] + db)
            if 0 <= v[0] < dims[0] and 0 <= v[1] < dims[1] and safe2d[v] and v not in prev:
                prev[v] = u
                q.append(v)
    if g not in prev:
        raise NoPathError(f"no safe path from {s} to {g}")
    out = []
    u = g
    while u is not None:
        out.append(u)
        u = prev[u]
    return out[::-1]


def _rotate(cells, target, T):
    a, b, t = cells[-1]
    while t != target:
        t = (t + (1 if _theta_delta(t, target, T) > 0 else -1)) % T
        cells.append((a, b, t))


def dijkstra_baseline(fld, start, goal, cfg: PlannerConfig | None = None, f_o=None,
                      lattice: ViewLattice | None = None) -> PathPlan:
    """Shortest 4-connected safe path, ignoring view scores.

    While moving, the camera turns toward the direction of motion by at most
    the per-move rotation limit; on arrival it turns in place to the goal
    heading. The plan's cost is still evaluated under the integrated cost so
    it can be compared with :func:`plan_path`.
    """
    F, fo = _unpack(fld, f_o)
    if lattice is None and isinstance(fld, ViewScoreField):
        lattice = fld.lattice
    T = F.shape[2]
    cfg = cfg or (PlannerConfig.for_lattice(lattice) if lattice else PlannerConfig(theta_bins=T))
    s = _as_cell(start, lattice, T)
    g = _as_cell(goal, lattice, T)
    safe2d = np.isfinite(F).all(axis=2)
    safe2d[s[0], s[1]] = True
    if not safe2d[g[0], g[1]]:
        raise NoPathError(f"goal cell {g} is not safe")
    xy = _bfs_xy(safe2d, s[:2], g[:2])
    facing = {(1, 0): 0, (0, 1): T // 4, (-1, 0): T // 2, (0, -1): 3 * T // 4}
    m = cfg.max_bins_per_move
    cells = [s]
    for u, v in zip(xy[:-1], xy[1:]):
        t = cells[-1][2]
        dt = _theta_delta(t, facing[(v[0] - u[0], v[1] - u[1])], T)
        cells.append((v[0], v[1], (t + max(-m, min(m, dt))) % T))
    _rotate(cells, g[2], T)
    F_eval = np.where(np.isfinite(F), F, 0.0)
    return make_plan(cells, F_eval, fo, cfg, lattice)
