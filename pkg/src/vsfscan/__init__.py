"""Entropy-driven active scanning of indoor scenes with a view scoring field planner."""

from .entropy import EntropyField, GainModel, GainWeights, expected_gain, h_geometry, i_combined, i_geometry, i_semantic, p_g
from .errors import ConfigError, ExplorationComplete, NoPathError, SceneError, UnsafeViewError, VsfError
from .fusion import ChangeSet, WorldMap, classify, frontiers, fuse_semantic, integrate_frame
from .harness import EpisodeConfig, MetricsTimeline, compare, identified_objects, run_episode
from .planner import PathPlan, PlannerConfig, dijkstra_baseline, plan_path, project, select_nbv
from .scene import Box, GroundTruth, Pose, SceneSpec, gen_scene, load_scene, rasterize, validate
from .sensor import CameraModel, ScoringFan, SemanticOracle, SensorFrame, capture, semantic_oracle
from .vsf import (ViewLattice, ViewScoreField, VsfParams, build_field, frontier_visibility, movement_cost,
                  obstacle_costmap, safety_mask, score_view, update_field)

__version__ = "0.1.0"
