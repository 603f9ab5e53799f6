import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vsfscan.entropy import (EntropyField, GainModel, GainWeights, entropy_bits, expected_gain, h_geometry,
                             i_combined, i_geometry, i_semantic, p_g, unknown_voxel_gain)
from vsfscan.errors import ConfigError, PoseInObstacleError
from vsfscan.fusion import WorldMap
from vsfscan.scene import Pose
from vsfscan.sensor import CameraModel, SensorFrame, capture, frame_rng
from vsfscan.vsf import view_sums


def H(p):
    return entropy_bits(p)


def test_p_g_values():
    assert p_g(0.0) == 0.5
    assert p_g(1.75) == pytest.approx(1 / (1 + math.exp(-3.0625)), abs=1e-12)
    assert abs(p_g(1.75) - 0.9553) <= 1e-4
    big = p_g(100.0)
    assert 0.999999 < big <= 1.0


def test_h_geometry_values():
    assert h_geometry(0.0) == 1.0
    assert abs(h_geometry(1.75) - 0.2635) <= 1e-3
    assert h_geometry(100.0) == 0.0 or h_geometry(100.0) < 1e-12
    s = np.linspace(0, 10, 2001)
    assert np.all(np.diff(h_geometry(s)) <= 1e-15)
    assert np.allclose(h_geometry(-s), h_geometry(s))


def test_i_geometry():
    assert i_geometry(1.3, 1.3) == 0.0
    # 1 - H2(p_g(0.85)); p_g(0.85) = 0.67316
    expect = 1.0 - H([p_g(0.85), 1 - p_g(0.85)])
    assert i_geometry(0.0, 0.85) == pytest.approx(expect, abs=1e-12)
    assert i_geometry(0.0, 0.85) == pytest.approx(0.08833, abs=1e-5)


@given(st.integers(1, 30), st.integers(0, 30))
def test_i_geometry_first_frame_nonnegative(pos, neg):
    # an unobserved voxel (sigma 0) entering a frame never loses geometric certainty
    from vsfscan.fusion import support
    assert i_geometry(0.0, float(support(pos, neg))) >= 0.0


def test_i_semantic_case1():
    assert i_semantic([0.7, 0.3], [0.9, 0.1]) == pytest.approx(H([0.7, 0.3]) - H([0.9, 0.1]), abs=1e-12)
    assert i_semantic([0.7, 0.3], [0.9, 0.1]) == pytest.approx(0.4123, abs=1e-4)


def test_i_semantic_case2_literal_and_zero():
    assert i_semantic([0.6, 0.4], [0.3, 0.7]) == pytest.approx(
        -(0.3 * math.log2(0.3) + 0.7 * math.log2(0.7)), abs=1e-12)
    assert i_semantic([0.6, 0.4], [0.3, 0.7], case2="zero") == 0.0


def test_i_semantic_case3():
    assert i_semantic([0.8, 0.2], [0.4, 0.6]) == 0.0


def test_i_semantic_absent():
    assert i_semantic(None, None) == 0.0
    # absent old reads as uniform; same argmax is then a tie-broken label 1
    assert i_semantic(None, [0.9, 0.1]) == pytest.approx(1.0 - H([0.9, 0.1]))


def test_i_combined():
    old = SimpleNamespace(sigma=0.0, sem=[0.7, 0.3])
    new = SimpleNamespace(sigma=0.85, sem=[0.9, 0.1])
    val = i_combined(old, new)
    assert val == pytest.approx(0.412295 + 0.3 * 0.088330, abs=2e-6)
    zero = SimpleNamespace(sigma=0.0, sem=[0.5, 0.5])
    assert i_combined(zero, zero) == 0.0
    assert i_combined(old, new, GainWeights(0.0, 0.3)) == pytest.approx(0.3 * i_geometry(0, 0.85))
    assert i_combined(old, new, GainWeights(1.0, 0.0)) == pytest.approx(i_semantic(old.sem, new.sem))


def test_weights_validation():
    with pytest.raises(ConfigError):
        GainWeights(-1.0, 0.3)
    with pytest.raises(ConfigError):
        GainWeights(0.0, 0.0)
    with pytest.raises(ConfigError):
        GainWeights.for_mode("bogus")
    assert GainWeights.for_mode("geometry").alpha == 0.0
    assert GainWeights.for_mode("semantic").beta == 0.0


def scanned_world(gt, n=10, seed=0):
    cam = CameraModel(h_rays=24, v_rays=18)
    m = WorldMap(gt.shape, gt.resolution, gt.label_count)
    ent = EntropyField(m)
    rng = np.random.default_rng(seed)
    for i in range(n):
        pose = Pose(rng.uniform(1.2, 2.8), rng.uniform(1.2, 2.8), rng.uniform(0, 2 * math.pi))
        ent.update(m, m.integrate(capture(gt, pose, cam, frame_rng(seed, i, pose))))
    return m, ent


def test_entropy_field_incremental_equals_batch(room_gt):
    m, ent = scanned_world(room_gt)
    ent.audit(m, tol=1e-6)


def test_entropy_ranges(room_gt):
    m, ent = scanned_world(room_gt, 6)
    K = m.label_count
    assert ent.h_geo.min() >= 0 and ent.h_geo.max() <= 1.0
    assert ent.h_sem.min() >= 0 and ent.h_sem.max() <= math.log2(K) + 1e-12
    no_sem = (m.sem_slot.reshape(-1) < 0) & (m.state.reshape(-1) != 1)
    assert np.all(ent.h_sem[no_sem] == math.log2(K))
    assert np.all(ent.gain >= 0)


def test_unknown_gain_formula():
    w = GainWeights()
    gm = GainModel()
    assert unknown_voxel_gain(9, w, gm) == pytest.approx(0.5 * (0.3 * 8.0 + 1.0 * math.log2(9) * 0.1))
    m = WorldMap((3, 3, 3), 0.1, 9)
    ent = EntropyField(m, w, gm)
    assert np.all(ent.gain == unknown_voxel_gain(9, w, gm))


def test_expected_gain_saturates(room_gt):
    cam = CameraModel(h_rays=40, v_rays=30)
    m = WorldMap(room_gt.shape, room_gt.resolution, room_gt.label_count)
    pose = Pose(2.0, 2.0, 0.0)
    for i in range(30):
        m.integrate(capture(room_gt, pose, cam, frame_rng(1, i, pose)))
    ent = EntropyField(m)
    g = expected_gain(m, pose, cam, field=ent)
    n_vox, _ = view_sums(m, np.zeros(m.size), pose, cam)
    count = view_sums(m, np.ones(m.size), pose, cam)[1]
    assert count > 0
    assert g / count < 0.01


def test_expected_gain_unknown_beats_free():
    shape = (100, 20, 20)
    m = WorldMap(shape, 0.1, 3)
    xs = np.arange(60)
    vox = np.ravel_multi_index(np.meshgrid(xs, np.arange(20), np.arange(20), indexing="ij"), shape).reshape(-1)
    m.integrate(SensorFrame(Pose(0, 0), np.zeros(0, np.int64), np.zeros(0), np.sort(vox), np.zeros(0, np.int64),
                            np.zeros((0, 3))))
    g_free = expected_gain(m, Pose(5.5, 1.0, math.pi))
    g_unknown = expected_gain(m, Pose(5.5, 1.0, 0.0))
    assert g_unknown > g_free >= 0.0


def test_expected_gain_in_obstacle():
    m = WorldMap((10, 10, 20), 0.1, 3)
    v = np.ravel_multi_index((5, 5, 10), m.shape)
    for _ in range(2):
        m.integrate(SensorFrame(Pose(0, 0), np.array([v]), np.ones(1), np.zeros(0, np.int64),
                                np.zeros(0, np.int64), np.zeros((0, 3))))
    with pytest.raises(PoseInObstacleError):
        expected_gain(m, Pose(0.55, 0.55, 0.0))


def test_export_layers(tmp_path, room_gt):
    m, ent = scanned_world(room_gt, 2)
    paths = ent.export_layers(tmp_path, [5])
    assert len(paths) == 4
    grid = np.loadtxt(paths[0], delimiter=",")
    assert grid.shape == room_gt.shape[:2]
