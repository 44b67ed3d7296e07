import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from affordance.errors import CameraInsideGeometry
from affordance.labeler import Label, build_filter_bank
from affordance.synthetic import (SYNTH_INTRINSICS, SceneBox, SceneSpec, agreement_counts,
                                  format_scene, oracle_affordances, parse_scene, render, render_depth,
                                  scene_suite, write_suite)

SMALL = SYNTH_INTRINSICS.scaled(0.5)
BANK = build_filter_bank()


def room_depth_by_loop(spec):
    """z-depth of every pixel in an empty room, one ray and six planes at a time."""
    k = spec.intrinsics
    yaw, pitch = math.radians(spec.yaw), math.radians(spec.pitch)
    fwd = np.array([math.cos(yaw) * math.cos(pitch), math.sin(yaw) * math.cos(pitch), -math.sin(pitch)])
    right = np.array([math.sin(yaw), -math.cos(yaw), 0.0])
    down = np.cross(fwd, right)
    pos = np.array(spec.camera_position)
    out = np.zeros((k.height, k.width))
    for v in range(k.height):
        for u in range(k.width):
            d = (u - k.cx) / k.fx * right + (v - k.cy) / k.fy * down + fwd
            best = np.inf
            for a in range(3):
                for wall in (0.0, spec.room[a]):
                    if d[a] != 0:
                        with np.errstate(over="ignore"):
                            t = (wall - pos[a]) / d[a]
                        if t > 0:
                            best = min(best, t)
            out[v, u] = best
    return out


def test_far_wall_depth_is_constant():
    spec = SceneSpec((6, 4.5, 6), (3.0, 0.5, 3.0), 90, 0, SMALL)
    d = render_depth(spec).depths
    # the whole view lands on the wall 4 m ahead
    assert np.allclose(d, 4.0, atol=1e-9)


@given(st.floats(0, 360), st.floats(0, 30))
def test_empty_room_depth_matches_plane_intersections(yaw, pitch):
    spec = SceneSpec((4, 5, 3), (2.0, 1.0, 1.5), yaw, pitch, SYNTH_INTRINSICS.scaled(0.25))
    assert np.allclose(render_depth(spec).depths, room_depth_by_loop(spec), atol=1e-9)


def test_full_dropout_removes_every_pixel():
    spec = SceneSpec((4, 5, 3), (2.0, 1.0, 1.5), 90, 10, SMALL, dropout=1.0)
    assert not render_depth(spec).valid.any()


def test_render_is_bitwise_repeatable():
    spec = scene_suite(1, 3)[0]
    a, b = render(spec), render(spec)
    assert np.array_equal(a.depth.depths, b.depth.depths)
    assert np.array_equal(a.rgb, b.rgb)


def test_noise_perturbs_depth_but_not_exact_depth():
    base = scene_suite(1, 4)[0]
    noisy = SceneSpec(base.room, base.camera_position, base.yaw, base.pitch, base.intrinsics,
                      base.boxes, noise_sigma=0.01, seed=5)
    r = render(noisy)
    assert np.array_equal(r.exact_depth, render(base).exact_depth)
    assert 0.005 < np.std(r.depth.depths - r.exact_depth) < 0.02


def test_rgb_in_unit_range():
    rgb = render(scene_suite(1, 5)[0]).rgb
    assert rgb.shape == (120, 160, 3) and rgb.min() >= 0 and rgb.max() <= 1


def test_camera_inside_box_raises():
    spec = SceneSpec((4, 5, 3), (2.0, 1.0, 0.3), 90, 10, SMALL,
                     (SceneBox("table", (1.5, 0.5, 0.0), (2.5, 1.5, 0.5)),))
    with pytest.raises(CameraInsideGeometry):
        render(spec)


def test_scene_validation():
    with pytest.raises(ValueError):
        SceneBox("table", (0, 0, 0), (0, 1, 1))
    with pytest.raises(ValueError):
        SceneSpec((4, 5, 3), (5.0, 1.0, 1.5), 90, 10, SMALL)
    with pytest.raises(ValueError):
        SceneSpec((4, 5, 3), (2.0, 1.0, 1.5), 90, 10, SMALL, (SceneBox("bed", (3, 3, 0), (5, 4, 1)),))
    with pytest.raises(ValueError):
        parse_scene("room 4 5 3\ncamera 2 1 1.5 90 10\n")
    with pytest.raises(ValueError, match="unknown primitive"):
        parse_scene(format_scene(scene_suite(1, 0)[0]) + "teapot 1 2 3\n")


@given(st.integers(0, 10 ** 6))
def test_scene_text_round_trip(seed):
    spec = scene_suite(1, seed)[0]
    again = parse_scene(format_scene(spec))
    assert format_scene(again) == format_scene(spec)
    assert np.array_equal(render_depth(again).depths, render_depth(spec).depths)


def test_write_suite(tmp_path):
    paths = write_suite(tmp_path, 3, seed=1)
    assert [p.name for p in paths] == ["scene_00.txt", "scene_01.txt", "scene_02.txt"]
    assert paths[1].read_text() == format_scene(scene_suite(3, 1)[1])


# -- analytic oracle -----------------------------------------------------------

def oracle_on(spec, stride=2, band=2):
    r = render(spec)
    return r, oracle_affordances(spec, BANK, stride=stride, band=band)


def decided(oracle, name):
    return ~oracle.margin[name]


def test_oracle_empty_floor_supports_standing():
    spec = SceneSpec((5, 5, 3), (2.5, 0.3, 1.5), 90, 10, SMALL)
    r, o = oracle_on(spec)
    P = r.points
    away = (r.category == "floor") & (P[..., 0] > 0.3) & (P[..., 0] < 4.7) & (P[..., 1] < 4.7)
    lab = o.maps["standing"].labels
    assert not np.any(lab[away] == Label.NOT)
    far = away & (P[..., 1] > 4.0) & decided(o, "standing")
    assert far.sum() > 20 and np.mean(lab[far] == Label.SUPPORTS) > 0.9


def test_oracle_table_edge_sitting_and_no_lying():
    table = SceneBox("table", (2.0, 2.5, 0.0), (3.0, 3.3, 0.5))
    spec = SceneSpec((5, 5, 3), (2.5, 0.3, 1.5), 90, 15, SMALL, (table,))
    # the seat band is about one voxel wide, narrower than the default abstention margin
    r, o = oracle_on(spec, stride=1, band=0)
    top = (r.category == "table") & (r.normals[..., 2] > 0.5)
    P = r.points
    edge_dist = np.minimum.reduce([P[..., 0] - 2.0, 3.0 - P[..., 0], P[..., 1] - 2.5, 3.3 - P[..., 1]])
    sit = o.maps["sitting_upright"].labels
    assert np.any(sit[top] == Label.SUPPORTS)
    assert np.all(edge_dist[top & (sit == Label.SUPPORTS)] < 0.3)
    lying = o.maps["lying"].labels
    assert not np.any(lying[top] == Label.SUPPORTS)
    assert np.any(lying[top] == Label.NOT)


def test_oracle_low_clearance_shelf_refuses_standing():
    lower = SceneBox("shelf", (1.0, 3.0, 0.0), (4.0, 4.2, 0.4))
    upper = SceneBox("shelf", (1.0, 3.8, 0.7), (4.0, 4.2, 1.0))   # 0.3 m above the lower top
    supported = {}
    for boxes in ((lower,), (lower, upper)):
        spec = SceneSpec((5, 5.5, 3), (2.5, 0.3, 1.7), 90, 12, SMALL, boxes)
        r, o = oracle_on(spec)
        P = r.points
        top = (r.category == "shelf") & (r.normals[..., 2] > 0.5) & (np.abs(P[..., 2] - 0.4) < 1e-6)
        ok = top & (o.maps["standing"].labels == Label.SUPPORTS)
        supported[len(boxes)] = P[ok][:, 1]
    # open shelf: standing confirmed right up to the back; under the plank it never is
    near_plank = 3.8 - 0.25
    assert np.any(supported[1] > near_plank)
    assert len(supported[2]) > 0 and not np.any(supported[2] > near_plank)


def test_agreement_counts_skip_margin():
    spec = SceneSpec((5, 5, 3), (2.5, 0.3, 1.5), 90, 10, SMALL)
    _, o = oracle_on(spec, stride=4)
    amap = o.maps["standing"]
    n, k = agreement_counts(amap, o)
    assert n == k == int((~o.margin["standing"]).sum())
    assert o.margin["standing"][1::4].all()
