import math
import os

import numpy as np
import pytest

from simulation.manifold import ct_kappa, inner
from simulation.scene import (
    CONDITION_A,
    CONDITION_B,
    CONDITION_NEITHER,
    SceneReport,
    boundary_value,
    check_conditions,
    condition_terms,
    domain_geometry,
    in_free_region,
    make_scene,
    obstacle_geometry,
    sample_boundary,
    validate_scene,
)
from utils.errors import (
    DomainTooLarge,
    ObstacleNotConvex,
    ObstacleOutsideDomain,
    ObstaclesOverlap,
    SceneSchemaError,
    UnsupportedModel,
)
from utils.io_manager import load_scene, parse_scene_text


def test_two_disks_report(two_disks):
    report = two_disks.report
    assert report.d_min == pytest.approx(2.0)
    assert report.D == pytest.approx(10.0)
    assert report.kappa_min == pytest.approx(1.0)
    assert report.sec_max == 0.0
    assert report.Theta == pytest.approx(0.5)
    assert report.condition == CONDITION_A
    assert report.kappa_min_certified
    assert report.closest_pair == (0, 1)


def test_single_obstacle_has_infinite_d_min(one_disk):
    assert math.isinf(one_disk.report.d_min)


def test_empty_scene_validates(empty_scene):
    report = empty_scene.report
    assert math.isinf(report.d_min)
    assert math.isinf(report.kappa_min)
    assert report.condition == CONDITION_A


def test_overlapping_disks_rejected():
    with pytest.raises(ObstaclesOverlap) as info:
        make_scene(5.0, balls=[((-0.9, 0.0), 1.0), ((0.9, 0.0), 1.0)])
    assert info.value.code == "ObstaclesOverlap(0,1)"
    assert info.value.exit_code == 2


def test_obstacle_outside_domain():
    with pytest.raises(ObstacleOutsideDomain) as info:
        make_scene(5.0, balls=[((0.0, 0.0), 1.0), ((4.5, 0.0), 1.0)])
    assert info.value.obstacle_id == 1


def test_domain_too_large_on_sphere():
    with pytest.raises(DomainTooLarge):
        make_scene(1.6, kind="sphere", kappa=1.0)


def test_ball_beyond_convexity_radius():
    with pytest.raises(ObstacleNotConvex):
        make_scene(1.5, balls=[((0.0, 0.0), 1.58)], kind="sphere", kappa=1.0)


def test_chart_model_not_a_scene():
    with pytest.raises(UnsupportedModel):
        make_scene(1.0, kind="chart")


def test_ellipsoid_needs_euclidean_model():
    with pytest.raises(UnsupportedModel):
        make_scene(1.0, kind="sphere", kappa=0.5, ellipsoids=[((0.0, 0.0), (0.2, 0.1))])


def test_hyperbolic_pair_distance():
    scene = make_scene(3.0, balls=[((-1.0, 0.0), 0.3), ((1.0, 0.0), 0.4)], kind="hyperbolic", kappa=-1.0)
    assert scene.report.d_min == pytest.approx(1.3, abs=1e-9)
    assert scene.report.kappa_min == pytest.approx(1.0 / math.tanh(0.4))


def test_sphere_pair_uses_geodesic_sphere_curvature(sphere_pair):
    assert sphere_pair.report.kappa_min == pytest.approx(1.0 / math.tan(0.2))
    assert sphere_pair.report.sec_max == pytest.approx(1.0)


def test_ellipsoid_kappa_is_sampled_with_margin():
    scene = make_scene(5.0, ellipsoids=[((-2.0, 0.5), (1.2, 0.8))], balls=[((2.0, -0.5), 1.0)])
    report = scene.report
    # the flattest point of the ellipse is the end of its minor axis
    assert report.kappa_min == pytest.approx(0.99 * 0.8 / 1.2 ** 2, rel=1e-3)
    assert not report.kappa_min_certified
    assert 0.0 < report.d_min < 2.5


# ---------------------------- CONDITIONS ----------------------------

def test_nearly_flat_sphere_meets_condition_b(scenes_dir):
    scene = load_scene(os.path.join(scenes_dir, "sphere_b.json"))
    report = scene.report
    assert report.condition == CONDITION_B
    terms = condition_terms(report, 3, math.pi / 3, 0.5)
    assert terms["D_xi_sqrt_sec"] == pytest.approx(0.3)
    assert terms["tan_term"] < terms["Theta"]


def test_strongly_curved_sphere_meets_neither(sphere_pair):
    # D xi sqrt(sec) = 2.4 * 3 > pi / 2
    assert sphere_pair.report.condition == CONDITION_NEITHER


def test_conditions_threshold():
    report = SceneReport(d_min=1.0, D=1.0, kappa_min=1.0, sec_max=0.01, Theta=0.5, condition="")
    assert check_conditions(report, 1, math.pi / 3, 0.5) == CONDITION_B
    assert check_conditions(report, 1, math.pi / 3, 1e-4) == CONDITION_NEITHER
    flat = SceneReport(d_min=1.0, D=1.0, kappa_min=1.0, sec_max=-1.0, Theta=0.5, condition="")
    assert check_conditions(flat, 100, math.pi / 3, 0.5) == CONDITION_A


def test_validate_is_repeatable(two_disks):
    first = two_disks.report
    assert validate_scene(two_disks) == first


# ---------------------------- GEOMETRY ----------------------------

def test_ball_geometry_euclidean(one_disk):
    obstacle = one_disk.obstacle(0)
    N, s_K, frame = obstacle_geometry(obstacle, np.array([0.0, 1.0]), model=one_disk.model)
    assert N == pytest.approx([0.0, 1.0])
    assert s_K == pytest.approx(np.array([[1.0]]))
    assert abs(float(frame[0] @ N)) < 1e-12


def test_ball_geometry_hyperbolic():
    scene = make_scene(3.0, balls=[((0.0, 0.0), 0.5)], kind="hyperbolic", kappa=-1.0, dim=3)
    obstacle = scene.obstacle(0)
    x = sample_boundary(scene, obstacle, 1)[0]
    N, s_K, frame = obstacle_geometry(obstacle, x, model=scene.model)
    assert float(inner(scene.model, N, N)) == pytest.approx(1.0)
    assert s_K == pytest.approx(float(ct_kappa(-1.0, 0.5)) * np.eye(2))


def test_ellipse_geometry_at_minor_axis():
    scene = make_scene(5.0, ellipsoids=[((0.0, 0.0), (1.2, 0.8))])
    N, s_K, _ = obstacle_geometry(scene.obstacle(0), np.array([0.0, 0.8]), model=scene.model)
    assert N == pytest.approx([0.0, 1.0])
    assert s_K[0, 0] == pytest.approx(0.8 / 1.44)


def test_boundary_samples_lie_on_boundary(sphere_pair):
    obstacle = sphere_pair.obstacle(1)
    points = sample_boundary(sphere_pair, obstacle, 32, seed=4)
    assert np.max(np.abs(obstacle.value(sphere_pair.model, points))) < 1e-10


def test_free_region_and_domain_normal(one_disk):
    obstacle = one_disk.obstacle(0)
    values = boundary_value(one_disk, obstacle, np.array([[2.0, 0.0], [0.0, 0.5]]))
    assert values == pytest.approx([1.0, -0.5])
    assert in_free_region(one_disk, np.array([3.0, 0.0]))
    assert not in_free_region(one_disk, np.array([0.5, 0.0]))
    assert not in_free_region(one_disk, np.array([6.0, 0.0]))
    assert domain_geometry(one_disk, np.array([-5.0, 0.0])) == pytest.approx([1.0, 0.0])


def test_boundary_distance_is_metric():
    scene = make_scene(5.0, ellipsoids=[((0.0, 0.0), (2.0, 1.0))], balls=[((3.5, 0.0), 1.0)])
    disk, ellipse = scene.obstacle(0), scene.obstacle(1)
    point = np.array([0.0, 1.01])
    assert float(ellipse.value(scene.model, point)) == pytest.approx(0.0201)
    assert ellipse.boundary_distance(scene.model, point) == pytest.approx(0.01, abs=1e-4)
    assert disk.boundary_distance(scene.model, np.array([3.5, 1.25])) == pytest.approx(0.25)


def test_scene_hash_is_canonical():
    a = make_scene(5.0, balls=[((0.0, 0.0), 1.0)])
    b = make_scene(5.0, balls=[((0, 0), 1)])
    c = make_scene(5.0, balls=[((0.0, 0.0), 1.1)])
    assert a.hash == b.hash
    assert a.hash != c.hash


# ---------------------------- SCENE FILES ----------------------------

@pytest.mark.parametrize("name", ["two_disks.json", "one_disk.json", "sphere_small.json", "ellipse_pair.json"])
def test_bundled_scenes_load(scenes_dir, name):
    scene = load_scene(os.path.join(scenes_dir, name))
    assert scene.report is not None
    assert len(scene.obstacles) >= 1


def test_bundled_overlapping_scene(scenes_dir):
    with pytest.raises(ObstaclesOverlap):
        load_scene(os.path.join(scenes_dir, "overlapping.json"))


BAD_RADIUS = """{
  "schema": "scene-v1",
  "domain": {
    "radius": -1.0
  }
}"""

UNKNOWN_FIELD = """{
  "schema": "scene-v1",
  "domain": {"radius": 5.0},
  "obstacles": [
    {"kind": "ball", "center": [0.0, 0.0], "radius": 1.0, "colour": "red"}
  ]
}"""


def test_schema_error_names_line_and_field():
    with pytest.raises(SceneSchemaError) as info:
        parse_scene_text(BAD_RADIUS, source="bad.json")
    message = str(info.value)
    assert "line 4" in message
    assert "domain.radius" in message
    assert info.value.exit_code == 2


def test_schema_error_on_unknown_field():
    with pytest.raises(SceneSchemaError) as info:
        parse_scene_text(UNKNOWN_FIELD)
    assert "colour" in str(info.value)
    assert "line 5" in str(info.value)


def test_schema_error_on_invalid_json():
    with pytest.raises(SceneSchemaError) as info:
        parse_scene_text('{"schema": "scene-v1",\n  "domain": }')
    assert "line 2" in str(info.value)


def test_schema_rejects_wrong_center_length():
    text = '{"domain": {"radius": 5.0}, "obstacles": [{"center": [0.0], "radius": 1.0}]}'
    with pytest.raises(SceneSchemaError):
        parse_scene_text(text)
