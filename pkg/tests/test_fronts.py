import math
import os

import numpy as np
import pytest

from simulation.billiard import Sample, billiard_flow, launch_state, travelling_time
from simulation.fronts import (
    TangencyFront,
    count_normal_collisions,
    fan_shape_operator,
    flow_front,
    focal_time,
    front_from_tangency,
    germ_from_curvatures,
    germ_from_point_source,
    min_principal_curvature,
    propagate_front,
    reflect_front,
)
from simulation.manifold import PointTangent, complete_frame, geodesic_evolve, make_model, round_sphere_chart
from simulation.sampling import halton_points, hemisphere_from_cube, unit_vectors_from_cube
from simulation.scene import make_scene
from utils.errors import (
    FocalPointCrossed,
    NotIncoming,
    PatchHitsObstacle,
    PatchLeftDomain,
    TangentialReflection,
    UnsupportedObstacle,
)
from utils.io_manager import load_scene


def test_focal_times():
    assert focal_time(0.0, -2.0) == pytest.approx(0.5)
    assert focal_time(0.0, 1.0) == math.inf
    assert focal_time(1.0, 0.0) == pytest.approx(math.pi / 2)
    assert focal_time(-1.0, -0.5) == math.inf
    assert focal_time(-1.0, -2.0) == pytest.approx(math.atanh(0.5))


# ---------------------------- PROPAGATION ----------------------------

def test_euclidean_propagation():
    model = make_model("euclidean", 0.0, 3)
    germ = germ_from_curvatures(model, PointTangent.of([0, 0, 0], [1, 0, 0]), [0.5, 1.5])
    out = propagate_front(model, germ, 1.0)
    assert out.S == pytest.approx(np.diag([1.0 / 3.0, 0.6]), abs=1e-12)
    assert out.base.x == pytest.approx([1.0, 0.0, 0.0])


@pytest.mark.parametrize("kind,kappa", [("euclidean", 0.0), ("sphere", 1.0), ("hyperbolic", -1.0)])
def test_point_source_stays_a_geodesic_sphere(kind, kappa):
    model = make_model(kind, kappa, 3)
    state = PointTangent(model.origin, model.origin_basis()[0])
    germ = germ_from_point_source(model, state, 0.3)
    out = propagate_front(model, germ, 0.5)
    expected = {"euclidean": 1.0 / 0.8, "sphere": 1.0 / math.tan(0.8), "hyperbolic": 1.0 / math.tanh(0.8)}[kind]
    assert out.S == pytest.approx(expected * np.eye(2), abs=1e-10)


def test_converging_front_hits_focal_point():
    model = make_model("euclidean", 0.0, 2)
    germ = germ_from_curvatures(model, PointTangent.of([0, 0], [1, 0]), [-1.0])
    propagate_front(model, germ, 0.9)
    with pytest.raises(FocalPointCrossed) as info:
        propagate_front(model, germ, 2.0)
    assert info.value.t_focal == pytest.approx(1.0)


@pytest.mark.parametrize("kind,kappa", [("euclidean", 0.0), ("sphere", 0.5), ("hyperbolic", -1.0)])
def test_propagation_matches_ray_fan(kind, kappa):
    model = make_model(kind, kappa, 3)
    state = PointTangent(model.origin, model.origin_basis()[0])
    germ = germ_from_curvatures(model, state, [[0.5, 0.1], [0.1, 1.5]])
    out = propagate_front(model, germ, 1.0)
    fan = fan_shape_operator(model, germ, 1.0, frame_out=out.frame)
    assert fan == pytest.approx(out.S, abs=1e-5)


def test_chart_propagation_matches_closed_form():
    model = round_sphere_chart(radius=1.0)
    # the stereographic metric is 4 * identity at the chart origin
    germ = germ_from_curvatures(model, PointTangent.of([0.0, 0.0], [0.5, 0.0]), [0.2], frame=[[0.0, 0.5]])
    t = 0.7
    out = propagate_front(model, germ, t)
    c, s = math.cos(t), math.sin(t)
    expected = (0.2 * c - s) / (c + 0.2 * s)
    assert out.S[0, 0] == pytest.approx(expected, abs=1e-6)


# ---------------------------- REFLECTION ----------------------------

def test_flat_front_at_normal_incidence():
    model = make_model("euclidean", 0.0, 2)
    germ = germ_from_curvatures(model, PointTangent.of([-2.0, 0.0], [1.0, 0.0]), [0.0])
    out = reflect_front(germ, [-1.0, 0.0], [[0.5]], model=model)
    assert out.S[0, 0] == pytest.approx(1.0)
    assert out.base.v == pytest.approx([-1.0, 0.0])


def test_oblique_mirror_equation():
    model = make_model("euclidean", 0.0, 2)
    germ = germ_from_curvatures(model, PointTangent.of([-1.0, 0.0], [0.5, math.sqrt(3) / 2]), [1.0])
    out = reflect_front(germ, [-1.0, 0.0], [[1.0]], model=model)
    # k+ = k- + 2 kappa / cos(phi) with cos(phi) = 1/2
    assert out.S[0, 0] == pytest.approx(5.0)


@pytest.mark.parametrize("degrees", [0.0, 20.0, 45.0, 70.0, 80.0])
def test_mirror_equation_up_to_grazing_angles(degrees):
    model = make_model("euclidean", 0.0, 2)
    phi = math.radians(degrees)
    germ = germ_from_curvatures(model, PointTangent.of([-1.0, 0.0], [math.cos(phi), math.sin(phi)]), [0.3])
    out = reflect_front(germ, [-1.0, 0.0], [[0.7]], model=model)
    assert out.S[0, 0] == pytest.approx(0.3 + 1.4 / math.cos(phi), rel=1e-6)


def test_tangential_and_outgoing_reflections_rejected():
    model = make_model("euclidean", 0.0, 2)
    grazing = germ_from_curvatures(model, PointTangent.of([-1.0, 0.0], [0.0, 1.0]), [1.0])
    with pytest.raises(TangentialReflection):
        reflect_front(grazing, [-1.0, 0.0], [[1.0]], model=model)
    outgoing = germ_from_curvatures(model, PointTangent.of([-1.0, 0.0], [-1.0, 0.0]), [1.0])
    with pytest.raises(NotIncoming):
        reflect_front(outgoing, [-1.0, 0.0], [[1.0]], model=model)


def test_reflection_keeps_convex_fronts_convex(ball_3d):
    model = ball_3d.model
    germ = germ_from_curvatures(model, PointTangent.of([-4.0, 0.3, 0.2], [1.0, 0.0, 0.0]), [0.0, 0.0])
    out, log = flow_front(ball_3d, germ, 5.0)
    assert [step.kind for step in log] == ["start", "propagate", "reflect", "propagate"]
    assert min_principal_curvature(out) > 0


def count_convex_reflections(scene, n_rays, seed):
    """Flows a convex germ along traced launches; every step must stay convex."""
    model = scene.model
    h = halton_points(n_rays, 2, seed=seed)
    reflected = 0
    for foot, direction in zip(unit_vectors_from_cube(h[:, :1], 2), hemisphere_from_cube(h[:, 1:], 2)):
        sigma = launch_state(scene, foot, direction)
        sample = travelling_time(scene, sigma)
        if not isinstance(sample, Sample):
            continue
        germ = germ_from_curvatures(model, sigma, [0.1])
        try:
            _, log = flow_front(scene, germ, sample.t)
        except TangentialReflection:
            continue
        assert all(np.min(step.eigenvalues) > 0 for step in log)
        reflected += any(step.kind == "reflect" for step in log)
    return reflected


def test_fronts_stay_convex_along_traced_rays(two_disks):
    assert count_convex_reflections(two_disks, 120, 5) > 10


def test_fronts_stay_convex_under_condition_b(scenes_dir):
    scene = load_scene(os.path.join(scenes_dir, "sphere_b.json"))
    assert count_convex_reflections(scene, 120, 6) > 10


def incidences_match_ray_fan(kind, kappa, R, r, n, seed):
    """
    Random convex germs meeting a ball at cos(phi) >= 0.2; the reflected and
    propagated shape operator must match the ray fan.
    """
    scene = make_scene(R, balls=[((0.0, 0.0, 0.0), r)], kind=kind, kappa=kappa, dim=3)
    model = scene.model
    obstacle = scene.obstacle(0)
    back, after = 0.5 * r, 0.3 * r
    rng = np.random.default_rng(seed)
    for _ in range(n):
        u = rng.normal(size=3)
        x = obstacle.boundary_points(model, [u / np.linalg.norm(u)])[0]
        N = obstacle.outward_normal(model, x)
        f0, f1 = complete_frame(model, x, N)
        cos_phi = rng.uniform(0.2, 1.0)
        psi = rng.uniform(0.0, 2.0 * math.pi)
        v = -cos_phi * N + math.sqrt(1.0 - cos_phi ** 2) * (math.cos(psi) * f0 + math.sin(psi) * f1)
        behind = geodesic_evolve(model, PointTangent(x, -v), back)
        A = rng.uniform(-0.3, 0.3, size=(2, 2))
        S = A @ A.T + np.diag(rng.uniform(0.1, 1.0, size=2))
        germ = germ_from_curvatures(model, PointTangent(behind.x, -behind.v), S)

        out, log = flow_front(scene, germ, back + after)
        assert [step.kind for step in log].count("reflect") == 1
        fan = fan_shape_operator(scene, germ, back + after, frame_out=out.frame)
        assert np.allclose(fan, out.S, rtol=1e-3, atol=1e-3)


SPACE_FORMS = [("euclidean", 0.0, 5.0, 1.0), ("sphere", 1.0, 1.2, 0.3), ("hyperbolic", -1.0, 3.0, 1.0)]


@pytest.mark.parametrize("kind,kappa,R,r", SPACE_FORMS)
def test_random_incidences_match_ray_fan(kind, kappa, R, r):
    incidences_match_ray_fan(kind, kappa, R, r, n=20, seed=1)


@pytest.mark.slow
@pytest.mark.parametrize("kind,kappa,R,r", SPACE_FORMS)
def test_many_incidences_match_ray_fan(kind, kappa, R, r):
    incidences_match_ray_fan(kind, kappa, R, r, n=1000, seed=2)


def test_flow_front_matches_ray_fan(one_disk):
    model = one_disk.model
    germ = germ_from_curvatures(model, PointTangent.of([-4.0, 0.5], [1.0, 0.0]), [0.5])
    out, log = flow_front(one_disk, germ, 5.0)
    assert log[2].kind == "reflect"
    assert log[2].obstacle_id == 0
    fan = fan_shape_operator(one_disk, germ, 5.0, frame_out=out.frame)
    assert fan == pytest.approx(out.S, abs=1e-3)


def test_flow_front_on_sphere_matches_ray_fan(sphere_pair):
    model = sphere_pair.model
    x = model.point([-0.8, 0.05])
    v = model.point([-0.7, 0.05]) - x
    germ = germ_from_curvatures(model, PointTangent(x, v), [1.0])
    out, log = flow_front(sphere_pair, germ, 0.5)
    assert any(step.kind == "reflect" for step in log)
    fan = fan_shape_operator(sphere_pair, germ, 0.5, frame_out=out.frame)
    assert fan == pytest.approx(out.S, abs=1e-3)


# ---------------------------- FRONT FROM TANGENCY ----------------------------

def test_front_from_tangency_on_disk(one_disk):
    front = front_from_tangency(one_disk, 0, [0.0, 1.0], [1.0, 0.0])
    assert front.eps == pytest.approx(0.1)
    assert front.patch_radius == pytest.approx(0.025)
    assert front.min_curvature == pytest.approx(10.0, rel=0.02)
    assert front.germ.base.v == pytest.approx([-1.0, 0.0], abs=1e-9)
    assert np.all(one_disk.obstacle(0).value(one_disk.model, front.points) > 0)


def test_front_from_tangency_scales_with_eps(one_disk):
    wide = front_from_tangency(one_disk, 0, [0.0, 1.0], [1.0, 0.0], eps=0.2)
    narrow = front_from_tangency(one_disk, 0, [0.0, 1.0], [1.0, 0.0], eps=0.1)
    assert 1.8 <= narrow.min_curvature / wide.min_curvature <= 2.2


@pytest.mark.slow
@pytest.mark.parametrize("divisor", [10.0, 20.0, 40.0])
def test_tangency_fronts_around_two_disks(two_disks, divisor):
    eps = two_disks.ensure_report().d_min / divisor
    rng = np.random.default_rng(int(divisor))
    for _ in range(100):
        theta = rng.uniform(0.0, 2.0 * math.pi)
        sign = rng.choice([-1.0, 1.0])
        x0 = [-2.0 + math.cos(theta), math.sin(theta)]
        V = [-sign * math.sin(theta), sign * math.cos(theta)]
        front = front_from_tangency(two_disks, 0, x0, V, eps=eps)
        assert front.min_curvature == pytest.approx(1.0 / eps, rel=0.02)
        assert np.all(two_disks.obstacle(0).value(two_disks.model, front.points) > 0)


def test_front_from_tangency_in_3d(ball_3d):
    front = front_from_tangency(ball_3d, 0, [0.0, 0.0, 1.0], [1.0, 0.0, 0.0], eps=0.2)
    assert front.points.shape == (33, 3)
    assert front.min_curvature > 0


def test_front_from_tangency_on_sphere(sphere_pair):
    obstacle = sphere_pair.obstacle(0)
    x0 = obstacle.boundary_points(sphere_pair.model, [np.array([0.0, 1.0])])[0]
    front = front_from_tangency(sphere_pair, 0, x0, [0.0, 1.0, 0.0])
    assert front.min_curvature > 0


def test_patch_leaving_domain(one_disk):
    with pytest.raises(PatchLeftDomain):
        front_from_tangency(one_disk, 0, [0.0, 1.0], [1.0, 0.0], eps=6.0)


def test_patch_hitting_other_obstacle(two_disks):
    with pytest.raises(PatchHitsObstacle):
        front_from_tangency(two_disks, 1, [2.0, 1.0], [1.0, 0.0], eps=4.0)


def test_front_from_tangency_needs_a_ball():
    scene = make_scene(5.0, ellipsoids=[((0.0, 0.0), (1.2, 0.8))])
    with pytest.raises(UnsupportedObstacle):
        front_from_tangency(scene, 0, [0.0, 0.8], [1.0, 0.0])


# ---------------------------- COLLISIONS ----------------------------

def test_rays_leaving_the_domain_meet_nothing(one_disk):
    source = front_from_tangency(one_disk, 0, [0.0, 1.0], [1.0, 0.0])
    target = front_from_tangency(one_disk, 0, [0.0, -1.0], [-1.0, 0.0])
    report = count_normal_collisions(one_disk, source, target)
    assert report.n_rays == 33
    assert report.n_collisions == 0


def test_counter_propagating_patch_is_met(one_disk):
    source = front_from_tangency(one_disk, 0, [0.0, 1.0], [1.0, 0.0])
    moved = [billiard_flow(one_disk, PointTangent(x, n), 2.0) for x, n in zip(source.points, source.normals)]
    target = TangencyFront(
        germ=source.germ,
        points=np.array([s.x for s in moved]),
        normals=np.array([-s.v for s in moved]),
        eps=source.eps,
        patch_radius=source.patch_radius,
    )
    report = count_normal_collisions(one_disk, source, target, t_max=10.0, n_times=200)
    assert report.n_collisions == 33
    assert all(t == pytest.approx(2.0) for _, t, _ in report.hits)
