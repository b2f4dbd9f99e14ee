import math

import numpy as np
import pytest

from simulation.manifold import (
    PointTangent,
    clean_state,
    complete_frame,
    conformal_chart,
    ct_kappa,
    distance,
    exp_map,
    geodesic_evolve,
    geodesic_samples,
    gram_matrix,
    inner,
    log_map,
    make_model,
    MetricModel,
    CHART,
    parallel_transport,
    round_sphere_chart,
    poincare_ball_chart,
    project_tangent,
    sectional_curvature,
)
from utils.errors import ChartDomainExceeded, DegeneratePlane, NonFiniteState, UnsupportedModel

MODELS = [
    make_model("euclidean", 0.0, 2),
    make_model("euclidean", 0.0, 3),
    make_model("sphere", 1.0, 2),
    make_model("sphere", 0.25, 3),
    make_model("hyperbolic", -1.0, 2),
    make_model("hyperbolic", -0.5, 3),
]


def unit_state(model, coords, direction):
    x = model.point(coords)
    basis = complete_frame(model, x, np.zeros((0, model.ambient_dim)))
    v = np.asarray(direction, dtype=float) @ basis
    return clean_state(model, PointTangent(x, v))


def test_euclidean_straight_line():
    model = make_model("euclidean")
    out = geodesic_evolve(model, PointTangent.of([0, 0], [1, 0]), 3.0)
    assert out.x == pytest.approx([3.0, 0.0])
    assert out.v == pytest.approx([1.0, 0.0])


def test_sphere_half_turn_reaches_antipode():
    model = make_model("sphere", 1.0, 2)
    north = model.origin
    east = np.array([0.0, 1.0, 0.0])
    out = geodesic_evolve(model, PointTangent(north, east), math.pi)
    assert out.x == pytest.approx(-north, abs=1e-12)
    assert out.v == pytest.approx(-east, abs=1e-12)


def test_hyperbolic_unit_time_is_unit_distance():
    model = make_model("hyperbolic", -1.0, 2)
    state = PointTangent(model.origin, np.array([0.0, 1.0, 0.0]))
    out = geodesic_evolve(model, state, 1.0)
    assert float(distance(model, state.x, out.x)) == pytest.approx(1.0, abs=1e-12)


def test_zero_time_is_exact_identity():
    model = make_model("sphere", 1.0, 2)
    state = unit_state(model, [0.3, -0.1], [0.6, 0.8])
    out = geodesic_evolve(model, state, 0.0)
    assert np.array_equal(out.x, state.x)
    assert np.array_equal(out.v, state.v)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: f"{m.kind}-{m.dim}")
def test_unit_speed_preserved(model):
    rng = np.random.default_rng(3)
    for _ in range(10):
        state = unit_state(model, rng.uniform(-0.5, 0.5, model.dim), rng.normal(size=model.dim))
        out = geodesic_evolve(model, state, rng.uniform(0.1, 4.0))
        assert abs(float(inner(model, out.v, out.v)) - 1.0) <= 1e-9
        if model.curved:
            assert abs(float(inner(model, out.x, out.v))) <= 1e-9


@pytest.mark.parametrize("model", MODELS, ids=lambda m: f"{m.kind}-{m.dim}")
def test_flow_property(model):
    state = unit_state(model, [0.2] * model.dim, [1.0] + [0.5] * (model.dim - 1))
    joint = geodesic_evolve(model, state, 2.5)
    split = geodesic_evolve(model, geodesic_evolve(model, state, 1.0), 1.5)
    assert split.x == pytest.approx(joint.x, abs=1e-8)
    assert split.v == pytest.approx(joint.v, abs=1e-8)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: f"{m.kind}-{m.dim}")
def test_reversibility(model):
    state = unit_state(model, [-0.3] * model.dim, [0.2] + [1.0] * (model.dim - 1))
    forward = geodesic_evolve(model, state, 3.0)
    back = geodesic_evolve(model, forward.reversed(), 3.0)
    assert back.x == pytest.approx(state.x, abs=1e-8)
    assert back.v == pytest.approx(-state.v, abs=1e-8)


@pytest.mark.parametrize("model", MODELS[2:], ids=lambda m: f"{m.kind}-{m.dim}")
def test_exp_log_inverse(model):
    x = model.point([0.1] * model.dim)
    y = model.point([-0.4] + [0.3] * (model.dim - 1))
    w = log_map(model, x, y)
    assert exp_map(model, x, w) == pytest.approx(y, abs=1e-10)
    assert float(np.sqrt(inner(model, w, w))) == pytest.approx(float(distance(model, x, y)), abs=1e-10)


def test_point_and_coords_round_trip():
    model = make_model("hyperbolic", -0.25, 3)
    coords = np.array([0.5, -1.0, 0.25])
    assert model.coords(model.point(coords)) == pytest.approx(coords, abs=1e-12)


# ---------------------------- PARALLEL TRANSPORT ----------------------------

def test_euclidean_transport_is_identity():
    model = make_model("euclidean", 0.0, 3)
    frame = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    moved = parallel_transport(model, frame, (PointTangent.of([1, 2, 3], [1, 0, 0]), 5.0))
    assert np.array_equal(moved, frame)


def test_sphere_holonomy_of_right_angled_triangle():
    model = make_model("sphere", 1.0, 2)
    e0, e1, e2 = np.eye(3)
    w = e1
    for start, direction in ((e0, e1), (e1, e2), (e2, e0)):
        w = parallel_transport(model, [w], (PointTangent(start, direction), math.pi / 2))[0]
    assert w == pytest.approx(e2, abs=1e-12)
    angle = math.acos(np.clip(w @ e1, -1.0, 1.0))
    assert angle == pytest.approx(math.pi / 2, abs=1e-12)


def test_hyperbolic_transport_keeps_frame_orthonormal():
    model = make_model("hyperbolic", -1.0, 3)
    state = unit_state(model, [0.4, -0.2, 0.1], [0.3, 1.0, -0.5])
    frame = complete_frame(model, state.x, state.v)
    moved = parallel_transport(model, frame, (state, 2.0))
    end = geodesic_evolve(model, state, 2.0)
    assert gram_matrix(model, moved) == pytest.approx(np.eye(2), abs=1e-9)
    assert [float(inner(model, e, end.v)) for e in moved] == pytest.approx([0.0, 0.0], abs=1e-9)


# ---------------------------- CURVATURE ----------------------------

def test_space_form_sectional_curvature():
    assert sectional_curvature(make_model("euclidean"), np.zeros(2), [1, 0], [0, 1]) == 0.0
    sphere = make_model("sphere", 0.25, 2)
    x = sphere.origin
    assert sectional_curvature(sphere, x, [0, 1, 0], [0, 0, 1]) == pytest.approx(0.25)


def test_chart_sectional_curvature_matches_round_sphere():
    model = round_sphere_chart(radius=2.0)
    x = np.array([0.3, -0.2])
    assert sectional_curvature(model, x, [1.0, 0.0], [0.2, 1.0]) == pytest.approx(0.25, abs=1e-6)


def test_chart_sectional_curvature_matches_poincare_ball():
    model = poincare_ball_chart(radius=1.0)
    x = np.array([0.2, 0.1])
    assert sectional_curvature(model, x, [1.0, 0.0], [0.0, 1.0]) == pytest.approx(-1.0, abs=1e-6)


def test_degenerate_plane():
    model = make_model("euclidean", 0.0, 3)
    with pytest.raises(DegeneratePlane):
        sectional_curvature(model, np.zeros(3), [1, 0, 0], [2, 0, 0])


# ---------------------------- CHART INTEGRATION ----------------------------

def test_chart_geodesic_matches_closed_form():
    R = 2.0
    chart_model = round_sphere_chart(radius=R)
    sphere = make_model("sphere", 1.0 / R ** 2, 2)
    # the stereographic metric is 4 * identity at the chart origin
    chart_state = PointTangent.of([0.0, 0.0], [0.5, 0.0])
    for t in (0.5, 2.0, 4.0):
        out = geodesic_evolve(chart_model, chart_state, t)
        exact = geodesic_evolve(sphere, PointTangent(sphere.origin, np.array([0.0, 1.0, 0.0])), t)
        assert chart_model.chart.embedding(out.x) == pytest.approx(exact.x, abs=1e-6)
        assert float(inner(chart_model, out.v, out.v, out.x)) == pytest.approx(1.0, abs=1e-9)


def test_chart_transport_keeps_frame_orthonormal():
    model = poincare_ball_chart(radius=1.0)
    x = np.array([0.1, 0.2])
    g = model.chart.metric(x)
    scale = 1.0 / math.sqrt(g[0, 0])
    state = PointTangent(x, np.array([scale, 0.0]))
    frame = np.array([[0.0, scale]])
    moved = parallel_transport(model, frame, (state, 1.5))
    end = geodesic_evolve(model, state, 1.5)
    assert float(inner(model, moved[0], moved[0], end.x)) == pytest.approx(1.0, abs=1e-9)
    assert float(inner(model, moved[0], end.v, end.x)) == pytest.approx(0.0, abs=1e-8)


def test_chart_domain_exceeded():
    flat = conformal_chart(lambda x: 1.0, lambda x: np.zeros_like(x), bound=1.0, name="unit disk")
    model = MetricModel(CHART, 0.0, 2, flat)
    with pytest.raises(ChartDomainExceeded):
        geodesic_evolve(model, PointTangent.of([0.0, 0.0], [1.0, 0.0]), 2.0)


def test_non_finite_state_rejected():
    model = make_model("sphere", 1.0, 2)
    with pytest.raises(NonFiniteState):
        clean_state(model, PointTangent.of([np.nan, 0, 0], [0, 1, 0]))


@pytest.mark.parametrize("kind,kappa", [("sphere", -1.0), ("hyperbolic", 1.0), ("torus", 0.0)])
def test_invalid_models(kind, kappa):
    with pytest.raises(UnsupportedModel):
        make_model(kind, kappa, 2)


def test_geodesic_sphere_curvature_limits():
    assert float(ct_kappa(0.0, 2.0)) == pytest.approx(0.5)
    assert float(ct_kappa(1.0, 0.2)) == pytest.approx(1.0 / math.tan(0.2))
    assert float(ct_kappa(-1.0, 0.2)) == pytest.approx(1.0 / math.tanh(0.2))


@pytest.mark.parametrize("kind,kappa", [("euclidean", 0.0), ("sphere", 1.0), ("hyperbolic", -0.5)])
def test_geodesic_samples_match_evolve(kind, kappa):
    model = make_model(kind, kappa, 2)
    state = PointTangent(model.origin, model.origin_basis()[0])
    ts = [0.0, 0.5, 1.3]
    samples = geodesic_samples(model, state, ts)
    for t, row in zip(ts, samples):
        assert row == pytest.approx(geodesic_evolve(model, state, t).x, abs=1e-12)


def test_project_tangent_on_sphere():
    model = make_model("sphere", 1.0, 2)
    assert project_tangent(model, model.origin, [0.3, 1.0, 2.0]) == pytest.approx([0.0, 1.0, 2.0])
