import math
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.spatial import cKDTree

from simulation.billiard import (
    TANGENCY_EPS,
    Hit,
    billiard_flow,
    next_event,
    reflect_direction,
)
from simulation.manifold import (
    CHART,
    MetricModel,
    PointTangent,
    christoffel,
    clean_state,
    complete_frame,
    cs_kappa,
    ct_kappa,
    curvature_operator,
    exp_map,
    geodesic_evolve,
    inner,
    log_map,
    norm,
    parallel_transport,
    project_tangent,
    sn_kappa,
    transport_to,
)
from simulation.sampling import halton_points, unit_vectors_from_cube, cube_dim
from simulation.scene import BallObstacle, Scene, domain_value, obstacle_geometry
from utils.errors import (
    ChartDomainExceeded,
    FocalPointCrossed,
    NotIncoming,
    PatchHitsObstacle,
    PatchLeftDomain,
    TangentialReflection,
    UnsupportedModel,
    UnsupportedObstacle,
)
from utils.logger import setup_logger

logger = setup_logger("simulation.fronts")

FOCAL_TOL = 1e-10
POLE_ANGLE = math.pi / 4
PATCH_SAMPLES = 33
FAN_EPS = 1e-4

# ---------------------------- TYPES ----------------------------

@dataclass(frozen=True)
class FrontGerm:
    """
    Wavefront germ: base point with propagation direction, an orthonormal
    frame of the directions orthogonal to it, and the shape operator S in
    that frame. Diverging fronts have positive principal curvatures.
    """
    base: PointTangent
    frame: np.ndarray
    S: np.ndarray

    @property
    def eigenvalues(self):
        return np.linalg.eigvalsh(self.S)


@dataclass(frozen=True)
class FrontStep:
    t: float
    x: np.ndarray
    eigenvalues: np.ndarray
    kind: str
    obstacle_id: Optional[int] = None

    def to_dict(self):
        return {
            "t": self.t,
            "x": self.x.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "kind": self.kind,
            "obstacle_id": self.obstacle_id,
        }


@dataclass
class TangencyFront:
    germ: FrontGerm
    points: np.ndarray
    normals: np.ndarray
    eps: float
    patch_radius: float

    @property
    def min_curvature(self):
        return min_principal_curvature(self.germ)


@dataclass
class CollisionReport:
    n_rays: int
    n_collisions: int
    hits: List[tuple] = field(default_factory=list)


def min_principal_curvature(germ):
    return float(np.linalg.eigvalsh(germ.S)[0])


def _symmetric(S):
    return 0.5 * (S + S.T)


# ---------------------------- CONSTRUCTORS ----------------------------

def germ_from_curvatures(model, state, S, frame=None):
    """Germ at `state` with shape operator S (matrix or principal curvatures)."""
    state = clean_state(model, state)
    if frame is None:
        frame = complete_frame(model, state.x, state.v)
    S = np.asarray(S, dtype=float)
    if S.ndim == 1:
        S = np.diag(S)
    return FrontGerm(state, np.asarray(frame, dtype=float), _symmetric(S))


def germ_from_point_source(model, state, r):
    """Geodesic sphere of radius r around state.x, taken at the point reached by state."""
    state = clean_state(model, state)
    frame = complete_frame(model, state.x, state.v)
    moved = geodesic_evolve(model, state, r)
    frame = parallel_transport(model, frame, (state, r))
    S = float(ct_kappa(model.kappa, r)) * np.eye(model.dim - 1)
    return FrontGerm(moved, frame, S)


# ---------------------------- PROPAGATION ----------------------------

def focal_time(kappa, eigenvalue):
    """First t > 0 where c(t) + s(t) * eigenvalue vanishes, or inf."""
    lam = float(eigenvalue)
    if kappa > 0:
        k = math.sqrt(kappa)
        return (math.pi / 2 + math.atan(lam / k)) / k
    if kappa < 0:
        k = math.sqrt(-kappa)
        if lam < -k:
            return math.atanh(-k / lam) / k
        return math.inf
    if lam < 0:
        return -1.0 / lam
    return math.inf


def propagate_front(model, germ, t):
    """
    Moves the germ a distance t along its normal geodesic.

    Space forms use S(t) = [S0 c - kappa s I][c I + s S0]^-1; chart metrics
    integrate dS/dt = -S^2 - K along the geodesic and the transported frame.
    """
    t = float(t)
    if t < 0:
        raise ValueError("fronts propagate forward only")
    if t == 0.0:
        return germ
    if model.kind == CHART:
        return _propagate_chart(model, germ, t)

    for lam in np.linalg.eigvalsh(germ.S):
        tau = focal_time(model.kappa, lam)
        if 0 < tau <= t:
            raise FocalPointCrossed(tau)

    n = germ.S.shape[0]
    c = float(cs_kappa(model.kappa, t))
    s = float(sn_kappa(model.kappa, t))
    jacobi = c * np.eye(n) + s * germ.S
    if abs(np.linalg.det(jacobi)) < FOCAL_TOL:
        raise FocalPointCrossed(t)
    S_t = np.linalg.solve(jacobi.T, (c * germ.S - model.kappa * s * np.eye(n)).T).T

    base = geodesic_evolve(model, germ.base, t)
    frame = parallel_transport(model, germ.frame, (germ.base, t))
    return FrontGerm(base, frame, _symmetric(S_t))


def _propagate_chart(model, germ, t):
    m = model.dim
    k = m - 1

    def unpack(y):
        x = y[:m]
        v = y[m:2 * m]
        W = y[2 * m:2 * m + k * m].reshape(k, m)
        S = y[2 * m + k * m:].reshape(k, k)
        return x, v, W, S

    def rhs(_, y):
        x, v, W, S = unpack(y)
        gamma = christoffel(model.chart, x)
        K = curvature_operator(model, x, v, W)
        return np.concatenate([
            v,
            -np.einsum("ijk,j,k->i", gamma, v, v),
            -np.einsum("ijk,j,ak->ai", gamma, v, W).ravel(),
            (-S @ S - K).ravel(),
        ])

    def blow_up(_, y):
        return 1e8 - np.max(np.abs(unpack(y)[3]))
    blow_up.terminal = True

    def chart_edge(_, y):
        return model.chart.bound - np.linalg.norm(y[:m])
    chart_edge.terminal = True

    y0 = np.concatenate([germ.base.x, germ.base.v, germ.frame.ravel(), germ.S.ravel()])
    result = solve_ivp(rhs, (0.0, t), y0, method="RK45", rtol=1e-10, atol=1e-10,
                       events=[blow_up, chart_edge])
    if result.t_events[0].size:
        raise FocalPointCrossed(float(result.t_events[0][0]))
    if result.t_events[1].size or not result.success:
        raise ChartDomainExceeded(f"front left the chart: {result.message}")

    x, v, W, S = unpack(result.y[:, -1])
    v = v / norm(model, v, x)
    return FrontGerm(PointTangent(x, v), W, _symmetric(S))


# ---------------------------- REFLECTION ----------------------------

def reflect_front(germ_in, N_K, s_K, frame_K=None, model=None, tangency_eps=TANGENCY_EPS):
    """
    Outgoing germ after reflection at an obstacle with outward normal N_K.

    With A[i, a] = <f_i, e_a> for a frame f of the obstacle boundary and the
    incoming frame e, the reflection law on boundary vectors reads
    A S+ A^T = A S- A^T + 2 cos(phi) s_K, which is solved for S+. The outgoing
    frame is the mirror image of the incoming one.
    """
    x = germ_in.base.x
    v_in = germ_in.base.v
    N_K = np.asarray(N_K, dtype=float)
    if model is None:
        model = MetricModel("euclidean", 0.0, x.size)
    cos_phi = float(-inner(model, v_in, N_K))
    if abs(cos_phi) < tangency_eps:
        raise TangentialReflection(f"cos(phi) = {cos_phi:.3e}")
    if cos_phi < 0:
        raise NotIncoming(f"<N-, N_K> = {-cos_phi:.3e}")

    if frame_K is None:
        frame_K = complete_frame(model, x, N_K)
    frame_K = np.atleast_2d(np.asarray(frame_K, dtype=float))
    s_K = np.asarray(s_K, dtype=float)

    v_out = reflect_direction(v_in, N_K, model)
    frame_out = np.array([e - 2.0 * inner(model, e, N_K) * N_K for e in germ_in.frame])

    A = np.array([[inner(model, f, e) for e in germ_in.frame] for f in frame_K])
    X = np.linalg.solve(A, s_K)
    S_out = germ_in.S + 2.0 * cos_phi * np.linalg.solve(A, X.T)
    return FrontGerm(PointTangent(x.copy(), v_out), frame_out, _symmetric(S_out))


def flow_front(scene, germ, t, tangency_eps=TANGENCY_EPS):
    """
    Carries a germ along its central billiard ray for time t, alternating
    propagation and reflection. Returns (final germ, evolution log).
    """
    model = scene.model
    log = [FrontStep(0.0, germ.base.x, germ.eigenvalues, "start")]
    elapsed = 0.0
    remaining = float(t)
    current = germ

    while remaining > 0:
        event = next_event(scene, current.base)
        if not isinstance(event, Hit) or event.t >= remaining:
            current = propagate_front(model, current, remaining)
            elapsed += remaining
            log.append(FrontStep(elapsed, current.base.x, current.eigenvalues, "propagate"))
            break

        current = propagate_front(model, current, event.t)
        elapsed += event.t
        remaining -= event.t
        log.append(FrontStep(elapsed, current.base.x, current.eigenvalues, "propagate"))

        obstacle = scene.obstacle(event.obstacle_id)
        N_K, s_K, frame_K = obstacle_geometry(obstacle, current.base.x, model=model)
        current = reflect_front(current, N_K, s_K, frame_K, model, tangency_eps)
        log.append(FrontStep(elapsed, current.base.x, current.eigenvalues, "reflect", obstacle.id))

    return current, log


# ---------------------------- RAY-FAN ORACLE ----------------------------

def fan_shape_operator(target, germ, t, eps=FAN_EPS, frame_out=None):
    """
    Finite-difference shape operator after time t from a fan of 2(m-1)
    neighbouring rays around the central ray of the germ.

    target is a Scene (billiard flow) or a MetricModel (geodesic flow).
    The result is expressed in frame_out (default: a completed frame).
    """
    scene = target if isinstance(target, Scene) else None
    model = scene.model if scene is not None else target
    if model.kind == CHART:
        raise UnsupportedModel("the ray fan needs closed-form log maps")

    def flow(state):
        if scene is not None:
            return billiard_flow(scene, state, t)
        return geodesic_evolve(model, state, t)

    x, v = germ.base.x, germ.base.v
    center = flow(germ.base)
    frame = complete_frame(model, center.x, center.v) if frame_out is None else np.asarray(frame_out)

    dx, dn = [], []
    for a, e in enumerate(germ.frame):
        shifted = []
        for sign in (1.0, -1.0):
            tilt = v + sign * eps * (germ.S[:, a] @ germ.frame)
            p = exp_map(model, x, sign * eps * e)
            n = project_tangent(model, p, transport_to(model, x, p, tilt))
            shifted.append(flow(clean_state(model, PointTangent(p, n))))
        plus, minus = shifted
        dx.append(0.5 * (log_map(model, center.x, plus.x) - log_map(model, center.x, minus.x)))
        dn.append(0.5 * (transport_to(model, plus.x, center.x, plus.v)
                         - transport_to(model, minus.x, center.x, minus.v)))

    X = np.array([[inner(model, f, d) for d in dx] for f in frame])
    N = np.array([[inner(model, f, d) for d in dn] for f in frame])
    return _symmetric(np.linalg.solve(X.T, N.T).T)


# ---------------------------- FRONT FROM TANGENCY ----------------------------

def _patch_parameters(dim, patch_radius):
    """33 geodesic-polar sample offsets (along-ray arc a, transverse arcs b)."""
    if dim == 2:
        return [(a, np.zeros(0)) for a in patch_radius * np.linspace(-1.0, 1.0, PATCH_SAMPLES)]
    n_rings, n_dirs = 4, (PATCH_SAMPLES - 1) // 4
    if dim == 3:
        psi = 2.0 * np.pi * np.arange(n_dirs) / n_dirs
        directions = np.column_stack([np.cos(psi), np.sin(psi)])
    else:
        directions = unit_vectors_from_cube(halton_points(n_dirs, cube_dim(dim - 1), scramble=False), dim - 1)
    params = [(0.0, np.zeros(dim - 2))]
    for ring in range(1, n_rings + 1):
        rho = patch_radius * ring / n_rings
        for d in directions:
            params.append((rho * d[0], rho * d[1:]))
    return params


def front_from_tangency(scene, obstacle_id, x0, V, eps=None, patch_radius=None):
    """
    Convex front whose rays, followed against the germ direction, meet the
    obstacle boundary tangentially near x0 in direction V.

    Process:
    1. Unwind a string of length eps + a along surface geodesics of the
       obstacle boundary through a common pole ahead of x0
    2. Sample 33 geodesic-polar points of the resulting front patch
    3. Fit the shape operator at the central point by least squares
       (normal offsets against position offsets, up to cubic terms)
    The germ direction points away from the obstacle, so the fitted
    principal curvatures are positive (1/eps along V for disks).
    """
    start_time = time.time()
    model = scene.model
    obstacle = scene.obstacle(obstacle_id)
    if not isinstance(obstacle, BallObstacle):
        raise UnsupportedObstacle("front_from_tangency needs a geodesic-ball obstacle")

    d_min = scene.ensure_report().d_min
    scale = d_min if np.isfinite(d_min) else scene.domain_radius / 5.0
    eps = scale / 10.0 if eps is None else float(eps)
    patch_radius = eps / 4.0 if patch_radius is None else float(patch_radius)

    x0 = np.asarray(x0, dtype=float)
    N0, _, _ = obstacle_geometry(obstacle, x0, model=model)
    V = project_tangent(model, x0, np.asarray(V, dtype=float))
    V = V - inner(model, V, N0) * N0
    V = V / norm(model, V)

    c, r = obstacle.center, obstacle.radius
    sn_r = float(sn_kappa(model.kappa, r))
    p = log_map(model, c, x0)
    p = p / norm(model, p)
    w0 = transport_to(model, x0, c, V)
    pole = math.cos(POLE_ANGLE) * p + math.sin(POLE_ANGLE) * w0
    pole_tangent = -math.sin(POLE_ANGLE) * p + math.cos(POLE_ANGLE) * w0
    across = complete_frame(model, c, np.array([p, w0])) if model.dim > 2 else np.zeros((0, c.size))

    points, normals = [], []
    for a, b in _patch_parameters(model.dim, patch_radius):
        theta = POLE_ANGLE - a / sn_r
        beta = b / (sn_r * math.sin(POLE_ANGLE))
        tilt = float(np.linalg.norm(beta))
        d = pole_tangent.copy()
        if tilt > 0:
            d = math.cos(tilt) * pole_tangent + math.sin(tilt) * ((beta / tilt) @ across)
        z = math.cos(theta) * pole - math.sin(theta) * d
        forward = math.sin(theta) * pole + math.cos(theta) * d
        u = exp_map(model, c, r * z)
        T_u = transport_to(model, c, u, forward)
        back = geodesic_evolve(model, PointTangent(u, -T_u), eps + a)
        points.append(back.x)
        normals.append(back.v)
    points, normals = np.array(points), np.array(normals)

    if np.any(domain_value(scene, points) >= 0):
        raise PatchLeftDomain(f"front patch leaves S (eps={eps:.4g})")
    center_index = PATCH_SAMPLES // 2 if model.dim == 2 else 0
    y0, n0 = points[center_index], normals[center_index]
    for other in scene.obstacles:
        if np.any(other.value(model, points) < 0):
            raise PatchHitsObstacle(f"front patch intersects obstacle {other.id}")
    if len(scene.obstacles) > 1:
        event = next_event(scene, PointTangent(y0, -n0), horizon=eps)
        if isinstance(event, Hit) and event.obstacle_id != obstacle_id and event.t < eps:
            raise PatchHitsObstacle(f"rays to the tangency cross obstacle {event.obstacle_id}")

    frame = complete_frame(model, y0, n0)
    rows, targets = [], []
    k = model.dim - 1
    for y, n in zip(points, normals):
        xi = np.array([inner(model, e, log_map(model, y0, y)) for e in frame])
        moved = transport_to(model, y, y0, n)
        eta = np.array([inner(model, e, moved) for e in frame])
        quadratic = [xi[i] * xi[j] for i in range(k) for j in range(i, k)]
        cubic = [xi[i] * xi[j] * xi[l] for i in range(k) for j in range(i, k) for l in range(j, k)]
        rows.append(np.concatenate([xi, quadratic, cubic]))
        targets.append(eta)
    coef, *_ = np.linalg.lstsq(np.array(rows), np.array(targets), rcond=None)
    S = _symmetric(coef[:k, :].T)

    germ = FrontGerm(PointTangent(y0, n0), frame, S)
    duration = time.time() - start_time
    logger.debug(f"Front from tangency on obstacle {obstacle_id}: k_min={min_principal_curvature(germ):.4g} in {duration:.2f}s")
    return TangencyFront(germ, points, normals, eps, patch_radius)


# ---------------------------- COLLISION DIAGNOSTIC ----------------------------

def count_normal_collisions(scene, source, target, t_max=None, n_times=200,
                            position_tol=None, angle_tol=1e-3):
    """
    Counts rays of the source patch that run into the target patch along its
    normal. A sampling diagnostic: each ray contributes at most one hit.
    """
    model = scene.model
    t_max = scene.D if t_max is None else float(t_max)
    tree = cKDTree(target.points)
    if position_tol is None:
        spacing, _ = tree.query(target.points, k=2)
        position_tol = 0.5 * float(np.median(spacing[:, 1]))

    dt = t_max / n_times
    report = CollisionReport(n_rays=len(source.points), n_collisions=0)
    for i, (x, n) in enumerate(zip(source.points, source.normals)):
        state = PointTangent(x, n)
        for step in range(1, n_times + 1):
            state = billiard_flow(scene, state, dt)
            gap, j = tree.query(state.x)
            if gap <= position_tol and abs(inner(model, state.v, target.normals[j])) >= 1.0 - angle_tol:
                report.n_collisions += 1
                report.hits.append((i, step * dt, int(j)))
                break
    return report
