import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from typing import Annotated, Callable, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import brentq

from simulation.manifold import (
    CHART,
    EUCLIDEAN,
    SPHERE,
    complete_frame,
    ct_kappa,
    distance,
    exp_map,
    gram_matrix,
    log_map,
    make_model,
    norm,
    tangent_basis_at,
)
from simulation.sampling import cube_dim, halton_points, unit_vectors_from_cube
from utils.errors import (
    DomainTooLarge,
    NotOnBoundary,
    ObstacleNotConvex,
    ObstacleOutsideDomain,
    ObstaclesOverlap,
    UnsupportedModel,
)
from utils.logger import setup_logger

logger = setup_logger("simulation.scene")

BOUNDARY_TOL = 1e-9
KAPPA_SAMPLES = 4096
KAPPA_MARGIN = 0.01
PROJECTION_STARTS = 64
PROJECTION_TOL = 1e-10
CONDITION_A = "A"
CONDITION_B = "B"
CONDITION_NEITHER = "Neither"

# ---------------------------- SCENE FILE SCHEMA ----------------------------

class ModelSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["euclidean", "sphere", "hyperbolic", "chart"] = "euclidean"
    kappa: float = 0.0
    dim: int = Field(2, ge=2)


class DomainSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    center: Optional[List[float]] = None
    radius: float = Field(gt=0)


class BallSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["ball"] = "ball"
    center: List[float]
    radius: float = Field(gt=0)


class EllipsoidSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["ellipsoid"] = "ellipsoid"
    center: List[float]
    axes: List[float]

    @model_validator(mode="after")
    def positive_axes(self):
        if any(a <= 0 for a in self.axes):
            raise ValueError("ellipsoid axes must be positive")
        return self


ObstacleSpec = Annotated[Union[BallSpec, EllipsoidSpec], Field(discriminator="kind")]


class DeclaredSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    xi: int = Field(3, ge=1)
    phi0: float = Field(math.pi / 3, gt=0, lt=math.pi / 2)
    theta0: float = Field(0.5, gt=0)


class SceneFile(BaseModel):
    """The versioned scene description ("scene-v1")."""
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    schema_version: Literal["scene-v1"] = Field("scene-v1", alias="schema")
    model: ModelSpec = ModelSpec()
    domain: DomainSpec
    obstacles: List[ObstacleSpec] = []
    declared: DeclaredSpec = DeclaredSpec()

    @model_validator(mode="after")
    def matching_dimensions(self):
        dim = self.model.dim
        if self.domain.center is not None and len(self.domain.center) != dim:
            raise ValueError(f"domain.center must have {dim} coordinates")
        for i, obstacle in enumerate(self.obstacles):
            if len(obstacle.center) != dim:
                raise ValueError(f"obstacles[{i}].center must have {dim} coordinates")
            if isinstance(obstacle, EllipsoidSpec) and len(obstacle.axes) != dim:
                raise ValueError(f"obstacles[{i}].axes must have {dim} entries")
        return self


# ---------------------------- OBSTACLES ----------------------------

@dataclass(frozen=True)
class BallObstacle:
    """Geodesic ball; center is a model point (ambient coordinates)."""
    id: int
    center: np.ndarray
    radius: float
    kind: str = "ball"

    def value(self, model, points):
        return distance(model, self.center, points) - self.radius

    def boundary_distance(self, model, x):
        return float(self.value(model, x))

    def outward_normal(self, model, x):
        return -log_map(model, x, self.center) / distance(model, x, self.center)

    def principal_curvature(self, model):
        return float(ct_kappa(model.kappa, self.radius))

    def closest_point(self, model, y):
        step = log_map(model, self.center, y)
        length = norm(model, step)
        if length == 0:
            raise NotOnBoundary("closest point undefined at the obstacle center")
        return exp_map(model, self.center, self.radius * step / length)

    def boundary_points(self, model, directions):
        """Boundary points for unit directions given in the tangent basis at the center."""
        basis = tangent_basis_at(model, self.center)
        return np.array([exp_map(model, self.center, self.radius * (u @ basis)) for u in directions])

    def interior_point(self, model):
        return self.center


@dataclass(frozen=True)
class LevelSetObstacle:
    """
    Obstacle {f < 0} with analytic derivatives (Euclidean models only).

    f accepts points with leading axes; gradient and hessian act on one point.
    """
    id: int
    f: Callable
    gradient: Callable
    hessian: Callable
    inside: np.ndarray
    kind: str = "levelset"

    def value(self, model, points):
        return self.f(np.asarray(points, dtype=float))

    def boundary_distance(self, model, x):
        """First-order signed distance f / |grad f| to the boundary."""
        x = np.asarray(x, dtype=float)
        return float(self.f(x)) / float(np.linalg.norm(self.gradient(x)))

    def outward_normal(self, model, x):
        g = self.gradient(x)
        return g / np.linalg.norm(g)

    def project_to_surface(self, p):
        for _ in range(60):
            fp = self.f(p)
            if abs(fp) < 1e-15:
                break
            g = self.gradient(p)
            p = p - fp * g / (g @ g)
        return p

    def ray_boundary_point(self, u):
        """Boundary point on the ray from the interior point along u."""
        reach = 1.0
        while self.f(self.inside + reach * u) <= 0:
            reach *= 2.0
        s = brentq(lambda s: self.f(self.inside + s * u), 0.0, reach, xtol=1e-15)
        return self.project_to_surface(self.inside + s * u)

    def closest_point(self, model, y):
        """
        Nearest boundary point by damped tangential steps with Newton
        re-projection onto {f = 0}.
        """
        y = np.asarray(y, dtype=float)
        gap = y - self.inside
        p = self.ray_boundary_point(gap / np.linalg.norm(gap))
        for _ in range(500):
            n = self.outward_normal(model, p)
            offset = y - p
            tangential = offset - (offset @ n) * n
            k_max = max(np.max(np.linalg.eigvalsh(self.hessian(p))) / np.linalg.norm(self.gradient(p)), 0.0)
            moved = self.project_to_surface(p + tangential / (1.0 + k_max * np.linalg.norm(offset)))
            if np.linalg.norm(moved - p) < 1e-13:
                return moved
            p = moved
        return p

    def boundary_points(self, model, directions):
        return np.array([self.ray_boundary_point(u) for u in directions])

    def interior_point(self, model):
        return self.inside


def ball_obstacle(model, obstacle_id, center_coords, radius):
    return BallObstacle(obstacle_id, model.point(center_coords), float(radius))


def ellipsoid_obstacle(obstacle_id, center, axes):
    """Level set sum(((x - c) / a)^2) - 1 with analytic gradient and Hessian."""
    c = np.asarray(center, dtype=float)
    a2 = np.asarray(axes, dtype=float) ** 2

    def f(x):
        return np.sum((x - c) ** 2 / a2, axis=-1) - 1.0

    def gradient(x):
        return 2.0 * (x - c) / a2

    def hessian(x):
        return np.diag(2.0 / a2)

    return LevelSetObstacle(obstacle_id, f, gradient, hessian, c.copy())


# ---------------------------- SCENE ----------------------------

@dataclass(frozen=True)
class DeclaredConstants:
    xi: int = 3
    phi0: float = math.pi / 3
    theta0: float = 0.5


@dataclass(frozen=True)
class SceneReport:
    d_min: float
    D: float
    kappa_min: float
    sec_max: float
    Theta: float
    condition: str
    kappa_min_certified: bool = True
    closest_pair: Optional[tuple] = None

    def to_dict(self):
        return {
            "d_min": self.d_min,
            "D": self.D,
            "kappa_min": self.kappa_min,
            "kappa_min_certified": self.kappa_min_certified,
            "sec_max": self.sec_max,
            "Theta": self.Theta,
            "condition": self.condition,
        }


@dataclass(eq=False)
class Scene:
    model: object
    domain_center: np.ndarray
    domain_radius: float
    obstacles: tuple
    declared: DeclaredConstants = DeclaredConstants()
    description: dict = field(default_factory=dict)
    report: Optional[SceneReport] = None

    @property
    def D(self):
        return 2.0 * self.domain_radius

    @property
    def hash(self):
        canonical = json.dumps(self.description, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def obstacle(self, obstacle_id):
        return self.obstacles[obstacle_id]

    def ensure_report(self):
        if self.report is None:
            validate_scene(self)
        return self.report


def build_scene(description, validate=True):
    """
    Builds a Scene from a scene-v1 description (dict or SceneFile).
    The description is normalised through the schema so the hash is canonical.
    """
    spec = description if isinstance(description, SceneFile) else SceneFile.model_validate(description)
    if spec.model.kind == CHART:
        raise UnsupportedModel("scenes need a space-form model (euclidean, sphere or hyperbolic)")

    model = make_model(spec.model.kind, spec.model.kappa, spec.model.dim)
    center_coords = spec.domain.center or [0.0] * model.dim
    obstacles = []
    for i, obstacle in enumerate(spec.obstacles):
        if isinstance(obstacle, BallSpec):
            obstacles.append(ball_obstacle(model, i, obstacle.center, obstacle.radius))
        else:
            if model.kind != EUCLIDEAN:
                raise UnsupportedModel("level-set obstacles need the euclidean model")
            obstacles.append(ellipsoid_obstacle(i, obstacle.center, obstacle.axes))

    scene = Scene(
        model=model,
        domain_center=model.point(center_coords),
        domain_radius=spec.domain.radius,
        obstacles=tuple(obstacles),
        declared=DeclaredConstants(**spec.declared.model_dump()),
        description=spec.model_dump(mode="json", by_alias=True),
    )
    if validate:
        validate_scene(scene)
    return scene


def make_scene(domain_radius, balls=(), kind=EUCLIDEAN, kappa=0.0, dim=2,
               ellipsoids=(), declared=None, domain_center=None, validate=True):
    """Shorthand used by code and tests: balls as (center, radius), ellipsoids as (center, axes)."""
    obstacles = [{"kind": "ball", "center": list(map(float, c)), "radius": float(r)} for c, r in balls]
    obstacles += [{"kind": "ellipsoid", "center": list(map(float, c)), "axes": list(map(float, a))}
                  for c, a in ellipsoids]
    description = {
        "schema": "scene-v1",
        "model": {"kind": kind, "kappa": float(kappa), "dim": int(dim)},
        "domain": {"center": domain_center, "radius": float(domain_radius)},
        "obstacles": obstacles,
        "declared": declared or {},
    }
    return build_scene(description, validate=validate)


# ---------------------------- GEOMETRY QUERIES ----------------------------

def boundary_value(scene, obstacle, points):
    return obstacle.value(scene.model, points)


def domain_value(scene, points):
    """Signed distance to the domain sphere (negative inside S)."""
    return distance(scene.model, scene.domain_center, points) - scene.domain_radius


def in_free_region(scene, x, tol=BOUNDARY_TOL):
    if domain_value(scene, x) > tol:
        return False
    return all(o.value(scene.model, x) >= -tol for o in scene.obstacles)


def domain_geometry(scene, x):
    """Inward unit normal N_S at a point of the domain boundary."""
    model = scene.model
    step = log_map(model, x, scene.domain_center)
    return step / norm(model, step)


def obstacle_geometry(obstacle, x, frame=None, model=None):
    """
    Outward unit normal and shape operator of the obstacle boundary at x.

    Returns (N_K, s_K, frame) with s_K symmetric in the given (or a completed)
    orthonormal frame of the boundary tangent space.
    """
    model = model or make_model(EUCLIDEAN, 0.0, np.asarray(x).size)
    x = np.asarray(x, dtype=float)
    residual = abs(float(obstacle.value(model, x)))
    if residual > BOUNDARY_TOL:
        raise NotOnBoundary(f"obstacle {obstacle.id}: boundary residual {residual:.3e}")

    N = obstacle.outward_normal(model, x)
    if frame is None:
        frame = complete_frame(model, x, N)
    frame = np.atleast_2d(np.asarray(frame, dtype=float))

    if isinstance(obstacle, BallObstacle):
        s_K = obstacle.principal_curvature(model) * gram_matrix(model, frame, x)
    else:
        g = np.linalg.norm(obstacle.gradient(x))
        s_K = frame @ obstacle.hessian(x) @ frame.T / g
    return N, 0.5 * (s_K + s_K.T), frame


def sample_boundary(scene, obstacle, n, seed=0):
    """Quasi-random boundary points of one obstacle."""
    dim = scene.model.dim
    h = halton_points(n, cube_dim(dim), seed=seed)
    return obstacle.boundary_points(scene.model, unit_vectors_from_cube(h, dim))


# ---------------------------- VALIDATION ----------------------------

def _pair_distance(scene, a, b):
    """
    Distance between two disjoint obstacles.

    Closed form for two balls, alternating projection otherwise.
    """
    model = scene.model
    if isinstance(a, BallObstacle) and isinstance(b, BallObstacle):
        return float(distance(model, a.center, b.center) - a.radius - b.radius)

    starts = sample_boundary(scene, a, PROJECTION_STARTS, seed=a.id)
    if np.any(b.value(model, starts) <= 0):
        return -1.0
    if np.any(a.value(model, sample_boundary(scene, b, PROJECTION_STARTS, seed=b.id)) <= 0):
        return -1.0

    best = np.inf
    for p in starts:
        q = b.closest_point(model, p)
        for _ in range(2000):
            p_new = a.closest_point(model, q)
            q_new = b.closest_point(model, p_new)
            step = max(np.linalg.norm(p_new - p), np.linalg.norm(q_new - q))
            p, q = p_new, q_new
            if step < PROJECTION_TOL:
                break
        best = min(best, float(distance(model, p, q)))
    return best


def _obstacle_kappa(scene, obstacle):
    """
    Smallest principal curvature of one obstacle and whether it is exact.
    Level sets are sampled and the minimum is reduced by the safety margin.
    """
    model = scene.model
    if isinstance(obstacle, BallObstacle):
        if model.kind == SPHERE and obstacle.radius >= math.pi / (2 * math.sqrt(model.kappa)):
            raise ObstacleNotConvex(obstacle.id, model.coords(obstacle.center).tolist(),
                                    "geodesic ball beyond the convexity radius")
        return obstacle.principal_curvature(model), True

    lowest = np.inf
    for p in sample_boundary(scene, obstacle, KAPPA_SAMPLES, seed=obstacle.id):
        _, s_K, _ = obstacle_geometry(obstacle, p, model=model)
        k = float(np.linalg.eigvalsh(s_K)[0])
        if k <= 0:
            raise ObstacleNotConvex(obstacle.id, np.round(p, 9).tolist())
        lowest = min(lowest, k)
    return lowest * (1.0 - KAPPA_MARGIN), False


def _check_inside_domain(scene, obstacle):
    model = scene.model
    if isinstance(obstacle, BallObstacle):
        reach = distance(model, scene.domain_center, obstacle.center) + obstacle.radius
    else:
        points = sample_boundary(scene, obstacle, KAPPA_SAMPLES, seed=obstacle.id)
        reach = float(np.max(distance(model, scene.domain_center, points)))
    if reach >= scene.domain_radius:
        raise ObstacleOutsideDomain(obstacle.id)


def validate_scene(scene):
    """
    Checks the standing assumptions and derives the scene constants.

    Process:
    1. Domain radius within the unique-geodesic bound (sphere model)
    2. Every obstacle strictly convex and strictly inside S
    3. Pairwise separation (d_min); +inf for a single obstacle
    4. kappa_min, sec_max, Theta and the curvature condition for the declared constants
    """
    start_time = time.time()
    model = scene.model
    if model.kind == CHART:
        raise UnsupportedModel("scenes need a space-form model")
    if model.kind == SPHERE and scene.domain_radius >= math.pi / (2 * math.sqrt(model.kappa)):
        raise DomainTooLarge(f"radius {scene.domain_radius} >= pi/(2 sqrt(kappa))")

    kappas = []
    certified = True
    for obstacle in scene.obstacles:
        k, exact = _obstacle_kappa(scene, obstacle)
        kappas.append(k)
        certified = certified and exact
        _check_inside_domain(scene, obstacle)

    d_min = np.inf
    closest = None
    for i, a in enumerate(scene.obstacles):
        for b in scene.obstacles[i + 1:]:
            gap = _pair_distance(scene, a, b)
            if gap <= 0:
                raise ObstaclesOverlap(a.id, b.id)
            if gap < d_min:
                d_min, closest = gap, (a.id, b.id)

    kappa_min = min(kappas) if kappas else np.inf
    declared = scene.declared
    sec_max = float(model.kappa)
    Theta = min(2.0 * kappa_min * math.cos(declared.phi0), declared.theta0)
    partial = SceneReport(d_min, scene.D, kappa_min, sec_max, Theta, CONDITION_NEITHER, certified, closest)
    condition = check_conditions(partial, declared.xi, declared.phi0, declared.theta0)

    report = SceneReport(d_min, scene.D, kappa_min, sec_max, Theta, condition, certified, closest)
    scene.report = report
    duration = time.time() - start_time
    logger.debug(f"Validated scene {scene.hash[:12]} ({len(scene.obstacles)} obstacles) in {duration:.2f}s")
    return report


# ---------------------------- CURVATURE CONDITIONS ----------------------------

def condition_terms(report, xi, phi0, theta0):
    """The two left-hand sides of condition B and the threshold Theta."""
    root = math.sqrt(max(report.sec_max, 0.0))
    return {
        "D_xi_sqrt_sec": report.D * xi * root,
        "tan_term": math.tan(report.sec_max * report.D * xi) * root,
        "Theta": min(2.0 * report.kappa_min * math.cos(phi0), theta0),
    }


def check_conditions(report, xi, phi0, theta0):
    """
    A if sec_max <= 0; B if D xi sqrt(sec_max) < pi/2 and
    tan(sec_max D xi) sqrt(sec_max) < Theta; Neither otherwise.
    """
    if report.sec_max <= 0:
        return CONDITION_A
    terms = condition_terms(report, xi, phi0, theta0)
    if terms["D_xi_sqrt_sec"] < math.pi / 2 and terms["tan_term"] < terms["Theta"]:
        return CONDITION_B
    return CONDITION_NEITHER
