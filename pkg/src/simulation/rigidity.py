import math
import time
from dataclasses import dataclass, field
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from simulation.billiard import (
    Sample,
    TraceLimits,
    launch_parameters,
    launch_state,
    outcome_of,
    reversed_launch,
    trace_ray,
)
from simulation.manifold import PointTangent, distance, sn_kappa
from simulation.sampling import (
    cube_dim,
    grid_directions,
    grid_hemisphere,
    halton_points,
    hemisphere_from_cube,
    unit_vectors_from_cube,
)
from simulation.scene import BallObstacle, build_scene, sample_boundary
from utils.errors import (
    BilliardError,
    DidNotConverge,
    IncomparableSpecs,
    InsufficientData,
    ValidationError,
)
from utils.logger import setup_logger
from utils.parallel import map_rays

logger = setup_logger("simulation.rigidity")

OUTCOME_SAMPLE = "sample"
OUTCOME_TRAPPED = "trapped"
OUTCOME_FAILED = "failed"
MATCH_CANDIDATES = 16
NORMAL_TOL = 1e-6

# ---------------------------- SAMPLING SPEC ----------------------------

class Launch(BaseModel):
    model_config = ConfigDict(extra="forbid")

    foot: List[float]
    direction: List[float]


class SamplingSpec(BaseModel):
    """
    How launches over the inward boundary bundle are enumerated.

    grid: n_points feet x n_dirs directions; quasi_random: n_points * n_dirs
    scrambled Halton launches; explicit: the listed launches.
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_points: int = Field(64, ge=1)
    n_dirs: int = Field(16, ge=1)
    scheme: Literal["grid", "quasi_random", "explicit"] = "quasi_random"
    seed: int = 0
    launches: List[Launch] = []


# ---------------------------- TYPES ----------------------------

@dataclass(frozen=True)
class TTSample:
    index: int
    foot: np.ndarray
    direction: np.ndarray
    outcome: str
    x: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    t: Optional[float] = None
    y_foot: Optional[np.ndarray] = None
    exit_v: Optional[np.ndarray] = None
    n_reflections: int = 0
    n_tangential: int = 0
    flagged: bool = False
    error: Optional[str] = None

    def to_dict(self):
        record = {
            "index": self.index,
            "foot": self.foot.tolist(),
            "direction": self.direction.tolist(),
            "outcome": self.outcome,
            "n_reflections": self.n_reflections,
            "n_tangential": self.n_tangential,
            "flagged": self.flagged,
        }
        if self.outcome == OUTCOME_SAMPLE:
            record.update({
                "x": self.x.tolist(),
                "y": self.y.tolist(),
                "t": self.t,
                "y_foot": self.y_foot.tolist(),
                "exit_v": self.exit_v.tolist(),
            })
        if self.error:
            record["error"] = self.error
        return record

    @classmethod
    def from_dict(cls, record):
        def arr(key):
            value = record.get(key)
            return None if value is None else np.array(value, dtype=float)

        return cls(
            index=int(record["index"]),
            foot=arr("foot"),
            direction=arr("direction"),
            outcome=record["outcome"],
            x=arr("x"),
            y=arr("y"),
            t=record.get("t"),
            y_foot=arr("y_foot"),
            exit_v=arr("exit_v"),
            n_reflections=int(record.get("n_reflections", 0)),
            n_tangential=int(record.get("n_tangential", 0)),
            flagged=bool(record.get("flagged", False)),
            error=record.get("error"),
        )


@dataclass
class TTSet:
    samples: List[TTSample]
    spec: SamplingSpec
    scene_hash: str
    limits: TraceLimits
    dim: int
    boundary_scale: float
    D: float

    def exits(self):
        return [s for s in self.samples if s.outcome == OUTCOME_SAMPLE]

    def fraction(self, outcome):
        if not self.samples:
            return 0.0
        return sum(1 for s in self.samples if s.outcome == outcome) / len(self.samples)

    def header(self):
        return {
            "scene_hash": self.scene_hash,
            "spec": self.spec.model_dump(mode="json"),
            "limits": self.limits.to_dict(),
            "dim": self.dim,
            "boundary_scale": self.boundary_scale,
            "D": self.D,
        }


@dataclass(frozen=True)
class DiscrepancyReport:
    sup_matched_residual: float
    mean_matched_residual: float
    surface_residual_mean: float
    surface_residual_q95: float
    unmatched_fraction: float
    trapped_fraction_each: tuple
    tangential_fraction: float
    n_compared: tuple
    match_radius: float

    def to_dict(self):
        return {
            "sup_matched_residual": self.sup_matched_residual,
            "mean_matched_residual": self.mean_matched_residual,
            "surface_residual_mean": self.surface_residual_mean,
            "surface_residual_q95": self.surface_residual_q95,
            "unmatched_fraction": self.unmatched_fraction,
            "trapped_fraction_each": list(self.trapped_fraction_each),
            "tangential_fraction": self.tangential_fraction,
            "n_compared": list(self.n_compared),
            "match_radius": self.match_radius,
        }


@dataclass
class IrregularPatch:
    obstacle_id: int
    points: np.ndarray

    @property
    def size(self):
        return len(self.points)


@dataclass(frozen=True)
class InclusionReport:
    n_points: int
    outside_fraction: float
    max_excess: float

    @property
    def contained(self):
        return self.outside_fraction == 0.0


@dataclass(frozen=True)
class ReflectionConstants:
    xi_hat: int
    phi0_hat: float
    curve: tuple

    def to_dict(self):
        return {
            "xi_hat": self.xi_hat,
            "phi0_hat": self.phi0_hat,
            "curve": [{"k": k, "m_k": m, "n_rays": n} for k, m, n in self.curve],
        }


# ---------------------------- SWEEPS ----------------------------

def generate_launches(scene, spec):
    """Launch parameters (foot, direction) for a sampling spec, deterministic."""
    dim = scene.model.dim
    if spec.scheme == "explicit":
        return [(np.array(l.foot, dtype=float), np.array(l.direction, dtype=float)) for l in spec.launches]

    if spec.scheme == "grid":
        feet = grid_directions(spec.n_points, dim)
        dirs = grid_hemisphere(spec.n_dirs, dim)
        return [(f, d) for f in feet for d in dirs]

    n = spec.n_points * spec.n_dirs
    k = cube_dim(dim)
    h = halton_points(n, 2 * k, seed=spec.seed)
    feet = unit_vectors_from_cube(h[:, :k], dim)
    dirs = hemisphere_from_cube(h[:, k:], dim)
    return list(zip(feet, dirs))


def trace_launch(scene, limits, index, foot, direction):
    """One sweep record; errors are logged and recorded, never raised."""
    foot = np.asarray(foot, dtype=float)
    direction = np.asarray(direction, dtype=float)
    try:
        sigma = launch_state(scene, foot, direction)
        trace = trace_ray(scene, sigma, limits)
        outcome = outcome_of(trace)
        if not isinstance(outcome, Sample):
            return TTSample(index, foot, direction, OUTCOME_TRAPPED,
                            n_reflections=trace.n_reflections, n_tangential=trace.n_tangential,
                            flagged=trace.flagged)
        y_foot, _ = launch_parameters(scene, PointTangent(outcome.y, outcome.exit_v))
        return TTSample(index, foot, direction, OUTCOME_SAMPLE, outcome.x, outcome.y, float(outcome.t),
                        y_foot, outcome.exit_v, outcome.n_reflections, outcome.n_tangential, outcome.flagged)

    except BilliardError as e:
        logger.error(f"Error tracing launch {index}: {e}")
        return TTSample(index, foot, direction, OUTCOME_FAILED, error=e.code)


def sample_tt_set(scene, spec, limits=None, threads=1):
    """
    Samples the travelling-time set of a scene.

    Process:
    1. Enumerate launches for the scheme (grid, quasi-random or explicit)
    2. Trace every launch, in parallel when threads > 1
    3. Keep per-ray failures as records; the sweep always completes
    """
    start_time = time.time()
    limits = (limits or TraceLimits()).resolved(scene)
    launches = generate_launches(scene, spec)

    def run(item):
        index, (foot, direction) = item
        return trace_launch(scene, limits, index, foot, direction)

    samples = map_rays(run, enumerate(launches), threads)
    tt = TTSet(samples, spec, scene.hash, limits, scene.model.dim,
               float(sn_kappa(scene.model.kappa, scene.domain_radius)), scene.D)

    duration = time.time() - start_time
    logger.info(
        f"Sampled {len(samples)} launches ({spec.scheme}) in {duration:.2f}s: "
        f"{len(tt.exits())} exits, trapped {tt.fraction(OUTCOME_TRAPPED):.3f}, "
        f"failed {tt.fraction(OUTCOME_FAILED):.3f}"
    )
    return tt


# ---------------------------- COMPARISON ----------------------------

def _features(tt, swap=False):
    """Feature rows (s x, s y, t) and the reflection count of every exit."""
    exits = tt.exits()
    if not exits:
        return np.zeros((0, 2 * tt.dim + 1)), np.zeros(0, dtype=int)
    s = tt.boundary_scale
    xu = np.array([e.foot for e in exits])
    yu = np.array([e.y_foot for e in exits])
    t = np.array([[e.t] for e in exits])
    if swap:
        xu, yu = yu, xu
    return np.hstack([s * xu, s * yu, t]), np.array([e.n_reflections for e in exits])


def _product_distance(a, B, dim, scale):
    """d(x, x') + d(y, y') + |t - t'| with intrinsic arcs on the boundary sphere."""
    def arc(u, w):
        chord = np.linalg.norm(u - w, axis=-1) / scale
        return 2.0 * scale * np.arcsin(np.minimum(chord / 2.0, 1.0))

    return arc(a[:dim], B[:, :dim]) + arc(a[dim:2 * dim], B[:, dim:2 * dim]) + np.abs(a[-1] - B[:, -1])


def _nearest_residuals(A, B, match_radius):
    """
    Product-metric residual of every exit of A to the exits of B, using the
    (x, y) <-> (y, x) symmetry. Candidates are the nearest features of B in
    the embedding, re-ranked by the exact metric.
    """
    FA, LA = _features(A)
    FB1, LB1 = _features(B)
    FB2, LB2 = _features(B, swap=True)
    FB, LB = np.vstack([FB1, FB2]), np.concatenate([LB1, LB2])
    if len(FA) == 0:
        return np.zeros(0), (FA, LA), (FB, LB)
    if len(FB) == 0:
        return np.full(len(FA), np.inf), (FA, LA), (FB, LB)

    tree = cKDTree(FB)
    k = min(MATCH_CANDIDATES, len(FB))
    _, idx = tree.query(FA, k=k)
    idx = np.asarray(idx).reshape(len(FA), k)
    residuals = np.empty(len(FA))
    for i, a in enumerate(FA):
        residuals[i] = float(np.min(_product_distance(a, FB[idx[i]], A.dim, A.boundary_scale)))
    residuals[residuals > match_radius] = np.inf
    return residuals, (FA, LA), (FB, LB)


def _surface_residuals(A_side, B_side, nearest, intrinsic_dim):
    """
    Distance of each feature of A to the tangent plane of B's sampled set,
    fitted by local PCA among samples with the same reflection count (one
    smooth branch of the set); never more than the nearest-sample residual.
    """
    FA, LA = A_side
    FB, LB = B_side
    out = np.array(nearest, dtype=float)
    for label in np.unique(LA):
        rows = np.nonzero(LA == label)[0]
        branch = FB[LB == label]
        if len(branch) <= intrinsic_dim:
            continue
        k = min(4 * intrinsic_dim + 1, len(branch))
        _, idx = cKDTree(branch).query(FA[rows], k=k)
        idx = np.asarray(idx).reshape(len(rows), k)
        for i, row in enumerate(rows):
            neighbours = branch[idx[i]]
            center = neighbours.mean(axis=0)
            _, _, vt = np.linalg.svd(neighbours - center, full_matrices=False)
            offset = FA[row] - center
            in_plane = vt[:intrinsic_dim].T @ (vt[:intrinsic_dim] @ offset)
            out[row] = min(float(np.linalg.norm(offset - in_plane)), out[row])
    return out


def compare_tt_sets(A, B, match_radius=None):
    """
    Symmetrised discrepancy between two sampled travelling-time sets.
    Trapped samples are excluded from matching and reported separately.
    """
    if A.dim != B.dim:
        raise IncomparableSpecs(f"launch dimensions differ: {2 * (A.dim - 1)} vs {2 * (B.dim - 1)}")
    match_radius = 0.1 * max(A.D, B.D) if match_radius is None else float(match_radius)
    intrinsic_dim = 2 * (A.dim - 1)

    matched, unmatched, surfaces, counts = [], 0, [], []
    for first, second in ((A, B), (B, A)):
        residuals, first_side, second_side = _nearest_residuals(first, second, match_radius)
        matched.append(residuals[np.isfinite(residuals)])
        unmatched += int(np.sum(~np.isfinite(residuals)))
        capped = np.where(np.isfinite(residuals), residuals, match_radius)
        surfaces.append(_surface_residuals(first_side, second_side, capped, intrinsic_dim))
        counts.append(len(residuals))

    matched_all = np.concatenate(matched)
    surface_all = np.concatenate(surfaces)
    total = sum(counts)
    tangential = [s for tt in (A, B) for s in tt.exits() if s.n_tangential > 0]

    return DiscrepancyReport(
        sup_matched_residual=float(matched_all.max()) if matched_all.size else 0.0,
        mean_matched_residual=float(matched_all.mean()) if matched_all.size else 0.0,
        surface_residual_mean=float(surface_all.mean()) if surface_all.size else 0.0,
        surface_residual_q95=float(np.quantile(surface_all, 0.95)) if surface_all.size else 0.0,
        unmatched_fraction=unmatched / total if total else 0.0,
        trapped_fraction_each=(A.fraction(OUTCOME_TRAPPED), B.fraction(OUTCOME_TRAPPED)),
        tangential_fraction=len(tangential) / total if total else 0.0,
        n_compared=tuple(counts),
        match_radius=match_radius,
    )


def time_reversal_defects(scene, tt, limits=None):
    """
    Retraces every exit from its exit point along the reversed exit
    direction; the defect is d(x, x_back) + |t - t_back|.
    """
    limits = (limits or tt.limits).resolved(scene)
    exits = tt.exits()
    defects = np.empty(len(exits))
    for i, sample in enumerate(exits):
        back = trace_ray(scene, reversed_launch(scene, sample), limits)
        outcome = outcome_of(back)
        if not isinstance(outcome, Sample):
            defects[i] = np.inf
            continue
        defects[i] = float(distance(scene.model, outcome.y, sample.x)) + abs(outcome.t - sample.t)
    return defects


# ---------------------------- IRREGULAR SET ----------------------------

def _boundary_samples(scene, obstacle, resolution):
    model = scene.model
    if isinstance(obstacle, BallObstacle):
        radius = float(sn_kappa(model.kappa, obstacle.radius))
    else:
        rough = sample_boundary(scene, obstacle, 256)
        radius = float(np.max(np.linalg.norm(rough - obstacle.inside, axis=1)))
    spacing = 0.5 * resolution
    if model.dim == 2:
        n = int(math.ceil(2 * math.pi * radius / spacing))
    else:
        sphere_area = 2 * math.pi ** (model.dim / 2) / math.gamma(model.dim / 2)
        n = int(math.ceil(sphere_area * radius ** (model.dim - 1) / spacing ** (model.dim - 1)))
    n = min(max(n, 8), 20000)
    return obstacle.boundary_points(model, grid_directions(n, model.dim))


def _on_other_boundary(scene_other, model, obstacle, point, tol):
    normal = obstacle.outward_normal(model, point)
    for other in scene_other.obstacles:
        if abs(other.boundary_distance(model, point)) > tol:
            continue
        if np.linalg.norm(other.outward_normal(model, point) - normal) <= tol:
            return True
    return False


def probe_irregular_set(sceneK, sceneL, resolution, tol=NORMAL_TOL):
    """
    Sampled boundary points of K without a neighbourhood (radius =
    resolution) on which the boundary of L coincides, grouped into
    connected patches.
    """
    start_time = time.time()
    model = sceneK.model
    patches = []
    for obstacle in sceneK.obstacles:
        points = _boundary_samples(sceneK, obstacle, resolution)
        on_L = np.array([_on_other_boundary(sceneL, model, obstacle, p, tol) for p in points])
        tree = cKDTree(points)
        neighbourhoods = tree.query_ball_point(points, r=resolution)
        irregular = np.array([not np.all(on_L[nbrs]) for nbrs in neighbourhoods])
        if not irregular.any():
            continue

        flagged = np.nonzero(irregular)[0]
        sub_tree = cKDTree(points[flagged])
        pairs = sub_tree.query_pairs(r=resolution, output_type="ndarray")
        graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])),
                           shape=(len(flagged), len(flagged)))
        n_parts, labels = connected_components(graph, directed=False)
        for part in range(n_parts):
            patches.append(IrregularPatch(obstacle.id, points[flagged[labels == part]]))

    duration = time.time() - start_time
    logger.info(f"Probed irregular set in {duration:.2f}s: {len(patches)} patches")
    return patches


def obstacle_inclusion(sceneK, sceneL, resolution, tol=NORMAL_TOL):
    """
    One-sided containment of K in L, checked on sampled boundary points of K.
    A point is outside L when it is further than tol from every obstacle of L.
    """
    model = sceneK.model
    excess = []
    for obstacle in sceneK.obstacles:
        for point in _boundary_samples(sceneK, obstacle, resolution):
            nearest = min((other.boundary_distance(model, point) for other in sceneL.obstacles), default=math.inf)
            excess.append(max(nearest, 0.0))
    excess = np.array(excess)
    outside = excess > tol
    report = InclusionReport(
        n_points=int(excess.size),
        outside_fraction=float(outside.mean()) if excess.size else 0.0,
        max_excess=float(excess.max()) if excess.size else 0.0,
    )
    logger.info(f"Inclusion check: {outside.sum()} of {excess.size} boundary points outside")
    return report


# ---------------------------- REFLECTION CONSTANTS ----------------------------

def estimate_reflection_constants(scene, n_rays, limits=None, margin=0.01, seed=0, spec=None, threads=1):
    """
    Empirical surrogates for the reflection constants xi and phi0.

    m(k) is the largest, over rays with at least k reflections, of the
    smallest incidence angle among the first k reflections. xi_hat is the
    first k with m(k) < pi/2 - margin and phi0_hat = m(xi_hat).
    """
    limits = (limits or TraceLimits()).resolved(scene)
    spec = spec or SamplingSpec(n_points=n_rays, n_dirs=1, scheme="quasi_random", seed=seed)
    launches = generate_launches(scene, spec)

    def angles_of(item):
        index, (foot, direction) = item
        try:
            trace = trace_ray(scene, launch_state(scene, foot, direction), limits)
        except BilliardError as e:
            logger.error(f"Error tracing launch {index}: {e}")
            return np.zeros(0)
        cosines = np.array([e.cos_incidence for e in trace.events if not e.tangential])
        return np.arccos(np.clip(cosines, 0.0, 1.0))

    angles = map_rays(angles_of, enumerate(launches), threads)
    k_max = max((a.size for a in angles), default=0)
    if k_max == 0:
        raise InsufficientData("no traced ray reflected")

    curve = []
    for k in range(1, k_max + 1):
        qualifying = [a[:k].min() for a in angles if a.size >= k]
        curve.append((k, float(max(qualifying)), len(qualifying)))

    for k, m_k, _ in curve:
        if m_k < math.pi / 2 - margin:
            return ReflectionConstants(k, m_k, tuple(curve))
    raise InsufficientData(f"m(k) stays above pi/2 - {margin} up to k = {k_max}")


# ---------------------------- RECONSTRUCTION ----------------------------

@dataclass(frozen=True)
class BallFamily:
    """
    Scenes with n_balls geodesic-ball obstacles over a template description.
    Parameters per ball: center coordinates then radius.
    """
    template: dict
    n_balls: int
    dim: int

    @classmethod
    def from_scene(cls, scene):
        return cls(scene.description, len(scene.obstacles), scene.model.dim)

    def split(self, params):
        params = np.asarray(params, dtype=float).reshape(self.n_balls, self.dim + 1)
        return [(row[:self.dim], row[self.dim]) for row in params]

    def to_scene(self, params):
        """Validated scene for the parameters, or None when they are infeasible."""
        description = dict(self.template)
        description["obstacles"] = [
            {"kind": "ball", "center": c.tolist(), "radius": float(r)} for c, r in self.split(params)
        ]
        try:
            return build_scene(description)
        except (ValidationError, ValueError) as e:
            logger.debug(f"Infeasible parameters {np.round(params, 6).tolist()}: {e}")
            return None

    def parameters_of(self, scene):
        rows = []
        for obstacle in scene.obstacles:
            rows.extend(scene.model.coords(obstacle.center).tolist() + [obstacle.radius])
        return np.array(rows)


@dataclass(frozen=True)
class ReconstructionOptions:
    """
    sample_seed: seed of the simulated sweep. None draws it independently of
    the target (target seed + 1); grid designs have no seed and always repeat
    the target launches.
    """
    max_evals: int = 4000
    restarts: int = 12
    initial_step: float = 0.25
    min_step: float = 1e-7
    restart_scale: float = 0.25
    target_objective: float = 1e-20
    match_radius: Optional[float] = None
    sample_seed: Optional[int] = None
    seed: int = 0
    threads: int = 1


@dataclass
class ReconstructionResult:
    params: np.ndarray
    objective: float
    history: List[float] = field(default_factory=list)
    n_evals: int = 0
    converged: bool = False

    def to_dict(self):
        return {
            "params": self.params.tolist(),
            "objective": self.objective,
            "history": self.history,
            "n_evals": self.n_evals,
            "converged": self.converged,
        }


def simulation_spec(tt_target, opts):
    """Sampling spec of the simulated sweeps: the target design, reseeded."""
    seed = tt_target.spec.seed + 1 if opts.sample_seed is None else opts.sample_seed
    return with_seed(tt_target.spec, seed)


def squared_discrepancy(A, B, match_radius):
    """
    Sum of squared nearest-match residuals of A against B and of B against
    A, matched as compare_tt_sets matches. Unmatched exits cost match_radius.
    """
    total = 0.0
    for first, second in ((A, B), (B, A)):
        residuals, _, _ = _nearest_residuals(first, second, match_radius)
        total += float(np.sum(np.where(np.isfinite(residuals), residuals, match_radius) ** 2))
    return total


def reconstruction_objective(tt_target, family, opts=None):
    """
    Objective over family parameters: squared discrepancy between the target
    set and a simulated sweep of the candidate scene. Only the exits (x, y, t)
    of the target enter; trapped samples are left out. Infeasible
    parameters cost +inf.
    """
    opts = opts or ReconstructionOptions()
    spec = simulation_spec(tt_target, opts)
    match_radius = 0.1 * tt_target.D if opts.match_radius is None else float(opts.match_radius)

    def evaluate(params):
        scene = family.to_scene(params)
        if scene is None:
            return math.inf
        simulated = sample_tt_set(scene, spec, tt_target.limits, opts.threads)
        return squared_discrepancy(tt_target, simulated, match_radius)

    return evaluate


def _pattern_search(evaluate, x0, step0, opts, budget, history, best):
    """
    Compass search: poll +-step along each coordinate, move on the first
    improvement, halve the step when no poll improves.
    """
    x = np.array(x0, dtype=float)
    fx = evaluate(x)
    evals = 1
    step = np.array(step0, dtype=float)

    def record(value, point):
        if value < best["objective"]:
            best["objective"], best["params"] = value, point.copy()
        history.append(best["objective"])

    record(fx, x)
    while evals < budget:
        if fx <= opts.target_objective or np.max(step) < opts.min_step:
            return x, fx, evals, True
        improved = False
        for i in range(x.size):
            for sign in (1.0, -1.0):
                trial = x.copy()
                trial[i] += sign * step[i]
                ft = evaluate(trial)
                evals += 1
                record(ft, trial)
                if ft < fx:
                    x, fx, improved = trial, ft, True
                    break
                if evals >= budget:
                    return x, fx, evals, False
            if improved:
                break
        if not improved:
            step *= 0.5
    return x, fx, evals, False


def reconstruct_obstacles(tt_target, family, init, opts=None):
    """
    Fits family parameters to a target travelling-time set.

    Process:
    1. Pattern search from init, then seeded restarts around init
    2. Stop early once the objective reaches the target value
    3. Return the best parameters with the monotone best-so-far history
    Raises DidNotConverge (carrying the best result) when the evaluation
    budget runs out before any search converges.
    """
    start_time = time.time()
    opts = opts or ReconstructionOptions()
    evaluate = reconstruction_objective(tt_target, family, opts)
    init = np.asarray(init, dtype=float)
    step0 = np.full(init.size, opts.initial_step)
    rng = np.random.default_rng(opts.seed)

    history = []
    best = {"objective": math.inf, "params": init.copy()}
    evals_used = 0
    converged_any = False

    for restart in range(max(opts.restarts, 1)):
        start = init if restart == 0 else init + rng.normal(0.0, opts.restart_scale, init.size)
        budget = opts.max_evals - evals_used
        if budget <= 0:
            break
        _, fx, evals, converged = _pattern_search(evaluate, start, step0, opts, budget, history, best)
        evals_used += evals
        converged_any = converged_any or converged
        logger.info(f"Restart {restart}: objective {fx:.3e} after {evals} evaluations")
        if best["objective"] <= opts.target_objective:
            break

    result = ReconstructionResult(best["params"], float(best["objective"]), history, evals_used, converged_any)
    duration = time.time() - start_time
    logger.info(f"Reconstruction finished in {duration:.2f}s: objective {result.objective:.3e}")
    if not converged_any:
        raise DidNotConverge(result, f"budget of {opts.max_evals} evaluations exhausted")
    return result


def with_seed(spec, seed):
    """Copy of a sampling spec with another seed."""
    return spec.model_copy(update={"seed": seed})

