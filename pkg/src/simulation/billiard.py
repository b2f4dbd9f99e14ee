import math
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from simulation.manifold import (
    PointTangent,
    clean_state,
    complete_frame,
    geodesic_evolve,
    geodesic_samples,
    inner,
    log_map,
    tangent_basis_at,
    transport_to,
)
from simulation.sampling import orthonormal_complement
from simulation.scene import BOUNDARY_TOL, domain_geometry, domain_value
from utils.errors import DegenerateLaunch, NonFiniteState, NotIncoming
from utils.logger import setup_logger

logger = setup_logger("simulation.billiard")

TANGENCY_EPS = 1e-7
ROOT_XTOL = 1e-12
GRAZE_TOL = 1e-12
FREE_FLIGHT_TOL = 1e-9
TRAPPED_T_FACTOR = 50.0
TRAPPED_N_FACTOR = 10
POST_REFLECTION_FRACTION = 0.01

# ---------------------------- TYPES ----------------------------

@dataclass(frozen=True)
class ReflectionEvent:
    t: float
    x: np.ndarray
    obstacle_id: int
    cos_incidence: float
    tangential: bool

    def to_dict(self):
        return {
            "t": self.t,
            "x": self.x.tolist(),
            "obstacle_id": self.obstacle_id,
            "cos_incidence": self.cos_incidence,
            "tangential": self.tangential,
        }


@dataclass(frozen=True)
class Exited:
    x: np.ndarray
    t: float
    v: np.ndarray
    kind: str = "exited"


@dataclass(frozen=True)
class TrappedCutoff:
    reason: str
    t: float
    kind: str = "trapped"


@dataclass
class RayTrace:
    sigma0: PointTangent
    events: List[ReflectionEvent] = field(default_factory=list)
    terminal: Optional[Union[Exited, TrappedCutoff]] = None
    flagged: bool = False

    @property
    def n_reflections(self):
        return sum(1 for e in self.events if not e.tangential)

    @property
    def n_tangential(self):
        return sum(1 for e in self.events if e.tangential)

    def to_dict(self):
        terminal = {"kind": self.terminal.kind, "t": self.terminal.t}
        if isinstance(self.terminal, Exited):
            terminal.update({"x": self.terminal.x.tolist(), "v": self.terminal.v.tolist()})
        else:
            terminal["reason"] = self.terminal.reason
        return {
            "sigma": {"x": self.sigma0.x.tolist(), "v": self.sigma0.v.tolist()},
            "events": [e.to_dict() for e in self.events],
            "terminal": terminal,
            "flagged": self.flagged,
        }


@dataclass(frozen=True)
class TraceLimits:
    t_max: Optional[float] = None
    n_max: Optional[int] = None
    tangency_eps: float = TANGENCY_EPS

    def resolved(self, scene):
        """Fills unset limits with the scene defaults (50 D and 10 xi)."""
        t_max = self.t_max if self.t_max is not None else TRAPPED_T_FACTOR * scene.D
        n_max = self.n_max if self.n_max is not None else TRAPPED_N_FACTOR * scene.declared.xi
        return TraceLimits(float(t_max), int(n_max), float(self.tangency_eps))

    def to_dict(self):
        return {"t_max": self.t_max, "n_max": self.n_max, "tangency_eps": self.tangency_eps}


@dataclass(frozen=True)
class Hit:
    obstacle_id: int
    t: float
    state: PointTangent


@dataclass(frozen=True)
class ExitDomain:
    t: float
    state: PointTangent


@dataclass(frozen=True)
class NoEventWithin:
    t_horizon: float


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    y: np.ndarray
    t: float
    exit_v: Optional[np.ndarray] = None
    n_reflections: int = 0
    n_tangential: int = 0
    flagged: bool = False


@dataclass(frozen=True)
class Trapped:
    reason: str
    t: float


# ---------------------------- REFLECTION ----------------------------

def reflect_direction(v_in, N_K, model=None):
    """
    Elastic reflection v - 2<v, N>N at an obstacle with outward normal N.
    Raises NotIncoming unless <v_in, N_K> < 0.
    """
    v_in = np.asarray(v_in, dtype=float)
    N_K = np.asarray(N_K, dtype=float)
    dot = inner(model, v_in, N_K) if model is not None else float(v_in @ N_K)
    if not dot < 0:
        raise NotIncoming(f"<v, N_K> = {dot:.3e}")
    return v_in - 2.0 * dot * N_K


# ---------------------------- EVENT DETECTION ----------------------------

def _sample_step(scene):
    report = scene.ensure_report()
    step = scene.domain_radius / 64.0
    if np.isfinite(report.d_min):
        step = min(step, report.d_min / 4.0)
    return step


def _first_entry(values_at, ts, values, skip_start):
    """
    Earliest time a boundary function crosses from positive to non-positive.

    Sign changes between samples are refined by Brent's method; sampled local
    minima are polished with a bounded search so shallow chords are not missed.
    Returns (t, grazing) or None.
    """
    xtol = ROOT_XTOL * max(ts[-1], 1.0)
    crossing = np.nonzero((values[:-1] > 0) & (values[1:] <= 0))[0]
    first_cross = crossing[0] if crossing.size else None

    interior = np.nonzero(
        (values[1:-1] > 0) & (values[1:-1] <= values[:-2]) & (values[1:-1] <= values[2:])
    )[0] + 1
    candidates = list(interior)
    if not skip_start and values.size > 1 and values[0] > 0 and values[0] <= values[1]:
        candidates.insert(0, 0)

    for k in candidates:
        if first_cross is not None and k > first_cross:
            break
        lo, hi = ts[max(k - 1, 0)], ts[min(k + 1, ts.size - 1)]
        result = minimize_scalar(values_at, bounds=(lo, hi), method="bounded",
                                 options={"xatol": xtol})
        t_min, v_min = float(result.x), float(result.fun)
        if v_min <= 0:
            return brentq(values_at, lo, t_min, xtol=xtol), False
        if v_min <= GRAZE_TOL:
            return t_min, True

    if first_cross is not None:
        return brentq(values_at, ts[first_cross], ts[first_cross + 1], xtol=xtol), False
    return None


def _exit_root(values_at, lo, hi, xtol, from_boundary=False):
    """
    Time the geodesic leaves S in [lo, hi], given it is inside S just after lo.

    From lo on the domain sphere a near-tangent chord can end before the
    first sample and dip below zero by less than rounding. The root is then
    bracketed from the closest approach to the center, or mirrored about it
    since the chord is symmetric there.
    """
    f_hi = values_at(hi)
    if not from_boundary:
        return brentq(values_at, lo, hi, xtol=xtol) if f_hi >= 0 else hi
    result = minimize_scalar(values_at, bounds=(lo, hi), method="bounded", options={"xatol": xtol})
    t_mid = float(result.x)
    if result.fun < 0 <= f_hi:
        return brentq(values_at, t_mid, hi, xtol=xtol)
    return min(2.0 * t_mid - lo, hi)


def next_event(scene, state, horizon=None):
    """
    Earliest boundary crossing along the geodesic from `state`.

    Returns Hit (obstacle boundary), ExitDomain (leaving S) or NoEventWithin.
    An obstacle hit wins a tie with the domain exit.
    """
    model = scene.model
    step = _sample_step(scene)
    horizon = horizon if horizon is not None else scene.D * (1.0 + 1e-6) + step
    n = max(int(math.ceil(horizon / step)), 2) + 1
    ts = np.linspace(0.0, horizon, n)
    points = geodesic_samples(model, state, ts)
    if not np.all(np.isfinite(points)):
        raise NonFiniteState("geodesic samples contain NaN/Inf")

    def position(t):
        return geodesic_samples(model, state, [t])[0]

    best = None
    for obstacle in scene.obstacles:
        values = np.asarray(obstacle.value(model, points), dtype=float)
        on_start = abs(values[0]) <= BOUNDARY_TOL
        if on_start:
            values[0] = abs(values[0])
        found = _first_entry(lambda t, o=obstacle: float(o.value(model, position(t))), ts, values, on_start)
        if found is not None and (best is None or found[0] < best[1]):
            best = (obstacle.id, found[0])

    d_values = domain_value(scene, points)
    on_domain = abs(d_values[0]) <= BOUNDARY_TOL
    if on_domain:
        d_values[0] = -BOUNDARY_TOL
    leaving = np.nonzero((d_values[:-1] < 0) & (d_values[1:] >= 0))[0]
    t_exit = None
    if leaving.size:
        k = leaving[0]
        t_exit = _exit_root(lambda t: float(domain_value(scene, position(t))), ts[k], ts[k + 1],
                            ROOT_XTOL * scene.D, from_boundary=on_domain and k == 0)

    tie = ROOT_XTOL * scene.D
    if best is not None and (t_exit is None or best[1] <= t_exit + tie):
        return Hit(best[0], best[1], geodesic_evolve(model, state, best[1]))
    if t_exit is not None:
        return ExitDomain(t_exit, geodesic_evolve(model, state, t_exit))
    return NoEventWithin(horizon)


# ---------------------------- RAY TRACING ----------------------------

def _check_launch(scene, sigma):
    """
    Accepts inward launches from the domain boundary and states inside S_K.
    """
    model = scene.model
    try:
        sigma = clean_state(model, sigma)
    except NonFiniteState as e:
        raise DegenerateLaunch(str(e))

    d = float(domain_value(scene, sigma.x))
    if d > 1e-8:
        raise DegenerateLaunch(f"launch point outside S (residual {d:.3e})")
    if abs(d) <= 1e-8:
        cos_in = inner(model, sigma.v, domain_geometry(scene, sigma.x))
        if not cos_in > 0:
            raise DegenerateLaunch(f"<v, N_S> = {cos_in:.3e} is not inward")
    for obstacle in scene.obstacles:
        value = float(obstacle.value(model, sigma.x))
        if value < -BOUNDARY_TOL:
            raise DegenerateLaunch(f"launch point inside obstacle {obstacle.id}")
        if abs(value) <= BOUNDARY_TOL and inner(model, sigma.v, obstacle.outward_normal(model, sigma.x)) < 0:
            raise DegenerateLaunch(f"launch points into obstacle {obstacle.id}")
    return sigma


def trace_ray(scene, sigma, limits=None):
    """
    Follows one billiard ray until it leaves S or hits a cutoff.

    Process:
    1. Find the next boundary crossing along the current geodesic
    2. Obstacle hit: record the event, reflect unless the hit is tangential
    3. Domain exit: terminal Exited; t_max or n_max reached: TrappedCutoff
    Tangential hits are recorded, do not reflect, and count toward n_max.
    """
    limits = (limits or TraceLimits()).resolved(scene)
    model = scene.model
    d_min = scene.ensure_report().d_min
    state = _check_launch(scene, sigma)
    trace = RayTrace(sigma0=state)
    elapsed = 0.0

    while True:
        if len(trace.events) >= limits.n_max:
            trace.terminal = TrappedCutoff("n_max", elapsed)
            return trace

        event = next_event(scene, state)
        if isinstance(event, NoEventWithin):
            raise DegenerateLaunch(f"no boundary crossing within {event.t_horizon:.6g}")
        if elapsed + event.t > limits.t_max:
            trace.terminal = TrappedCutoff("t_max", limits.t_max)
            return trace

        elapsed += event.t
        if isinstance(event, ExitDomain):
            trace.terminal = Exited(event.state.x, elapsed, event.state.v)
            return trace

        obstacle = scene.obstacle(event.obstacle_id)
        hit = event.state
        N_K = obstacle.outward_normal(model, hit.x)
        cos_incidence = float(-inner(model, hit.v, N_K))
        tangential = cos_incidence < limits.tangency_eps

        if trace.events:
            previous = trace.events[-1]
            if previous.obstacle_id != obstacle.id and event.t < d_min - FREE_FLIGHT_TOL:
                trace.flagged = True
        trace.events.append(ReflectionEvent(elapsed, hit.x, obstacle.id, max(cos_incidence, 0.0), tangential))

        v = hit.v if tangential else reflect_direction(hit.v, N_K, model)
        state = clean_state(model, PointTangent(hit.x, v))


def travelling_time(scene, sigma, limits=None):
    """Sample(x, y, t) for rays that leave S, Trapped when a cutoff is hit."""
    trace = trace_ray(scene, sigma, limits)
    return outcome_of(trace)


def outcome_of(trace):
    terminal = trace.terminal
    if isinstance(terminal, Exited):
        return Sample(trace.sigma0.x, terminal.x, terminal.t, terminal.v,
                      trace.n_reflections, trace.n_tangential, trace.flagged)
    return Trapped(terminal.reason, terminal.t)


def billiard_flow(scene, state, t, tangency_eps=TANGENCY_EPS):
    """
    The billiard flow at a fixed time. After leaving S the state moves on
    the free geodesic (no obstacles lie outside S).
    """
    model = scene.model
    remaining = float(t)
    state = clean_state(model, state)
    while remaining > 0:
        event = next_event(scene, state, horizon=None)
        if not isinstance(event, Hit) or event.t >= remaining:
            return geodesic_evolve(model, state, remaining)
        remaining -= event.t
        hit = event.state
        N_K = scene.obstacle(event.obstacle_id).outward_normal(model, hit.x)
        v = hit.v
        if -inner(model, v, N_K) >= tangency_eps:
            v = reflect_direction(v, N_K, model)
        state = clean_state(model, PointTangent(hit.x, v))
    return state


def post_reflection_offset(scene):
    """d* = d_min / 100, or D / 100 when the scene has fewer than two obstacles."""
    d_min = scene.ensure_report().d_min
    scale = d_min if np.isfinite(d_min) else scene.D
    return POST_REFLECTION_FRACTION * scale


def truncated_flow(scene, sigma, n, limits=None):
    """
    The ray cut just past its n-th reflection: t^N = t_n + d*.

    Rays with fewer reflections are cut after their last one (t_0 = 0 when
    they never reflect). Tangential hits are not reflections.
    Returns (t^N, flow state at t^N).
    """
    trace = trace_ray(scene, sigma, limits)
    times = [event.t for event in trace.events if not event.tangential][:n]
    t_n = (times[-1] if times else 0.0) + post_reflection_offset(scene)
    return t_n, billiard_flow(scene, trace.sigma0, t_n, (limits or TraceLimits()).tangency_eps)


# ---------------------------- LAUNCH PARAMETRISATION ----------------------------

def launch_state(scene, foot, direction):
    """
    Element of the inward boundary bundle from launch parameters.

    foot: unit vector (tangent basis at the domain center) giving the foot point.
    direction: unit vector in the local frame (N_S, e_1, ..., e_{m-1}) with a
    positive first component.
    """
    model = scene.model
    u = np.asarray(foot, dtype=float)
    u = u / np.linalg.norm(u)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)

    basis = tangent_basis_at(model, scene.domain_center)
    radial = PointTangent(scene.domain_center.copy(), u @ basis)
    x = geodesic_evolve(model, radial, scene.domain_radius).x
    coords = -d[0] * u + orthonormal_complement(u) @ d[1:]
    transported = np.array([transport_to(model, scene.domain_center, x, e) for e in basis])
    return clean_state(model, PointTangent(x, coords @ transported))


def launch_parameters(scene, state):
    """Inverse of launch_state for a state based on the domain boundary."""
    model = scene.model
    basis = tangent_basis_at(model, scene.domain_center)
    radial = log_map(model, scene.domain_center, state.x)
    u = np.array([inner(model, radial, e) for e in basis])
    u = u / np.linalg.norm(u)
    back = transport_to(model, state.x, scene.domain_center, state.v)
    coords = np.array([inner(model, back, e) for e in basis])
    d = np.concatenate([[-coords @ u], orthonormal_complement(u).T @ coords])
    return u, d


def reversed_launch(scene, sample):
    """Launch from the exit point back along the exit direction."""
    return PointTangent(np.asarray(sample.y, dtype=float), -np.asarray(sample.exit_v, dtype=float))


def launch_near_periodic_orbit(scene, state, tilt=1e-12, tangency_eps=TANGENCY_EPS):
    """
    Boundary launch that shadows the billiard orbit through an interior state.

    Traces the slightly tilted reversed state out of S and reverses the exit,
    so the launch follows the orbit for as many reflections as the tilt allows.
    """
    model = scene.model
    state = clean_state(model, state)
    side = complete_frame(model, state.x, state.v)[0]
    backwards = clean_state(model, PointTangent(state.x, -state.v + tilt * side))
    search = TraceLimits(t_max=1e4 * scene.D, n_max=10 ** 4, tangency_eps=tangency_eps)
    trace = trace_ray(scene, backwards, search)
    if not isinstance(trace.terminal, Exited):
        raise DegenerateLaunch("tilted orbit did not leave S within the search limits")
    logger.debug(f"Shadowing launch leaves after {len(trace.events)} events")
    return clean_state(model, PointTangent(trace.terminal.x, -trace.terminal.v))
