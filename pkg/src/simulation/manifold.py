from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import RK45

from utils.errors import (
    ChartDomainExceeded,
    DegeneratePlane,
    NonFiniteState,
    UnsupportedModel,
)
from utils.logger import setup_logger

logger = setup_logger("simulation.manifold")

EUCLIDEAN = "euclidean"
SPHERE = "sphere"
HYPERBOLIC = "hyperbolic"
CHART = "chart"
SPACE_FORMS = (EUCLIDEAN, SPHERE, HYPERBOLIC)

CHART_TOL = 1e-10
FD_STEP = 1e-5

# ---------------------------- TYPES ----------------------------

@dataclass(frozen=True)
class ChartMetric:
    """
    A metric given on a single coordinate chart of R^m.

    metric(x) returns g_ij, metric_derivative(x) returns dg[k, i, j] = d_k g_ij.
    Points with |x| >= bound are outside the chart.
    """
    metric: Callable
    metric_derivative: Callable
    bound: float = np.inf
    name: str = "chart"
    embedding: Optional[Callable] = None


@dataclass(frozen=True)
class MetricModel:
    kind: str
    kappa: float
    dim: int
    chart: Optional[ChartMetric] = field(default=None, compare=False)

    def __post_init__(self):
        if self.dim < 2:
            raise UnsupportedModel(f"dimension must be >= 2, got {self.dim}")
        if self.kind == EUCLIDEAN and self.kappa != 0:
            raise UnsupportedModel("euclidean model requires kappa = 0")
        if self.kind == SPHERE and not self.kappa > 0:
            raise UnsupportedModel("sphere model requires kappa > 0")
        if self.kind == HYPERBOLIC and not self.kappa < 0:
            raise UnsupportedModel("hyperbolic model requires kappa < 0")
        if self.kind == CHART and self.chart is None:
            raise UnsupportedModel("chart model requires a ChartMetric")
        if self.kind not in SPACE_FORMS + (CHART,):
            raise UnsupportedModel(f"unknown model kind '{self.kind}'")

    @property
    def is_space_form(self):
        return self.kind in SPACE_FORMS

    @property
    def curved(self):
        return self.kind in (SPHERE, HYPERBOLIC)

    @property
    def radius(self):
        """Curvature radius 1/sqrt|kappa| (inf for flat models)."""
        if self.kappa == 0:
            return np.inf
        return 1.0 / np.sqrt(abs(self.kappa))

    @property
    def ambient_dim(self):
        return self.dim + 1 if self.curved else self.dim

    @property
    def signature(self):
        sig = np.ones(self.ambient_dim)
        if self.kind == HYPERBOLIC:
            sig[0] = -1.0
        return sig

    @property
    def origin(self):
        o = np.zeros(self.ambient_dim)
        if self.curved:
            o[0] = self.radius
        return o

    def origin_basis(self):
        """Orthonormal basis of the tangent space at the origin, shape (dim, ambient_dim)."""
        basis = np.zeros((self.dim, self.ambient_dim))
        offset = 1 if self.curved else 0
        for i in range(self.dim):
            basis[i, i + offset] = 1.0
        return basis

    def point(self, coords):
        """Point with normal coordinates `coords` around the origin."""
        coords = np.asarray(coords, dtype=float)
        if not self.curved:
            return coords.copy()
        tangent = coords @ self.origin_basis()
        return exp_map(self, self.origin, tangent)

    def coords(self, x):
        """Normal coordinates of x around the origin (inverse of point)."""
        x = np.asarray(x, dtype=float)
        if not self.curved:
            return x.copy()
        return log_map(self, self.origin, x) @ self.origin_basis().T


@dataclass(frozen=True)
class PointTangent:
    x: np.ndarray
    v: np.ndarray

    @classmethod
    def of(cls, x, v):
        return cls(np.array(x, dtype=float), np.array(v, dtype=float))

    def reversed(self):
        return PointTangent(self.x.copy(), -self.v)


def make_model(kind, kappa=0.0, dim=2):
    kind = kind.lower()
    if kind == EUCLIDEAN:
        kappa = 0.0
    return MetricModel(kind=kind, kappa=float(kappa), dim=int(dim))


# ---------------------------- GENERALISED TRIG ----------------------------

def sn_kappa(kappa, t):
    """Solution of f'' + kappa f = 0 with f(0) = 0, f'(0) = 1."""
    t = np.asarray(t, dtype=float)
    if kappa > 0:
        k = np.sqrt(kappa)
        return np.sin(k * t) / k
    if kappa < 0:
        k = np.sqrt(-kappa)
        return np.sinh(k * t) / k
    return t


def cs_kappa(kappa, t):
    t = np.asarray(t, dtype=float)
    if kappa > 0:
        return np.cos(np.sqrt(kappa) * t)
    if kappa < 0:
        return np.cosh(np.sqrt(-kappa) * t)
    return np.ones_like(t)


def ct_kappa(kappa, r):
    """
    Principal curvature of a geodesic sphere of radius r,
    w.r.t. its outward normal: sqrt(k) cot(sqrt(k) r), 1/r, sqrt|k| coth(sqrt|k| r).
    """
    return cs_kappa(kappa, r) / sn_kappa(kappa, r)


# ---------------------------- INNER PRODUCTS ----------------------------

def inner(model, a, b, x=None):
    """Metric inner product of tangent vectors; broadcasts over leading axes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if model.kind == CHART:
        if x is None:
            raise ValueError("chart inner products need the base point")
        g = model.chart.metric(np.asarray(x, dtype=float))
        return np.einsum("...i,ij,...j->...", a, g, b)
    if model.kind == HYPERBOLIC:
        return np.sum(a * b * model.signature, axis=-1)
    return np.sum(a * b, axis=-1)


def norm(model, a, x=None):
    return np.sqrt(np.maximum(inner(model, a, a, x), 0.0))


def project_tangent(model, x, w):
    """Removes the normal (radial) component of an ambient vector at x."""
    w = np.asarray(w, dtype=float)
    if not model.curved:
        return w.copy()
    return w - inner(model, x, w) / inner(model, x, x) * x


def normalize(model, w, x=None):
    n = norm(model, w, x)
    if not np.isfinite(n) or n == 0:
        raise NonFiniteState("cannot normalise a zero or non-finite vector")
    return w / n


def clean_state(model, state):
    """Pulls a state back onto the model and restores unit speed."""
    x, v = state.x, state.v
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
        raise NonFiniteState(f"state contains NaN/Inf: x={x}, v={v}")
    if model.curved:
        x = x * (model.radius / np.sqrt(abs(inner(model, x, x))))
        v = project_tangent(model, x, v)
    return PointTangent(x, normalize(model, v, x))


def complete_frame(model, x, v):
    """
    Orthonormal basis of the complement of v in T_x, shape (dim - k, ambient_dim)
    where v holds k orthonormal tangent vectors (usually one).

    Pivoted Gram-Schmidt over the ambient coordinate vectors, so the result
    is deterministic and well conditioned.
    """
    x = np.asarray(x, dtype=float)
    given = np.atleast_2d(np.asarray(v, dtype=float))
    basis = list(given)
    if model.curved:
        basis.insert(0, x / model.radius)
    candidates = list(np.eye(model.ambient_dim))
    frame = []

    def residual(w):
        r = w.copy()
        for b in basis:
            r = r - inner(model, r, b, x) / inner(model, b, b, x) * b
        return r

    while len(frame) < model.dim - len(given):
        residuals = [residual(c) for c in candidates]
        norms = [norm(model, r, x) for r in residuals]
        best = int(np.argmax(norms))
        e = residuals[best] / norms[best]
        frame.append(e)
        basis.append(e)
        candidates.pop(best)
    return np.array(frame).reshape(len(frame), model.ambient_dim)


def tangent_basis_at(model, x):
    """Origin basis transported to x, shape (dim, ambient_dim)."""
    basis = model.origin_basis()
    if not model.curved:
        return basis
    return np.array([transport_to(model, model.origin, x, e) for e in basis])


def gram_matrix(model, frame, x=None):
    frame = np.asarray(frame, dtype=float)
    if model.kind == CHART:
        g = model.chart.metric(np.asarray(x, dtype=float))
        return frame @ g @ frame.T
    return (frame * model.signature) @ frame.T


# ---------------------------- DISTANCE / EXP / LOG ----------------------------

def distance(model, x, y):
    """Geodesic distance; y may carry leading axes."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if model.kind == EUCLIDEAN:
        return np.linalg.norm(y - x, axis=-1)
    if model.kind == SPHERE:
        R = model.radius
        chord = np.linalg.norm(y - x, axis=-1)
        return 2.0 * R * np.arcsin(np.minimum(chord / (2.0 * R), 1.0))
    if model.kind == HYPERBOLIC:
        R = model.radius
        d = y - x
        q = np.maximum(inner(model, d, d), 0.0)
        return 2.0 * R * np.arcsinh(np.sqrt(q) / (2.0 * R))
    raise UnsupportedModel("chart models have no closed-form distance")


def exp_map(model, x, w):
    """Exponential map at x of a (not necessarily unit) tangent vector w."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    length = float(norm(model, w, x))
    if length == 0.0:
        return x.copy()
    return geodesic_evolve(model, PointTangent(x, w / length), length).x


def log_map(model, x, y):
    """Tangent vector at x pointing to y with length distance(x, y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if model.kind == EUCLIDEAN:
        return y - x
    if model.kind == CHART:
        raise UnsupportedModel("chart models have no closed-form log map")
    u = project_tangent(model, x, y)
    n = norm(model, u)
    if n < 1e-300:
        return np.zeros_like(x)
    return distance(model, x, y) * u / n


def transport_to(model, x, y, w):
    """Parallel transport of w from x to y along the minimal geodesic."""
    w = np.asarray(w, dtype=float)
    if model.kind == EUCLIDEAN:
        return w.copy()
    step = log_map(model, x, y)
    length = float(norm(model, step))
    if length == 0.0:
        return w.copy()
    return parallel_transport(model, [w], (PointTangent(np.asarray(x, float), step / length), length))[0]


# ---------------------------- GEODESIC FLOW ----------------------------

def geodesic_evolve(model, state, t):
    """
    Geodesic flow F_t of a unit state.
    Closed forms for the space forms, adaptive RK45 for chart metrics.
    """
    t = float(t)
    if t == 0.0:
        return PointTangent(state.x.copy(), state.v.copy())
    if not np.isfinite(t):
        raise NonFiniteState(f"non-finite evolution time {t}")

    x, v = state.x, state.v
    if model.kind == EUCLIDEAN:
        return PointTangent(x + t * v, v.copy())
    if model.kind == SPHERE:
        R = model.radius
        c, s = np.cos(t / R), np.sin(t / R)
        return clean_state(model, PointTangent(c * x + R * s * v, -s / R * x + c * v))
    if model.kind == HYPERBOLIC:
        R = model.radius
        c, s = np.cosh(t / R), np.sinh(t / R)
        return clean_state(model, PointTangent(c * x + R * s * v, s / R * x + c * v))

    x_new, v_new, _ = integrate_chart(model, x, v, t)
    return PointTangent(x_new, v_new)


def geodesic_samples(model, state, ts):
    """Positions along the geodesic at every time in ts, shape (len(ts), ambient_dim)."""
    ts = np.asarray(ts, dtype=float)[:, None]
    x, v = state.x[None, :], state.v[None, :]
    if model.kind == EUCLIDEAN:
        return x + ts * v
    if model.kind == SPHERE:
        R = model.radius
        return np.cos(ts / R) * x + R * np.sin(ts / R) * v
    if model.kind == HYPERBOLIC:
        R = model.radius
        return np.cosh(ts / R) * x + R * np.sinh(ts / R) * v
    return np.array([geodesic_evolve(model, state, float(t)).x for t in ts[:, 0]])


def parallel_transport(model, frame, along):
    """
    Transports tangent vectors along the geodesic segment `along = (state, t)`.

    For space forms the component along the ray follows the velocity and the
    orthogonal part is constant in the ambient coordinates.
    """
    state, t = along
    frame = np.atleast_2d(np.asarray(frame, dtype=float))
    t = float(t)
    if t == 0.0 or model.kind == EUCLIDEAN:
        return frame.copy()
    if model.kind == CHART:
        _, _, moved = integrate_chart(model, state.x, state.v, t, frame)
        return moved

    end = geodesic_evolve(model, state, t)
    moved = []
    for w in frame:
        a = inner(model, w, state.v)
        moved.append(a * end.v + (w - a * state.v))
    return np.array(moved)


def transport_state(model, state, t, frame):
    """Evolves a state and transports a frame along it in one call."""
    if model.kind == CHART:
        x, v, moved = integrate_chart(model, state.x, state.v, t, frame)
        return PointTangent(x, v), moved
    return geodesic_evolve(model, state, t), parallel_transport(model, frame, (state, t))


# ---------------------------- CHART INTEGRATION ----------------------------

def christoffel(chart, x):
    """Gamma[i, j, k] = 1/2 g^il (d_j g_lk + d_k g_lj - d_l g_jk)."""
    g = chart.metric(x)
    dg = chart.metric_derivative(x)
    lowered = np.transpose(dg, (1, 0, 2)) + np.transpose(dg, (1, 2, 0)) - dg
    return 0.5 * np.einsum("il,ljk->ijk", np.linalg.inv(g), lowered)


def _chart_rhs(chart, m, n_frame):
    def rhs(_, y):
        x = y[:m]
        v = y[m:2 * m]
        gamma = christoffel(chart, x)
        out = np.empty_like(y)
        out[:m] = v
        out[m:2 * m] = -np.einsum("ijk,j,k->i", gamma, v, v)
        if n_frame:
            W = y[2 * m:].reshape(n_frame, m)
            out[2 * m:] = -np.einsum("ijk,j,ak->ai", gamma, v, W).ravel()
        return out
    return rhs


def integrate_chart(model, x, v, t, frame=None):
    """
    Geodesic (and optional frame transport) ODE on a chart metric.

    Dormand-Prince 4/5 stepper; v is renormalised after every accepted step.
    """
    chart = model.chart
    m = model.dim
    frame = np.zeros((0, m)) if frame is None else np.atleast_2d(np.asarray(frame, dtype=float))
    n_frame = frame.shape[0]
    y0 = np.concatenate([np.asarray(x, float), np.asarray(v, float), frame.ravel()])
    rhs = _chart_rhs(chart, m, n_frame)
    tol = CHART_TOL * max(1.0, abs(t))
    solver = RK45(rhs, 0.0, y0, t_bound=t, rtol=CHART_TOL, atol=tol)

    while solver.status == "running":
        message = solver.step()
        if solver.status == "failed":
            raise NonFiniteState(f"chart integration failed: {message}")
        y = solver.y
        if not np.all(np.isfinite(y)):
            raise NonFiniteState(f"chart integration produced NaN/Inf at t={solver.t:.6g}")
        if np.linalg.norm(y[:m]) >= chart.bound:
            raise ChartDomainExceeded(f"left the {chart.name} chart at t={solver.t:.6g}")

        speed = norm(model, y[m:2 * m], y[:m])
        y = y.copy()
        y[m:2 * m] /= speed
        solver.y = y
        solver.f = solver.fun(solver.t, y)

    x_end = solver.y[:m].copy()
    v_end = solver.y[m:2 * m].copy()
    moved = solver.y[2 * m:].reshape(n_frame, m).copy()
    if n_frame:
        moved = _orthonormalize_like(model, x_end, moved, frame, x)
    return x_end, v_end, moved


def _orthonormalize_like(model, x_end, moved, frame_start, x_start):
    """Symmetric re-orthonormalisation that keeps the start Gram matrix."""
    target = gram_matrix(model, frame_start, x_start)
    current = gram_matrix(model, moved, x_end)
    w_cur, v_cur = np.linalg.eigh(current)
    w_tgt, v_tgt = np.linalg.eigh(target)
    inv_sqrt = v_cur @ np.diag(1.0 / np.sqrt(w_cur)) @ v_cur.T
    sqrt_t = v_tgt @ np.diag(np.sqrt(w_tgt)) @ v_tgt.T
    return sqrt_t @ inv_sqrt @ moved


# ---------------------------- CURVATURE ----------------------------

def riemann_tensor(chart, x, h=FD_STEP):
    """
    R[i, j, k, l] with R(d_k, d_l) d_j = R^i_jkl d_i, Christoffel derivatives
    by central differences.
    """
    x = np.asarray(x, dtype=float)
    m = x.size
    gamma = christoffel(chart, x)
    d_gamma = np.empty((m, m, m, m))
    for k in range(m):
        step = np.zeros(m)
        step[k] = h
        d_gamma[k] = (christoffel(chart, x + step) - christoffel(chart, x - step)) / (2 * h)
    # d_gamma[k, i, l, j] = d_k Gamma^i_lj
    term1 = np.einsum("kilj->ijkl", d_gamma)
    term2 = np.einsum("likj->ijkl", d_gamma)
    term3 = np.einsum("ikm,mlj->ijkl", gamma, gamma)
    term4 = np.einsum("ilm,mkj->ijkl", gamma, gamma)
    return term1 - term2 + term3 - term4


def sectional_curvature(model, x, X, Y):
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    wedge = inner(model, X, X, x) * inner(model, Y, Y, x) - inner(model, X, Y, x) ** 2
    if wedge < 1e-24:
        raise DegeneratePlane(f"|X ^ Y|^2 = {wedge:.3e}")
    if model.is_space_form:
        return float(model.kappa)

    R = riemann_tensor(model.chart, x)
    RXYY = np.einsum("ijkl,j,k,l->i", R, Y, X, Y)
    return float(inner(model, RXYY, X, x) / wedge)


def curvature_operator(model, x, v, frame):
    """K[a, b] = <R(e_a, v) v, e_b> on the frame orthogonal to v."""
    frame = np.atleast_2d(frame)
    if model.is_space_form:
        return model.kappa * gram_matrix(model, frame, x)
    R = riemann_tensor(model.chart, x)
    RXvv = np.einsum("ijkl,j,ak,l->ai", R, v, frame, v)
    g = model.chart.metric(x)
    return RXvv @ g @ frame.T


# ---------------------------- CHART FACTORIES ----------------------------

def conformal_chart(factor, factor_gradient, bound=np.inf, name="conformal", embedding=None):
    """
    Chart metric g = lambda(x)^2 * identity.
    factor(x) -> lambda, factor_gradient(x) -> d lambda.
    """
    def metric(x):
        lam = factor(x)
        return lam * lam * np.eye(x.size)

    def metric_derivative(x):
        lam = factor(x)
        grad = factor_gradient(x)
        return 2.0 * lam * grad[:, None, None] * np.eye(x.size)[None, :, :]

    return ChartMetric(metric, metric_derivative, bound=bound, name=name, embedding=embedding)


def round_sphere_chart(radius=1.0, dim=2):
    """Stereographic chart of the sphere of radius R from the point antipodal to the origin."""
    R2 = radius * radius

    def factor(x):
        return 2.0 * R2 / (R2 + x @ x)

    def factor_gradient(x):
        return -4.0 * R2 * x / (R2 + x @ x) ** 2

    def embedding(x):
        q = x @ x
        return np.concatenate([[radius * (R2 - q) / (R2 + q)], 2.0 * R2 * x / (R2 + q)])

    chart = conformal_chart(factor, factor_gradient, name="stereographic", embedding=embedding)
    return MetricModel(CHART, 1.0 / R2, dim, chart)


def poincare_ball_chart(radius=1.0, dim=2):
    """Poincare ball chart of the hyperbolic space with curvature -1/R^2."""
    R2 = radius * radius

    def factor(x):
        return 2.0 * R2 / (R2 - x @ x)

    def factor_gradient(x):
        return 4.0 * R2 * x / (R2 - x @ x) ** 2

    def embedding(x):
        q = x @ x
        return np.concatenate([[radius * (R2 + q) / (R2 - q)], 2.0 * R2 * x / (R2 - q)])

    chart = conformal_chart(factor, factor_gradient, bound=radius, name="poincare", embedding=embedding)
    return MetricModel(CHART, -1.0 / R2, dim, chart)
