import numpy as np
from scipy.stats import norm as gaussian
from scipy.stats import qmc


def halton_points(n, dim, seed=0, scramble=True):
    """n points of a (scrambled) Halton sequence in [0, 1)^dim."""
    sampler = qmc.Halton(d=dim, scramble=scramble, seed=seed)
    if not scramble:
        sampler.fast_forward(1)  # skip the origin
    return sampler.random(n)


def cube_dim(dim):
    """Number of unit-cube coordinates unit_vectors_from_cube needs for R^dim."""
    return dim - 1 if dim <= 3 else dim


def unit_vectors_from_cube(h, dim):
    """
    Maps points of the unit cube (cube_dim(dim) columns) to the unit sphere
    in R^dim. Circle and 2-sphere use the area-preserving maps, higher
    dimensions go through normal quantiles.
    """
    h = np.atleast_2d(h)
    if dim == 2:
        phi = 2.0 * np.pi * h[:, 0]
        return np.column_stack([np.cos(phi), np.sin(phi)])
    if dim == 3:
        z = 2.0 * h[:, 0] - 1.0
        phi = 2.0 * np.pi * h[:, 1]
        rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    g = gaussian.ppf(np.clip(h[:, :dim], 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def hemisphere_from_cube(h, dim):
    """
    Unit vectors with positive first component (the inward normal axis).
    Uniform in angle for dim 2, uniform in solid angle otherwise.
    """
    h = np.atleast_2d(h)
    if dim == 2:
        alpha = np.pi * (h[:, 0] - 0.5)
        return np.column_stack([np.cos(alpha), np.sin(alpha)])
    if dim == 3:
        d0 = np.clip(h[:, 0], 1e-9, 1.0)
        phi = 2.0 * np.pi * h[:, 1]
        rho = np.sqrt(1.0 - d0 * d0)
        return np.column_stack([d0, rho * np.cos(phi), rho * np.sin(phi)])
    u = unit_vectors_from_cube(h, dim)
    u[:, 0] = np.maximum(np.abs(u[:, 0]), 1e-9)
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def grid_directions(n, dim):
    """Deterministic, evenly spread unit vectors (circle, Fibonacci sphere, Halton)."""
    if dim == 2:
        phi = 2.0 * np.pi * np.arange(n) / n
        return np.column_stack([np.cos(phi), np.sin(phi)])
    if dim == 3:
        i = np.arange(n) + 0.5
        z = 1.0 - 2.0 * i / n
        phi = np.pi * (1.0 + 5 ** 0.5) * i
        rho = np.sqrt(1.0 - z * z)
        return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    return unit_vectors_from_cube(halton_points(n, cube_dim(dim), scramble=False), dim)


def grid_hemisphere(n, dim):
    """Inward directions on an even grid, never tangent to the boundary."""
    if dim == 2:
        alpha = -0.5 * np.pi + np.pi * (np.arange(n) + 0.5) / n
        return np.column_stack([np.cos(alpha), np.sin(alpha)])
    if dim == 3:
        i = np.arange(n) + 0.5
        d0 = 1.0 - i / n
        phi = np.pi * (1.0 + 5 ** 0.5) * i
        rho = np.sqrt(1.0 - d0 * d0)
        return np.column_stack([d0, rho * np.cos(phi), rho * np.sin(phi)])
    return hemisphere_from_cube(halton_points(n, cube_dim(dim), scramble=False), dim)


def orthonormal_complement(u):
    """
    Columns spanning the orthogonal complement of the unit vector u, shape (m, m - 1).
    In the plane this is u rotated by +90 degrees.
    """
    u = np.asarray(u, dtype=float)
    if u.size == 2:
        return np.array([[-u[1]], [u[0]]])
    q, _ = np.linalg.qr(np.column_stack([u, np.eye(u.size)]))
    if q[:, 0] @ u < 0:
        q = -q
    return q[:, 1:u.size]
