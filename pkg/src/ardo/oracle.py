"""Deterministic cross-checks for the Monte Carlo estimator.

Everything in this module is test scaffolding, not the method: it is allowed
to differentiate anything it likes (test functions, candidate solutions, all
by finite differences), precisely so the derivative-free training path can be
checked against an independent route. Nothing here may be imported by the
estimator or trainer.

Quadrature is restricted to stationary problems in dimension <= 3; the
parabolic path is validated by Monte Carlo identities and end-to-end runs.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .estimator import StepParams, estimate_interior, generator_difference
from .geometry import DIRICHLET, Domain
from .problems import PdeProblem

# 4th-order central first-derivative stencil (offsets / coefficients).
_D1_OFFSETS = np.array([-2.0, -1.0, 1.0, 2.0])
_D1_COEFFS = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0
# 4th-order central second-derivative stencil.
_D2_OFFSETS = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
_D2_COEFFS = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


def _fd_step(domain: Domain) -> float:
    return 1e-5 * domain.diameter


def _axis_shift(x: np.ndarray, axis: int, delta: float) -> np.ndarray:
    shifted = x.copy()
    shifted[:, axis] += delta
    return shifted


def _grad_rows(fn: Callable, x: np.ndarray, h: float) -> np.ndarray:
    """4th-order central gradient of fn at each row of x, shape (m, n)."""
    m, n = x.shape
    out = np.empty((m, n))
    for axis in range(n):
        acc = np.zeros(m)
        for off, coef in zip(_D1_OFFSETS, _D1_COEFFS):
            acc += coef * np.asarray(fn(_axis_shift(x, axis, off * h), None), dtype=float)
        out[:, axis] = acc / h
    return out


def _hessian_rows(fn: Callable, x: np.ndarray, h: float) -> np.ndarray:
    """4th-order central Hessian of fn at each row of x, shape (m, n, n)."""
    m, n = x.shape
    out = np.empty((m, n, n))
    for i in range(n):
        acc = np.zeros(m)
        for off, coef in zip(_D2_OFFSETS, _D2_COEFFS):
            acc += coef * np.asarray(fn(_axis_shift(x, i, off * h), None), dtype=float)
        out[:, i, i] = acc / (h * h)
    for i in range(n):
        for j in range(i + 1, n):
            acc = np.zeros(m)
            for oi, ci in zip(_D1_OFFSETS, _D1_COEFFS):
                for oj, cj in zip(_D1_OFFSETS, _D1_COEFFS):
                    pts = _axis_shift(_axis_shift(x, i, oi * h), j, oj * h)
                    acc += ci * cj * np.asarray(fn(pts, None), dtype=float)
            out[:, i, j] = out[:, j, i] = acc / (h * h)
    return out


# -- quadrature grids ---------------------------------------------------------


@dataclass(frozen=True)
class FaceQuad:
    """Quadrature over one boundary face: nodes, surface weights, normals."""

    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray
    kind: str


@dataclass(frozen=True)
class QuadratureGrid:
    """Interior and boundary quadrature nodes for a domain."""

    interior_points: np.ndarray
    interior_weights: np.ndarray
    boundary_faces: tuple[FaceQuad, ...]
    nodes_per_axis: int
    rule: str

    @property
    def interior_weight_sum(self) -> float:
        return float(np.sum(self.interior_weights))

    def boundary_weight_sum(self, kind: str | None = None) -> float:
        total = 0.0
        for face in self.boundary_faces:
            if kind is None or face.kind == kind:
                total += float(np.sum(face.weights))
        return total


def _gauss_nodes(lo: float, hi: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    xi, wi = np.polynomial.legendre.leggauss(n)
    mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
    return mid + half * xi, half * wi


def tensor_grid(domain: Domain, nodes_per_axis: int = 32) -> QuadratureGrid:
    """Gauss-Legendre tensor grid for boxes; polar/spherical grids for balls."""
    if nodes_per_axis < 2:
        raise ValueError("nodes_per_axis must be >= 2")
    if domain.shape == "box":
        return _box_grid(domain, nodes_per_axis)
    if domain.dim == 1:
        return _interval_ball_grid(domain, nodes_per_axis)
    if domain.dim == 2:
        return _disk_grid(domain, nodes_per_axis)
    if domain.dim == 3:
        return _ball3_grid(domain, nodes_per_axis)
    raise ValueError("oracle restricted to low dimension (dim <= 3 for ball grids)")


def _box_grid(domain: Domain, n: int) -> QuadratureGrid:
    dim = domain.dim
    axes = [_gauss_nodes(domain.lower[k], domain.upper[k], n) for k in range(dim)]
    mesh = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    points = np.column_stack([g.reshape(-1) for g in mesh])
    wmesh = np.meshgrid(*[a[1] for a in axes], indexing="ij")
    weights = np.ones(points.shape[0])
    for g in wmesh:
        weights = weights * g.reshape(-1)

    faces = []
    for axis in range(dim):
        others = [k for k in range(dim) if k != axis]
        if others:
            sub = np.meshgrid(*[axes[k][0] for k in others], indexing="ij")
            sub_pts = np.column_stack([g.reshape(-1) for g in sub])
            subw = np.meshgrid(*[axes[k][1] for k in others], indexing="ij")
            sub_wts = np.ones(sub_pts.shape[0])
            for g in subw:
                sub_wts = sub_wts * g.reshape(-1)
        else:
            sub_pts = np.zeros((1, 0))
            sub_wts = np.ones(1)
        for side, value, sign in (
            ("low", domain.lower[axis], -1.0),
            ("high", domain.upper[axis], 1.0),
        ):
            pts = np.empty((sub_pts.shape[0], dim))
            pts[:, axis] = value
            for col, k in enumerate(others):
                pts[:, k] = sub_pts[:, col]
            normals = np.zeros_like(pts)
            normals[:, axis] = sign
            kind = DIRICHLET if (axis, side) in domain.dirichlet_faces else "neumann"
            faces.append(FaceQuad(pts, sub_wts.copy(), normals, kind))
    return QuadratureGrid(points, weights, tuple(faces), n, "gauss-legendre tensor")


def _interval_ball_grid(domain: Domain, n: int) -> QuadratureGrid:
    c, r = domain.center[0], domain.radius
    nodes, weights = _gauss_nodes(c - r, c + r, n)
    points = nodes[:, None]
    faces = []
    for value, sign in ((c - r, -1.0), (c + r, 1.0)):
        faces.append(
            FaceQuad(
                np.array([[value]]), np.array([1.0]), np.array([[sign]]), DIRICHLET
            )
        )
    return QuadratureGrid(points, weights, tuple(faces), n, "gauss-legendre interval")


def _disk_grid(domain: Domain, n: int) -> QuadratureGrid:
    r_nodes, r_weights = _gauss_nodes(0.0, domain.radius, n)
    n_theta = 2 * n
    theta = (np.arange(n_theta) + 0.5) * (2.0 * math.pi / n_theta)
    w_theta = 2.0 * math.pi / n_theta
    rr, tt = np.meshgrid(r_nodes, theta, indexing="ij")
    points = domain.center + np.column_stack(
        [(rr * np.cos(tt)).reshape(-1), (rr * np.sin(tt)).reshape(-1)]
    )
    weights = (np.meshgrid(r_weights * r_nodes, np.full(n_theta, w_theta), indexing="ij")[0]
               * w_theta).reshape(-1)
    normals = np.column_stack([np.cos(theta), np.sin(theta)])
    circle = FaceQuad(
        domain.center + domain.radius * normals,
        np.full(n_theta, domain.radius * w_theta),
        normals,
        DIRICHLET,
    )
    return QuadratureGrid(points, weights, (circle,), n, "polar")


def _ball3_grid(domain: Domain, n: int) -> QuadratureGrid:
    r_nodes, r_weights = _gauss_nodes(0.0, domain.radius, n)
    mu_nodes, mu_weights = _gauss_nodes(-1.0, 1.0, n)
    n_phi = 2 * n
    phi = (np.arange(n_phi) + 0.5) * (2.0 * math.pi / n_phi)
    w_phi = 2.0 * math.pi / n_phi
    rr, mm, pp = np.meshgrid(r_nodes, mu_nodes, phi, indexing="ij")
    sin_theta = np.sqrt(1.0 - mm**2)
    points = domain.center + np.column_stack(
        [
            (rr * sin_theta * np.cos(pp)).reshape(-1),
            (rr * sin_theta * np.sin(pp)).reshape(-1),
            (rr * mm).reshape(-1),
        ]
    )
    wr, wm, _ = np.meshgrid(r_weights * r_nodes**2, mu_weights, phi, indexing="ij")
    weights = (wr * wm * w_phi).reshape(-1)
    mm2, pp2 = np.meshgrid(mu_nodes, phi, indexing="ij")
    sin2 = np.sqrt(1.0 - mm2**2)
    normals = np.column_stack(
        [(sin2 * np.cos(pp2)).reshape(-1), (sin2 * np.sin(pp2)).reshape(-1), mm2.reshape(-1)]
    )
    wm2, _ = np.meshgrid(mu_weights, phi, indexing="ij")
    sphere = FaceQuad(
        domain.center + domain.radius * normals,
        (wm2 * w_phi).reshape(-1) * domain.radius**2,
        normals,
        DIRICHLET,
    )
    return QuadratureGrid(points, weights, (sphere,), n, "spherical")


# -- weak-form quadrature -----------------------------------------------------


def weakform_quadrature(
    problem: PdeProblem, f: Callable, rho: Callable, grid: QuadratureGrid
) -> tuple[float, float, float]:
    """Deterministic quadrature of the weak form's three integrals.

    Test-function derivatives are 4th-order central differences with step
    h = 1e-5 * diameter. This oracle differentiates rho freely; it exists
    outside the derivative-free constraint and must stay off training paths.
    """
    if problem.domain.dim > 3:
        raise ValueError("oracle restricted to low dimension")
    if problem.is_parabolic:
        raise ValueError("quadrature oracle covers stationary problems only")
    if grid.nodes_per_axis < 16:
        raise ValueError("grid resolution must be >= 16 nodes per axis")

    h = _fd_step(problem.domain)
    x = grid.interior_points
    w = grid.interior_weights
    f_x = np.asarray(f(x, None), dtype=float).reshape(-1)
    rho_x = np.asarray(rho(x, None), dtype=float).reshape(-1)
    a = problem.diffusion_at(x, 0.0)
    b = problem.drift_at(x, 0.0)
    grad_rho = _grad_rows(rho, x, h)
    hess_rho = _hessian_rows(rho, x, h)
    r_x = problem.source_at(f_x, x, 0.0)
    integrand = (
        -0.5 * np.einsum("mij,mij->m", hess_rho, a) * f_x
        - np.einsum("mj,mj->m", grad_rho, b) * f_x
        + rho_x * r_x
    )
    s_interior = float(np.sum(w * integrand))

    s_dirichlet = 0.0
    s_neumann = 0.0
    for face in grid.boundary_faces:
        pts, wts, nus = face.points, face.weights, face.normals
        a_face = problem.diffusion_at(pts, 0.0)
        conormal = np.einsum("mij,mj->mi", a_face, nus)
        grad_face = _grad_rows(rho, pts, h)
        directional = np.einsum("mi,mi->m", grad_face, conormal)
        if face.kind == DIRICHLET:
            g = problem.dirichlet_at(pts, 0.0)
            s_dirichlet += float(np.sum(wts * 0.5 * directional * g))
        else:
            phi = problem.neumann_at(pts, 0.0)
            rho_face = np.asarray(rho(pts, None), dtype=float).reshape(-1)
            f_face = np.asarray(f(pts, None), dtype=float).reshape(-1)
            s_neumann += float(
                np.sum(wts * (-rho_face * phi + 0.5 * directional * f_face))
            )
    return s_interior, s_dirichlet, s_neumann


def strong_residual_rows(
    problem: PdeProblem, candidate: Callable, x: np.ndarray
) -> np.ndarray:
    """Strong-form residual of a stationary candidate at each row of x.

    4th-order differences of the products a_ij*candidate and b_j*candidate
    with step h = 1e-5 * diameter; the candidate and the coefficients must be
    evaluable in a small neighborhood of the nodes (they extend smoothly).
    """
    h = _fd_step(problem.domain)
    x = np.atleast_2d(x)
    m, n = x.shape

    def product_a(pts, i, j):
        aa = problem.diffusion_at(pts, 0.0)
        cc = np.asarray(candidate(pts, None), dtype=float).reshape(pts.shape[0])
        return aa[:, i, j] * cc

    def product_b(pts, j):
        bb = problem.drift_at(pts, 0.0)
        cc = np.asarray(candidate(pts, None), dtype=float).reshape(pts.shape[0])
        return bb[:, j] * cc

    second = np.zeros(m)
    for i in range(n):
        acc = np.zeros(m)
        for off, coef in zip(_D2_OFFSETS, _D2_COEFFS):
            acc += coef * product_a(_axis_shift(x, i, off * h), i, i)
        second += acc / (h * h)
        for j in range(i + 1, n):
            acc = np.zeros(m)
            for oi, ci in zip(_D1_OFFSETS, _D1_COEFFS):
                for oj, cj in zip(_D1_OFFSETS, _D1_COEFFS):
                    pts = _axis_shift(_axis_shift(x, i, oi * h), j, oj * h)
                    acc += ci * cj * product_a(pts, i, j)
            second += 2.0 * acc / (h * h)  # a symmetric: (i,j) and (j,i) terms

    first = np.zeros(m)
    for j in range(n):
        acc = np.zeros(m)
        for off, coef in zip(_D1_OFFSETS, _D1_COEFFS):
            acc += coef * product_b(_axis_shift(x, j, off * h), j)
        first += acc / h

    c_x = np.asarray(candidate(x, None), dtype=float).reshape(m)
    return -0.5 * second + first + problem.source_at(c_x, x, 0.0)


def conormal_flux_rows(
    problem: PdeProblem, candidate: Callable, positions: np.ndarray, normals: np.ndarray
) -> np.ndarray:
    """sum_j nu_j [ (1/2) sum_i d_i(a_ij c) - b_j c ] at boundary rows."""
    h = _fd_step(problem.domain)
    pts = np.atleast_2d(positions)
    nus = np.atleast_2d(normals)
    m, n = pts.shape

    def product_a(points, i, j):
        aa = problem.diffusion_at(points, 0.0)
        cc = np.asarray(candidate(points, None), dtype=float).reshape(points.shape[0])
        return aa[:, i, j] * cc

    flux = np.zeros(m)
    for j in range(n):
        inner = np.zeros(m)
        for i in range(n):
            acc = np.zeros(m)
            for off, coef in zip(_D1_OFFSETS, _D1_COEFFS):
                acc += coef * product_a(_axis_shift(pts, i, off * h), i, j)
            inner += acc / h
        b = problem.drift_at(pts, 0.0)
        c = np.asarray(candidate(pts, None), dtype=float).reshape(m)
        flux += nus[:, j] * (0.5 * inner - b[:, j] * c)
    return flux


# -- experiments --------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorRow:
    tau: float
    mean: float
    std_error: float
    analytic: float
    bias: float


GENERATOR_TABLE_HEADER = "tau,mean,std_error,analytic,bias"


def generator_consistency_experiment(
    problem: PdeProblem,
    rho: Callable,
    x,
    tau_list: Sequence[float],
    m_samples: int,
    rng: np.random.Generator | None = None,
) -> list[GeneratorRow]:
    """Empirical mean of the one-step difference quotient against the
    finite-difference generator value, per tau."""
    rng = rng if rng is not None else np.random.default_rng()
    x = np.asarray(x, dtype=float).reshape(1, -1)
    h = _fd_step(problem.domain)
    a = problem.diffusion_at(x, 0.0)[0]
    b = problem.drift_at(x, 0.0)[0]
    grad = _grad_rows(rho, x, h)[0]
    hess = _hessian_rows(rho, x, h)[0]
    analytic = 0.5 * float(np.sum(a * hess)) + float(np.dot(b, grad))

    base = np.broadcast_to(x, (m_samples, x.shape[1]))
    rows = []
    for tau in tau_list:
        step = StepParams(tau, tau, 1)
        vals = generator_difference(problem, rho, np.array(base), step, rng)
        mean = float(np.mean(vals))
        se = float(np.std(vals, ddof=1)) / math.sqrt(m_samples)
        rows.append(GeneratorRow(tau, mean, se, analytic, abs(mean - analytic)))
    return rows


@dataclass(frozen=True)
class VarianceRow:
    tau: float
    variance: float


VARIANCE_TABLE_HEADER = "tau,variance"


def variance_scaling_experiment(
    problem: PdeProblem,
    f: Callable,
    rho: Callable,
    tau_list: Sequence[float],
    m_interior: int,
    trials: int,
    rng: np.random.Generator | None = None,
) -> tuple[list[VarianceRow], float]:
    """Variance of the interior estimator across independent trials, per tau,
    plus the least-squares slope of log Var against log tau.

    Use at least 50 trials for a stable variance estimate; fewer than 2 is an
    error because the sample variance is undefined.
    """
    if trials < 2:
        raise ValueError("insufficient trials: need >= 2 (and >= 50 for stable results)")
    rng = rng if rng is not None else np.random.default_rng()
    rows = []
    for tau in tau_list:
        step = StepParams(tau, tau, 1)
        values = np.empty(trials)
        for k in range(trials):
            x = problem.domain.sample_interior(m_interior, rng)
            values[k], _ = estimate_interior(problem, f, rho, x, step, rng)
        rows.append(VarianceRow(tau, float(np.var(values, ddof=1))))
    logs = np.log([r.tau for r in rows]), np.log([r.variance for r in rows])
    slope = float(np.polyfit(logs[0], logs[1], 1)[0])
    return rows, slope


def write_generator_table(rows: Sequence[GeneratorRow], path) -> None:
    lines = [GENERATOR_TABLE_HEADER] + [
        f"{r.tau!r},{r.mean!r},{r.std_error!r},{r.analytic!r},{r.bias!r}" for r in rows
    ]
    _atomic_write(path, "\n".join(lines) + "\n")


def write_variance_table(rows: Sequence[VarianceRow], path) -> None:
    lines = [VARIANCE_TABLE_HEADER] + [f"{r.tau!r},{r.variance!r}" for r in rows]
    _atomic_write(path, "\n".join(lines) + "\n")


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
