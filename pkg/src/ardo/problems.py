"""Problem definitions: coefficients, boundary data, and builtin instances.

A :class:`PdeProblem` bundles a domain with the coefficients of

    -(1/2) sum_ij d2/dxi dxj (a_ij f) + sum_j d/dxj (b_j f) + R(f, x) = 0,

where a = sigma sigma^T, plus Dirichlet data g on the Dirichlet boundary part,
conormal flux data phi on the Neumann part and, in parabolic mode (a time
horizon with an initial condition), the extra d/dt f term.

Every coefficient callable takes ``(x, t)`` and is vectorized over a leading
batch axis; the time argument is simply ignored by stationary problems. This
keeps one calling convention across the package instead of two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import DIRICHLET, Domain

_CHECK_SEED = 181181  # fixed stream for construction-time consistency checks
_N_CHECK_POINTS = 100

Coefficient = Callable[..., np.ndarray]


def _rows(values, m: int) -> np.ndarray:
    """Normalize a callable's output to shape (m,)."""
    out = np.asarray(values, dtype=float)
    if out.ndim == 0:
        return np.full(m, float(out))
    return out.reshape(m)


@dataclass
class PdeProblem:
    """A Fokker-Planck type boundary-value problem on a :class:`Domain`.

    Parameters
    ----------
    domain : Domain
    sigma : callable(x, t) -> (m, n, n_w) or (n, n_w)
        Diffusion factor; the diffusion matrix is a = sigma sigma^T.
    n_w : int
        Number of driving noise components (columns of sigma).
    drift : callable(x, t) -> (m, n)
    source : callable(f_value, x, t) -> (m,)
        Zeroth-order term R; may be nonlinear in f_value.
    dirichlet_data : callable(x, t) -> (m,)
    neumann_data : callable(x, t) -> (m,), optional
        Required whenever the Neumann boundary part has positive measure.
    horizon, initial : float and callable(x, t) -> (m,), optional
        Supplied together they switch the problem to parabolic mode; the
        initial condition is evaluated at t = 0.
    exact_solution : callable(x, t) -> (m,), optional
        Reference solution. Checked against the Dirichlet data at
        construction (1e-8 at 100 sampled boundary points).
    source_df : callable(f_value, x, t) -> (m,), optional
        dR/df_value. When omitted, a central difference in the value
        argument is used where a slope is needed.
    """

    domain: Domain
    sigma: Coefficient
    n_w: int
    drift: Coefficient
    source: Coefficient
    dirichlet_data: Coefficient
    neumann_data: Coefficient | None = None
    horizon: float | None = None
    initial: Coefficient | None = None
    exact_solution: Coefficient | None = None
    source_df: Coefficient | None = None
    name: str = field(default="")

    def __post_init__(self):
        if self.n_w < 1:
            raise ValueError("n_w must be >= 1")
        if (self.horizon is None) != (self.initial is None):
            raise ValueError("horizon and initial must be given together")
        if self.horizon is not None and not self.horizon > 0.0:
            raise ValueError("horizon must be positive")
        if self.domain.neumann_measure > 0.0 and self.neumann_data is None:
            raise ValueError("neumann_data required: Neumann part has positive measure")
        self._check_probe_shapes()
        if self.exact_solution is not None:
            self._check_dirichlet_consistency()

    # -- construction-time checks -----------------------------------------

    def _check_probe_shapes(self):
        rng = np.random.default_rng(_CHECK_SEED)
        x = self.domain.sample_interior(3, rng)
        t = self._probe_times(3)
        s = np.asarray(self.sigma(x, t), dtype=float)
        if s.shape not in ((self.domain.dim, self.n_w), (3, self.domain.dim, self.n_w)):
            raise ValueError(
                f"sigma must return (n, n_w) or (m, n, n_w), got {s.shape}"
            )
        b = np.asarray(self.drift(x, t), dtype=float)
        if b.shape not in ((self.domain.dim,), (3, self.domain.dim)):
            raise ValueError(f"drift must return (n,) or (m, n), got {b.shape}")

    def _check_dirichlet_consistency(self):
        rng = np.random.default_rng(_CHECK_SEED + 1)
        sample = self.domain.sample_boundary(DIRICHLET, _N_CHECK_POINTS, rng)
        t = self._probe_times(_N_CHECK_POINTS, rng)
        g = self.dirichlet_at(sample.positions, t)
        f = self.exact_at(sample.positions, t)
        gap = float(np.max(np.abs(g - f)))
        if not gap <= 1e-8:
            raise ValueError(
                f"exact_solution disagrees with dirichlet_data on the boundary "
                f"(max gap {gap:.3e} > 1e-8)"
            )

    def _probe_times(self, m: int, rng: np.random.Generator | None = None):
        if self.horizon is None:
            return 0.0
        if rng is None:
            return np.full(m, 0.5 * self.horizon)
        return rng.uniform(0.0, self.horizon, size=m)

    # -- batch-shaped accessors --------------------------------------------

    @property
    def is_parabolic(self) -> bool:
        return self.horizon is not None

    def sigma_at(self, x: np.ndarray, t) -> np.ndarray:
        x = np.atleast_2d(x)
        m, n = x.shape
        s = np.asarray(self.sigma(x, t), dtype=float)
        if s.shape == (n, self.n_w):
            s = np.broadcast_to(s, (m, n, self.n_w))
        return s

    def diffusion_at(self, x: np.ndarray, t) -> np.ndarray:
        """a = sigma sigma^T, shape (m, n, n)."""
        s = self.sigma_at(x, t)
        return np.einsum("mik,mjk->mij", s, s)

    def drift_at(self, x: np.ndarray, t) -> np.ndarray:
        x = np.atleast_2d(x)
        b = np.asarray(self.drift(x, t), dtype=float)
        if b.ndim == 1:
            b = np.broadcast_to(b, x.shape)
        return b

    def source_at(self, f_value: np.ndarray, x: np.ndarray, t) -> np.ndarray:
        x = np.atleast_2d(x)
        return _rows(self.source(np.asarray(f_value, dtype=float), x, t), x.shape[0])

    def source_slope_at(self, f_value: np.ndarray, x: np.ndarray, t) -> np.ndarray:
        """dR/df at (f_value, x, t); central difference in f when no analytic slope."""
        x = np.atleast_2d(x)
        f = np.asarray(f_value, dtype=float)
        if self.source_df is not None:
            return _rows(self.source_df(f, x, t), x.shape[0])
        h = 1e-6 * np.maximum(1.0, np.abs(f))
        up = self.source_at(f + h, x, t)
        dn = self.source_at(f - h, x, t)
        return (up - dn) / (2.0 * h)

    def dirichlet_at(self, x: np.ndarray, t) -> np.ndarray:
        x = np.atleast_2d(x)
        return _rows(self.dirichlet_data(x, t), x.shape[0])

    def neumann_at(self, x: np.ndarray, t) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.neumann_data is None:
            raise ValueError("problem has no neumann_data")
        return _rows(self.neumann_data(x, t), x.shape[0])

    def exact_at(self, x: np.ndarray, t) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.exact_solution is None:
            raise ValueError("problem has no exact_solution")
        return _rows(self.exact_solution(x, t), x.shape[0])

    def initial_at(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.initial is None:
            raise ValueError("problem has no initial condition")
        return _rows(self.initial(x, 0.0), x.shape[0])


# -- builtin problems -------------------------------------------------------

_BOX_HALF_WIDTH = 2.5


def _identity_sigma(dim: int) -> Coefficient:
    eye = np.eye(dim)
    return lambda x, t: eye


def _ou_exact(x, t):
    x = np.atleast_2d(x)
    return np.exp(-np.sum(x * x, axis=1))


def _gauss_cos(x):
    """exp(-|x|^2 / 2) * (1 + 0.5 cos x_1) and helpers for its source term."""
    x = np.atleast_2d(x)
    g = np.exp(-0.5 * np.sum(x * x, axis=1))
    c = 1.0 + 0.5 * np.cos(x[:, 0])
    return g, c


def _manufactured_exact(x, t):
    g, c = _gauss_cos(x)
    return g * c


def _manufactured_linear_source(x):
    # R = (1/2) Lap f* + n f* + x . grad f* for f* = exp(-|x|^2/2)(1 + cos(x1)/2),
    # which collapses to exp(-|x|^2/2) [ C (n - |x|^2)/2 - cos(x1)/4 ].
    x = np.atleast_2d(x)
    n = x.shape[1]
    g, c = _gauss_cos(x)
    r2 = np.sum(x * x, axis=1)
    return g * (0.5 * c * (n - r2) - 0.25 * np.cos(x[:, 0]))


def _ou_stationary(dim: int) -> PdeProblem:
    domain = Domain.box([-_BOX_HALF_WIDTH] * dim, [_BOX_HALF_WIDTH] * dim)
    return PdeProblem(
        domain=domain,
        sigma=_identity_sigma(dim),
        n_w=dim,
        drift=lambda x, t: -np.atleast_2d(x),
        source=lambda f, x, t: np.zeros(np.atleast_2d(x).shape[0]),
        source_df=lambda f, x, t: np.zeros(np.atleast_2d(x).shape[0]),
        dirichlet_data=_ou_exact,
        exact_solution=_ou_exact,
        name="ou_stationary",
    )


def _manufactured_elliptic(dim: int) -> PdeProblem:
    domain = Domain.box([-_BOX_HALF_WIDTH] * dim, [_BOX_HALF_WIDTH] * dim)
    return PdeProblem(
        domain=domain,
        sigma=_identity_sigma(dim),
        n_w=dim,
        drift=lambda x, t: -np.atleast_2d(x),
        source=lambda f, x, t: _manufactured_linear_source(x),
        source_df=lambda f, x, t: np.zeros(np.atleast_2d(x).shape[0]),
        dirichlet_data=_manufactured_exact,
        exact_solution=_manufactured_exact,
        name="manufactured_elliptic",
    )


def _manufactured_semilinear(dim: int) -> PdeProblem:
    domain = Domain.box([-_BOX_HALF_WIDTH] * dim, [_BOX_HALF_WIDTH] * dim)

    def source(f, x, t):
        f = np.asarray(f, dtype=float)
        fstar = _manufactured_exact(x, t)
        return f**3 - fstar**3 + _manufactured_linear_source(x)

    return PdeProblem(
        domain=domain,
        sigma=_identity_sigma(dim),
        n_w=dim,
        drift=lambda x, t: -np.atleast_2d(x),
        source=source,
        source_df=lambda f, x, t: 3.0 * np.asarray(f, dtype=float) ** 2,
        dirichlet_data=_manufactured_exact,
        exact_solution=_manufactured_exact,
        name="manufactured_semilinear",
    )


_HEAT_T0 = 0.25
_HEAT_HORIZON = 0.5


def _gaussian_kernel(x, variance) -> np.ndarray:
    x = np.atleast_2d(x)
    n = x.shape[1]
    r2 = np.sum(x * x, axis=1)
    return (2.0 * math.pi * variance) ** (-n / 2.0) * np.exp(-r2 / (2.0 * variance))


def _heat_exact(x, t):
    return _gaussian_kernel(x, _HEAT_T0 + np.asarray(t, dtype=float))


def _heat_parabolic(dim: int) -> PdeProblem:
    domain = Domain.box([-_BOX_HALF_WIDTH] * dim, [_BOX_HALF_WIDTH] * dim)
    return PdeProblem(
        domain=domain,
        sigma=_identity_sigma(dim),
        n_w=dim,
        drift=lambda x, t: np.zeros_like(np.atleast_2d(x)),
        source=lambda f, x, t: np.zeros(np.atleast_2d(x).shape[0]),
        source_df=lambda f, x, t: np.zeros(np.atleast_2d(x).shape[0]),
        dirichlet_data=_heat_exact,
        horizon=_HEAT_HORIZON,
        initial=_heat_exact,
        exact_solution=_heat_exact,
        name="heat_parabolic",
    )


_OU_PARABOLIC_S0 = 0.25
_OU_PARABOLIC_HORIZON = 0.5


def _ou_parabolic_exact(x, t):
    # Variance of the OU marginal: s' = 1 - 2 s, s(0) = 1/4.
    s = 0.5 + (_OU_PARABOLIC_S0 - 0.5) * np.exp(-2.0 * np.asarray(t, dtype=float))
    return _gaussian_kernel(x, s)


def _ou_parabolic(dim: int) -> PdeProblem:
    domain = Domain.box([-_BOX_HALF_WIDTH] * dim, [_BOX_HALF_WIDTH] * dim)
    return PdeProblem(
        domain=domain,
        sigma=_identity_sigma(dim),
        n_w=dim,
        drift=lambda x, t: -np.atleast_2d(x),
        source=lambda f, x, t: np.zeros(np.atleast_2d(x).shape[0]),
        source_df=lambda f, x, t: np.zeros(np.atleast_2d(x).shape[0]),
        dirichlet_data=_ou_parabolic_exact,
        horizon=_OU_PARABOLIC_HORIZON,
        initial=_ou_parabolic_exact,
        exact_solution=_ou_parabolic_exact,
        name="ou_parabolic",
    )


_BUILTINS: dict[str, Callable[[int], PdeProblem]] = {
    "ou_stationary": _ou_stationary,
    "manufactured_elliptic": _manufactured_elliptic,
    "manufactured_semilinear": _manufactured_semilinear,
    "heat_parabolic": _heat_parabolic,
    "ou_parabolic": _ou_parabolic,
}


def builtin_problem(name: str, dim: int) -> PdeProblem:
    """Instantiate a named builtin problem in the requested dimension."""
    if name not in _BUILTINS:
        known = ", ".join(sorted(_BUILTINS))
        raise ValueError(f"unknown problem '{name}'; available: {known}")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    return _BUILTINS[name](dim)


def builtin_problem_names() -> tuple[str, ...]:
    return tuple(sorted(_BUILTINS))


# -- strong-form residual (finite differences, diagnostic) ------------------


def pde_residual(problem: PdeProblem, candidate: Coefficient, x, t=None) -> float:
    """Strong-form residual of ``candidate`` at one interior point.

    Central second-order differences with step h = 1e-4 * domain diameter,
    applied to the products a_ij * candidate and b_j * candidate (the
    divergence-form operator). Parabolic problems add a central time
    difference of the candidate. Diagnostic tool: it differentiates the
    candidate numerically, so it must never appear on a training path.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    n = problem.domain.dim
    if x.size != n:
        raise ValueError(f"x must have length {n}")
    h = 1e-4 * problem.domain.diameter
    if not problem.domain.boundary_distance(x[None, :])[0] > 2.0 * h:
        raise ValueError("stencil exits domain: x within 2h of the boundary")
    if problem.is_parabolic:
        if t is None:
            raise ValueError("parabolic problem needs t")
        ht = 1e-4 * problem.horizon
        if not (2.0 * ht < t < problem.horizon - 2.0 * ht):
            raise ValueError("stencil exits domain: t within 2h of the time interval ends")
    tval = 0.0 if t is None else float(t)

    def fval(points, tt):
        return _rows(candidate(np.atleast_2d(points), tt), np.atleast_2d(points).shape[0])

    def product_a(points, i, j):
        pts = np.atleast_2d(points)
        a = problem.diffusion_at(pts, tval)
        return a[:, i, j] * fval(pts, tval)

    def product_b(points, j):
        pts = np.atleast_2d(points)
        b = problem.drift_at(pts, tval)
        return b[:, j] * fval(pts, tval)

    second = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                pts = np.array([x + h * _e(n, i), x, x - h * _e(n, i)])
                vals = product_a(pts, i, i)
                second += (vals[0] - 2.0 * vals[1] + vals[2]) / h**2
            else:
                pts = np.array(
                    [
                        x + h * _e(n, i) + h * _e(n, j),
                        x + h * _e(n, i) - h * _e(n, j),
                        x - h * _e(n, i) + h * _e(n, j),
                        x - h * _e(n, i) - h * _e(n, j),
                    ]
                )
                vals = product_a(pts, i, j)
                second += (vals[0] - vals[1] - vals[2] + vals[3]) / (4.0 * h**2)

    first = 0.0
    for j in range(n):
        pts = np.array([x + h * _e(n, j), x - h * _e(n, j)])
        vals = product_b(pts, j)
        first += (vals[0] - vals[1]) / (2.0 * h)

    fx = fval(x[None, :], tval)
    residual = -0.5 * second + first + float(problem.source_at(fx, x[None, :], tval)[0])

    if problem.is_parabolic:
        ht = 1e-4 * problem.horizon
        up = fval(x[None, :], tval + ht)[0]
        dn = fval(x[None, :], tval - ht)[0]
        residual += (up - dn) / (2.0 * ht)
    return float(residual)


def _e(n: int, k: int) -> np.ndarray:
    v = np.zeros(n)
    v[k] = 1.0
    return v
