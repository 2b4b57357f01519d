"""Monte Carlo estimation of the weak-form loss.

All differential structure lives on the test function rho: the interior term
replaces (1/2) sum a_ij d2_ij rho + sum b_j d_j rho by the one-step random
difference (rho(X_tau) - rho(x)) / tau along an Euler step of the underlying
SDE, and the boundary terms replace the conormal derivative of rho by a
directional difference. The solution field f enters through pointwise values
only; the handles passed in here are plain callables and nothing in this
module asks them for derivatives.

Estimator sums are reduced with numpy's pairwise summation over arrays whose
order is fixed by the batch, and candidate/test evaluations are routed
through fixed-size row chunks; the ARDO_THREADS environment variable only
chooses how many worker threads map those chunks, so results are bitwise
identical for any thread count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DivergenceError
from .geometry import BoundaryPoint, BoundarySample, DIRICHLET, NEUMANN
from .problems import PdeProblem

NORM_FLOOR = 1e-10  # denominator guard for the normalized loss
_CHUNK = 4096       # fixed evaluation chunk; never depends on the lane count


def lane_count() -> int:
    """Worker-thread cap for chunked evaluations (env ARDO_THREADS)."""
    raw = os.environ.get("ARDO_THREADS", "")
    try:
        lanes = int(raw)
    except ValueError:
        lanes = 0
    if lanes < 1:
        lanes = min(4, os.cpu_count() or 1)
    return lanes


def _eval_rows(fn: Callable, x: np.ndarray, t) -> np.ndarray:
    """fn over rows of x in fixed chunks; parallel lanes never change results."""
    m = x.shape[0]
    spans = [(lo, min(lo + _CHUNK, m)) for lo in range(0, m, _CHUNK)]

    def piece(span):
        lo, hi = span
        tt = t if (t is None or np.ndim(t) == 0) else t[lo:hi]
        return np.asarray(fn(x[lo:hi], tt), dtype=float).reshape(hi - lo)

    lanes = lane_count()
    if len(spans) > 1 and lanes > 1:
        with ThreadPoolExecutor(max_workers=lanes) as pool:
            parts = list(pool.map(piece, spans))
    else:
        parts = [piece(s) for s in spans]
    return parts[0] if len(parts) == 1 else np.concatenate(parts)


@dataclass(frozen=True)
class StepParams:
    """Random-difference step sizes: tau for the interior generator difference,
    tau_tilde for the boundary directional difference, replicates per point."""

    tau: float
    tau_tilde: float
    replicates: int = 1

    def __post_init__(self):
        if not (self.tau > 0.0 and math.isfinite(self.tau)):
            raise ValueError("tau must be positive and finite")
        if not (self.tau_tilde > 0.0 and math.isfinite(self.tau_tilde)):
            raise ValueError("tau_tilde must be positive and finite")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")


@dataclass
class Batch:
    """One sampling of interior/boundary collocation points.

    Time arrays are None for stationary problems; ``initial`` holds the fresh
    points where the initial-condition term of a parabolic problem is read.
    """

    interior: np.ndarray
    interior_times: np.ndarray | None = None
    dirichlet: BoundarySample | None = None
    dirichlet_times: np.ndarray | None = None
    neumann: BoundarySample | None = None
    neumann_times: np.ndarray | None = None
    initial: np.ndarray | None = None


def sample_batch(
    problem: PdeProblem,
    m_interior: int,
    m_dirichlet: int,
    m_neumann: int,
    rng: np.random.Generator,
    m_initial: int | None = None,
) -> Batch:
    """Draw a fresh i.i.d. batch for one loss estimate.

    Counts of zero skip the corresponding part; requesting points from a
    zero-measure boundary part raises (see Domain.sample_boundary).
    """
    if m_interior < 1:
        raise ValueError("m_interior must be >= 1")
    dom = problem.domain
    horizon = problem.horizon

    interior = dom.sample_interior(m_interior, rng)
    interior_times = None
    if problem.is_parabolic:
        interior_times = rng.uniform(0.0, horizon, size=m_interior)

    dirichlet = dirichlet_times = None
    if m_dirichlet > 0:
        dirichlet = dom.sample_boundary(DIRICHLET, m_dirichlet, rng)
        if problem.is_parabolic:
            dirichlet_times = rng.uniform(0.0, horizon, size=m_dirichlet)

    neumann = neumann_times = None
    if m_neumann > 0:
        neumann = dom.sample_boundary(NEUMANN, m_neumann, rng)
        if problem.is_parabolic:
            neumann_times = rng.uniform(0.0, horizon, size=m_neumann)

    initial = None
    if problem.is_parabolic:
        m0 = m_interior if m_initial is None else int(m_initial)
        if m0 < 1:
            raise ValueError("m_initial must be >= 1 for parabolic problems")
        initial = dom.sample_interior(m0, rng)

    return Batch(interior, interior_times, dirichlet, dirichlet_times,
                 neumann, neumann_times, initial)


# -- elementary steps --------------------------------------------------------


def euler_step(problem: PdeProblem, x, tau: float, rng: np.random.Generator, t=None):
    """One Euler-Maruyama step x + tau b + sqrt(tau) sigma xi, xi ~ N(0, I).

    Accepts a single point or a batch of rows. For parabolic problems called
    with a time, returns ``(positions, t + tau)``: time advances with unit
    drift and no noise.
    """
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    pts = np.atleast_2d(arr)
    tval = 0.0 if t is None else t
    b = problem.drift_at(pts, tval)
    s = problem.sigma_at(pts, tval)
    xi = rng.standard_normal((pts.shape[0], problem.n_w))
    moved = pts + tau * b + math.sqrt(tau) * np.einsum("mij,mj->mi", s, xi)
    out = moved[0] if single else moved
    if problem.is_parabolic and t is not None:
        return out, (t + tau if np.ndim(t) else float(t) + tau)
    return out


def generator_difference(
    problem: PdeProblem,
    rho: Callable,
    x,
    step: StepParams,
    rng: np.random.Generator,
    t=None,
):
    """(rho(X_tau) - rho(x)) / tau averaged over the step replicates.

    The expectation of this quantity converges, as tau -> 0, to the generator
    (1/2) sum a_ij d2_ij rho + sum b_j d_j rho applied at x (plus d/dt in
    parabolic mode); no derivative of rho is ever formed.
    """
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    pts = np.atleast_2d(arr)
    rho_x = _eval_rows(rho, pts, t)
    if not np.all(np.isfinite(rho_x)):
        raise DivergenceError("test function overflow: non-finite rho at base points")
    acc = np.zeros(pts.shape[0])
    for _ in range(step.replicates):
        if problem.is_parabolic and t is not None:
            moved, t_new = euler_step(problem, pts, step.tau, rng, t=t)
        else:
            moved = euler_step(problem, pts, step.tau, rng, t=t)
            t_new = t
        rho_moved = _eval_rows(rho, moved, t_new)
        if not np.all(np.isfinite(rho_moved)):
            raise DivergenceError("test function overflow: non-finite rho at stepped points")
        acc += rho_moved - rho_x
    out = acc / (step.replicates * step.tau)
    return float(out[0]) if single else out


def boundary_directional_difference(
    problem: PdeProblem,
    rho: Callable,
    position,
    normal=None,
    tau_tilde: float = 1e-3,
    t=None,
):
    """Directional difference (rho(x + tau_tilde A nu) - rho(x)) / tau_tilde
    with shift components (A nu)_i = sum_j a_ij nu_j.

    ``position`` may be a BoundaryPoint, a single position with ``normal``,
    or batched rows of positions and normals.
    """
    if isinstance(position, BoundaryPoint):
        if normal is not None:
            raise ValueError("pass either a BoundaryPoint or position+normal")
        normal = position.normal
        position = position.position
    arr = np.asarray(position, dtype=float)
    single = arr.ndim == 1
    pts = np.atleast_2d(arr)
    nus = np.atleast_2d(np.asarray(normal, dtype=float))
    diff, _, _ = _boundary_difference_parts(problem, rho, pts, nus, tau_tilde, t)
    return float(diff[0]) if single else diff


def _boundary_difference_parts(problem, rho, pts, nus, tau_tilde, t):
    tval = 0.0 if t is None else t
    a = problem.diffusion_at(pts, tval)
    shifted = pts + tau_tilde * np.einsum("mij,mj->mi", a, nus)
    rho_base = _eval_rows(rho, pts, t)
    rho_shifted = _eval_rows(rho, shifted, t)
    diff = (rho_shifted - rho_base) / tau_tilde
    return diff, shifted, rho_base


# -- loss estimation ---------------------------------------------------------


@dataclass
class LossTrace:
    """Evaluation points and raw-sum sensitivities kept for training.

    ``f_coeffs[i]`` is d(S_interior + S_dirichlet + S_neumann)/d f(f_points[i])
    and ``rho_coeffs`` the same for evaluations of rho; ``norm_coeffs`` holds
    d(test_norm)/d rho at the interior points. All derivatives are of the raw
    sums; loss-mode scaling is applied by the consumer.
    """

    f_points: np.ndarray
    f_times: np.ndarray | None
    f_coeffs: np.ndarray
    rho_points: np.ndarray
    rho_times: np.ndarray | None
    rho_coeffs: np.ndarray
    norm_points: np.ndarray
    norm_times: np.ndarray | None
    norm_coeffs: np.ndarray


@dataclass
class LossEstimate:
    """The three Monte Carlo sums, their standard errors, and the total."""

    s_interior: float
    s_dirichlet: float
    s_neumann: float
    total: float
    se_interior: float
    se_dirichlet: float
    se_neumann: float
    test_norm: float
    mode: str
    trace: LossTrace | None = None

    @property
    def raw_total(self) -> float:
        return self.s_interior + self.s_dirichlet + self.s_neumann

    @property
    def combined_std_error(self) -> float:
        return math.hypot(self.se_interior, math.hypot(self.se_dirichlet, self.se_neumann))


def _sum_and_se(summands: np.ndarray, measure: float) -> tuple[float, float]:
    m = summands.shape[0]
    total = (measure / m) * float(np.sum(summands))
    if m < 2:
        return total, 0.0
    se = measure * float(np.std(summands, ddof=1)) / math.sqrt(m)
    return total, se


def estimate_loss(
    problem: PdeProblem,
    f_eval: Callable,
    rho: Callable,
    batch: Batch,
    step: StepParams,
    rng: np.random.Generator,
    mode: str = "raw",
    keep_trace: bool = False,
) -> LossEstimate:
    """Estimate the weak-form loss on one batch.

    ``f_eval`` and ``rho`` are callables ``(points, times) -> values`` (times
    is None for stationary problems); only their pointwise values are used.
    ``mode`` is "raw" for the plain sum S_I + S_D + S_N or "normalized" for
    (sum)^2 / max(test_norm, 1e-10). Raises DivergenceError the moment any
    term stops being finite.
    """
    if mode not in ("raw", "normalized"):
        raise ValueError("mode must be 'raw' or 'normalized'")
    x = np.atleast_2d(np.asarray(batch.interior, dtype=float))
    m_i = x.shape[0]
    if m_i < 1:
        raise ValueError("interior batch must be nonempty")
    parabolic = problem.is_parabolic
    t_x = batch.interior_times
    if parabolic and t_x is None:
        raise ValueError("parabolic problems need interior_times in the batch")
    t_arg = t_x if parabolic else 0.0
    dom = problem.domain
    horizon = problem.horizon if parabolic else 1.0
    measure_i = dom.interior_measure * horizon

    # Interior collocation: -G f + rho R pointwise.
    f_x = _eval_rows(f_eval, x, t_x)
    rho_x = _eval_rows(rho, x, t_x)
    tau, k_rep = step.tau, step.replicates
    rho_step_acc = np.zeros(m_i)
    endpoints = []
    endpoint_times = []
    for _ in range(k_rep):
        if parabolic:
            moved, t_moved = euler_step(problem, x, tau, rng, t=t_x)
        else:
            moved = euler_step(problem, x, tau, rng)
            t_moved = None
        rho_step_acc += _eval_rows(rho, moved, t_moved)
        if keep_trace:
            endpoints.append(moved)
            endpoint_times.append(t_moved)
    gen_diff = (rho_step_acc / k_rep - rho_x) / tau
    r_x = problem.source_at(f_x, x, t_arg)
    interior_summands = -gen_diff * f_x + rho_x * r_x
    s_i, se_i = _sum_and_se(interior_summands, measure_i)

    # Parabolic initial-condition term -|Omega|/M0 sum f0 rho(., 0).
    init_parts = None
    if parabolic:
        if batch.initial is None:
            raise ValueError("parabolic problems need initial points in the batch")
        x0 = np.atleast_2d(batch.initial)
        f0 = problem.initial_at(x0)
        rho0 = _eval_rows(rho, x0, np.zeros(x0.shape[0]))
        s0, se0 = _sum_and_se(-f0 * rho0, dom.interior_measure)
        s_i += s0
        se_i = math.hypot(se_i, se0)
        init_parts = (x0, f0)

    test_norm = (measure_i / m_i) * float(np.sum(rho_x * rho_x))

    # Dirichlet part: (1/2) D_nu[rho] g.
    s_d = se_d = 0.0
    d_parts = None
    if dom.dirichlet_measure > 0.0:
        if batch.dirichlet is None or len(batch.dirichlet) == 0:
            raise ValueError("dirichlet batch empty but the Dirichlet part has positive measure")
        p_d = batch.dirichlet.positions
        t_d = batch.dirichlet_times
        diff_d, shifted_d, _ = _boundary_difference_parts(
            problem, rho, p_d, batch.dirichlet.normals, step.tau_tilde, t_d
        )
        g_d = problem.dirichlet_at(p_d, t_d if parabolic else 0.0)
        measure_d = dom.dirichlet_measure * horizon
        s_d, se_d = _sum_and_se(0.5 * diff_d * g_d, measure_d)
        d_parts = (p_d, t_d, shifted_d, g_d, measure_d / len(batch.dirichlet))

    # Neumann part: -rho phi + (1/2) D_nu[rho] f.
    s_n = se_n = 0.0
    n_parts = None
    if dom.neumann_measure > 0.0:
        if batch.neumann is None or len(batch.neumann) == 0:
            raise ValueError("neumann batch empty but the Neumann part has positive measure")
        p_n = batch.neumann.positions
        t_n = batch.neumann_times
        diff_n, shifted_n, rho_n = _boundary_difference_parts(
            problem, rho, p_n, batch.neumann.normals, step.tau_tilde, t_n
        )
        phi_n = problem.neumann_at(p_n, t_n if parabolic else 0.0)
        f_n = _eval_rows(f_eval, p_n, t_n)
        measure_n = dom.neumann_measure * horizon
        s_n, se_n = _sum_and_se(-rho_n * phi_n + 0.5 * diff_n * f_n, measure_n)
        n_parts = (p_n, t_n, shifted_n, phi_n, f_n, diff_n, measure_n / len(batch.neumann))

    raw_total = s_i + s_d + s_n
    if mode == "raw":
        total = raw_total
    else:
        total = raw_total * raw_total / max(test_norm, NORM_FLOOR)

    for label, value in (
        ("interior", s_i),
        ("dirichlet", s_d),
        ("neumann", s_n),
        ("test_norm", test_norm),
        ("total", total),
    ):
        if not math.isfinite(value):
            raise DivergenceError(f"diverged: non-finite {label} term in loss estimate")

    trace = None
    if keep_trace:
        trace = _build_trace(
            problem, step, x, t_x, f_x, rho_x, gen_diff, r_x,
            endpoints, endpoint_times, init_parts, d_parts, n_parts,
            measure_i / m_i,
        )

    return LossEstimate(
        s_interior=float(s_i),
        s_dirichlet=float(s_d),
        s_neumann=float(s_n),
        total=float(total),
        se_interior=float(se_i),
        se_dirichlet=float(se_d),
        se_neumann=float(se_n),
        test_norm=float(test_norm),
        mode=mode,
        trace=trace,
    )


def _build_trace(problem, step, x, t_x, f_x, rho_x, gen_diff, r_x,
                 endpoints, endpoint_times, init_parts, d_parts, n_parts,
                 pref_i) -> LossTrace:
    parabolic = problem.is_parabolic
    t_arg = t_x if parabolic else 0.0
    tau, k_rep, tau_tilde = step.tau, step.replicates, step.tau_tilde
    slope = problem.source_slope_at(f_x, x, t_arg)

    f_points = [x]
    f_times = [t_x] if parabolic else None
    f_coeffs = [pref_i * (-gen_diff + rho_x * slope)]

    rho_points = [x]
    rho_times = [t_x] if parabolic else None
    rho_coeffs = [pref_i * (f_x / tau + r_x)]
    for moved, t_moved in zip(endpoints, endpoint_times):
        rho_points.append(moved)
        if parabolic:
            rho_times.append(t_moved)
        rho_coeffs.append(-pref_i * f_x / (tau * k_rep))

    if init_parts is not None:
        x0, f0 = init_parts
        rho_points.append(x0)
        rho_times.append(np.zeros(x0.shape[0]))
        rho_coeffs.append(-(problem.domain.interior_measure / x0.shape[0]) * f0)

    if d_parts is not None:
        p_d, t_d, shifted_d, g_d, pref_d = d_parts
        half = pref_d * g_d / (2.0 * tau_tilde)
        rho_points += [p_d, shifted_d]
        rho_coeffs += [-half, half]
        if parabolic:
            rho_times += [t_d, t_d]

    if n_parts is not None:
        p_n, t_n, shifted_n, phi_n, f_n, diff_n, pref_n = n_parts
        half = pref_n * f_n / (2.0 * tau_tilde)
        rho_points += [p_n, shifted_n]
        rho_coeffs += [pref_n * (-phi_n) - half, half]
        if parabolic:
            rho_times += [t_n, t_n]
        f_points.append(p_n)
        f_coeffs.append(pref_n * 0.5 * diff_n)
        if parabolic:
            f_times.append(t_n)

    return LossTrace(
        f_points=np.vstack(f_points),
        f_times=None if f_times is None else np.concatenate(f_times),
        f_coeffs=np.concatenate(f_coeffs),
        rho_points=np.vstack(rho_points),
        rho_times=None if rho_times is None else np.concatenate(rho_times),
        rho_coeffs=np.concatenate(rho_coeffs),
        norm_points=x,
        norm_times=t_x if parabolic else None,
        norm_coeffs=2.0 * pref_i * rho_x,
    )


def estimate_interior(
    problem: PdeProblem,
    f_eval: Callable,
    rho: Callable,
    interior: np.ndarray,
    step: StepParams,
    rng: np.random.Generator,
    times=None,
) -> tuple[float, float]:
    """Interior collocation sum alone (no boundary or initial terms).

    Diagnostic entry point used by the variance-scaling experiment; returns
    ``(value, standard_error)``.
    """
    x = np.atleast_2d(np.asarray(interior, dtype=float))
    parabolic = problem.is_parabolic
    t_arg = times if parabolic else 0.0
    f_x = _eval_rows(f_eval, x, times)
    rho_x = _eval_rows(rho, x, times)
    gen_diff = generator_difference(problem, rho, x, step, rng, t=times)
    r_x = problem.source_at(f_x, x, t_arg)
    horizon = problem.horizon if parabolic else 1.0
    measure = problem.domain.interior_measure * horizon
    value, se = _sum_and_se(-gen_diff * f_x + rho_x * r_x, measure)
    return value, se


# -- sampling condition -------------------------------------------------------


@dataclass(frozen=True)
class SamplingCheck:
    """Outcome of the noise-vs-batch-size condition m_interior * tau >= 10."""

    ok: bool
    ratio: float
    message: str | None


def check_sampling_condition(step: StepParams, m_interior: int) -> SamplingCheck:
    """Warn when m_interior * tau < 10.

    The per-sample noise of the interior summand scales like tau^(-1/2), so
    the estimator standard error scales like (m_interior * tau)^(-1/2); small
    ratios mean the loss signal drowns in difference-quotient noise.
    """
    ratio = float(m_interior) * step.tau
    if ratio >= 10.0:
        return SamplingCheck(True, ratio, None)
    return SamplingCheck(
        False,
        ratio,
        f"sampling condition: m_interior * tau = {ratio:g} < 10; "
        "interior noise may dominate the loss signal",
    )
