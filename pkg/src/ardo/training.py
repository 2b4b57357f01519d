"""Adversarial training loop and evaluation utilities.

Each epoch alternates two half-steps on fresh i.i.d. batches: gradient
descent on the solution network's parameters with the test function frozen,
then gradient ascent on the test network's parameters with the solution
frozen. Both gradients come from the loss trace: every term depends on the
solution only through pointwise values and on the test function only through
plain linear combinations of its evaluations, so reverse-mode parameter
gradients of the two networks are all that is ever needed.
"""

from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DivergenceError
from .estimator import (
    NORM_FLOOR,
    LossEstimate,
    StepParams,
    check_sampling_condition,
    estimate_loss,
    sample_batch,
)
from .networks import AdamState, DirichletMask, MaskedTestFunction, MlpNetwork, adam_step
from .problems import PdeProblem

logger = logging.getLogger(__name__)

METRICS_HEADER = "epoch,loss,s_i,s_d,s_n,se_i,se_d,se_n,l2_rel,gnorm_f,gnorm_rho,ms"

_EVAL_SEED = 170800  # fixed stream for Monte Carlo evaluation grids
_DEFAULT_HIDDEN = (32, 32, 32)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run. All runs are deterministic in seed."""

    epochs: int = 5000
    m_interior: int = 4096
    m_dirichlet: int = 256
    m_neumann: int = 256
    tau: float = 1e-3
    tau_tilde: float = 1e-3
    replicates: int = 1
    lr_solution: float = 1e-3
    lr_test: float = 1e-3
    test_steps_per_epoch: int = 1
    loss_mode: str = "normalized"
    seed: int = 0
    eval_every: int = 100
    checkpoint_every: int = 0
    precision: str = "float64"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.m_interior < 1:
            raise ValueError("m_interior must be >= 1")
        if self.m_dirichlet < 0 or self.m_neumann < 0:
            raise ValueError("boundary batch sizes must be >= 0")
        if not (self.tau > 0.0 and self.tau_tilde > 0.0):
            raise ValueError("tau and tau_tilde must be positive")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not (self.lr_solution > 0.0 and self.lr_test >= 0.0):
            raise ValueError("lr_solution must be > 0 and lr_test >= 0")
        if self.test_steps_per_epoch < 0:
            raise ValueError("test_steps_per_epoch must be >= 0")
        if self.loss_mode not in ("raw", "normalized"):
            raise ValueError("loss_mode must be 'raw' or 'normalized'")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")
        if self.precision not in ("float64", "float32"):
            raise ValueError("precision must be 'float64' or 'float32'")

    @property
    def step_params(self) -> StepParams:
        return StepParams(self.tau, self.tau_tilde, self.replicates)

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32


@dataclass
class EpochRecord:
    """One metrics row; field order matches METRICS_HEADER."""

    epoch: int
    loss: float
    s_i: float
    s_d: float
    s_n: float
    se_i: float
    se_d: float
    se_n: float
    l2_rel: float
    gnorm_f: float
    gnorm_rho: float
    ms: float

    def csv_row(self) -> str:
        values = [self.loss, self.s_i, self.s_d, self.s_n, self.se_i, self.se_d,
                  self.se_n, self.l2_rel, self.gnorm_f, self.gnorm_rho, self.ms]
        return ",".join([str(self.epoch)] + [repr(float(v)) for v in values])


@dataclass
class RunMetrics:
    """Metric rows collected at evaluation epochs."""

    rows: list[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        self.rows.append(record)

    @property
    def last(self) -> EpochRecord | None:
        return self.rows[-1] if self.rows else None

    def to_csv(self, path) -> None:
        text = "\n".join([METRICS_HEADER] + [r.csv_row() for r in self.rows]) + "\n"
        _atomic_write_text(path, text)


@dataclass
class TrainResult:
    solution_net: MlpNetwork
    test_function: MaskedTestFunction
    metrics: RunMetrics
    warnings: list[str]

    @property
    def test_net(self) -> MlpNetwork:
        return self.test_function.net


def _atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _atomic_save_net(net: MlpNetwork, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    net.save(tmp)
    os.replace(tmp, path)


class _MetricsSink:
    """Streams metric rows to <out>/metrics.csv.tmp, renamed in place on close.

    Rows are flushed as they arrive so a divergence abort loses nothing; the
    final file only ever appears complete.
    """

    def __init__(self, path=None):
        self._path = Path(path) if path is not None else None
        self._fh = None
        if self._path is not None:
            self._tmp = self._path.with_name(self._path.name + ".tmp")
            self._fh = open(self._tmp, "w")
            self._fh.write(METRICS_HEADER + "\n")
            self._fh.flush()

    def write(self, record: EpochRecord) -> None:
        if self._fh is not None:
            self._fh.write(record.csv_row() + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            os.replace(self._tmp, self._path)
            self._fh = None


def solution_field(net: MlpNetwork, parabolic: bool) -> Callable:
    """Evaluation-only handle (points, times) -> values for a solution net."""
    if not parabolic:
        return lambda x, t=None: net.forward_batch(x)

    def field_fn(x, t=None):
        x = np.atleast_2d(x)
        tcol = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
        return net.forward_batch(np.column_stack([x, tcol]))

    return field_fn


def _augment(points: np.ndarray, times) -> np.ndarray:
    if times is None:
        return points
    return np.column_stack([points, np.broadcast_to(times, (points.shape[0],))])


def _solution_gradient(net: MlpNetwork, est: LossEstimate, mode: str) -> np.ndarray:
    trace = est.trace
    coeffs = trace.f_coeffs
    if mode == "normalized":
        coeffs = coeffs * (2.0 * est.raw_total / max(est.test_norm, NORM_FLOOR))
    return net.param_gradient_batch(_augment(trace.f_points, trace.f_times), coeffs)


def _test_gradient(rho: MaskedTestFunction, est: LossEstimate, mode: str) -> np.ndarray:
    trace = est.trace
    ds = rho.param_gradient_batch(trace.rho_points, trace.rho_times, trace.rho_coeffs)
    if mode == "raw":
        return ds
    # d/d eta of S^2 / N with N clamped below by NORM_FLOOR.
    s = est.raw_total
    n_eff = max(est.test_norm, NORM_FLOOR)
    grad = 2.0 * s * ds
    if est.test_norm > NORM_FLOOR:
        dn = rho.param_gradient_batch(trace.norm_points, trace.norm_times, trace.norm_coeffs)
        grad = grad - (s * s / n_eff) * dn
    return grad / n_eff


def train(
    problem: PdeProblem,
    config: TrainConfig,
    *,
    solution_net: MlpNetwork | None = None,
    test_net: MlpNetwork | None = None,
    hidden_widths=_DEFAULT_HIDDEN,
    activation: str = "tanh",
    out_dir=None,
) -> TrainResult:
    """Run the alternating descent/ascent loop.

    Networks default to Xavier-initialized MLPs (``hidden_widths``,
    ``activation``) drawn from the config seed; passing nets in overrides
    that. With ``out_dir`` set, metrics stream to ``metrics.csv`` and
    checkpoints are written there. Raises :class:`DivergenceError` (with the
    epoch and the metrics collected so far attached) the moment any estimate
    or gradient stops being finite.
    """
    rng = np.random.default_rng(config.seed)
    parabolic = problem.is_parabolic
    input_dim = problem.domain.dim + (1 if parabolic else 0)

    if solution_net is None:
        solution_net = MlpNetwork.initialize(
            [input_dim, *hidden_widths, 1], activation, rng, dtype=config.dtype
        )
    if test_net is None:
        test_net = MlpNetwork.initialize(
            [input_dim, *hidden_widths, 1], activation, rng, dtype=config.dtype
        )
    if solution_net.input_dim != input_dim or test_net.input_dim != input_dim:
        raise ValueError(f"networks must take {input_dim} inputs for this problem")

    rho = MaskedTestFunction(DirichletMask(problem.domain), test_net, problem.horizon)
    f_eval = solution_field(solution_net, parabolic)

    warnings: list[str] = []
    scheck = check_sampling_condition(config.step_params, config.m_interior)
    if not scheck.ok:
        warnings.append(scheck.message)
        logger.warning(scheck.message)

    m_dirichlet = config.m_dirichlet
    m_neumann = config.m_neumann
    if problem.domain.neumann_measure == 0.0 and m_neumann > 0:
        logger.info("domain has no Neumann part; ignoring m_neumann=%d", m_neumann)
        m_neumann = 0

    step = config.step_params
    adam_f = AdamState.zeros(solution_net.param_count, solution_net.dtype)
    adam_rho = AdamState.zeros(test_net.param_count, test_net.dtype)

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    metrics = RunMetrics()
    sink = _MetricsSink(out_path / "metrics.csv" if out_path else None)

    grad_f_norm = math.nan
    grad_rho_norm = math.nan
    epoch = 0
    try:
        for epoch in range(1, config.epochs + 1):
            tic = time.perf_counter()

            batch = sample_batch(problem, config.m_interior, m_dirichlet, m_neumann, rng)
            est = estimate_loss(
                problem, f_eval, rho, batch, step, rng,
                mode=config.loss_mode, keep_trace=True,
            )
            grad_f = _solution_gradient(solution_net, est, config.loss_mode)
            grad_f_norm = float(np.linalg.norm(grad_f))
            solution_net.params, adam_f = adam_step(
                solution_net.params, grad_f, adam_f, config.lr_solution, "descent"
            )

            for _ in range(config.test_steps_per_epoch):
                batch_t = sample_batch(problem, config.m_interior, m_dirichlet, m_neumann, rng)
                est_t = estimate_loss(
                    problem, f_eval, rho, batch_t, step, rng,
                    mode=config.loss_mode, keep_trace=True,
                )
                grad_rho = _test_gradient(rho, est_t, config.loss_mode)
                grad_rho_norm = float(np.linalg.norm(grad_rho))
                test_net.params, adam_rho = adam_step(
                    test_net.params, grad_rho, adam_rho, config.lr_test, "ascent"
                )

            ms = (time.perf_counter() - tic) * 1000.0

            if epoch % config.eval_every == 0 or epoch == config.epochs:
                l2 = math.nan
                if problem.exact_solution is not None:
                    l2 = evaluate_l2_error(f_eval, problem)
                record = EpochRecord(
                    epoch=epoch, loss=est.total,
                    s_i=est.s_interior, s_d=est.s_dirichlet, s_n=est.s_neumann,
                    se_i=est.se_interior, se_d=est.se_dirichlet, se_n=est.se_neumann,
                    l2_rel=l2, gnorm_f=grad_f_norm, gnorm_rho=grad_rho_norm, ms=ms,
                )
                metrics.append(record)
                sink.write(record)

            if (
                out_path is not None
                and config.checkpoint_every > 0
                and epoch % config.checkpoint_every == 0
            ):
                _atomic_save_net(solution_net, out_path / f"solution_{epoch:06d}.bin")
                _atomic_save_net(test_net, out_path / f"test_{epoch:06d}.bin")
    except DivergenceError as err:
        raise DivergenceError(
            f"diverged at epoch {epoch}: {err}", epoch=epoch, metrics=metrics
        ) from err
    finally:
        sink.close()

    if out_path is not None:
        _atomic_save_net(solution_net, out_path / "solution_final.bin")
        _atomic_save_net(test_net, out_path / "test_final.bin")

    return TrainResult(solution_net, rho, metrics, warnings)


# -- evaluation ---------------------------------------------------------------


def evaluation_points(problem: PdeProblem) -> tuple[np.ndarray, np.ndarray | None]:
    """The fixed grid the relative L2 error is computed on.

    Boxes get tensor grids (256 per axis up to two total axes, 64 per axis at
    three, counting time for parabolic problems); balls and higher-dimensional
    cases fall back to 1e5 uniform points from a fixed seed.
    """
    dom = problem.domain
    parabolic = problem.is_parabolic
    axes = dom.dim + (1 if parabolic else 0)
    if dom.shape == "box" and axes <= 3:
        per_axis = 256 if axes <= 2 else 64
        grids = [
            np.linspace(dom.lower[k], dom.upper[k], per_axis) for k in range(dom.dim)
        ]
        if parabolic:
            grids.append(np.linspace(0.0, problem.horizon, per_axis))
        mesh = np.meshgrid(*grids, indexing="ij")
        columns = [g.reshape(-1) for g in mesh]
        if parabolic:
            return np.column_stack(columns[:-1]), columns[-1]
        return np.column_stack(columns), None
    rng = np.random.default_rng(_EVAL_SEED)
    points = dom.sample_interior(100_000, rng)
    times = rng.uniform(0.0, problem.horizon, size=100_000) if parabolic else None
    return points, times


def evaluate_l2_error(f, problem: PdeProblem) -> float:
    """Relative L2 error sqrt(sum (f - f*)^2 / sum f*^2) on the fixed grid.

    ``f`` is an evaluation handle ``(points, times) -> values`` or a raw
    :class:`MlpNetwork` (wrapped according to the problem's mode). Requires
    the problem to carry an exact solution.
    """
    if problem.exact_solution is None:
        raise ValueError("problem has no exact_solution to compare against")
    if isinstance(f, MlpNetwork):
        f = solution_field(f, problem.is_parabolic)
    points, times = evaluation_points(problem)
    approx = np.asarray(f(points, times), dtype=float).reshape(-1)
    t_arg = times if problem.is_parabolic else 0.0
    exact = problem.exact_at(points, t_arg)
    den = float(np.sum(exact * exact))
    if den == 0.0:
        raise ValueError("exact solution vanishes on the evaluation grid")
    num = float(np.sum((approx - exact) ** 2))
    return math.sqrt(num / den)
