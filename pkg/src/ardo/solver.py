"""Estimator-style wrapper around the adversarial training loop.

ArdoSolver follows the scikit-learn convention: hyperparameters are plain
constructor attributes (get_params/set_params/clone work unchanged), fit
trains on a problem definition, predict evaluates the learned solution.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .problems import PdeProblem
from .training import TrainConfig, evaluate_l2_error, solution_field, train


class ArdoSolver(BaseEstimator):
    """Trains a pointwise solution network against an adversarial test network.

    Parameters mirror TrainConfig plus the network architecture. The solution
    network is only ever evaluated, never differentiated in space or time;
    all difference operators act on the test network.
    """

    def __init__(
        self,
        epochs: int = 5000,
        m_interior: int = 4096,
        m_dirichlet: int = 256,
        m_neumann: int = 256,
        tau: float = 1e-3,
        tau_tilde: float = 1e-3,
        replicates: int = 1,
        lr_solution: float = 1e-3,
        lr_test: float = 1e-3,
        test_steps_per_epoch: int = 1,
        loss_mode: str = "normalized",
        seed: int = 0,
        eval_every: int = 100,
        hidden: tuple = (32, 32, 32),
        activation: str = "tanh",
    ):
        self.epochs = epochs
        self.m_interior = m_interior
        self.m_dirichlet = m_dirichlet
        self.m_neumann = m_neumann
        self.tau = tau
        self.tau_tilde = tau_tilde
        self.replicates = replicates
        self.lr_solution = lr_solution
        self.lr_test = lr_test
        self.test_steps_per_epoch = test_steps_per_epoch
        self.loss_mode = loss_mode
        self.seed = seed
        self.eval_every = eval_every
        self.hidden = hidden
        self.activation = activation

    def _config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            m_interior=self.m_interior,
            m_dirichlet=self.m_dirichlet,
            m_neumann=self.m_neumann,
            tau=self.tau,
            tau_tilde=self.tau_tilde,
            replicates=self.replicates,
            lr_solution=self.lr_solution,
            lr_test=self.lr_test,
            test_steps_per_epoch=self.test_steps_per_epoch,
            loss_mode=self.loss_mode,
            seed=self.seed,
            eval_every=self.eval_every,
        )

    def fit(self, problem: PdeProblem, out_dir=None) -> "ArdoSolver":
        result = train(
            problem,
            self._config(),
            hidden_widths=tuple(self.hidden),
            activation=self.activation,
            out_dir=out_dir,
        )
        self.problem_ = problem
        self.solution_net_ = result.solution_net
        self.test_function_ = result.test_function
        self.metrics_ = result.metrics
        self.warnings_ = result.warnings
        if problem.exact_solution is not None:
            self.l2_error_ = evaluate_l2_error(self.solution_net_, problem)
        else:
            self.l2_error_ = None
        return self

    def predict(self, X, t=None) -> np.ndarray:
        if not hasattr(self, "solution_net_"):
            raise NotFittedError("ArdoSolver must be fit before calling predict")
        field = solution_field(self.solution_net_, self.problem_.is_parabolic)
        return field(np.atleast_2d(np.asarray(X, dtype=float)), t)
