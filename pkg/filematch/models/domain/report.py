"""Domain model for the outcome of an EM fit."""
from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np

from filematch.core.exceptions import InvalidArgumentError
from filematch.models.domain.factor_model import FactorModel

MONOTONE_SLACK = 1e-8


class FitReport:
    """
    Fitted model plus the log-likelihood path that produced it.

    Attributes:
        model: Final parameters.
        loglik_trace: Observed-data log-likelihood after every iteration of the
            main run (burn-in runs of random starts are not included).
        iterations: Number of main-run iterations.
        converged: Whether the relative tolerance was met before max_iter.
        final_loglik: Log-likelihood of ``model``.
        seed: Seed of the random-init protocol (None for supplied starts).
        start_logliks: Log-likelihood reached by each random start after burn-in.
        best_start: Index of the start the main run continued from.
    """

    model: FactorModel
    loglik_trace: Tuple[float, ...]
    iterations: int
    converged: bool
    final_loglik: float
    seed: Optional[int]
    start_logliks: Tuple[float, ...]
    best_start: Optional[int]

    def __init__(
        self,
        model: FactorModel,
        loglik_trace: Sequence[float],
        converged: bool,
        final_loglik: float,
        seed: Optional[int] = None,
        start_logliks: Sequence[float] = (),
        best_start: Optional[int] = None,
    ) -> None:
        self.model = model
        self.loglik_trace = tuple(float(v) for v in loglik_trace)
        self.iterations = len(self.loglik_trace)
        self.converged = bool(converged)
        self.final_loglik = float(final_loglik)
        self.seed = seed
        self.start_logliks = tuple(float(v) for v in start_logliks)
        self.best_start = best_start
        if self.iterations and self.loglik_trace[-1] != self.final_loglik:
            raise InvalidArgumentError("final_loglik must equal the last trace entry.")

    def monotonicity_violations(self, slack: float = MONOTONE_SLACK) -> int:
        """Number of steps where the log-likelihood fell by more than ``slack``."""
        if self.iterations < 2:
            return 0
        steps = np.diff(np.asarray(self.loglik_trace))
        return int(np.sum(steps < -slack))

    def is_monotone(self, slack: float = MONOTONE_SLACK) -> bool:
        return self.monotonicity_violations(slack) == 0

    def __repr__(self) -> str:
        return (
            f"FitReport(q={self.model.q}, iterations={self.iterations}, "
            f"converged={self.converged}, loglik={self.final_loglik:.6g})"
        )
