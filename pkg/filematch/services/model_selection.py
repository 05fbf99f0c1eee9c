"""Choice of the number of factors by BIC.

The file-matching sweep scores each q with the observed-data log-likelihood
log L_A + log L_B and the penalty (qp + p - q(q-1)/2) log n, n = n_A + n_B.
"""
from __future__ import annotations

import logging
from typing import Callable, Iterable, List, Optional

import numpy as np
from numpy.typing import ArrayLike

from filematch.core.enums import Criterion
from filematch.core.exceptions import FileMatchError, InvalidArgumentError
from filematch.models.domain.partition import PartitionSpec
from filematch.models.domain.report import FitReport
from filematch.models.domain.scatter import ObservedScatter
from filematch.models.schemas import BICRow, BICTable, EMConfig
from filematch.rules.identifiability import criteria_flags
from filematch.services.em_engine import EMEngine

log = logging.getLogger(__name__)


def free_params(p: int, q: int) -> int:
    """Loadings plus uniquenesses minus the q(q-1)/2 rotation constraints."""
    return q * p + p - q * (q - 1) // 2


def bic_complete(loglik: float, p: int, q: int, n: int) -> float:
    """-2 loglik + free_params(p, q) log n."""
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}.")
    return -2.0 * loglik + free_params(p, q) * float(np.log(n))


def _row(
    partition: PartitionSpec,
    q: int,
    n: int,
    report: Optional[FitReport],
    error: Optional[str],
) -> BICRow:
    flags = criteria_flags(partition.p_x, partition.p_y, partition.p_z, q)
    return BICRow(
        q=q,
        loglik=report.final_loglik if report is not None else None,
        free_params=free_params(partition.p, q),
        bic=bic_complete(report.final_loglik, partition.p, q, n) if report is not None else None,
        feasible_C=flags[Criterion.C],
        feasible_CM=flags[Criterion.C_M],
        feasible_A2=flags[Criterion.ASSUMPTION2],
        converged=report.converged if report is not None else None,
        error=error,
        report=report,
    )


def _sweep(
    q_range: Iterable[int],
    fit_one: Callable[[int], FitReport],
    partition: PartitionSpec,
    n: int,
) -> BICTable:
    rows: List[BICRow] = []
    for q in sorted(set(int(q) for q in q_range)):
        try:
            report = fit_one(q)
        except FileMatchError as exc:
            log.warning("BIC sweep: fit with q=%d failed: %s", q, exc)
            rows.append(_row(partition, q, n, None, str(exc)))
            continue
        rows.append(_row(partition, q, n, report, None))
    table = BICTable(rows=rows, n=n, p=partition.p)
    log.info("BIC selects q=%s over %s.", table.selected_q, [row.q for row in rows])
    return table


def select_q(
    scatter: ObservedScatter,
    q_range: Iterable[int],
    config: Optional[EMConfig] = None,
    engine: Optional[EMEngine] = None,
) -> BICTable:
    """
    Fits every q of ``q_range`` independently and tabulates the BIC.

    Failed fits are kept as rows without a score. The selected q minimises BIC, the
    smaller q winning ties.
    """
    engine = engine or EMEngine()
    return _sweep(
        q_range,
        lambda q: engine.fit(scatter, q, config),
        scatter.partition,
        scatter.n,
    )


def select_q_complete(
    scatter: ArrayLike,
    n: int,
    q_range: Iterable[int],
    partition: PartitionSpec,
    config: Optional[EMConfig] = None,
    engine: Optional[EMEngine] = None,
) -> BICTable:
    """Complete-case counterpart of :func:`select_q` on a full p x p scatter."""
    engine = engine or EMEngine()
    return _sweep(
        q_range,
        lambda q: engine.fit_complete(scatter, n, q, config, partition),
        partition,
        n,
    )
