"""Identifiability rules for the file-matching factor model.

Degrees-of-freedom counts, the largest admissible number of factors under each
criterion, and numerical checks of the two rank assumptions on a given loadings matrix.
"""
from __future__ import annotations

import logging
from fractions import Fraction
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike

from filematch.core.config import settings
from filematch.core.enums import Criterion
from filematch.core.exceptions import InvalidArgumentError
from filematch.models.domain.factor_model import FactorModel
from filematch.models.schemas import IdentifiabilityReport

log = logging.getLogger(__name__)


def dof_complete(p: int, q: int) -> Fraction:
    """
    Equations minus unknowns of a q-factor model on p fully observed variables.

    Raises:
        InvalidArgumentError: If q is negative or q >= p.
    """
    if q < 0 or q >= p:
        raise InvalidArgumentError(f"Need 0 <= q < p, got p={p}, q={q}.")
    return Fraction((p - q) ** 2 - p - q, 2)


def dof_matching(p_x: int, p_y: int, p_z: int, q: int) -> Fraction:
    """Complete-case count minus the p_Y * p_Z covariances never observed together."""
    return dof_complete(p_x + p_y + p_z, q) - p_y * p_z


def assumption1_dims_ok(p_x: int, q: int) -> bool:
    return q <= p_x


def assumption2_dims_ok(p_x: int, p_y: int, p_z: int, q: int) -> bool:
    return 2 * q < p_x + p_y and 2 * q < p_x + p_z


def max_factors(p_x: int, p_y: int, p_z: int, criterion: Union[Criterion, str]) -> int:
    """
    Largest q >= 0 that satisfies ``criterion``.

    Args:
        p_x, p_y, p_z: Group sizes.
        criterion: C (complete-case count >= 0), C_M (file-matching count >= 0) or
            Assumption2 (dimension conditions of both rank assumptions).
    """
    criterion = Criterion(criterion)
    if min(p_x, p_y, p_z) < 1:
        raise InvalidArgumentError("Group sizes must be positive.")
    p = p_x + p_y + p_z
    best = 0
    for q in range(p):
        if criterion is Criterion.C:
            ok = dof_complete(p, q) >= 0
        elif criterion is Criterion.C_M:
            ok = dof_matching(p_x, p_y, p_z, q) >= 0
        else:
            ok = assumption1_dims_ok(p_x, q) and assumption2_dims_ok(p_x, p_y, p_z, q)
        if ok:
            best = q
    return best


def criteria_flags(p_x: int, p_y: int, p_z: int, q: int) -> Dict[Criterion, bool]:
    """Verdict of every criterion for one q; all False when q is out of range."""
    p = p_x + p_y + p_z
    if q < 0 or q >= p:
        return {criterion: False for criterion in Criterion}
    return {
        Criterion.C: dof_complete(p, q) >= 0,
        Criterion.C_M: dof_matching(p_x, p_y, p_z, q) >= 0,
        Criterion.ASSUMPTION2: assumption1_dims_ok(p_x, q)
        and assumption2_dims_ok(p_x, p_y, p_z, q),
    }


def max_feasible_q(p_x: int, p_y: int, p_z: int) -> int:
    """Largest q >= 0 that passes every criterion of :func:`criteria_flags`."""
    p = p_x + p_y + p_z
    feasible = [q for q in range(p) if all(criteria_flags(p_x, p_y, p_z, q).values())]
    return max(feasible, default=0)


def dimension_warnings(p_x: int, p_y: int, p_z: int, q: int) -> List[str]:
    """Human-readable list of violated dimension conditions (empty when none)."""
    problems = []
    if not assumption1_dims_ok(p_x, q):
        problems.append(f"q={q} exceeds p_X={p_x}: Lambda_X cannot have rank q.")
    if not assumption2_dims_ok(p_x, p_y, p_z, q):
        problems.append(
            f"q={q} violates 2q < p_X + p_Y and 2q < p_X + p_Z "
            f"({p_x + p_y}, {p_x + p_z}): Sigma_YZ may not be identified."
        )
    return problems


def _default_tol(matrix: np.ndarray) -> float:
    largest = float(np.linalg.svd(matrix, compute_uv=False)[0]) if matrix.size else 0.0
    return settings.RANK_TOL * largest


def _has_rank(rows: np.ndarray, q: int, tol: float) -> bool:
    if rows.shape[0] < q:
        return False
    singular = np.linalg.svd(rows, compute_uv=False)
    return bool(singular[q - 1] > tol)


def check_assumption1_numeric(lambda_x: ArrayLike, tol: Optional[float] = None) -> bool:
    """True when Lambda_X has numerical rank q (its q-th singular value exceeds tol)."""
    lambda_x = np.atleast_2d(np.asarray(lambda_x, dtype=float))
    q = lambda_x.shape[1]
    tol = _default_tol(lambda_x) if tol is None else tol
    return _has_rank(lambda_x, q, tol)


def check_assumption2_numeric(
    lambda_a: ArrayLike,
    tol: Optional[float] = None,
    max_rows: Optional[int] = None,
) -> Optional[bool]:
    """
    Row-deletion test: after removing any one row, the remaining rows still split
    into two disjoint blocks of rank q.

    A block of rank q exists in the complement of S1 as soon as the complement itself
    has rank q, so the search runs over q-row subsets S1 only and stops at the first
    witness for each deleted row.

    Args:
        lambda_a: m x q loadings (Lambda_A or Lambda_B).
        tol: Singular-value threshold (default 1e-8 times the largest singular value).
        max_rows: Row limit for the exhaustive search.

    Returns:
        True or False, or None when m exceeds ``max_rows`` and the search is skipped.
    """
    matrix = np.asarray(lambda_a, dtype=float)
    if matrix.ndim == 1:
        matrix = matrix.reshape(-1, 1)
    m, q = matrix.shape
    limit = settings.MAX_SUBSET_ROWS if max_rows is None else max_rows
    if m > limit:
        log.warning("Assumption 2 not checked: %d rows exceed the search limit %d.", m, limit)
        return None
    if q < 1 or m < 2 * q + 1:
        return False
    tol = _default_tol(matrix) if tol is None else tol

    for deleted in range(m):
        remaining = [i for i in range(m) if i != deleted]
        found = False
        for subset in combinations(remaining, q):
            if not _has_rank(matrix[list(subset)], q, tol):
                continue
            rest = [i for i in remaining if i not in subset]
            if _has_rank(matrix[rest], q, tol):
                found = True
                break
        if not found:
            log.debug("Assumption 2 fails after deleting row %d.", deleted)
            return False
    return True


def identifiability_report(
    p_x: int,
    p_y: int,
    p_z: int,
    q: int,
    model: Optional[FactorModel] = None,
    tol: Optional[float] = None,
) -> IdentifiabilityReport:
    """
    Collects the counts, dimension verdicts and (given a model) numeric verdicts.

    Raises:
        InvalidArgumentError: If q is negative or not below p.
    """
    numeric1: Optional[bool] = None
    numeric2: Optional[bool] = None
    if model is not None:
        numeric1 = check_assumption1_numeric(model.lambda_x, tol)
        verdicts: Sequence[Optional[bool]] = (
            check_assumption2_numeric(model.lambda_a, tol),
            check_assumption2_numeric(model.lambda_b, tol),
        )
        if False in verdicts:
            numeric2 = False
        elif None not in verdicts:
            numeric2 = True
    return IdentifiabilityReport(
        p_x=p_x,
        p_y=p_y,
        p_z=p_z,
        q=q,
        C=dof_complete(p_x + p_y + p_z, q),
        C_M=dof_matching(p_x, p_y, p_z, q),
        assumption1_dim_ok=assumption1_dims_ok(p_x, q),
        assumption2_dim_ok=assumption2_dims_ok(p_x, p_y, p_z, q),
        numeric_assumption1=numeric1,
        numeric_assumption2=numeric2,
    )
