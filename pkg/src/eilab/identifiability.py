"""Rank diagnostics for learning from measurements under a group action.

Stacking ``A T_g`` over all group elements gives the operator seen by an
ideal learner with access to every transformed copy of a signal.  It
must have full column rank ``n`` for the signal model to be
recoverable; if every ``A T_g`` shares the row space of ``A`` the stack
can never exceed ``rank(A)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .groups import TransformGroup
from .linops import RANK_TOL, DimensionError, LinearOperator, numerical_rank

STACK_LIMIT = 2 ** 24


@dataclass
class IdentifiabilityReport:
    n: int
    m: int
    group_order: int
    rank_M: int
    condition_met: bool
    lower_bound_ok: bool
    invariant_elements: list[int] = field(default_factory=list)
    singular_values_M: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def as_lines(self) -> list[str]:
        return [
            f"n: {self.n}",
            f"m: {self.m}",
            f"group_order: {self.group_order}",
            f"rank_M: {self.rank_M}",
            f"condition_met: {str(self.condition_met).lower()}",
            f"lower_bound_ok: {str(self.lower_bound_ok).lower()}",
            "invariant_elements: " + " ".join(str(g) for g in self.invariant_elements),
        ]


def _check(A: LinearOperator, group: TransformGroup):
    if A.n != group.n:
        raise DimensionError(f"operator acts on R^{A.n} but group acts on {group.signal_shape}")
    if group.order * A.m * A.n > STACK_LIMIT:
        raise ValueError(
            f"stacked matrix would hold {group.order * A.m * A.n} entries (limit {STACK_LIMIT})")


def transformed_operator(A: LinearOperator, group: TransformGroup, g: int) -> np.ndarray:
    """Dense ``A T_g``."""
    # (A P)[:, j] = A[:, i] where perm[i] == j, i.e. columns scattered by perm
    AT = np.empty_like(A.matrix)
    AT[:, group.perm(g)] = A.matrix
    return AT


def build_stacked_matrix(A: LinearOperator, group: TransformGroup) -> np.ndarray:
    _check(A, group)
    return np.vstack([transformed_operator(A, group, g) for g in range(group.order)])


def _singular_values(M: np.ndarray) -> np.ndarray:
    if not np.any(M):
        return np.zeros(min(M.shape))
    return np.linalg.svd(M, compute_uv=False)


def _rank_from(s: np.ndarray, tol: float = RANK_TOL) -> int:
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def range_invariance_check(A: LinearOperator, group: TransformGroup, g: int) -> bool:
    """True iff ``A`` and ``A T_g`` have the same row space."""
    _check(A, group)
    AT = transformed_operator(A, group, g)
    return numerical_rank(np.vstack([A.matrix, AT])) == numerical_rank(A.matrix)


def necessary_condition(A: LinearOperator, group: TransformGroup) -> IdentifiabilityReport:
    M = build_stacked_matrix(A, group)
    s = _singular_values(M)
    rank = _rank_from(s)
    invariant = [g for g in range(group.order) if range_invariance_check(A, group, g)]
    return IdentifiabilityReport(
        n=A.n,
        m=A.m,
        group_order=group.order,
        rank_M=rank,
        condition_met=rank == A.n,
        lower_bound_ok=A.m * group.order >= A.n,
        invariant_elements=invariant,
        singular_values_M=s,
    )
